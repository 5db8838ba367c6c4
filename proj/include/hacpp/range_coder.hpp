// Copyright (c) the hacpp Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <vector>

#include "hacpp/common.hpp"

namespace hacpp {

// Integer range coder with 64-bit low / 32-bit range and a fixed 2^16
// probability total. Coder state is integer-only, so encoding is bit-identical
// across runs and platforms. A single instance is strictly sequential.

// Integer CDF over the symbol range [k_min, k_max]. Counts sum to 2^16 and
// every symbol has count >= 1, so any in-range symbol is codable.
struct QuantizedCdf {
    int32_t k_min = 0;
    int32_t k_max = 0;
    std::vector<uint32_t> cum;  // size span+1; cum[0] = 0, cum[span] = 2^16

    int32_t span() const { return k_max - k_min + 1; }
    uint32_t cum_of(int32_t k) const { return cum[static_cast<size_t>(k - k_min)]; }
    uint32_t freq_of(int32_t k) const {
        const size_t i = static_cast<size_t>(k - k_min);
        return cum[i + 1] - cum[i];
    }
    bool contains(int32_t k) const { return k >= k_min && k <= k_max; }
};

// Integer-normalizes Gaussian interval probabilities (step q, centered on
// symbol lattice k*q) over [k_min, k_max]. Deterministic given identical
// float inputs. Throws when the alphabet does not fit the coder resolution.
QuantizedCdf build_cdf(double mu, double sigma, double q, int32_t k_min, int32_t k_max);

// Same normalization from an explicit per-symbol probability vector
// (used for mixture models where the caller evaluates the density).
QuantizedCdf build_cdf_from_probs(const std::vector<double>& probs, int32_t k_min);

class RangeEncoder {
public:
    RangeEncoder() = default;

    void encode(uint32_t cum, uint32_t freq);
    void encode_symbol(const QuantizedCdf& cdf, int32_t k);
    // Binary alphabet with P(1) = count_one / 2^16.
    void encode_bit(uint32_t count_one, int bit);

    // Flushes the minimal tail; no further encoding is allowed.
    std::vector<uint8_t> finish();

private:
    void shift_low();

    std::vector<uint8_t> out_;
    uint64_t low_ = 0;
    uint32_t range_ = 0xffffffffu;
    uint8_t cache_ = 0;
    uint64_t cache_size_ = 1;
    bool first_byte_pending_ = true;  // leading byte is provably zero; dropped
    bool finished_ = false;
};

class RangeDecoder {
public:
    RangeDecoder(const uint8_t* data, size_t size);

    int32_t decode_symbol(const QuantizedCdf& cdf);
    int decode_bit(uint32_t count_one);

private:
    uint32_t next_byte();

    const uint8_t* data_;
    size_t size_;
    size_t pos_ = 0;
    uint32_t code_ = 0;
    uint32_t range_ = 0xffffffffu;
};

// --- payload-level helpers ----------------------------------------------------

// Payload framing: [length: u32][checksum: u32][coder bytes].
std::vector<uint8_t> wrap_payload(const std::vector<uint8_t>& coder_bytes);
// Validates length and checksum; throws StreamError on mismatch.
std::vector<uint8_t> unwrap_payload(const uint8_t* data, size_t size, size_t& cursor);

// Symbol sequence coded against per-symbol CDFs (cdfs.size() == symbols.size(),
// or a single shared CDF). Output is a framed payload.
std::vector<uint8_t> encode_symbols(const std::vector<int32_t>& symbols,
                                    const std::vector<QuantizedCdf>& cdfs);
std::vector<int32_t> decode_symbols(const std::vector<uint8_t>& payload, size_t cursor_hint,
                                    const std::vector<QuantizedCdf>& cdfs, size_t n);

// Binary payload with a global one-frequency count_one/2^16.
std::vector<uint8_t> encode_binary(const std::vector<uint8_t>& bits, uint32_t count_one);
std::vector<uint8_t> decode_binary(const std::vector<uint8_t>& payload, uint32_t count_one,
                                   size_t n);

// Clamps an occurrence frequency into the codable range and quantizes it to
// the coder resolution.
uint32_t quantize_frequency(double h_f);

}  // namespace hacpp
