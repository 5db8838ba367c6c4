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

#include "hacpp/range_coder.hpp"

#include <algorithm>
#include <cmath>

#include "hacpp/gauss.hpp"

namespace hacpp {

namespace {

constexpr uint32_t kTopValue = 1u << 24;

// Deterministic integer normalization: floor counts with a floor of 1, then
// settle the residual on the highest-probability symbols.
QuantizedCdf normalize_counts(const std::vector<double>& probs, int32_t k_min) {
    const size_t span = probs.size();
    HACPP_CHECK(span >= 1 && span < kProbTotal,
                "alphabet too large for coder resolution: " + std::to_string(span) + " symbols");

    std::vector<uint32_t> counts(span);
    uint64_t total = 0;
    for (size_t i = 0; i < span; ++i) {
        double p = probs[i];
        if (!(p >= 0.0)) p = 0.0;
        uint32_t c = static_cast<uint32_t>(p * static_cast<double>(kProbTotal));
        if (c < 1) c = 1;
        if (c > kProbTotal - 1) c = kProbTotal - 1;
        counts[i] = c;
        total += c;
    }

    if (total > kProbTotal) {
        uint64_t deficit = total - kProbTotal;
        while (deficit > 0) {
            size_t best = 0;
            for (size_t i = 1; i < span; ++i) {
                if (counts[i] > counts[best]) best = i;
            }
            HACPP_CHECK(counts[best] > 1, "cannot normalize CDF counts");
            const uint64_t take = std::min<uint64_t>(deficit, counts[best] - 1);
            counts[best] -= static_cast<uint32_t>(take);
            deficit -= take;
        }
    } else if (total < kProbTotal) {
        size_t best = 0;
        for (size_t i = 1; i < span; ++i) {
            if (probs[i] > probs[best]) best = i;
        }
        counts[best] += static_cast<uint32_t>(kProbTotal - total);
    }

    QuantizedCdf cdf;
    cdf.k_min = k_min;
    cdf.k_max = k_min + static_cast<int32_t>(span) - 1;
    cdf.cum.resize(span + 1);
    cdf.cum[0] = 0;
    for (size_t i = 0; i < span; ++i) cdf.cum[i + 1] = cdf.cum[i] + counts[i];
    return cdf;
}

}  // namespace

QuantizedCdf build_cdf(double mu, double sigma, double q, int32_t k_min, int32_t k_max) {
    HACPP_CHECK(k_min <= 0 && 0 <= k_max, "symbol range must cover zero");
    HACPP_CHECK(q > 0.0 && sigma > 0.0, "build_cdf: q and sigma must be positive");
    const int64_t span = static_cast<int64_t>(k_max) - k_min + 1;
    HACPP_CHECK(span < kProbTotal, "alphabet too large for coder resolution");
    std::vector<double> probs(static_cast<size_t>(span));
    for (int64_t i = 0; i < span; ++i) {
        const double fhat = static_cast<double>(k_min + i) * q;
        probs[static_cast<size_t>(i)] = gaussian_interval_mass(fhat, q, mu, sigma);
    }
    return normalize_counts(probs, k_min);
}

QuantizedCdf build_cdf_from_probs(const std::vector<double>& probs, int32_t k_min) {
    return normalize_counts(probs, k_min);
}

// --- encoder -------------------------------------------------------------------

void RangeEncoder::shift_low() {
    if (static_cast<uint32_t>(low_) < 0xff000000u || (low_ >> 32) != 0) {
        uint8_t byte = cache_ + static_cast<uint8_t>(low_ >> 32);
        do {
            if (first_byte_pending_) {
                // The very first byte is always zero (no carry can reach it);
                // it carries no information, so it is not written.
                first_byte_pending_ = false;
            } else {
                out_.push_back(byte);
            }
            byte = static_cast<uint8_t>(0xff + (low_ >> 32));
        } while (--cache_size_ != 0);
        cache_ = static_cast<uint8_t>(static_cast<uint32_t>(low_) >> 24);
    }
    ++cache_size_;
    low_ = (static_cast<uint32_t>(low_) << 8) & 0xffffffffull;
}

void RangeEncoder::encode(uint32_t cum, uint32_t freq) {
    HACPP_CHECK(!finished_, "encode after finish");
    HACPP_CHECK(freq > 0 && cum + freq <= kProbTotal, "invalid CDF slot");
    range_ >>= 16;
    low_ += static_cast<uint64_t>(cum) * range_;
    range_ *= freq;
    while (range_ < kTopValue) {
        shift_low();
        range_ <<= 8;
    }
}

void RangeEncoder::encode_symbol(const QuantizedCdf& cdf, int32_t k) {
    if (!cdf.contains(k)) {
        throw Error("symbol " + std::to_string(k) + " outside CDF range [" +
                    std::to_string(cdf.k_min) + ", " + std::to_string(cdf.k_max) + "]");
    }
    encode(cdf.cum_of(k), cdf.freq_of(k));
}

void RangeEncoder::encode_bit(uint32_t count_one, int bit) {
    HACPP_CHECK(count_one >= 1 && count_one <= kProbTotal - 1, "bit frequency out of range");
    const uint32_t count_zero = kProbTotal - count_one;
    if (bit) {
        encode(count_zero, count_one);
    } else {
        encode(0, count_zero);
    }
}

std::vector<uint8_t> RangeEncoder::finish() {
    HACPP_CHECK(!finished_, "finish called twice");
    finished_ = true;
    // Round low up to a multiple of 2^16 inside [low, low+range): the bottom
    // two bytes become zero and are left implicit (the decoder zero-extends).
    low_ = (low_ + 0xffffull) & ~0xffffull;
    for (int i = 0; i < 3; ++i) shift_low();
    return std::move(out_);
}

// --- decoder -------------------------------------------------------------------

RangeDecoder::RangeDecoder(const uint8_t* data, size_t size) : data_(data), size_(size) {
    for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
}

uint32_t RangeDecoder::next_byte() {
    return pos_ < size_ ? data_[pos_++] : 0u;
}

int32_t RangeDecoder::decode_symbol(const QuantizedCdf& cdf) {
    range_ >>= 16;
    uint32_t val = code_ / range_;
    HACPP_STREAM_CHECK(val < kProbTotal, "range decoder desynchronized");
    // First symbol whose cumulative end exceeds val.
    const auto it = std::upper_bound(cdf.cum.begin() + 1, cdf.cum.end(), val);
    const size_t idx = static_cast<size_t>(it - cdf.cum.begin()) - 1;
    const uint32_t cum = cdf.cum[idx];
    const uint32_t freq = cdf.cum[idx + 1] - cum;
    code_ -= cum * range_;
    range_ *= freq;
    while (range_ < kTopValue) {
        code_ = (code_ << 8) | next_byte();
        range_ <<= 8;
    }
    return cdf.k_min + static_cast<int32_t>(idx);
}

int RangeDecoder::decode_bit(uint32_t count_one) {
    HACPP_CHECK(count_one >= 1 && count_one <= kProbTotal - 1, "bit frequency out of range");
    QuantizedCdf cdf;
    cdf.k_min = 0;
    cdf.k_max = 1;
    cdf.cum = {0, kProbTotal - count_one, kProbTotal};
    return decode_symbol(cdf);
}

// --- payload helpers -------------------------------------------------------------

std::vector<uint8_t> wrap_payload(const std::vector<uint8_t>& coder_bytes) {
    std::vector<uint8_t> out;
    out.reserve(coder_bytes.size() + 8);
    append_le<uint32_t>(out, static_cast<uint32_t>(coder_bytes.size()));
    append_le<uint32_t>(out, crc32(coder_bytes));
    out.insert(out.end(), coder_bytes.begin(), coder_bytes.end());
    return out;
}

std::vector<uint8_t> unwrap_payload(const uint8_t* data, size_t size, size_t& cursor) {
    const uint32_t length = read_le<uint32_t>(data, size, cursor);
    const uint32_t checksum = read_le<uint32_t>(data, size, cursor);
    HACPP_STREAM_CHECK(cursor + length <= size, "truncated payload");
    std::vector<uint8_t> bytes(data + cursor, data + cursor + length);
    cursor += length;
    HACPP_STREAM_CHECK(crc32(bytes) == checksum, "payload checksum mismatch");
    return bytes;
}

std::vector<uint8_t> encode_symbols(const std::vector<int32_t>& symbols,
                                    const std::vector<QuantizedCdf>& cdfs) {
    HACPP_CHECK(cdfs.size() == symbols.size() || cdfs.size() == 1,
                "need one CDF per symbol or a single shared CDF");
    RangeEncoder enc;
    for (size_t i = 0; i < symbols.size(); ++i) {
        enc.encode_symbol(cdfs.size() == 1 ? cdfs[0] : cdfs[i], symbols[i]);
    }
    return wrap_payload(enc.finish());
}

std::vector<int32_t> decode_symbols(const std::vector<uint8_t>& payload, size_t cursor_hint,
                                    const std::vector<QuantizedCdf>& cdfs, size_t n) {
    HACPP_CHECK(cdfs.size() == n || cdfs.size() == 1,
                "need one CDF per symbol or a single shared CDF");
    size_t cursor = cursor_hint;
    const std::vector<uint8_t> bytes = unwrap_payload(payload.data(), payload.size(), cursor);
    RangeDecoder dec(bytes.data(), bytes.size());
    std::vector<int32_t> symbols(n);
    for (size_t i = 0; i < n; ++i) {
        symbols[i] = dec.decode_symbol(cdfs.size() == 1 ? cdfs[0] : cdfs[i]);
    }
    return symbols;
}

std::vector<uint8_t> encode_binary(const std::vector<uint8_t>& bits, uint32_t count_one) {
    RangeEncoder enc;
    for (uint8_t b : bits) enc.encode_bit(count_one, b);
    return wrap_payload(enc.finish());
}

std::vector<uint8_t> decode_binary(const std::vector<uint8_t>& payload, uint32_t count_one,
                                   size_t n) {
    size_t cursor = 0;
    const std::vector<uint8_t> bytes = unwrap_payload(payload.data(), payload.size(), cursor);
    RangeDecoder dec(bytes.data(), bytes.size());
    std::vector<uint8_t> bits(n);
    for (size_t i = 0; i < n; ++i) bits[i] = static_cast<uint8_t>(dec.decode_bit(count_one));
    return bits;
}

uint32_t quantize_frequency(double h_f) {
    if (!(h_f > 0.0)) h_f = 0.0;
    uint32_t c = static_cast<uint32_t>(std::lround(h_f * kProbTotal));
    c = std::clamp<uint32_t>(c, 1, kProbTotal - 1);
    return c;
}

}  // namespace hacpp
