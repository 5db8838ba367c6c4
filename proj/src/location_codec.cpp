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

#include "hacpp/location_codec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hacpp/range_coder.hpp"

namespace hacpp {

namespace {

// Spreads the low 16 bits of v so bit i lands at position 3i.
uint64_t spread3(uint32_t v) {
    uint64_t x = v & 0xffffull;
    x = (x | (x << 24)) & 0x000000ff000000ffull;
    x = (x | (x << 12)) & 0x000f000f000f000full;
    x = (x | (x << 6)) & 0x0303030303030303ull;
    x = (x | (x << 3)) & 0x1111111111111111ull;
    return x;
}

uint32_t compact3(uint64_t x) {
    x &= 0x1111111111111111ull;
    x = (x | (x >> 3)) & 0x0303030303030303ull;
    x = (x | (x >> 6)) & 0x000f000f000f000full;
    x = (x | (x >> 12)) & 0x000000ff000000ffull;
    x = (x | (x >> 24)) & 0x000000000000ffffull;
    return static_cast<uint32_t>(x);
}

// Order-k Exp-Golomb bit expansion of v: unary length prefix of (v>>k)+1,
// its remaining significant bits, then k raw low bits.
void exp_golomb_append(std::vector<uint8_t>& bits, uint64_t v, int k) {
    const uint64_t high = (v >> k) + 1;
    int len = 0;
    for (uint64_t t = high; t > 1; t >>= 1) ++len;
    for (int i = 0; i < len; ++i) bits.push_back(0);
    for (int i = len; i >= 0; --i) bits.push_back((high >> i) & 1);
    for (int i = k - 1; i >= 0; --i) bits.push_back((v >> i) & 1);
}

uint64_t exp_golomb_read(const std::vector<uint8_t>& bits, size_t& pos, int k) {
    int len = 0;
    while (pos < bits.size() && bits[pos] == 0) {
        ++len;
        ++pos;
    }
    HACPP_STREAM_CHECK(pos + len < bits.size() + 1, "truncated Exp-Golomb code");
    uint64_t high = 0;
    for (int i = 0; i <= len; ++i) {
        HACPP_STREAM_CHECK(pos < bits.size(), "truncated Exp-Golomb code");
        high = (high << 1) | bits[pos++];
    }
    uint64_t v = (high - 1) << k;
    for (int i = 0; i < k; ++i) {
        HACPP_STREAM_CHECK(pos < bits.size(), "truncated Exp-Golomb code");
        v |= static_cast<uint64_t>(bits[pos++]) << (k - 1 - i);
    }
    return v;
}

size_t exp_golomb_length(uint64_t v, int k) {
    const uint64_t high = (v >> k) + 1;
    int len = 0;
    for (uint64_t t = high; t > 1; t >>= 1) ++len;
    return static_cast<size_t>(2 * len + 1 + k);
}

// Smallest expected total bit count over Exp-Golomb orders.
int pick_order(const std::vector<uint64_t>& values) {
    int best_k = 0;
    uint64_t best_bits = ~0ull;
    for (int k = 0; k < 48; ++k) {
        uint64_t total = 0;
        for (uint64_t v : values) total += exp_golomb_length(v, k);
        if (total < best_bits) {
            best_bits = total;
            best_k = k;
        }
    }
    return best_k;
}

}  // namespace

uint64_t morton3(uint32_t ix, uint32_t iy, uint32_t iz) {
    return spread3(ix) | (spread3(iy) << 1) | (spread3(iz) << 2);
}

std::array<uint32_t, 3> morton3_inverse(uint64_t code) {
    return {compact3(code), compact3(code >> 1), compact3(code >> 2)};
}

void QuantizedLocations::expand() {
    codes_expanded_x.clear();
    codes_expanded_y.clear();
    codes_expanded_z.clear();
    codes_expanded_x.reserve(count);
    codes_expanded_y.reserve(count);
    codes_expanded_z.reserve(count);
    for (size_t u = 0; u < codes.size(); ++u) {
        const auto axes = morton3_inverse(codes[u]);
        for (uint32_t d = 0; d < dup_counts[u]; ++d) {
            codes_expanded_x.push_back(static_cast<uint16_t>(axes[0]));
            codes_expanded_y.push_back(static_cast<uint16_t>(axes[1]));
            codes_expanded_z.push_back(static_cast<uint16_t>(axes[2]));
        }
    }
}

QuantizedLocations quantize_locations(const std::vector<float>& locations, int64_t count,
                                      const SceneBounds& bounds) {
    QuantizedLocations q;
    q.count = count;
    q.bounds = bounds;
    std::vector<std::pair<uint64_t, int64_t>> coded(count);
    for (int64_t i = 0; i < count; ++i) {
        const std::array<float, 3> x = {locations[i * 3], locations[i * 3 + 1],
                                        locations[i * 3 + 2]};
        const std::array<float, 3> n = normalize_location(x, bounds);
        uint32_t axes[3];
        for (int a = 0; a < 3; ++a) {
            axes[a] = static_cast<uint32_t>(std::floor(n[a] * 65535.0f + 0.5f));
            if (axes[a] > 65535) axes[a] = 65535;
        }
        coded[i] = {morton3(axes[0], axes[1], axes[2]), i};
    }
    std::stable_sort(coded.begin(), coded.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    q.permutation.resize(count);
    for (int64_t i = 0; i < count; ++i) {
        q.permutation[i] = coded[i].second;
        if (i == 0 || coded[i].first != coded[i - 1].first) {
            q.codes.push_back(coded[i].first);
            q.dup_counts.push_back(1);
        } else {
            ++q.dup_counts.back();
        }
    }
    q.expand();
    return q;
}

float dequantize_axis(uint16_t index, float lo, float hi) {
    return lo + (static_cast<float>(index) / 65535.0f) * (hi - lo);
}

std::vector<uint8_t> encode_locations(const QuantizedLocations& q) {
    for (size_t i = 1; i < q.codes.size(); ++i) {
        HACPP_CHECK(q.codes[i] > q.codes[i - 1], "codes must be sorted strictly ascending");
    }
    std::vector<uint8_t> out;
    append_le<uint32_t>(out, static_cast<uint32_t>(q.count));
    for (int a = 0; a < 3; ++a) append_le<float>(out, q.bounds.min[a]);
    for (int a = 0; a < 3; ++a) append_le<float>(out, q.bounds.max[a]);
    append_le<uint32_t>(out, static_cast<uint32_t>(q.codes.size()));
    if (q.codes.empty()) return out;

    // First code raw (48 bits), then deltas-1 and per-code duplicate counts.
    for (int i = 0; i < 6; ++i) {
        append_le<uint8_t>(out, static_cast<uint8_t>(q.codes[0] >> (8 * i)));
    }
    std::vector<uint64_t> deltas;
    deltas.reserve(q.codes.size() - 1);
    for (size_t i = 1; i < q.codes.size(); ++i) deltas.push_back(q.codes[i] - q.codes[i - 1] - 1);
    std::vector<uint64_t> extras;
    extras.reserve(q.dup_counts.size());
    for (uint32_t d : q.dup_counts) extras.push_back(d - 1);

    const int k_delta = deltas.empty() ? 0 : pick_order(deltas);
    const int k_extra = pick_order(extras);
    std::vector<uint8_t> bits;
    for (uint64_t d : deltas) exp_golomb_append(bits, d, k_delta);
    for (uint64_t e : extras) exp_golomb_append(bits, e, k_extra);

    uint64_t ones = 0;
    for (uint8_t b : bits) ones += b;
    const uint32_t count_one =
        bits.empty() ? 1 : quantize_frequency(static_cast<double>(ones) / bits.size());

    append_le<uint8_t>(out, static_cast<uint8_t>(k_delta));
    append_le<uint8_t>(out, static_cast<uint8_t>(k_extra));
    append_le<uint16_t>(out, static_cast<uint16_t>(count_one));
    append_le<uint32_t>(out, static_cast<uint32_t>(bits.size()));
    const std::vector<uint8_t> payload = encode_binary(bits, count_one);
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

QuantizedLocations decode_locations(const uint8_t* data, size_t size, size_t& cursor) {
    QuantizedLocations q;
    q.count = read_le<uint32_t>(data, size, cursor);
    for (int a = 0; a < 3; ++a) q.bounds.min[a] = read_le<float>(data, size, cursor);
    for (int a = 0; a < 3; ++a) q.bounds.max[a] = read_le<float>(data, size, cursor);
    const uint32_t n_unique = read_le<uint32_t>(data, size, cursor);
    if (n_unique == 0) {
        HACPP_STREAM_CHECK(q.count == 0, "location section: zero codes but nonzero count");
        return q;
    }
    uint64_t first = 0;
    for (int i = 0; i < 6; ++i) {
        first |= static_cast<uint64_t>(read_le<uint8_t>(data, size, cursor)) << (8 * i);
    }
    const int k_delta = read_le<uint8_t>(data, size, cursor);
    const int k_extra = read_le<uint8_t>(data, size, cursor);
    const uint32_t count_one = read_le<uint16_t>(data, size, cursor);
    const uint32_t n_bits = read_le<uint32_t>(data, size, cursor);
    size_t payload_cursor = cursor;
    std::vector<uint8_t> framed(data + cursor, data + size);
    size_t local = 0;
    const std::vector<uint8_t> coder_bytes = unwrap_payload(framed.data(), framed.size(), local);
    cursor = payload_cursor + local;

    RangeDecoder dec(coder_bytes.data(), coder_bytes.size());
    std::vector<uint8_t> bits(n_bits);
    for (uint32_t i = 0; i < n_bits; ++i) {
        bits[i] = static_cast<uint8_t>(dec.decode_bit(count_one));
    }

    size_t pos = 0;
    q.codes.resize(n_unique);
    q.codes[0] = first;
    for (uint32_t i = 1; i < n_unique; ++i) {
        q.codes[i] = q.codes[i - 1] + exp_golomb_read(bits, pos, k_delta) + 1;
    }
    q.dup_counts.resize(n_unique);
    int64_t total = 0;
    for (uint32_t i = 0; i < n_unique; ++i) {
        q.dup_counts[i] = static_cast<uint32_t>(exp_golomb_read(bits, pos, k_extra)) + 1;
        total += q.dup_counts[i];
    }
    HACPP_STREAM_CHECK(total == q.count, "location section: duplicate counts disagree with N");
    q.permutation.resize(q.count);
    std::iota(q.permutation.begin(), q.permutation.end(), 0);
    q.expand();
    return q;
}

}  // namespace hacpp
