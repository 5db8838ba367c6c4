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

#include <array>
#include <cstdint>
#include <vector>

#include "hacpp/anchors.hpp"

namespace hacpp {

// Lossless coding of 16-bit-quantized anchor locations. Points sort into
// Morton order (the canonical attribute order for the whole bitstream);
// sorted-code deltas go through order-k Exp-Golomb binarization and a binary
// range coder with a global bit frequency.

struct QuantizedLocations {
    std::array<uint32_t, 3> grid(int64_t i) const {
        return {static_cast<uint32_t>(codes_expanded_x[i]),
                static_cast<uint32_t>(codes_expanded_y[i]),
                static_cast<uint32_t>(codes_expanded_z[i])};
    }

    int64_t count = 0;                 // total points, duplicates included
    std::vector<uint64_t> codes;       // sorted unique Morton codes
    std::vector<uint32_t> dup_counts;  // per unique code, >= 1
    std::vector<int64_t> permutation;  // original index per output slot (Morton order)
    SceneBounds bounds;

    // Per-point 16-bit axes in Morton order (filled by expand()).
    std::vector<uint16_t> codes_expanded_x, codes_expanded_y, codes_expanded_z;
    void expand();

    bool operator==(const QuantizedLocations& o) const {
        return count == o.count && codes == o.codes && dup_counts == o.dup_counts;
    }
};

// 48-bit Morton code: bit i of x lands at 3i, y at 3i+1, z at 3i+2.
uint64_t morton3(uint32_t ix, uint32_t iy, uint32_t iz);
std::array<uint32_t, 3> morton3_inverse(uint64_t code);

// Per-axis index floor(normalized * 65535 + 0.5); the permutation maps Morton
// slots to original rows so attributes can follow the canonical order.
QuantizedLocations quantize_locations(const std::vector<float>& locations, int64_t count,
                                      const SceneBounds& bounds);

// Dequantized coordinate for a 16-bit axis index.
float dequantize_axis(uint16_t index, float lo, float hi);

// Section layout: [N: u32][bounds: 6xf32][payload]. Exact round trip,
// including duplicates.
std::vector<uint8_t> encode_locations(const QuantizedLocations& q);
QuantizedLocations decode_locations(const uint8_t* data, size_t size, size_t& cursor);

}  // namespace hacpp
