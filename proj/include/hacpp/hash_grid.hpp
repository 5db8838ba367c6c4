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

#include "hacpp/tensor.hpp"

namespace hacpp {

// Mixed 3D/2D multiresolution hash grid with binarized parameters. 3D levels
// interpolate trilinearly; 2D levels project onto the xy, xz, yz planes,
// interpolate bilinearly and average the three planes. The concatenated
// per-level features form the context vector queried at anchor locations.

struct HashGridConfig {
    int levels_3d = 12;
    int res_min_3d = 16;
    int res_max_3d = 512;
    int log2_table_3d = 13;
    int levels_2d = 4;
    int res_min_2d = 128;
    int res_max_2d = 1024;
    int log2_table_2d = 15;
    int feature_dim = 4;  // D^h

    std::vector<int> resolutions_3d() const;  // geometric ladder, strictly increasing
    std::vector<int> resolutions_2d() const;
    int64_t table_size_3d() const { return int64_t{1} << log2_table_3d; }
    int64_t table_size_2d() const { return int64_t{1} << log2_table_2d; }
    int64_t total_params() const;
    int64_t output_dim() const { return int64_t{levels_3d + levels_2d} * feature_dim; }
    void validate() const;
};

// Spatial hash, Instant-NGP convention: XOR of coordinate-times-prime with
// primes (1, 2654435761, 805459861), masked to the (power-of-two) table size.
uint32_t hash_index_3d(int64_t x, int64_t y, int64_t z, uint32_t mask);
uint32_t hash_index_2d(int64_t u, int64_t v, uint32_t mask);

// sign with the fixed tie rule sign(0) = +1.
inline float binarize_value(float latent) { return latent < 0.0f ? -1.0f : 1.0f; }

enum class InterpMode { Binarized, Latent };

class HashGrid {
public:
    HashGrid(const HashGridConfig& cfg, uint64_t seed);
    static HashGrid from_bits(const HashGridConfig& cfg, const std::vector<uint8_t>& bits);

    const HashGridConfig& config() const { return cfg_; }
    std::vector<Tensor> parameters() const { return latents_; }

    // Batched interpolation at x_norm (S*3 floats in [0,1]^3) -> [S, output_dim].
    // Binarized mode evaluates sign(latent) forward with straight-through
    // gradients to the latents; Latent mode interpolates the raw floats.
    Tensor interpolate(const std::vector<float>& x_norm, InterpMode mode) const;

    // Non-graph forward on the binarized view; identical arithmetic (shared
    // kernel, fixed corner order) to the graph path.
    std::vector<float> interpolate_binarized_plain(const std::vector<float>& x_norm) const;

    // Estimated grid bits from the +1 occurrence frequency, differentiable
    // through the straight-through path.
    Tensor rate_bits() const;
    double rate_bits_value() const;
    double plus_frequency() const;  // clamped h_f of the binarized view

    // Bit-packed logical view: one 0/1 entry per parameter, levels in order
    // (3D ascending, then 2D ascending), table order within a level.
    std::vector<uint8_t> to_bits() const;

    // Projects latents back to [-1, 1]; call after each optimizer step.
    void clamp_latents();

private:
    HashGrid() = default;
    HashGridConfig cfg_;
    std::vector<Tensor> latents_;  // per level, [T, D^h]
};

}  // namespace hacpp
