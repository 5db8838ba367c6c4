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
#include <string>
#include <vector>

#include "hacpp/common.hpp"

namespace hacpp {

// Attribute groups carried by each anchor, in fixed channel order:
// feature (D^a channels), scaling (6 channels in (0,1)), offsets (3K channels).
enum class AttributeTag : uint8_t { Feature = 0, Scaling = 1, Offset = 2 };

struct AttributeGroup {
    AttributeTag tag;
    int64_t dim;
    float q0;  // base quantization step, > 0
};

struct SceneBounds {
    std::array<float, 3> min{};
    std::array<float, 3> max{};

    bool contains(const std::array<float, 3>& p) const {
        for (int a = 0; a < 3; ++a) {
            if (p[a] < min[a] || p[a] > max[a]) return false;
        }
        return true;
    }
};

// N anchors: 3D locations plus attribute rows stored row-major per group.
// Immutable after load; validated on construction.
struct AnchorSet {
    int64_t count = 0;
    int64_t feature_dim = 0;   // D^a
    int64_t offsets_per = 0;   // K
    std::vector<float> locations;  // N x 3
    std::vector<float> features;   // N x D^a
    std::vector<float> scalings;   // N x 6, each in (0,1)
    std::vector<float> offsets;    // N x 3K
    // Optional per-offset validity bits (N x K). Decoded reconstructions carry
    // them; when present at encode they override the model's mask logits.
    std::vector<uint8_t> masks;

    int64_t scaling_dim() const { return 6; }
    int64_t offset_dim() const { return 3 * offsets_per; }
    int64_t attribute_dim() const { return feature_dim + 6 + offset_dim(); }

    const float* location(int64_t i) const { return locations.data() + i * 3; }

    // Shape consistency and finiteness. Throws with the offending row index.
    void validate_structure() const;
    // validate_structure plus the strict (0,1) scaling-range ingestion check.
    void validate() const;
};

constexpr float kDefaultQ0Feature = 1.0f;
constexpr float kDefaultQ0Scaling = 0.001f;
constexpr float kDefaultQ0Offset = 0.2f;

// --- IO -------------------------------------------------------------------------

enum class AnchorFormat { Ply, RawBinary };

// PLY binary-little-endian with properties x,y,z, f_anchor_0..D^a-1, l_0..5,
// o_0..3K-1; raw-binary is header(N, D^a, K) + row-major floats per row.
AnchorSet load_anchors(const std::string& path, AnchorFormat format);
void save_anchors(const AnchorSet& anchors, const std::string& path, AnchorFormat format);

// --- geometry ---------------------------------------------------------------------

// AABB of the locations expanded by margin * extent on each side. A margin of
// zero on a degenerate axis is rejected.
SceneBounds compute_bounds(const AnchorSet& anchors, float margin);

// Affine map into the unit cube. Out-of-bounds inputs clamp (decoder-identical).
std::array<float, 3> normalize_location(const std::array<float, 3>& x, const SceneBounds& b);

// --- synthetic data -----------------------------------------------------------------

struct SyntheticConfig {
    int64_t count = 1000;
    int64_t feature_dim = 50;
    int64_t offsets_per = 10;
    uint64_t seed = 0;
    bool clustered = true;        // clustered locations vs uniform
    double cluster_extent = 0.1;  // cluster radius as a fraction of the scene
    int64_t latent_dim = 4;       // per-anchor latent mixed into features
    double feature_noise = 0.1;
    double offset_zero_fraction = 0.4;  // impulse-at-zero share of offsets
};

// Spatially correlated generator: attributes are smooth functions of location
// plus noise; features additionally share a per-anchor latent across channels;
// offsets carry an impulse at zero. Deterministic in the seed.
AnchorSet generate_synthetic(const SyntheticConfig& cfg);

}  // namespace hacpp
