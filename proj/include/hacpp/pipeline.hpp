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

#include <optional>
#include <string>
#include <vector>

#include "hacpp/anchors.hpp"
#include "hacpp/bitstream.hpp"
#include "hacpp/entropy_model.hpp"
#include "hacpp/hash_grid.hpp"
#include "hacpp/masking.hpp"
#include "hacpp/quantizer.hpp"

namespace hacpp {

// Three-phase training of the codec state, plus the full encode/decode
// protocol. Phase 1 is a distortion-only warmup, phase 2 adds quantization
// noise at the base step, phase 3 trains the full context stack against the
// rate-distortion objective.

struct TrainConfig {
    int64_t iterations = 30000;
    int64_t phase1_end = 3000;
    int64_t phase2_end = 10000;
    float lambda_rate = 1e-3f;
    float sample_fraction = 0.05f;
    uint64_t seed = 0;
    AdamConfig adam;          // lr defaults to 2e-3
    float mask_lr = 0.05f;    // mask logits learn faster (sampled sparsely)
    float q0_feature = kDefaultQ0Feature;
    float q0_scaling = kDefaultQ0Scaling;
    float q0_offset = kDefaultQ0Offset;
    int64_t n_chunks = 5;
    HashGridConfig grid;
    float bounds_margin = 0.05f;
    // Distortion weights per group, roughly equalizing typical magnitudes.
    float w_feature = 1.0f;
    float w_scaling = 1000.0f;
    float w_offset = 25.0f;
    int64_t metrics_every = 50;
    bool enable_intra = true;  // GMM fusion with the intra-anchor context

    void validate() const;
};

struct LossReport {
    double distortion = 0.0;
    double entropy_bits = 0.0;  // estimated attribute bits (full-set scale)
    double hash_bits = 0.0;
    double total = 0.0;
};

struct TrainMetricsEntry {
    int64_t iteration = 0;
    int phase = 0;
    LossReport loss;
};

struct TrainMetrics {
    std::vector<TrainMetricsEntry> curve;
    double final_bits_per_param_feature = 0.0;
    double final_bits_per_param_scaling = 0.0;
    double final_bits_per_param_offset = 0.0;
    double valid_anchor_ratio = 1.0;
    double valid_gaussian_ratio = 1.0;
};

// Everything the encoder needs beyond the anchors themselves.
struct TrainedModel {
    HashGrid grid;
    ContextModels context;
    Tensor mask_logits;  // [N, K]
    SceneBounds bounds;
    TrainConfig config;

    void save(const std::string& path) const;
    static TrainedModel load(const std::string& path);
};

TrainedModel train(const AnchorSet& anchors, const TrainConfig& cfg,
                   TrainMetrics* metrics = nullptr);

// One rate-distortion loss evaluation on the given anchor rows; exposed for
// tests. Entropy terms are only valid from phase 2 on.
struct LossResult {
    Tensor total;
    LossReport report;
};
LossResult evaluate_loss(const AnchorSet& anchors, const TrainedModel& model,
                         const std::vector<int64_t>& sample_ids, int phase, uint64_t iteration,
                         float lambda_rate);

// --- coding -------------------------------------------------------------------------

struct SectionSizes {
    size_t weights = 0, grid = 0, masks = 0, locations = 0, feature = 0, scaling = 0,
           offsets = 0, framing = 0;
    size_t total() const {
        return weights + grid + masks + locations + feature + scaling + offsets + framing;
    }
};

struct EncodeResult {
    std::vector<uint8_t> bytes;
    RateReport estimate;           // coding-time estimated entropy per group
    double grid_bits_estimate = 0.0;
    double mask_bits_estimate = 0.0;
    SectionSizes sizes;
    uint32_t n_valid = 0;
    std::vector<float> locations_morton;  // n_valid x 3, decoder-identical
};

// Emits the full bitstream. Masks come from anchors.masks when present,
// otherwise from the model's mask logits (whose row count must match).
EncodeResult encode(const AnchorSet& anchors, const TrainedModel& model);

struct DecodeResult {
    AnchorSet anchors;  // quantized attributes in Morton order; masks populated
    RateReport estimate;  // recomputed from the same probabilities as encode
    BitstreamHeader header;
};

DecodeResult decode(const std::vector<uint8_t>& bytes);

// --- stats -----------------------------------------------------------------------------

struct VoxelStat {
    int ix = 0, iy = 0, iz = 0;
    int64_t anchors = 0;
    double total_bits = 0.0;
    double mean_bits = 0.0;
};

std::vector<VoxelStat> bit_allocation_stats(const std::vector<float>& locations,
                                            const std::vector<double>& per_anchor_bits,
                                            const SceneBounds& bounds, int resolution);
std::string voxel_stats_csv(const std::vector<VoxelStat>& stats);

}  // namespace hacpp
