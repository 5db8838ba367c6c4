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

#include "hacpp/gauss.hpp"
#include "hacpp/tensor.hpp"

namespace hacpp {

// Conditional probability estimation for anchor attributes: a hash-feature
// context network predicting quantization refinements and Gaussian parameters
// for all channels, a chunk-autoregressive context inside each feature vector,
// and per-channel mixture fusion of the two.

// Scalar interval probability under N(mu, sigma^2), floored at the coder
// resolution. Double precision: this is the coding-side probability and must
// match a high-precision erf oracle.
double gaussian_prob(double fhat, double q, double mu, double sigma);

// Two-component mixture probability with per-channel softmax weights over
// (pi_s, pi_c); floored at the coder resolution.
double gmm_prob(double fhat, double q, double mu_s, double sigma_s, double pi_s, double mu_c,
                double sigma_c, double pi_c);

// --- differentiable (float) counterparts ---------------------------------------

// Interval probability per element; fhat/mu/sigma are [S,D], q is [S,1].
// Floored at the coder resolution (gradient is zero when floored).
Tensor interval_prob(const Tensor& fhat, const Tensor& q, const Tensor& mu, const Tensor& sigma);

// Mixture of two interval probabilities with per-channel softmax of (pi_s, pi_c).
Tensor gmm_interval_prob(const Tensor& fhat, const Tensor& q, const Tensor& mu_s,
                         const Tensor& sigma_s, const Tensor& pi_s, const Tensor& mu_c,
                         const Tensor& sigma_c, const Tensor& pi_c);

// --- context networks ------------------------------------------------------------

struct HacOutputs {
    Tensor r;      // [S, 3]: step refinement per group (feature, scaling, offset)
    Tensor mu;     // [S, D_total]
    Tensor sigma;  // [S, D_total], softplus + floor already applied
    Tensor pi;     // [S, D_total], consumed only on the feature channels
};

struct IntraOutputs {
    Tensor mu;     // [S, c]
    Tensor sigma;  // [S, c]
    Tensor pi;     // [S, c]
};

class ContextModels {
public:
    // n_chunks must divide feature_dim. One shared 3-layer ReLU network emits
    // [r; mu; sigma; pi]; one lightweight network per chunk index handles the
    // intra context (input widths differ per chunk). with_intra=false drops
    // the intra networks entirely (single-Gaussian coding of features).
    ContextModels(int64_t feature_dim, int64_t offsets_per, int64_t hash_feature_dim,
                  int64_t n_chunks, uint64_t seed, bool with_intra = true);

    // f_h: [S, hash_feature_dim] -> per-anchor distribution parameters.
    HacOutputs hac_context(const Tensor& f_h) const;

    // Distribution parameters for chunk `chunk_index` (1-based) given the
    // decoded prefix (chunks 1..chunk_index-1 of fhat^a). The prefix width
    // must be exactly (chunk_index-1)*chunk_channels; anything else is an
    // out-of-order request and throws.
    IntraOutputs intra_context(const Tensor& decoded_prefix, const HacOutputs& hac,
                               int chunk_index) const;

    int64_t feature_dim() const { return feature_dim_; }
    int64_t total_dim() const { return feature_dim_ + 6 + 3 * offsets_per_; }
    int64_t chunk_channels() const { return feature_dim_ / n_chunks_; }
    int64_t n_chunks() const { return n_chunks_; }
    int64_t offsets_per() const { return offsets_per_; }
    bool with_intra() const { return !intra_nets_.empty(); }

    std::vector<Tensor> parameters() const;
    void serialize(std::vector<uint8_t>& out) const;
    static ContextModels deserialize(int64_t feature_dim, int64_t offsets_per, int64_t n_chunks,
                                     const uint8_t* data, size_t size, size_t& cursor);

private:
    ContextModels() = default;
    int64_t feature_dim_ = 0;
    int64_t offsets_per_ = 0;
    int64_t n_chunks_ = 0;
    DenseNet hac_net_;
    std::vector<DenseNet> intra_nets_;  // one per chunk index; empty when disabled
};

// --- rate ---------------------------------------------------------------------------

struct RateReport {
    double total_bits = 0.0;
    std::vector<double> per_anchor_bits;
    double feature_bits = 0.0;
    double scaling_bits = 0.0;
    double offset_bits = 0.0;
    int64_t feature_params = 0;  // parameter counts behind each group's bits
    int64_t scaling_params = 0;
    int64_t offset_params = 0;
};

struct RateResult {
    Tensor total_bits;  // scalar, differentiable through masks and probabilities
    RateReport report;
};

// Mask-aware bit consumption: feature and scaling bits weighted by the anchor
// mask, each offset triplet additionally by its Gaussian mask. Probabilities
// must already be floored.
RateResult rate(const Tensor& p_feature, const Tensor& p_scaling, const Tensor& p_offset,
                const Tensor& gaussian_masks, const Tensor& anchor_masks);

}  // namespace hacpp
