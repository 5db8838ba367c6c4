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

#include "hacpp/entropy_model.hpp"

#include <cmath>

namespace hacpp {

namespace {

constexpr float kInvLn2 = 1.4426950408889634f;
constexpr float kInvSqrt2 = 0.7071067811865476f;

Tensor bits_from_prob(const Tensor& p) {
    return mul_scalar(log_op(p), -kInvLn2);
}

Tensor row_sum(const Tensor& a) {
    return mul_scalar(row_mean(a), static_cast<float>(a.shape()[1]));
}

}  // namespace

double gaussian_prob(double fhat, double q, double mu, double sigma) {
    const double p = gaussian_interval_mass(fhat, q, mu, sigma);
    return p < kProbMin ? kProbMin : (p > 1.0 ? 1.0 : p);
}

double gmm_prob(double fhat, double q, double mu_s, double sigma_s, double pi_s, double mu_c,
                double sigma_c, double pi_c) {
    // Two-component softmax reduces to a sigmoid of the logit difference.
    const double theta_s = 1.0 / (1.0 + std::exp(pi_c - pi_s));
    const double p = theta_s * gaussian_interval_mass(fhat, q, mu_s, sigma_s) +
                     (1.0 - theta_s) * gaussian_interval_mass(fhat, q, mu_c, sigma_c);
    return p < kProbMin ? kProbMin : (p > 1.0 ? 1.0 : p);
}

Tensor interval_prob(const Tensor& fhat, const Tensor& q, const Tensor& mu, const Tensor& sigma) {
    Tensor delta = sub(fhat, mu);
    Tensor half_q = mul_scalar(q, 0.5f);
    Tensor inv = reciprocal(mul_scalar(sigma, 1.0f / kInvSqrt2));  // 1 / (sigma * sqrt(2))
    Tensor hi = erf_op(mul(add_cols(delta, half_q), inv));
    Tensor lo = erf_op(mul(add_cols(delta, mul_scalar(half_q, -1.0f)), inv));
    Tensor p = mul_scalar(sub(hi, lo), 0.5f);
    return clamp_min(p, static_cast<float>(kProbMin));
}

Tensor gmm_interval_prob(const Tensor& fhat, const Tensor& q, const Tensor& mu_s,
                         const Tensor& sigma_s, const Tensor& pi_s, const Tensor& mu_c,
                         const Tensor& sigma_c, const Tensor& pi_c) {
    Tensor delta_s = sub(fhat, mu_s);
    Tensor delta_c = sub(fhat, mu_c);
    Tensor half_q = mul_scalar(q, 0.5f);
    Tensor neg_half_q = mul_scalar(half_q, -1.0f);
    Tensor inv_s = reciprocal(mul_scalar(sigma_s, 1.0f / kInvSqrt2));
    Tensor inv_c = reciprocal(mul_scalar(sigma_c, 1.0f / kInvSqrt2));
    Tensor mass_s = mul_scalar(sub(erf_op(mul(add_cols(delta_s, half_q), inv_s)),
                                   erf_op(mul(add_cols(delta_s, neg_half_q), inv_s))),
                               0.5f);
    Tensor mass_c = mul_scalar(sub(erf_op(mul(add_cols(delta_c, half_q), inv_c)),
                                   erf_op(mul(add_cols(delta_c, neg_half_q), inv_c))),
                               0.5f);
    Tensor theta_s = sigmoid(sub(pi_s, pi_c));
    Tensor theta_c = sigmoid(sub(pi_c, pi_s));
    Tensor p = add(mul(theta_s, mass_s), mul(theta_c, mass_c));
    return clamp_min(p, static_cast<float>(kProbMin));
}

// --- context networks ----------------------------------------------------------------

namespace {
// The intra networks stay small: they are stored raw in the bitstream and run
// once per chunk, so a fixed narrow width keeps both overheads bounded.
constexpr int64_t kIntraHiddenWidth = 64;
}  // namespace

ContextModels::ContextModels(int64_t feature_dim, int64_t offsets_per, int64_t hash_feature_dim,
                             int64_t n_chunks, uint64_t seed, bool with_intra)
    : feature_dim_(feature_dim), offsets_per_(offsets_per), n_chunks_(n_chunks) {
    HACPP_CHECK(n_chunks >= 1 && feature_dim % n_chunks == 0,
                "chunk count must divide the feature dimension");
    SequentialRng rng(seed, 0xc0de1ull);
    const int64_t d_total = total_dim();
    // One network emits the step refinements and all Gaussian parameters.
    hac_net_ = DenseNet("hac", {hash_feature_dim, 2 * hash_feature_dim, 2 * hash_feature_dim,
                                3 + 3 * d_total},
                        Activation::Relu, Activation::None, rng, /*zero_init_last=*/true);
    if (!with_intra) return;
    const int64_t c = chunk_channels();
    for (int64_t n = 1; n <= n_chunks; ++n) {
        const int64_t in = (n - 1) * c + 3 * feature_dim_;
        intra_nets_.push_back(DenseNet("intra" + std::to_string(n),
                                       {in, kIntraHiddenWidth, kIntraHiddenWidth, 3 * c},
                                       Activation::Relu, Activation::None, rng,
                                       /*zero_init_last=*/true));
    }
}

HacOutputs ContextModels::hac_context(const Tensor& f_h) const {
    const int64_t d = total_dim();
    Tensor out = hac_net_.forward(f_h);
    HacOutputs h;
    h.r = slice_cols(out, 0, 3);
    h.mu = slice_cols(out, 3, 3 + d);
    h.sigma = add_scalar(softplus(slice_cols(out, 3 + d, 3 + 2 * d)),
                         static_cast<float>(kSigmaFloor));
    h.pi = slice_cols(out, 3 + 2 * d, 3 + 3 * d);
    return h;
}

IntraOutputs ContextModels::intra_context(const Tensor& decoded_prefix, const HacOutputs& hac,
                                          int chunk_index) const {
    HACPP_CHECK(with_intra(), "intra context requested on a model without intra networks");
    HACPP_CHECK(chunk_index >= 1 && chunk_index <= n_chunks_, "chunk index out of range");
    const int64_t c = chunk_channels();
    const int64_t expected_prefix = (chunk_index - 1) * c;
    const int64_t got_prefix = decoded_prefix.defined() ? decoded_prefix.shape()[1] : 0;
    if (got_prefix != expected_prefix) {
        throw Error("out-of-order chunk request: chunk " + std::to_string(chunk_index) +
                    " needs a prefix of " + std::to_string(expected_prefix) + " channels, got " +
                    std::to_string(got_prefix));
    }
    // The feature slice of the HAC parameters is the side information.
    Tensor mu_f = slice_cols(hac.mu, 0, feature_dim_);
    Tensor sigma_f = slice_cols(hac.sigma, 0, feature_dim_);
    Tensor pi_f = slice_cols(hac.pi, 0, feature_dim_);
    Tensor input = expected_prefix > 0
                       ? concat_cols({decoded_prefix, mu_f, sigma_f, pi_f})
                       : concat_cols({mu_f, sigma_f, pi_f});
    Tensor out = intra_nets_[static_cast<size_t>(chunk_index - 1)].forward(input);
    IntraOutputs r;
    r.mu = slice_cols(out, 0, c);
    r.sigma = add_scalar(softplus(slice_cols(out, c, 2 * c)), static_cast<float>(kSigmaFloor));
    r.pi = slice_cols(out, 2 * c, 3 * c);
    return r;
}

std::vector<Tensor> ContextModels::parameters() const {
    std::vector<Tensor> ps = hac_net_.parameters();
    for (const DenseNet& net : intra_nets_) {
        for (const Tensor& p : net.parameters()) ps.push_back(p);
    }
    return ps;
}

void ContextModels::serialize(std::vector<uint8_t>& out) const {
    append_le<uint8_t>(out, static_cast<uint8_t>(intra_nets_.size()));
    hac_net_.serialize(out);
    for (const DenseNet& net : intra_nets_) net.serialize(out);
}

ContextModels ContextModels::deserialize(int64_t feature_dim, int64_t offsets_per,
                                         int64_t n_chunks, const uint8_t* data, size_t size,
                                         size_t& cursor) {
    ContextModels m;
    m.feature_dim_ = feature_dim;
    m.offsets_per_ = offsets_per;
    m.n_chunks_ = n_chunks;
    const uint8_t intra_count = read_le<uint8_t>(data, size, cursor);
    HACPP_STREAM_CHECK(intra_count == 0 || intra_count == n_chunks,
                       "intra network count disagrees with chunk count");
    m.hac_net_ = DenseNet::deserialize("hac", data, size, cursor);
    for (uint8_t n = 1; n <= intra_count; ++n) {
        m.intra_nets_.push_back(
            DenseNet::deserialize("intra" + std::to_string(n), data, size, cursor));
    }
    return m;
}

// --- rate -------------------------------------------------------------------------------

RateResult rate(const Tensor& p_feature, const Tensor& p_scaling, const Tensor& p_offset,
                const Tensor& gaussian_masks, const Tensor& anchor_masks) {
    const int64_t s = p_feature.shape()[0];
    HACPP_CHECK(p_scaling.shape()[0] == s && p_offset.shape()[0] == s &&
                    gaussian_masks.shape()[0] == s && anchor_masks.shape()[0] == s,
                "rate: row count mismatch");
    HACPP_CHECK(p_offset.shape()[1] == gaussian_masks.shape()[1] * 3,
                "rate: offsets/masks shape mismatch");

    Tensor bits_f = bits_from_prob(p_feature);
    Tensor bits_l = bits_from_prob(p_scaling);
    Tensor bits_o = mul(bits_from_prob(p_offset), repeat_cols(gaussian_masks, 3));
    Tensor per_anchor =
        mul(anchor_masks, add(add(row_sum(bits_f), row_sum(bits_l)), row_sum(bits_o)));

    RateResult result;
    result.total_bits = sum_all(per_anchor);

    RateReport& rep = result.report;
    rep.per_anchor_bits.assign(per_anchor.values().begin(), per_anchor.values().end());
    for (double b : rep.per_anchor_bits) rep.total_bits += b;
    const auto& ma = anchor_masks.values();
    const auto& mg = gaussian_masks.values();
    const int64_t df = p_feature.shape()[1], dl = p_scaling.shape()[1];
    const int64_t k = gaussian_masks.shape()[1];
    for (int64_t i = 0; i < s; ++i) {
        if (ma[i] == 0.0f) continue;
        for (int64_t j = 0; j < df; ++j) {
            rep.feature_bits += -std::log2(static_cast<double>(p_feature.values()[i * df + j]));
        }
        rep.feature_params += df;
        for (int64_t j = 0; j < dl; ++j) {
            rep.scaling_bits += -std::log2(static_cast<double>(p_scaling.values()[i * dl + j]));
        }
        rep.scaling_params += dl;
        for (int64_t kk = 0; kk < k; ++kk) {
            if (mg[i * k + kk] == 0.0f) continue;
            for (int64_t j = 0; j < 3; ++j) {
                rep.offset_bits += -std::log2(
                    static_cast<double>(p_offset.values()[i * 3 * k + kk * 3 + j]));
            }
            rep.offset_params += 3;
        }
    }
    return result;
}

}  // namespace hacpp
