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

#include "hacpp/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <tuple>

#include "hacpp/location_codec.hpp"
#include "hacpp/range_coder.hpp"
#include "hacpp/rng.hpp"

namespace hacpp {

namespace {

constexpr uint32_t kModelMagic = 0x4d434148u;  // "HACM"
constexpr uint16_t kModelVersion = 1;

Tensor gather_constant(const std::vector<float>& data, int64_t dim,
                       const std::vector<int64_t>& ids) {
    std::vector<float> rows(ids.size() * static_cast<size_t>(dim));
    for (size_t i = 0; i < ids.size(); ++i) {
        std::copy(data.begin() + ids[i] * dim, data.begin() + (ids[i] + 1) * dim,
                  rows.begin() + static_cast<int64_t>(i) * dim);
    }
    return constant({static_cast<int64_t>(ids.size()), dim}, std::move(rows));
}

// Deterministic sample without replacement; same draw for every lambda.
std::vector<int64_t> sample_ids(uint64_t seed, uint64_t iteration, int64_t n, float fraction) {
    int64_t take = static_cast<int64_t>(std::llround(static_cast<double>(n) * fraction));
    take = std::clamp<int64_t>(take, 1, n);
    if (take == n) {
        std::vector<int64_t> all(n);
        std::iota(all.begin(), all.end(), 0);
        return all;
    }
    CounterRng rng(seed, 0x5a3b1e ^ iteration);
    std::vector<int64_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (int64_t i = 0; i < take; ++i) {
        const int64_t j = i + static_cast<int64_t>(rng.below(static_cast<uint64_t>(i), n - i));
        std::swap(perm[i], perm[j]);
    }
    perm.resize(take);
    std::sort(perm.begin(), perm.end());
    return perm;
}

std::vector<float> normalized_coords(const AnchorSet& anchors, const SceneBounds& bounds,
                                     const std::vector<int64_t>& ids) {
    std::vector<float> out(ids.size() * 3);
    for (size_t i = 0; i < ids.size(); ++i) {
        const std::array<float, 3> x = {anchors.locations[ids[i] * 3],
                                        anchors.locations[ids[i] * 3 + 1],
                                        anchors.locations[ids[i] * 3 + 2]};
        const std::array<float, 3> n = normalize_location(x, bounds);
        out[i * 3] = n[0];
        out[i * 3 + 1] = n[1];
        out[i * 3 + 2] = n[2];
    }
    return out;
}

struct GroupSlices {
    Tensor mu_f, sigma_f, pi_f;
    Tensor mu_l, sigma_l;
    Tensor mu_o, sigma_o;
};

GroupSlices slice_groups(const HacOutputs& hac, int64_t d_feature, int64_t d_offset) {
    GroupSlices g;
    g.mu_f = slice_cols(hac.mu, 0, d_feature);
    g.sigma_f = slice_cols(hac.sigma, 0, d_feature);
    g.pi_f = slice_cols(hac.pi, 0, d_feature);
    g.mu_l = slice_cols(hac.mu, d_feature, d_feature + 6);
    g.sigma_l = slice_cols(hac.sigma, d_feature, d_feature + 6);
    g.mu_o = slice_cols(hac.mu, d_feature + 6, d_feature + 6 + d_offset);
    g.sigma_o = slice_cols(hac.sigma, d_feature + 6, d_feature + 6 + d_offset);
    return g;
}

}  // namespace

void TrainConfig::validate() const {
    HACPP_CHECK(iterations >= 1, "iterations must be positive");
    HACPP_CHECK(0 < phase1_end && phase1_end < phase2_end && phase2_end < iterations,
                "phase boundaries must satisfy 0 < p1 < p2 < total");
    HACPP_CHECK(lambda_rate > 0.0f, "lambda must be positive");
    HACPP_CHECK(sample_fraction > 0.0f && sample_fraction <= 1.0f,
                "sample fraction must lie in (0, 1]");
    HACPP_CHECK(q0_feature > 0.0f && q0_scaling > 0.0f && q0_offset > 0.0f,
                "Q0 values must be positive");
    HACPP_CHECK(n_chunks >= 1, "chunk count must be positive");
    grid.validate();
}

// --- loss ---------------------------------------------------------------------------

LossResult evaluate_loss(const AnchorSet& anchors, const TrainedModel& model,
                         const std::vector<int64_t>& ids, int phase, uint64_t iteration,
                         float lambda_rate) {
    const TrainConfig& cfg = model.config;
    const int64_t s = static_cast<int64_t>(ids.size());
    const int64_t df = anchors.feature_dim, dl = 6, dk = anchors.offsets_per;
    const int64_t d_o = 3 * dk;
    const int64_t d_total = df + dl + d_o;

    Tensor f = gather_constant(anchors.features, df, ids);
    Tensor l = gather_constant(anchors.scalings, dl, ids);
    Tensor o = gather_constant(anchors.offsets, d_o, ids);

    Tensor logits = gather_rows(model.mask_logits, ids);
    Tensor m = gaussian_mask(logits);
    Tensor m_a = anchor_mask(m);

    const CounterRng noise_f(cfg.seed, 101), noise_l(cfg.seed, 102), noise_o(cfg.seed, 103);

    LossResult result;
    LossReport& rep = result.report;

    if (phase == 1) {
        // Distortion-only warmup, no quantization noise.
        Tensor d_off = mean_all(square(sub(apply_mask_render_surrogate(m, o), o)));
        result.total = mul_scalar(d_off, cfg.w_offset);
        rep.distortion = result.total.item();
        rep.total = rep.distortion;
        return result;
    }

    Tensor q_f, q_l, q_o;
    Tensor p_f, p_l, p_o;
    const bool with_context = phase >= 3;
    if (with_context) {
        const std::vector<float> x_norm = normalized_coords(anchors, model.bounds, ids);
        Tensor f_h = model.grid.interpolate(x_norm, InterpMode::Binarized);
        HacOutputs hac = model.context.hac_context(f_h);
        q_f = step_size(slice_cols(hac.r, 0, 1), cfg.q0_feature);
        q_l = step_size(slice_cols(hac.r, 1, 2), cfg.q0_scaling);
        q_o = step_size(slice_cols(hac.r, 2, 3), cfg.q0_offset);

        Tensor fhat_f = quantize_train(f, q_f, noise_f, iteration, ids);
        Tensor fhat_l = quantize_train(l, q_l, noise_l, iteration, ids);
        Tensor fhat_o = quantize_train(o, q_o, noise_o, iteration, ids);

        GroupSlices g = slice_groups(hac, df, d_o);
        if (model.context.with_intra()) {
            const int64_t c = model.context.chunk_channels();
            std::vector<Tensor> mu_chunks, sigma_chunks, pi_chunks;
            for (int64_t n = 1; n <= model.context.n_chunks(); ++n) {
                Tensor prefix;
                if (n > 1) prefix = slice_cols(fhat_f, 0, (n - 1) * c);
                IntraOutputs intra = model.context.intra_context(prefix, hac, static_cast<int>(n));
                mu_chunks.push_back(intra.mu);
                sigma_chunks.push_back(intra.sigma);
                pi_chunks.push_back(intra.pi);
            }
            Tensor mu_c = concat_cols(mu_chunks);
            Tensor sigma_c = concat_cols(sigma_chunks);
            Tensor pi_c = concat_cols(pi_chunks);
            p_f = gmm_interval_prob(fhat_f, q_f, g.mu_f, g.sigma_f, g.pi_f, mu_c, sigma_c, pi_c);
        } else {
            p_f = interval_prob(fhat_f, q_f, g.mu_f, g.sigma_f);
        }
        p_l = interval_prob(fhat_l, q_l, g.mu_l, g.sigma_l);
        p_o = interval_prob(fhat_o, q_o, g.mu_o, g.sigma_o);

        Tensor d_feat = mul_scalar(mean_all(square(sub(fhat_f, f))), cfg.w_feature);
        Tensor d_scal = mul_scalar(mean_all(square(sub(fhat_l, l))), cfg.w_scaling);
        Tensor d_off = mul_scalar(
            mean_all(square(sub(apply_mask_render_surrogate(m, fhat_o), o))), cfg.w_offset);
        Tensor distortion = add(add(d_feat, d_scal), d_off);

        RateResult rr = rate(p_f, p_l, p_o, m, m_a);
        Tensor hash_bits = model.grid.rate_bits();
        const double scale_sample = static_cast<double>(anchors.count) / static_cast<double>(s);
        const double norm = 1.0 / (static_cast<double>(anchors.count) * d_total);
        Tensor entropy_term = mul_scalar(rr.total_bits, static_cast<float>(scale_sample * norm));
        Tensor hash_term = mul_scalar(hash_bits, static_cast<float>(norm));
        result.total =
            add(distortion, mul_scalar(add(entropy_term, hash_term), lambda_rate));

        rep.distortion = distortion.item();
        rep.entropy_bits = rr.report.total_bits * scale_sample;
        rep.hash_bits = hash_bits.item();
        rep.total = result.total.item();
        return result;
    }

    // Phase 2: noise at the base step only, no context networks, no entropy.
    Tensor q_const_f = constant({s, 1}, std::vector<float>(s, cfg.q0_feature));
    Tensor q_const_l = constant({s, 1}, std::vector<float>(s, cfg.q0_scaling));
    Tensor q_const_o = constant({s, 1}, std::vector<float>(s, cfg.q0_offset));
    Tensor fhat_f = quantize_train(f, q_const_f, noise_f, iteration, ids);
    Tensor fhat_l = quantize_train(l, q_const_l, noise_l, iteration, ids);
    Tensor fhat_o = quantize_train(o, q_const_o, noise_o, iteration, ids);
    Tensor d_feat = mul_scalar(mean_all(square(sub(fhat_f, f))), cfg.w_feature);
    Tensor d_scal = mul_scalar(mean_all(square(sub(fhat_l, l))), cfg.w_scaling);
    Tensor d_off = mul_scalar(
        mean_all(square(sub(apply_mask_render_surrogate(m, fhat_o), o))), cfg.w_offset);
    result.total = add(add(d_feat, d_scal), d_off);
    rep.distortion = result.total.item();
    rep.total = rep.distortion;
    return result;
}

// --- training ------------------------------------------------------------------------

TrainedModel train(const AnchorSet& anchors, const TrainConfig& cfg, TrainMetrics* metrics) {
    anchors.validate();
    cfg.validate();
    HACPP_CHECK(anchors.feature_dim % cfg.n_chunks == 0,
                "feature dimension must divide into chunks");

    TrainedModel model{
        HashGrid(cfg.grid, cfg.seed),
        ContextModels(anchors.feature_dim, anchors.offsets_per, cfg.grid.output_dim(),
                      cfg.n_chunks, cfg.seed, cfg.enable_intra),
        make_parameter("mask_logits", {anchors.count, anchors.offsets_per},
                       std::vector<float>(anchors.count * anchors.offsets_per, 1.0f)),
        compute_bounds(anchors, cfg.bounds_margin),
        cfg,
    };

    std::vector<Tensor> params = model.grid.parameters();
    for (const Tensor& p : model.context.parameters()) params.push_back(p);
    params.push_back(model.mask_logits);
    Adam opt(params, cfg.adam);
    opt.set_param_lr("mask_logits", cfg.mask_lr);

    for (int64_t iter = 0; iter < cfg.iterations; ++iter) {
        const int phase = iter < cfg.phase1_end ? 1 : (iter < cfg.phase2_end ? 2 : 3);
        const std::vector<int64_t> ids =
            sample_ids(cfg.seed, static_cast<uint64_t>(iter), anchors.count,
                       cfg.sample_fraction);
        LossResult loss = evaluate_loss(anchors, model, ids, phase,
                                        static_cast<uint64_t>(iter), cfg.lambda_rate);
        if (!std::isfinite(loss.report.total)) {
            throw DivergenceError("training diverged (non-finite loss) at iteration " +
                                  std::to_string(iter) + ", phase " + std::to_string(phase));
        }
        backward(loss.total);
        opt.step();
        model.grid.clamp_latents();
        opt.zero_grad();

        if (metrics && (iter % cfg.metrics_every == 0 || iter + 1 == cfg.iterations)) {
            metrics->curve.push_back({iter, phase, loss.report});
        }
    }

    if (metrics) {
        // Final mask statistics and a full-set rate estimate at eval scale.
        const auto& logits = model.mask_logits.values();
        int64_t valid_g = 0, valid_a = 0;
        for (int64_t i = 0; i < anchors.count; ++i) {
            bool any = false;
            for (int64_t k = 0; k < anchors.offsets_per; ++k) {
                if (mask_value(logits[i * anchors.offsets_per + k])) {
                    ++valid_g;
                    any = true;
                }
            }
            if (any) ++valid_a;
        }
        metrics->valid_gaussian_ratio =
            static_cast<double>(valid_g) / static_cast<double>(anchors.count * anchors.offsets_per);
        metrics->valid_anchor_ratio =
            static_cast<double>(valid_a) / static_cast<double>(anchors.count);
        EncodeResult enc = encode(anchors, model);
        const RateReport& r = enc.estimate;
        if (r.feature_params > 0) {
            metrics->final_bits_per_param_feature = r.feature_bits / r.feature_params;
        }
        if (r.scaling_params > 0) {
            metrics->final_bits_per_param_scaling = r.scaling_bits / r.scaling_params;
        }
        if (r.offset_params > 0) {
            metrics->final_bits_per_param_offset = r.offset_bits / r.offset_params;
        }
    }
    return model;
}

// --- model state file ------------------------------------------------------------------

void TrainedModel::save(const std::string& path) const {
    std::vector<uint8_t> out;
    append_le<uint32_t>(out, kModelMagic);
    append_le<uint16_t>(out, kModelVersion);
    append_le<uint32_t>(out, static_cast<uint32_t>(mask_logits.shape()[0]));
    append_le<uint16_t>(out, static_cast<uint16_t>(context.feature_dim()));
    append_le<uint16_t>(out, static_cast<uint16_t>(context.offsets_per()));
    append_le<uint16_t>(out, static_cast<uint16_t>(context.n_chunks()));
    append_le<uint16_t>(out, static_cast<uint16_t>(config.grid.levels_3d));
    append_le<uint16_t>(out, static_cast<uint16_t>(config.grid.res_min_3d));
    append_le<uint16_t>(out, static_cast<uint16_t>(config.grid.res_max_3d));
    append_le<uint8_t>(out, static_cast<uint8_t>(config.grid.log2_table_3d));
    append_le<uint16_t>(out, static_cast<uint16_t>(config.grid.levels_2d));
    append_le<uint16_t>(out, static_cast<uint16_t>(config.grid.res_min_2d));
    append_le<uint16_t>(out, static_cast<uint16_t>(config.grid.res_max_2d));
    append_le<uint8_t>(out, static_cast<uint8_t>(config.grid.log2_table_2d));
    append_le<uint8_t>(out, static_cast<uint8_t>(config.grid.feature_dim));
    for (int a = 0; a < 3; ++a) append_le<float>(out, bounds.min[a]);
    for (int a = 0; a < 3; ++a) append_le<float>(out, bounds.max[a]);
    append_le<float>(out, config.q0_feature);
    append_le<float>(out, config.q0_scaling);
    append_le<float>(out, config.q0_offset);
    append_le<float>(out, config.lambda_rate);
    for (const Tensor& latent : grid.parameters()) {
        for (float v : latent.values()) append_le<float>(out, v);
    }
    context.serialize(out);
    for (float v : mask_logits.values()) append_le<float>(out, v);

    std::ofstream f(path, std::ios::binary);
    HACPP_CHECK(f.good(), "cannot open model state for writing: " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    HACPP_CHECK(f.good(), "model state write failed: " + path);
}

TrainedModel TrainedModel::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    HACPP_CHECK(f.good(), "cannot open model state: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    size_t cursor = 0;
    const uint8_t* data = bytes.data();
    const size_t size = bytes.size();
    HACPP_STREAM_CHECK(read_le<uint32_t>(data, size, cursor) == kModelMagic,
                       path + ": not a model state file");
    HACPP_STREAM_CHECK(read_le<uint16_t>(data, size, cursor) == kModelVersion,
                       path + ": unsupported model state version");
    const uint32_t n = read_le<uint32_t>(data, size, cursor);
    TrainConfig cfg;
    const uint16_t feature_dim = read_le<uint16_t>(data, size, cursor);
    const uint16_t offsets_per = read_le<uint16_t>(data, size, cursor);
    cfg.n_chunks = read_le<uint16_t>(data, size, cursor);
    cfg.grid.levels_3d = read_le<uint16_t>(data, size, cursor);
    cfg.grid.res_min_3d = read_le<uint16_t>(data, size, cursor);
    cfg.grid.res_max_3d = read_le<uint16_t>(data, size, cursor);
    cfg.grid.log2_table_3d = read_le<uint8_t>(data, size, cursor);
    cfg.grid.levels_2d = read_le<uint16_t>(data, size, cursor);
    cfg.grid.res_min_2d = read_le<uint16_t>(data, size, cursor);
    cfg.grid.res_max_2d = read_le<uint16_t>(data, size, cursor);
    cfg.grid.log2_table_2d = read_le<uint8_t>(data, size, cursor);
    cfg.grid.feature_dim = read_le<uint8_t>(data, size, cursor);
    SceneBounds bounds;
    for (int a = 0; a < 3; ++a) bounds.min[a] = read_le<float>(data, size, cursor);
    for (int a = 0; a < 3; ++a) bounds.max[a] = read_le<float>(data, size, cursor);
    cfg.q0_feature = read_le<float>(data, size, cursor);
    cfg.q0_scaling = read_le<float>(data, size, cursor);
    cfg.q0_offset = read_le<float>(data, size, cursor);
    cfg.lambda_rate = read_le<float>(data, size, cursor);

    std::vector<uint8_t> grid_bits(cfg.grid.total_params(), 0);
    HashGrid grid = HashGrid::from_bits(cfg.grid, grid_bits);
    for (const Tensor& latent : grid.parameters()) {
        auto& vals = const_cast<Tensor&>(latent).mutable_values();
        for (float& v : vals) v = read_le<float>(data, size, cursor);
    }
    ContextModels context =
        ContextModels::deserialize(feature_dim, offsets_per, cfg.n_chunks, data, size, cursor);
    cfg.enable_intra = context.with_intra();
    std::vector<float> logits(static_cast<size_t>(n) * offsets_per);
    for (float& v : logits) v = read_le<float>(data, size, cursor);
    Tensor mask_logits = make_parameter("mask_logits",
                                        {static_cast<int64_t>(n), offsets_per}, std::move(logits));
    return TrainedModel{std::move(grid), std::move(context), std::move(mask_logits), bounds, cfg};
}

// --- coding helpers ----------------------------------------------------------------------

namespace {

struct HacValues {
    std::vector<float> r;             // [n, 3]
    std::vector<float> mu, sigma, pi; // [n, d_total]
    std::vector<float> q_f, q_l, q_o; // [n]
    int64_t n = 0;
    int64_t d_total = 0;
};

// Coding-path model evaluation at decoder-visible coordinates. All inputs are
// constants so the graph dies immediately; the arithmetic is identical on
// both sides.
HacValues eval_hac_values(const HashGrid& grid, const ContextModels& context,
                          const std::vector<float>& x_norm, const std::array<float, 3>& q0) {
    HacValues h;
    h.n = static_cast<int64_t>(x_norm.size() / 3);
    h.d_total = context.total_dim();
    Tensor f_h_graph = grid.interpolate(x_norm, InterpMode::Binarized);
    Tensor f_h = constant(f_h_graph.shape(), f_h_graph.values());
    HacOutputs hac = context.hac_context(f_h);
    h.r = hac.r.values();
    h.mu = hac.mu.values();
    h.sigma = hac.sigma.values();
    h.pi = hac.pi.values();
    h.q_f.resize(h.n);
    h.q_l.resize(h.n);
    h.q_o.resize(h.n);
    for (int64_t i = 0; i < h.n; ++i) {
        h.q_f[i] = step_size_value(h.r[i * 3 + 0], q0[0]);
        h.q_l[i] = step_size_value(h.r[i * 3 + 1], q0[1]);
        h.q_o[i] = step_size_value(h.r[i * 3 + 2], q0[2]);
    }
    return h;
}

HacOutputs hac_values_as_constants(const HacValues& h) {
    HacOutputs out;
    out.r = constant({h.n, 3}, h.r);
    out.mu = constant({h.n, h.d_total}, h.mu);
    out.sigma = constant({h.n, h.d_total}, h.sigma);
    out.pi = constant({h.n, h.d_total}, h.pi);
    return out;
}

struct IntraValues {
    std::vector<float> mu, sigma, pi;  // [n, c]
};

IntraValues eval_intra_chunk(const ContextModels& context, const HacValues& hac,
                             const std::vector<float>& fhat_features, int chunk) {
    const int64_t c = context.chunk_channels();
    const int64_t df = context.feature_dim();
    const int64_t prefix_w = (chunk - 1) * c;
    Tensor prefix;
    if (prefix_w > 0) {
        std::vector<float> pvals(static_cast<size_t>(hac.n * prefix_w));
        for (int64_t i = 0; i < hac.n; ++i) {
            std::copy(fhat_features.begin() + i * df, fhat_features.begin() + i * df + prefix_w,
                      pvals.begin() + i * prefix_w);
        }
        prefix = constant({hac.n, prefix_w}, std::move(pvals));
    }
    IntraOutputs out = context.intra_context(prefix, hac_values_as_constants(hac), chunk);
    return {out.mu.values(), out.sigma.values(), out.pi.values()};
}

// Gaussian probabilities for all symbols in [k_min, k_max] at step q.
// Evaluated as one erf chain over the bin edges (deterministic, shared by
// encoder and decoder).
std::vector<double> gauss_probs_range(int32_t k_min, int32_t k_max, double q, double mu,
                                      double sigma) {
    const int64_t span = static_cast<int64_t>(k_max) - k_min + 1;
    const double inv = 1.0 / (sigma * std::sqrt(2.0));
    std::vector<double> edges(static_cast<size_t>(span) + 1);
    for (int64_t e = 0; e <= span; ++e) {
        const double x = (static_cast<double>(k_min + e) - 0.5) * q;
        edges[static_cast<size_t>(e)] = std::erf((x - mu) * inv);
    }
    std::vector<double> probs(static_cast<size_t>(span));
    for (int64_t i = 0; i < span; ++i) {
        probs[static_cast<size_t>(i)] =
            0.5 * (edges[static_cast<size_t>(i) + 1] - edges[static_cast<size_t>(i)]);
    }
    return probs;
}

std::vector<double> gmm_probs_range(int32_t k_min, int32_t k_max, double q, double mu_s,
                                    double sigma_s, double pi_s, double mu_c, double sigma_c,
                                    double pi_c) {
    const double theta_s = 1.0 / (1.0 + std::exp(pi_c - pi_s));
    std::vector<double> ps = gauss_probs_range(k_min, k_max, q, mu_s, sigma_s);
    const std::vector<double> pc = gauss_probs_range(k_min, k_max, q, mu_c, sigma_c);
    for (size_t i = 0; i < ps.size(); ++i) {
        ps[i] = theta_s * ps[i] + (1.0 - theta_s) * pc[i];
    }
    return ps;
}

std::vector<uint8_t> mask_bits_for(const AnchorSet& anchors, const TrainedModel& model) {
    if (!anchors.masks.empty()) return anchors.masks;
    HACPP_CHECK(model.mask_logits.shape()[0] == anchors.count,
                "mask logits row count does not match the anchor set");
    const auto& logits = model.mask_logits.values();
    std::vector<uint8_t> bits(anchors.count * anchors.offsets_per);
    for (size_t i = 0; i < bits.size(); ++i) bits[i] = mask_value(logits[i]) ? 1 : 0;
    return bits;
}

}  // namespace

// --- encode ---------------------------------------------------------------------------

EncodeResult encode(const AnchorSet& anchors, const TrainedModel& model) {
    anchors.validate_structure();
    HACPP_CHECK(anchors.feature_dim == model.context.feature_dim() &&
                    anchors.offsets_per == model.context.offsets_per(),
                "anchor dimensions do not match the trained model");
    const TrainConfig& cfg = model.config;
    const int64_t df = anchors.feature_dim;
    const int64_t kk = anchors.offsets_per;
    const int64_t d_o = 3 * kk;
    const int64_t d_total = df + 6 + d_o;

    EncodeResult result;
    BitstreamHeader header;
    header.n_total = static_cast<uint32_t>(anchors.count);
    header.feature_dim = static_cast<uint16_t>(df);
    header.offsets_per = static_cast<uint16_t>(kk);
    header.n_chunks = static_cast<uint16_t>(model.context.n_chunks());
    header.grid = model.config.grid;
    header.bounds = model.bounds;
    header.q0 = {cfg.q0_feature, cfg.q0_scaling, cfg.q0_offset};
    header.channel_bounds.assign(static_cast<size_t>(d_total), {0, 0});

    // Masks decide the valid set before anything is coded.
    const std::vector<uint8_t> all_mask_bits = mask_bits_for(anchors, model);
    std::vector<int64_t> valid_ids;
    for (int64_t i = 0; i < anchors.count; ++i) {
        for (int64_t k = 0; k < kk; ++k) {
            if (all_mask_bits[i * kk + k]) {
                valid_ids.push_back(i);
                break;
            }
        }
    }
    const int64_t n_valid = static_cast<int64_t>(valid_ids.size());
    header.n_valid = static_cast<uint32_t>(n_valid);
    result.n_valid = static_cast<uint32_t>(n_valid);

    // Grid bits and their frequency.
    const std::vector<uint8_t> grid_bits = model.grid.to_bits();
    header.grid_count_one = static_cast<uint16_t>(quantize_frequency(model.grid.plus_frequency()));
    const double log2_g1 = -std::log2(header.grid_count_one / 65536.0);
    const double log2_g0 = -std::log2(1.0 - header.grid_count_one / 65536.0);
    for (uint8_t b : grid_bits) result.grid_bits_estimate += b ? log2_g1 : log2_g0;

    std::vector<std::pair<SectionId, std::vector<uint8_t>>> sections;
    {
        std::vector<uint8_t> weights;
        model.context.serialize(weights);
        sections.emplace_back(SectionId::Weights, wrap_payload(weights));
    }
    sections.emplace_back(SectionId::Grid, encode_binary(grid_bits, header.grid_count_one));

    if (n_valid == 0) {
        header.mask_count_one = 1;
        result.bytes = assemble_bitstream(header, sections);
        const ParsedBitstream parsed = parse_bitstream(result.bytes);
        result.sizes.weights = parsed.section_blob_size(SectionId::Weights);
        result.sizes.grid = parsed.section_blob_size(SectionId::Grid);
        result.sizes.framing = parsed.framing_size();
        return result;
    }

    // Quantize valid locations and establish the canonical Morton order.
    std::vector<float> valid_locs(n_valid * 3);
    for (int64_t v = 0; v < n_valid; ++v) {
        std::copy(anchors.locations.begin() + valid_ids[v] * 3,
                  anchors.locations.begin() + (valid_ids[v] + 1) * 3, valid_locs.begin() + v * 3);
    }
    QuantizedLocations qloc = quantize_locations(valid_locs, n_valid, model.bounds);
    std::vector<int64_t> order(n_valid);  // Morton slot -> original anchor index
    for (int64_t slot = 0; slot < n_valid; ++slot) {
        order[slot] = valid_ids[qloc.permutation[slot]];
    }

    // Attribute rows and masks in Morton order.
    std::vector<float> feat(n_valid * df), scal(n_valid * 6), offs(n_valid * d_o);
    std::vector<uint8_t> mask_bits(n_valid * kk);
    for (int64_t slot = 0; slot < n_valid; ++slot) {
        const int64_t i = order[slot];
        std::copy(anchors.features.begin() + i * df, anchors.features.begin() + (i + 1) * df,
                  feat.begin() + slot * df);
        std::copy(anchors.scalings.begin() + i * 6, anchors.scalings.begin() + (i + 1) * 6,
                  scal.begin() + slot * 6);
        std::copy(anchors.offsets.begin() + i * d_o, anchors.offsets.begin() + (i + 1) * d_o,
                  offs.begin() + slot * d_o);
        std::copy(all_mask_bits.begin() + i * kk, all_mask_bits.begin() + (i + 1) * kk,
                  mask_bits.begin() + slot * kk);
    }

    uint64_t mask_ones = 0;
    for (uint8_t b : mask_bits) mask_ones += b;
    header.mask_count_one = static_cast<uint16_t>(
        quantize_frequency(static_cast<double>(mask_ones) / mask_bits.size()));
    const double log2_m1 = -std::log2(header.mask_count_one / 65536.0);
    const double log2_m0 = -std::log2(1.0 - header.mask_count_one / 65536.0);
    for (uint8_t b : mask_bits) result.mask_bits_estimate += b ? log2_m1 : log2_m0;
    sections.emplace_back(SectionId::Masks, encode_binary(mask_bits, header.mask_count_one));
    sections.emplace_back(SectionId::Locations, wrap_payload(encode_locations(qloc)));

    // Decoder-visible coordinates: 16-bit lattice points in the unit cube.
    std::vector<float> x_norm(n_valid * 3);
    result.locations_morton.resize(n_valid * 3);
    for (int64_t i = 0; i < n_valid; ++i) {
        const auto axes = qloc.grid(i);
        for (int a = 0; a < 3; ++a) {
            x_norm[i * 3 + a] = static_cast<float>(axes[a]) / 65535.0f;
            result.locations_morton[i * 3 + a] =
                dequantize_axis(static_cast<uint16_t>(axes[a]), model.bounds.min[a],
                                model.bounds.max[a]);
        }
    }
    const HacValues hac =
        eval_hac_values(model.grid, model.context, x_norm, header.q0);
    for (const auto* vals : {&hac.mu, &hac.sigma, &hac.pi}) {
        for (float v : *vals) {
            HACPP_CHECK(std::isfinite(v), "non-finite context model output; encode aborted");
        }
    }

    // Quantization pre-pass: symbols, reconstructions, channel bounds.
    std::vector<int32_t> sym_f(n_valid * df), sym_l(n_valid * 6), sym_o(n_valid * d_o, 0);
    std::vector<float> fhat_f(n_valid * df), fhat_l(n_valid * 6), fhat_o(n_valid * d_o, 0.0f);
    auto widen = [&](int64_t channel, int32_t k) {
        auto& [lo, hi] = header.channel_bounds[static_cast<size_t>(channel)];
        lo = std::min(lo, k);
        hi = std::max(hi, k);
    };
    for (int64_t i = 0; i < n_valid; ++i) {
        for (int64_t j = 0; j < df; ++j) {
            const QuantizedValue qv = quantize_eval(feat[i * df + j], hac.q_f[i]);
            sym_f[i * df + j] = qv.symbol;
            fhat_f[i * df + j] = qv.value;
            widen(j, qv.symbol);
        }
        for (int64_t j = 0; j < 6; ++j) {
            const QuantizedValue qv = quantize_eval(scal[i * 6 + j], hac.q_l[i]);
            sym_l[i * 6 + j] = qv.symbol;
            fhat_l[i * 6 + j] = qv.value;
            widen(df + j, qv.symbol);
        }
        for (int64_t k = 0; k < kk; ++k) {
            if (!mask_bits[i * kk + k]) continue;
            for (int64_t j = 0; j < 3; ++j) {
                const QuantizedValue qv = quantize_eval(offs[i * d_o + k * 3 + j], hac.q_o[i]);
                sym_o[i * d_o + k * 3 + j] = qv.symbol;
                fhat_o[i * d_o + k * 3 + j] = qv.value;
                widen(df + 6 + k * 3 + j, qv.symbol);
            }
        }
    }

    RateReport& est = result.estimate;
    est.per_anchor_bits.assign(n_valid, 0.0);

    // Feature payload, chunk by chunk under the mixture model.
    {
        RangeEncoder enc;
        const int64_t c = model.context.chunk_channels();
        const bool intra = model.context.with_intra();
        for (int64_t chunk = 1; chunk <= model.context.n_chunks(); ++chunk) {
            IntraValues iv;
            if (intra) {
                iv = eval_intra_chunk(model.context, hac, fhat_f, static_cast<int>(chunk));
            }
            for (int64_t i = 0; i < n_valid; ++i) {
                const double q = hac.q_f[i];
                for (int64_t jc = 0; jc < c; ++jc) {
                    const int64_t j = (chunk - 1) * c + jc;
                    const auto& [lo, hi] = header.channel_bounds[static_cast<size_t>(j)];
                    const double mu_s = hac.mu[i * d_total + j];
                    const double sg_s = hac.sigma[i * d_total + j];
                    double p_sym;
                    QuantizedCdf cdf;
                    if (intra) {
                        const double pi_s = hac.pi[i * d_total + j];
                        const double mu_c = iv.mu[i * c + jc];
                        const double sg_c = iv.sigma[i * c + jc];
                        const double pi_c = iv.pi[i * c + jc];
                        cdf = build_cdf_from_probs(
                            gmm_probs_range(lo, hi, q, mu_s, sg_s, pi_s, mu_c, sg_c, pi_c), lo);
                        p_sym = gmm_prob(fhat_f[i * df + j], q, mu_s, sg_s, pi_s, mu_c, sg_c,
                                         pi_c);
                    } else {
                        cdf = build_cdf_from_probs(gauss_probs_range(lo, hi, q, mu_s, sg_s), lo);
                        p_sym = gaussian_prob(fhat_f[i * df + j], q, mu_s, sg_s);
                    }
                    enc.encode_symbol(cdf, sym_f[i * df + j]);
                    const double bits = -std::log2(p_sym);
                    est.feature_bits += bits;
                    est.per_anchor_bits[i] += bits;
                }
            }
        }
        est.feature_params = n_valid * df;
        sections.emplace_back(SectionId::Feature, wrap_payload(enc.finish()));
    }

    // Scaling payload: single-Gaussian context.
    {
        RangeEncoder enc;
        for (int64_t i = 0; i < n_valid; ++i) {
            const double q = hac.q_l[i];
            for (int64_t j = 0; j < 6; ++j) {
                const auto& [lo, hi] = header.channel_bounds[static_cast<size_t>(df + j)];
                const double mu = hac.mu[i * d_total + df + j];
                const double sg = hac.sigma[i * d_total + df + j];
                const QuantizedCdf cdf =
                    build_cdf_from_probs(gauss_probs_range(lo, hi, q, mu, sg), lo);
                enc.encode_symbol(cdf, sym_l[i * 6 + j]);
                const double bits = -std::log2(gaussian_prob(fhat_l[i * 6 + j], q, mu, sg));
                est.scaling_bits += bits;
                est.per_anchor_bits[i] += bits;
            }
        }
        est.scaling_params = n_valid * 6;
        sections.emplace_back(SectionId::Scaling, wrap_payload(enc.finish()));
    }

    // Offset payload: valid offsets only.
    {
        RangeEncoder enc;
        for (int64_t i = 0; i < n_valid; ++i) {
            const double q = hac.q_o[i];
            for (int64_t k = 0; k < kk; ++k) {
                if (!mask_bits[i * kk + k]) continue;
                for (int64_t j = 0; j < 3; ++j) {
                    const int64_t ch = k * 3 + j;
                    const auto& [lo, hi] =
                        header.channel_bounds[static_cast<size_t>(df + 6 + ch)];
                    const double mu = hac.mu[i * d_total + df + 6 + ch];
                    const double sg = hac.sigma[i * d_total + df + 6 + ch];
                    const QuantizedCdf cdf =
                        build_cdf_from_probs(gauss_probs_range(lo, hi, q, mu, sg), lo);
                    enc.encode_symbol(cdf, sym_o[i * d_o + ch]);
                    const double bits =
                        -std::log2(gaussian_prob(fhat_o[i * d_o + ch], q, mu, sg));
                    est.offset_bits += bits;
                    est.per_anchor_bits[i] += bits;
                    est.offset_params += 3;
                }
            }
        }
        sections.emplace_back(SectionId::Offsets, wrap_payload(enc.finish()));
    }
    est.total_bits = est.feature_bits + est.scaling_bits + est.offset_bits;

    result.bytes = assemble_bitstream(header, sections);
    const ParsedBitstream parsed = parse_bitstream(result.bytes);
    result.sizes.weights = parsed.section_blob_size(SectionId::Weights);
    result.sizes.grid = parsed.section_blob_size(SectionId::Grid);
    result.sizes.masks = parsed.section_blob_size(SectionId::Masks);
    result.sizes.locations = parsed.section_blob_size(SectionId::Locations);
    result.sizes.feature = parsed.section_blob_size(SectionId::Feature);
    result.sizes.scaling = parsed.section_blob_size(SectionId::Scaling);
    result.sizes.offsets = parsed.section_blob_size(SectionId::Offsets);
    result.sizes.framing = parsed.framing_size();
    return result;
}

// --- decode ---------------------------------------------------------------------------

DecodeResult decode(const std::vector<uint8_t>& bytes) {
    const ParsedBitstream parsed = parse_bitstream(bytes);
    const BitstreamHeader& header = parsed.header;
    const int64_t df = header.feature_dim;
    const int64_t kk = header.offsets_per;
    const int64_t d_o = 3 * kk;
    const int64_t d_total = df + 6 + d_o;

    DecodeResult result;
    result.header = header;

    const std::vector<uint8_t> weights = parsed.section(SectionId::Weights);
    size_t wcursor = 0;
    ContextModels context = ContextModels::deserialize(df, kk, header.n_chunks, weights.data(),
                                                       weights.size(), wcursor);

    const std::vector<uint8_t> grid_coder = parsed.section(SectionId::Grid);
    std::vector<uint8_t> grid_bits(static_cast<size_t>(header.grid.total_params()));
    {
        RangeDecoder dec(grid_coder.data(), grid_coder.size());
        for (auto& b : grid_bits) {
            b = static_cast<uint8_t>(dec.decode_bit(header.grid_count_one));
        }
    }
    HashGrid grid = HashGrid::from_bits(header.grid, grid_bits);

    AnchorSet& out = result.anchors;
    out.count = header.n_valid;
    out.feature_dim = df;
    out.offsets_per = kk;
    if (header.n_valid == 0) return result;

    const int64_t n = header.n_valid;
    const std::vector<uint8_t> mask_coder = parsed.section(SectionId::Masks);
    std::vector<uint8_t> mask_bits(static_cast<size_t>(n * kk));
    {
        RangeDecoder dec(mask_coder.data(), mask_coder.size());
        for (auto& b : mask_bits) {
            b = static_cast<uint8_t>(dec.decode_bit(header.mask_count_one));
        }
    }

    const std::vector<uint8_t> loc_payload = parsed.section(SectionId::Locations);
    size_t lcursor = 0;
    QuantizedLocations qloc = decode_locations(loc_payload.data(), loc_payload.size(), lcursor);
    HACPP_STREAM_CHECK(qloc.count == n, "location count disagrees with header");

    out.locations.resize(n * 3);
    std::vector<float> x_norm(n * 3);
    for (int64_t i = 0; i < n; ++i) {
        const auto axes = qloc.grid(i);
        for (int a = 0; a < 3; ++a) {
            x_norm[i * 3 + a] = static_cast<float>(axes[a]) / 65535.0f;
            out.locations[i * 3 + a] = dequantize_axis(static_cast<uint16_t>(axes[a]),
                                                       header.bounds.min[a],
                                                       header.bounds.max[a]);
        }
    }

    const HacValues hac = eval_hac_values(grid, context, x_norm, header.q0);

    RateReport& est = result.estimate;
    est.per_anchor_bits.assign(n, 0.0);
    out.features.resize(n * df);
    out.scalings.resize(n * 6);
    out.offsets.assign(n * d_o, 0.0f);
    out.masks = mask_bits;

    // Feature chunks: decode chunk n, then condition chunk n+1 on it.
    {
        const std::vector<uint8_t> payload = parsed.section(SectionId::Feature);
        RangeDecoder dec(payload.data(), payload.size());
        const int64_t c = context.chunk_channels();
        const bool intra = context.with_intra();
        for (int64_t chunk = 1; chunk <= context.n_chunks(); ++chunk) {
            IntraValues iv;
            if (intra) {
                iv = eval_intra_chunk(context, hac, out.features, static_cast<int>(chunk));
            }
            for (int64_t i = 0; i < n; ++i) {
                const double q = hac.q_f[i];
                for (int64_t jc = 0; jc < c; ++jc) {
                    const int64_t j = (chunk - 1) * c + jc;
                    const auto& [lo, hi] = header.channel_bounds[static_cast<size_t>(j)];
                    const double mu_s = hac.mu[i * d_total + j];
                    const double sg_s = hac.sigma[i * d_total + j];
                    QuantizedCdf cdf;
                    double p_sym;
                    int32_t sym;
                    if (intra) {
                        const double pi_s = hac.pi[i * d_total + j];
                        const double mu_c = iv.mu[i * c + jc];
                        const double sg_c = iv.sigma[i * c + jc];
                        const double pi_c = iv.pi[i * c + jc];
                        cdf = build_cdf_from_probs(
                            gmm_probs_range(lo, hi, q, mu_s, sg_s, pi_s, mu_c, sg_c, pi_c), lo);
                        sym = dec.decode_symbol(cdf);
                        // float product, exactly the encoder's reconstruction
                        const float fhat = static_cast<float>(sym) * hac.q_f[i];
                        p_sym = gmm_prob(fhat, q, mu_s, sg_s, pi_s, mu_c, sg_c, pi_c);
                        out.features[i * df + j] = fhat;
                    } else {
                        cdf = build_cdf_from_probs(gauss_probs_range(lo, hi, q, mu_s, sg_s), lo);
                        sym = dec.decode_symbol(cdf);
                        const float fhat = static_cast<float>(sym) * hac.q_f[i];
                        p_sym = gaussian_prob(fhat, q, mu_s, sg_s);
                        out.features[i * df + j] = fhat;
                    }
                    const double bits = -std::log2(p_sym);
                    est.feature_bits += bits;
                    est.per_anchor_bits[i] += bits;
                }
            }
        }
        est.feature_params = n * df;
    }

    {
        const std::vector<uint8_t> payload = parsed.section(SectionId::Scaling);
        RangeDecoder dec(payload.data(), payload.size());
        for (int64_t i = 0; i < n; ++i) {
            const double q = hac.q_l[i];
            for (int64_t j = 0; j < 6; ++j) {
                const auto& [lo, hi] = header.channel_bounds[static_cast<size_t>(df + j)];
                const double mu = hac.mu[i * d_total + df + j];
                const double sg = hac.sigma[i * d_total + df + j];
                const QuantizedCdf cdf =
                    build_cdf_from_probs(gauss_probs_range(lo, hi, q, mu, sg), lo);
                const int32_t sym = dec.decode_symbol(cdf);
                const float fhat = static_cast<float>(sym) * hac.q_l[i];
                out.scalings[i * 6 + j] = fhat;
                const double bits = -std::log2(gaussian_prob(fhat, q, mu, sg));
                est.scaling_bits += bits;
                est.per_anchor_bits[i] += bits;
            }
        }
        est.scaling_params = n * 6;
    }

    {
        const std::vector<uint8_t> payload = parsed.section(SectionId::Offsets);
        RangeDecoder dec(payload.data(), payload.size());
        for (int64_t i = 0; i < n; ++i) {
            const double q = hac.q_o[i];
            for (int64_t k = 0; k < kk; ++k) {
                if (!mask_bits[i * kk + k]) continue;  // pruned offsets stay zero
                for (int64_t j = 0; j < 3; ++j) {
                    const int64_t ch = k * 3 + j;
                    const auto& [lo, hi] =
                        header.channel_bounds[static_cast<size_t>(df + 6 + ch)];
                    const double mu = hac.mu[i * d_total + df + 6 + ch];
                    const double sg = hac.sigma[i * d_total + df + 6 + ch];
                    const QuantizedCdf cdf =
                        build_cdf_from_probs(gauss_probs_range(lo, hi, q, mu, sg), lo);
                    const int32_t sym = dec.decode_symbol(cdf);
                    const float fhat = static_cast<float>(sym) * hac.q_o[i];
                    out.offsets[i * d_o + ch] = fhat;
                    const double bits = -std::log2(gaussian_prob(fhat, q, mu, sg));
                    est.offset_bits += bits;
                    est.per_anchor_bits[i] += bits;
                    est.offset_params += 1;
                }
            }
        }
    }
    est.total_bits = est.feature_bits + est.scaling_bits + est.offset_bits;
    return result;
}

// --- stats -----------------------------------------------------------------------------

std::vector<VoxelStat> bit_allocation_stats(const std::vector<float>& locations,
                                            const std::vector<double>& per_anchor_bits,
                                            const SceneBounds& bounds, int resolution) {
    HACPP_CHECK(resolution >= 1, "voxel resolution must be positive");
    HACPP_CHECK(locations.size() == per_anchor_bits.size() * 3,
                "locations / bits size mismatch");
    struct Key {
        int ix, iy, iz;
        bool operator<(const Key& o) const {
            return std::tie(ix, iy, iz) < std::tie(o.ix, o.iy, o.iz);
        }
    };
    std::map<Key, std::pair<int64_t, double>> cells;
    const int64_t n = static_cast<int64_t>(per_anchor_bits.size());
    for (int64_t i = 0; i < n; ++i) {
        const std::array<float, 3> x = {locations[i * 3], locations[i * 3 + 1],
                                        locations[i * 3 + 2]};
        const std::array<float, 3> t = normalize_location(x, bounds);
        Key key;
        key.ix = std::min(static_cast<int>(t[0] * resolution), resolution - 1);
        key.iy = std::min(static_cast<int>(t[1] * resolution), resolution - 1);
        key.iz = std::min(static_cast<int>(t[2] * resolution), resolution - 1);
        auto& [count, bits] = cells[key];
        ++count;
        bits += per_anchor_bits[i];
    }
    std::vector<VoxelStat> stats;
    stats.reserve(cells.size());
    for (const auto& [key, agg] : cells) {
        VoxelStat v;
        v.ix = key.ix;
        v.iy = key.iy;
        v.iz = key.iz;
        v.anchors = agg.first;
        v.total_bits = agg.second;
        v.mean_bits = agg.second / static_cast<double>(agg.first);
        stats.push_back(v);
    }
    return stats;
}

std::string voxel_stats_csv(const std::vector<VoxelStat>& stats) {
    std::ostringstream out;
    out << "voxel_x,voxel_y,voxel_z,anchors,total_bits,mean_bits_per_anchor\n";
    for (const VoxelStat& v : stats) {
        out << v.ix << ',' << v.iy << ',' << v.iz << ',' << v.anchors << ',' << v.total_bits
            << ',' << v.mean_bits << '\n';
    }
    return out.str();
}

}  // namespace hacpp
