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

#include "hacpp/hash_grid.hpp"

#include <algorithm>
#include <cmath>

#include "hacpp/gauss.hpp"

namespace hacpp {

namespace {

constexpr uint32_t kPrime2 = 2654435761u;
constexpr uint32_t kPrime3 = 805459861u;

std::vector<int> geometric_ladder(int count, int lo, int hi) {
    std::vector<int> res(count);
    if (count == 1) {
        res[0] = lo;
        return res;
    }
    const double growth = std::log(static_cast<double>(hi) / lo) / (count - 1);
    for (int l = 0; l < count; ++l) {
        res[l] = static_cast<int>(std::lround(lo * std::exp(growth * l)));
    }
    return res;
}

struct CornerWeight {
    uint32_t index;
    float weight;
};

// Shared gather kernel. Corners enumerate in fixed lexicographic order
// (dx fastest), which pins the float accumulation order on both the graph
// and the plain coding paths.
template <typename Emit>
void corners_3d(const float* x, int res, uint32_t mask, Emit&& emit) {
    float frac[3];
    int64_t cell[3];
    for (int a = 0; a < 3; ++a) {
        const float pos = x[a] * static_cast<float>(res);
        float c = std::floor(pos);
        if (c > static_cast<float>(res - 1)) c = static_cast<float>(res - 1);
        if (c < 0.0f) c = 0.0f;
        cell[a] = static_cast<int64_t>(c);
        frac[a] = pos - c;
    }
    for (int corner = 0; corner < 8; ++corner) {
        const int dx = corner & 1, dy = (corner >> 1) & 1, dz = (corner >> 2) & 1;
        const float w = (dx ? frac[0] : 1.0f - frac[0]) * (dy ? frac[1] : 1.0f - frac[1]) *
                        (dz ? frac[2] : 1.0f - frac[2]);
        emit(hash_index_3d(cell[0] + dx, cell[1] + dy, cell[2] + dz, mask), w);
    }
}

template <typename Emit>
void corners_2d(float u, float v, int res, uint32_t mask, Emit&& emit) {
    const float pu = u * static_cast<float>(res), pv = v * static_cast<float>(res);
    float cu = std::floor(pu), cv = std::floor(pv);
    cu = std::clamp(cu, 0.0f, static_cast<float>(res - 1));
    cv = std::clamp(cv, 0.0f, static_cast<float>(res - 1));
    const float fu = pu - cu, fv = pv - cv;
    const int64_t iu = static_cast<int64_t>(cu), iv = static_cast<int64_t>(cv);
    for (int corner = 0; corner < 4; ++corner) {
        const int du = corner & 1, dv = (corner >> 1) & 1;
        const float w = (du ? fu : 1.0f - fu) * (dv ? fv : 1.0f - fv);
        emit(hash_index_2d(iu + du, iv + dv, mask), w);
    }
}

// The three axis-aligned projections, evaluated in the fixed order xy, xz, yz
// and averaged.
template <typename Emit>
void corners_2d_planes(const float* x, int res, uint32_t mask, Emit&& emit) {
    corners_2d(x[0], x[1], res, mask, [&](uint32_t idx, float w) { emit(idx, w / 3.0f); });
    corners_2d(x[0], x[2], res, mask, [&](uint32_t idx, float w) { emit(idx, w / 3.0f); });
    corners_2d(x[1], x[2], res, mask, [&](uint32_t idx, float w) { emit(idx, w / 3.0f); });
}

}  // namespace

std::vector<int> HashGridConfig::resolutions_3d() const {
    return geometric_ladder(levels_3d, res_min_3d, res_max_3d);
}

std::vector<int> HashGridConfig::resolutions_2d() const {
    return geometric_ladder(levels_2d, res_min_2d, res_max_2d);
}

int64_t HashGridConfig::total_params() const {
    return (levels_3d * table_size_3d() + levels_2d * table_size_2d()) * feature_dim;
}

void HashGridConfig::validate() const {
    HACPP_CHECK(levels_3d >= 1 && levels_2d >= 0 && feature_dim >= 1, "bad grid config");
    HACPP_CHECK(log2_table_3d >= 1 && log2_table_3d <= 24 && log2_table_2d >= 1 &&
                    log2_table_2d <= 24,
                "grid table size out of range");
    auto strictly_increasing = [](const std::vector<int>& v) {
        for (size_t i = 1; i < v.size(); ++i) {
            if (v[i] <= v[i - 1]) return false;
        }
        return !v.empty() && v.front() >= 1;
    };
    HACPP_CHECK(strictly_increasing(resolutions_3d()), "3D resolutions must strictly increase");
    if (levels_2d > 0) {
        HACPP_CHECK(strictly_increasing(resolutions_2d()),
                    "2D resolutions must strictly increase");
    }
}

uint32_t hash_index_3d(int64_t x, int64_t y, int64_t z, uint32_t mask) {
    const uint32_t h = static_cast<uint32_t>(x) ^ (static_cast<uint32_t>(y) * kPrime2) ^
                       (static_cast<uint32_t>(z) * kPrime3);
    return h & mask;
}

uint32_t hash_index_2d(int64_t u, int64_t v, uint32_t mask) {
    const uint32_t h = static_cast<uint32_t>(u) ^ (static_cast<uint32_t>(v) * kPrime2);
    return h & mask;
}

HashGrid::HashGrid(const HashGridConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    SequentialRng rng(seed, 0x9a5461d);
    for (int l = 0; l < cfg_.levels_3d + cfg_.levels_2d; ++l) {
        const bool is3d = l < cfg_.levels_3d;
        const int64_t table = is3d ? cfg_.table_size_3d() : cfg_.table_size_2d();
        std::vector<float> init(static_cast<size_t>(table * cfg_.feature_dim));
        for (float& v : init) v = static_cast<float>(rng.uniform(-0.05, 0.05));
        latents_.push_back(
            make_parameter("grid.l" + std::to_string(l), {table, cfg_.feature_dim},
                           std::move(init)));
    }
}

HashGrid HashGrid::from_bits(const HashGridConfig& cfg, const std::vector<uint8_t>& bits) {
    cfg.validate();
    HACPP_CHECK(static_cast<int64_t>(bits.size()) == cfg.total_params(),
                "grid bit count does not match config");
    HashGrid g;
    g.cfg_ = cfg;
    size_t pos = 0;
    for (int l = 0; l < cfg.levels_3d + cfg.levels_2d; ++l) {
        const bool is3d = l < cfg.levels_3d;
        const int64_t table = is3d ? cfg.table_size_3d() : cfg.table_size_2d();
        std::vector<float> vals(static_cast<size_t>(table * cfg.feature_dim));
        for (float& v : vals) v = bits[pos++] ? 1.0f : -1.0f;
        g.latents_.push_back(make_parameter("grid.l" + std::to_string(l),
                                            {table, cfg.feature_dim}, std::move(vals)));
    }
    return g;
}

Tensor HashGrid::interpolate(const std::vector<float>& x_norm, InterpMode mode) const {
    HACPP_CHECK(x_norm.size() % 3 == 0, "x_norm must be S*3 floats");
    const int64_t samples = static_cast<int64_t>(x_norm.size() / 3);
    const int64_t dim = cfg_.feature_dim;
    const auto res3 = cfg_.resolutions_3d();
    const auto res2 = cfg_.resolutions_2d();
    const uint32_t mask3 = static_cast<uint32_t>(cfg_.table_size_3d() - 1);
    const uint32_t mask2 = static_cast<uint32_t>(cfg_.table_size_2d() - 1);
    const int64_t n_levels = cfg_.levels_3d + cfg_.levels_2d;
    const int64_t out_dim = cfg_.output_dim();

    // Corner indices and weights are shared by forward and backward.
    // Layout: per sample, per level, a fixed number of (index, weight) pairs
    // (8 for 3D, 12 for the three averaged planes).
    const int64_t pairs3 = 8, pairs2 = 12;
    const int64_t pairs_per_sample = cfg_.levels_3d * pairs3 + cfg_.levels_2d * pairs2;
    auto pairs = std::make_shared<std::vector<CornerWeight>>(
        static_cast<size_t>(samples * pairs_per_sample));

#pragma omp parallel for schedule(static)
    for (int64_t s = 0; s < samples; ++s) {
        CornerWeight* slot = pairs->data() + s * pairs_per_sample;
        const float* x = x_norm.data() + s * 3;
        for (int l = 0; l < cfg_.levels_3d; ++l) {
            corners_3d(x, res3[l], mask3, [&](uint32_t idx, float w) {
                *slot++ = {idx, w};
            });
        }
        for (int l = 0; l < cfg_.levels_2d; ++l) {
            corners_2d_planes(x, res2[l], mask2, [&](uint32_t idx, float w) {
                *slot++ = {idx, w};
            });
        }
    }

    const bool binarized = (mode == InterpMode::Binarized);
    const int levels_3d = cfg_.levels_3d;
    Tensor out = custom_op(
        {samples, out_dim}, latents_,
        [=](TensorNode& node) {
            // Scatter into latent grads; straight-through makes the binarized
            // path an identity for gradients. Serial over samples: multiple
            // samples may hit the same table entry.
            for (int64_t s = 0; s < samples; ++s) {
                const CornerWeight* slot = pairs->data() + s * pairs_per_sample;
                const float* g = node.grad.data() + s * out_dim;
                for (int64_t l = 0; l < n_levels; ++l) {
                    auto& latent = *node.inputs[static_cast<size_t>(l)];
                    if (!latent.requires_grad) {
                        slot += (l < levels_3d) ? pairs3 : pairs2;
                        continue;
                    }
                    latent.ensure_grad();
                    float* lg = latent.grad.data();
                    const int64_t pair_count = (l < levels_3d) ? pairs3 : pairs2;
                    const float* gl = g + l * dim;
                    for (int64_t p = 0; p < pair_count; ++p, ++slot) {
                        float* dst = lg + static_cast<int64_t>(slot->index) * dim;
                        for (int64_t d = 0; d < dim; ++d) dst[d] += slot->weight * gl[d];
                    }
                }
            }
        });

    float* ov = out.mutable_values().data();
#pragma omp parallel for schedule(static)
    for (int64_t s = 0; s < samples; ++s) {
        const CornerWeight* slot = pairs->data() + s * pairs_per_sample;
        float* orow = ov + s * out_dim;
        for (int64_t l = 0; l < n_levels; ++l) {
            const float* tv = latents_[static_cast<size_t>(l)].values().data();
            const int64_t pair_count = (l < levels_3d) ? pairs3 : pairs2;
            float* od = orow + l * dim;
            for (int64_t p = 0; p < pair_count; ++p, ++slot) {
                const float* src = tv + static_cast<int64_t>(slot->index) * dim;
                const float w = slot->weight;
                if (binarized) {
                    for (int64_t d = 0; d < dim; ++d) od[d] += w * binarize_value(src[d]);
                } else {
                    for (int64_t d = 0; d < dim; ++d) od[d] += w * src[d];
                }
            }
        }
    }
    return out;
}

std::vector<float> HashGrid::interpolate_binarized_plain(const std::vector<float>& x_norm) const {
    Tensor t = interpolate(x_norm, InterpMode::Binarized);
    return t.values();
}

Tensor HashGrid::rate_bits() const {
    const double total = static_cast<double>(cfg_.total_params());
    // s = sum of binarized entries via the straight-through path.
    Tensor s;
    for (size_t l = 0; l < latents_.size(); ++l) {
        const Tensor& latent = latents_[l];
        std::vector<float> signs(latent.values().size());
        for (size_t i = 0; i < signs.size(); ++i) signs[i] = binarize_value(latent.values()[i]);
        Tensor bin = straight_through(constant(latent.shape(), std::move(signs)), latent);
        Tensor part = sum_all(bin);
        s = (l == 0) ? part : add(s, part);
    }
    // M+ = (s + P)/2, h_f = M+/P clamped to the coder resolution.
    Tensor m_plus = mul_scalar(add_scalar(s, static_cast<float>(total)), 0.5f);
    Tensor h_f = mul_scalar(m_plus, static_cast<float>(1.0 / total));
    h_f = clamp_min(h_f, static_cast<float>(kProbMin));
    h_f = clamp_max(h_f, static_cast<float>(1.0 - kProbMin));
    constexpr float kInvLn2 = 1.4426950408889634f;
    Tensor log2_hf = mul_scalar(log_op(h_f), kInvLn2);
    Tensor log2_one_minus = mul_scalar(log_op(add_scalar(mul_scalar(h_f, -1.0f), 1.0f)), kInvLn2);
    Tensor m_minus = add_scalar(mul_scalar(m_plus, -1.0f), static_cast<float>(total));
    return add(mul(m_plus, mul_scalar(log2_hf, -1.0f)),
               mul(m_minus, mul_scalar(log2_one_minus, -1.0f)));
}

double HashGrid::plus_frequency() const {
    int64_t plus = 0;
    for (const Tensor& latent : latents_) {
        for (float v : latent.values()) {
            if (binarize_value(v) > 0.0f) ++plus;
        }
    }
    const double total = static_cast<double>(cfg_.total_params());
    const double h_f = static_cast<double>(plus) / total;
    return std::clamp(h_f, kProbMin, 1.0 - kProbMin);
}

double HashGrid::rate_bits_value() const {
    int64_t plus = 0;
    for (const Tensor& latent : latents_) {
        for (float v : latent.values()) {
            if (binarize_value(v) > 0.0f) ++plus;
        }
    }
    const double total = static_cast<double>(cfg_.total_params());
    const double h_f = std::clamp(static_cast<double>(plus) / total, kProbMin, 1.0 - kProbMin);
    const double minus = total - static_cast<double>(plus);
    return static_cast<double>(plus) * (-std::log2(h_f)) + minus * (-std::log2(1.0 - h_f));
}

std::vector<uint8_t> HashGrid::to_bits() const {
    std::vector<uint8_t> bits;
    bits.reserve(static_cast<size_t>(cfg_.total_params()));
    for (const Tensor& latent : latents_) {
        for (float v : latent.values()) {
            bits.push_back(binarize_value(v) > 0.0f ? 1 : 0);
        }
    }
    return bits;
}

void HashGrid::clamp_latents() {
    for (const Tensor& latent : latents_) {
        auto& vals = const_cast<Tensor&>(latent).mutable_values();
        for (float& v : vals) v = std::clamp(v, -1.0f, 1.0f);
    }
}

}  // namespace hacpp
