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

#include "hacpp/quantizer.hpp"

#include <cmath>

namespace hacpp {

Tensor step_size(const Tensor& r, float q0) {
    HACPP_CHECK(q0 > 0.0f, "step_size: Q0 must be positive");
    const float eps = kStepEpsRel * q0;
    Tensor q = mul_scalar(add_scalar(tanh_op(r), 1.0f), q0);
    q = clamp_min(q, eps);
    q = clamp_max(q, 2.0f * q0 - eps);
    return q;
}

float step_size_value(float r, float q0) {
    HACPP_CHECK(q0 > 0.0f, "step_size: Q0 must be positive");
    const float eps = kStepEpsRel * q0;
    float q = q0 * (1.0f + std::tanh(r));
    if (q < eps) q = eps;
    if (q > 2.0f * q0 - eps) q = 2.0f * q0 - eps;
    return q;
}

Tensor quantize_train(const Tensor& f, const Tensor& q, const CounterRng& rng,
                      uint64_t iteration, const std::vector<int64_t>& anchor_ids) {
    HACPP_CHECK(f.shape().size() == 2, "quantize_train: matrix input required");
    const int64_t rows = f.shape()[0], cols = f.shape()[1];
    HACPP_CHECK(static_cast<int64_t>(anchor_ids.size()) == rows,
                "quantize_train: one anchor id per row required");

    std::vector<float> noise(static_cast<size_t>(rows * cols));
    for (int64_t i = 0; i < rows; ++i) {
        const uint64_t base = (iteration << 40) ^ (static_cast<uint64_t>(anchor_ids[i]) << 16);
        for (int64_t j = 0; j < cols; ++j) {
            noise[i * cols + j] =
                static_cast<float>(rng.uniform(base ^ static_cast<uint64_t>(j)) - 0.5);
        }
    }
    Tensor u = constant({rows, cols}, std::move(noise));
    return add(f, scale_cols(u, q));
}

QuantizedValue quantize_eval(float f, float q, int32_t symbol_bound) {
    HACPP_CHECK(q > 0.0f, "quantize_eval: step must be positive");
    // round half away from zero, fixed so encoder and decoder agree
    const double t = static_cast<double>(f) / static_cast<double>(q);
    const double k = t >= 0.0 ? std::floor(t + 0.5) : std::ceil(t - 0.5);
    if (std::abs(k) > static_cast<double>(symbol_bound)) {
        throw Error("quantized symbol " + std::to_string(k) + " exceeds the alphabet bound " +
                    std::to_string(symbol_bound));
    }
    QuantizedValue out;
    out.symbol = static_cast<int32_t>(k);
    out.value = static_cast<float>(out.symbol) * q;
    return out;
}

}  // namespace hacpp
