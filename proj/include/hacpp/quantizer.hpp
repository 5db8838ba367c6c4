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

#include "hacpp/rng.hpp"
#include "hacpp/tensor.hpp"

namespace hacpp {

// Adaptive quantization: per-anchor step sizes q = Q0 * (1 + tanh r) in
// (0, 2*Q0), additive-uniform-noise surrogate during training, deterministic
// half-away-from-zero rounding at coding time.

// Relative floor keeping q strictly positive (tanh never reaches -1, float
// arithmetic can).
constexpr float kStepEpsRel = 1e-6f;

// q = Q0 * (1 + tanh r), clamped into (eps, 2*Q0 - eps). `r` is [S,1].
Tensor step_size(const Tensor& r, float q0);
float step_size_value(float r, float q0);

// Training surrogate: fhat = f + u * q elementwise, u ~ U(-1/2, 1/2) drawn
// from a counter RNG keyed by (iteration, anchor id, channel) so draws are
// scheduling- and lambda-independent. `q` is [S,1] broadcast over columns.
Tensor quantize_train(const Tensor& f, const Tensor& q, const CounterRng& rng,
                      uint64_t iteration, const std::vector<int64_t>& anchor_ids);

// Coding-time rounding: symbol k = round-half-away-from-zero(f/q), fhat = k*q.
// Throws when |k| exceeds `symbol_bound` (coder alphabet limit).
struct QuantizedValue {
    int32_t symbol;
    float value;
};
QuantizedValue quantize_eval(float f, float q, int32_t symbol_bound = (1 << 15) - 1);

}  // namespace hacpp
