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

#include "hacpp/tensor.hpp"

namespace hacpp {

// Learnable offset masks. Forward values are exactly binary; gradients flow
// through the sigmoid carrier (Gaussian level) and the row mean (anchor
// level). Masks enter training only through the rate term and the masked
// reconstruction; there is no separate mask loss.

constexpr float kMaskThreshold = 0.01f;  // epsilon_m

// m = 1[Sig(f^m) > eps] forward, gradient through Sig(f^m). Input [S, K].
Tensor gaussian_mask(const Tensor& mask_logits, float threshold = kMaskThreshold);

// m^a = 1[mean(m) > 0] forward, gradient through mean(m). Input [S, K] -> [S, 1].
Tensor anchor_mask(const Tensor& gaussian_masks);

// Offset triplet k scaled by m_{i,k}: masks [S, K] expand to [S, 3K].
Tensor apply_mask_render_surrogate(const Tensor& gaussian_masks, const Tensor& offsets);

// Plain forward evaluation used at coding time.
bool mask_value(float logit, float threshold = kMaskThreshold);

}  // namespace hacpp
