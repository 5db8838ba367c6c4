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

#include "hacpp/masking.hpp"

#include <cmath>

namespace hacpp {

bool mask_value(float logit, float threshold) {
    return 1.0f / (1.0f + std::exp(-logit)) > threshold;
}

Tensor gaussian_mask(const Tensor& mask_logits, float threshold) {
    Tensor carrier = sigmoid(mask_logits);
    std::vector<float> hard(carrier.values().size());
    for (size_t i = 0; i < hard.size(); ++i) {
        hard[i] = carrier.values()[i] > threshold ? 1.0f : 0.0f;
    }
    return straight_through(constant(mask_logits.shape(), std::move(hard)), carrier);
}

Tensor anchor_mask(const Tensor& gaussian_masks) {
    Tensor ratio = row_mean(gaussian_masks);  // the gradient carrier o-bar
    std::vector<float> hard(ratio.values().size());
    for (size_t i = 0; i < hard.size(); ++i) {
        hard[i] = ratio.values()[i] > 0.0f ? 1.0f : 0.0f;
    }
    return straight_through(constant(ratio.shape(), std::move(hard)), ratio);
}

Tensor apply_mask_render_surrogate(const Tensor& gaussian_masks, const Tensor& offsets) {
    HACPP_CHECK(offsets.shape().size() == 2 && gaussian_masks.shape().size() == 2 &&
                    offsets.shape()[0] == gaussian_masks.shape()[0] &&
                    offsets.shape()[1] == gaussian_masks.shape()[1] * 3,
                "apply_mask_render_surrogate: shape mismatch");
    return mul(repeat_cols(gaussian_masks, 3), offsets);
}

}  // namespace hacpp
