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

#include <cmath>

namespace hacpp {

// Probability resolution shared by the probability floor and the range coder.
inline constexpr double kProbMin = 1.0 / 65536.0;
inline constexpr uint32_t kProbTotal = 1u << 16;
inline constexpr double kSigmaFloor = 1e-6;

// Mass of N(mu, sigma^2) on [fhat - q/2, fhat + q/2], evaluated as a single
// erf difference to avoid cancellation between two near-1 CDF values.
inline double gaussian_interval_mass(double fhat, double q, double mu, double sigma) {
    const double inv = 1.0 / (sigma * std::sqrt(2.0));
    const double hi = (fhat - mu + 0.5 * q) * inv;
    const double lo = (fhat - mu - 0.5 * q) * inv;
    return 0.5 * (std::erf(hi) - std::erf(lo));
}

}  // namespace hacpp
