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

namespace hacpp {

// splitmix64 finalizer. Good avalanche, cheap, and stateless.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Counter-based RNG: every draw is a pure function of (seed, stream, counter),
// so results are independent of evaluation order and thread scheduling.
// Training noise is keyed by (iteration, anchor id, channel), which also keeps
// draws identical across runs that differ only in lambda.
class CounterRng {
public:
    CounterRng(uint64_t seed, uint64_t stream) : seed_(seed), stream_(stream) {}

    uint64_t bits(uint64_t counter) const {
        return mix64(seed_ ^ mix64(stream_ ^ mix64(counter)));
    }

    // Uniform in [0, 1).
    double uniform(uint64_t counter) const {
        return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
    }

    // Uniform in [lo, hi).
    double uniform(uint64_t counter, double lo, double hi) const {
        return lo + (hi - lo) * uniform(counter);
    }

    // Standard normal via Box-Muller on two derived uniforms.
    double normal(uint64_t counter) const;

    // Uniform integer in [0, n).
    uint64_t below(uint64_t counter, uint64_t n) const {
        return bits(counter) % n;
    }

private:
    uint64_t seed_;
    uint64_t stream_;
};

// Stateful convenience wrapper over CounterRng for places where a sequential
// stream is all that is needed (initializers, test data).
class SequentialRng {
public:
    SequentialRng(uint64_t seed, uint64_t stream = 0) : rng_(seed, stream) {}

    uint64_t bits() { return rng_.bits(counter_++); }
    double uniform() { return rng_.uniform(counter_++); }
    double uniform(double lo, double hi) { return rng_.uniform(counter_++, lo, hi); }
    double normal() { return rng_.normal(counter_++); }
    uint64_t below(uint64_t n) { return rng_.below(counter_++, n); }

private:
    CounterRng rng_;
    uint64_t counter_ = 0;
};

}  // namespace hacpp
