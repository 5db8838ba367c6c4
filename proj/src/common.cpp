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

#include "hacpp/common.hpp"

#include <array>
#include <cmath>
#include <cstdlib>
#include <thread>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "hacpp/rng.hpp"

namespace hacpp {

namespace {

std::array<uint32_t, 256> make_crc_table() {
    std::array<uint32_t, 256> table{};
    for (uint32_t i = 0; i < 256; ++i) {
        uint32_t c = i;
        for (int k = 0; k < 8; ++k) {
            c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
        }
        table[i] = c;
    }
    return table;
}

}  // namespace

uint32_t crc32(const uint8_t* data, size_t size) {
    static const std::array<uint32_t, 256> table = make_crc_table();
    uint32_t c = 0xffffffffu;
    for (size_t i = 0; i < size; ++i) {
        c = table[(c ^ data[i]) & 0xffu] ^ (c >> 8);
    }
    return c ^ 0xffffffffu;
}

int worker_threads() {
    static const int cached = [] {
        int n = static_cast<int>(std::thread::hardware_concurrency());
        if (n <= 0) n = 1;
        if (const char* env = std::getenv("HACPP_THREADS")) {
            const int cap = std::atoi(env);
            if (cap > 0 && cap < n) n = cap;
        }
#ifdef _OPENMP
        omp_set_num_threads(n);
#endif
        return n;
    }();
    return cached;
}

namespace {
// Pin the OpenMP thread count before the first parallel region.
const int kThreadInit = worker_threads();
}  // namespace

double CounterRng::normal(uint64_t counter) const {
    // Box-Muller from two decorrelated uniforms derived off one counter.
    const uint64_t b = bits(counter);
    const double u1 = static_cast<double>((b >> 11) | 1ull) * 0x1.0p-53;
    const double u2 = static_cast<double>(mix64(b) >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace hacpp
