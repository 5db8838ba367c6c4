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
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace hacpp {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Stream integrity / format problems get their own type so callers can map
// them to a distinct exit code.
class StreamError : public Error {
public:
    explicit StreamError(const std::string& msg) : Error(msg) {}
};

// Numeric divergence (NaN/Inf in training).
class DivergenceError : public Error {
public:
    explicit DivergenceError(const std::string& msg) : Error(msg) {}
};

#define HACPP_CHECK(cond, msg)                  \
    do {                                        \
        if (!(cond)) throw ::hacpp::Error(msg); \
    } while (0)

#define HACPP_STREAM_CHECK(cond, msg)                 \
    do {                                              \
        if (!(cond)) throw ::hacpp::StreamError(msg); \
    } while (0)

// Little-endian scalar IO on byte buffers. All container formats are
// little-endian; the helpers below assume a little-endian host and the
// bitstream writer verifies that once at startup.
inline bool host_is_little_endian() {
    const uint32_t probe = 1;
    uint8_t b;
    std::memcpy(&b, &probe, 1);
    return b == 1;
}

template <typename T>
void append_le(std::vector<uint8_t>& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T read_le(const uint8_t* data, size_t size, size_t& cursor) {
    static_assert(std::is_trivially_copyable_v<T>);
    HACPP_STREAM_CHECK(cursor + sizeof(T) <= size, "truncated stream");
    T v;
    std::memcpy(&v, data + cursor, sizeof(T));
    cursor += sizeof(T);
    return v;
}

// CRC-32 (IEEE 802.3 polynomial, reflected), used as the per-section checksum.
uint32_t crc32(const uint8_t* data, size_t size);
inline uint32_t crc32(const std::vector<uint8_t>& data) {
    return crc32(data.data(), data.size());
}

// Number of worker threads for batched math. Defaults to the hardware
// concurrency, capped by the HACPP_THREADS environment variable.
int worker_threads();

}  // namespace hacpp
