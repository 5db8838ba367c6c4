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

#include <array>
#include <cstdint>
#include <vector>

#include "hacpp/anchors.hpp"
#include "hacpp/hash_grid.hpp"

namespace hacpp {

// Versioned bitstream container. Layout: magic "HACP", version u16, header,
// section table, then framed sections. All integers little-endian.

constexpr uint16_t kBitstreamVersion = 1;

enum class SectionId : uint8_t {
    Weights = 0,
    Grid = 1,
    Masks = 2,
    Locations = 3,
    Feature = 4,
    Scaling = 5,
    Offsets = 6,
};
constexpr size_t kSectionCount = 7;

struct BitstreamHeader {
    uint32_t n_total = 0;
    uint32_t n_valid = 0;
    uint16_t feature_dim = 0;
    uint16_t offsets_per = 0;
    uint16_t n_chunks = 0;
    HashGridConfig grid;
    SceneBounds bounds;
    std::array<float, 3> q0{};  // feature, scaling, offset
    // Per attribute channel (feature, scaling, offsets order): symbol range.
    std::vector<std::pair<int32_t, int32_t>> channel_bounds;
    uint16_t grid_count_one = 1;  // +1 frequency of the grid bits, in 1/2^16
    uint16_t mask_count_one = 1;
};

struct SectionEntry {
    SectionId id;
    uint64_t offset = 0;  // file offset of the framed section
    uint32_t length = 0;  // inner payload length
    uint32_t crc = 0;
};

// Sections arrive already framed ([length][crc][bytes], see wrap_payload).
std::vector<uint8_t> assemble_bitstream(
    const BitstreamHeader& header,
    const std::vector<std::pair<SectionId, std::vector<uint8_t>>>& sections);

struct ParsedBitstream {
    BitstreamHeader header;
    std::vector<SectionEntry> table;
    std::vector<uint8_t> bytes;  // whole stream, for section access

    bool has_section(SectionId id) const;
    // Unframes and checksum-validates the section payload.
    std::vector<uint8_t> section(SectionId id) const;
    // Bytes consumed by container framing (magic, version, header, table).
    size_t framing_size() const;
    size_t section_blob_size(SectionId id) const;  // framed size incl. [len][crc]
};

ParsedBitstream parse_bitstream(std::vector<uint8_t> bytes);

}  // namespace hacpp
