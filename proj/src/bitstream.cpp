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

#include "hacpp/bitstream.hpp"

#include "hacpp/range_coder.hpp"

namespace hacpp {

namespace {

constexpr char kMagic[4] = {'H', 'A', 'C', 'P'};

void write_grid_config(std::vector<uint8_t>& out, const HashGridConfig& g) {
    append_le<uint16_t>(out, static_cast<uint16_t>(g.levels_3d));
    append_le<uint16_t>(out, static_cast<uint16_t>(g.res_min_3d));
    append_le<uint16_t>(out, static_cast<uint16_t>(g.res_max_3d));
    append_le<uint8_t>(out, static_cast<uint8_t>(g.log2_table_3d));
    append_le<uint16_t>(out, static_cast<uint16_t>(g.levels_2d));
    append_le<uint16_t>(out, static_cast<uint16_t>(g.res_min_2d));
    append_le<uint16_t>(out, static_cast<uint16_t>(g.res_max_2d));
    append_le<uint8_t>(out, static_cast<uint8_t>(g.log2_table_2d));
    append_le<uint8_t>(out, static_cast<uint8_t>(g.feature_dim));
}

HashGridConfig read_grid_config(const uint8_t* data, size_t size, size_t& cursor) {
    HashGridConfig g;
    g.levels_3d = read_le<uint16_t>(data, size, cursor);
    g.res_min_3d = read_le<uint16_t>(data, size, cursor);
    g.res_max_3d = read_le<uint16_t>(data, size, cursor);
    g.log2_table_3d = read_le<uint8_t>(data, size, cursor);
    g.levels_2d = read_le<uint16_t>(data, size, cursor);
    g.res_min_2d = read_le<uint16_t>(data, size, cursor);
    g.res_max_2d = read_le<uint16_t>(data, size, cursor);
    g.log2_table_2d = read_le<uint8_t>(data, size, cursor);
    g.feature_dim = read_le<uint8_t>(data, size, cursor);
    return g;
}

}  // namespace

std::vector<uint8_t> assemble_bitstream(
    const BitstreamHeader& header,
    const std::vector<std::pair<SectionId, std::vector<uint8_t>>>& sections) {
    HACPP_CHECK(host_is_little_endian(), "bitstream writer requires a little-endian host");
    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    append_le<uint16_t>(out, kBitstreamVersion);
    append_le<uint32_t>(out, header.n_total);
    append_le<uint32_t>(out, header.n_valid);
    append_le<uint16_t>(out, header.feature_dim);
    append_le<uint16_t>(out, header.offsets_per);
    append_le<uint16_t>(out, header.n_chunks);
    write_grid_config(out, header.grid);
    for (int a = 0; a < 3; ++a) append_le<float>(out, header.bounds.min[a]);
    for (int a = 0; a < 3; ++a) append_le<float>(out, header.bounds.max[a]);
    for (float q : header.q0) append_le<float>(out, q);
    append_le<uint32_t>(out, static_cast<uint32_t>(header.channel_bounds.size()));
    for (const auto& [lo, hi] : header.channel_bounds) {
        append_le<int32_t>(out, lo);
        append_le<int32_t>(out, hi);
    }
    append_le<uint16_t>(out, header.grid_count_one);
    append_le<uint16_t>(out, header.mask_count_one);

    // Section table placeholder, patched after the offsets are known.
    append_le<uint8_t>(out, static_cast<uint8_t>(sections.size()));
    const size_t table_pos = out.size();
    for (size_t i = 0; i < sections.size(); ++i) {
        append_le<uint8_t>(out, 0);
        append_le<uint64_t>(out, 0);
        append_le<uint32_t>(out, 0);
        append_le<uint32_t>(out, 0);
    }
    size_t entry = table_pos;
    for (const auto& [id, blob] : sections) {
        HACPP_CHECK(blob.size() >= 8, "section blob must be framed");
        const uint64_t offset = out.size();
        out.insert(out.end(), blob.begin(), blob.end());
        uint32_t length, crc;
        std::memcpy(&length, blob.data(), 4);
        std::memcpy(&crc, blob.data() + 4, 4);
        out[entry] = static_cast<uint8_t>(id);
        std::memcpy(out.data() + entry + 1, &offset, 8);
        std::memcpy(out.data() + entry + 9, &length, 4);
        std::memcpy(out.data() + entry + 13, &crc, 4);
        entry += 17;
    }
    return out;
}

bool ParsedBitstream::has_section(SectionId id) const {
    for (const SectionEntry& e : table) {
        if (e.id == id) return true;
    }
    return false;
}

std::vector<uint8_t> ParsedBitstream::section(SectionId id) const {
    for (const SectionEntry& e : table) {
        if (e.id != id) continue;
        size_t cursor = e.offset;
        std::vector<uint8_t> payload = unwrap_payload(bytes.data(), bytes.size(), cursor);
        HACPP_STREAM_CHECK(payload.size() == e.length, "section length disagrees with table");
        HACPP_STREAM_CHECK(crc32(payload) == e.crc, "section checksum disagrees with table");
        return payload;
    }
    throw StreamError("missing bitstream section " + std::to_string(static_cast<int>(id)));
}

size_t ParsedBitstream::framing_size() const {
    size_t total = bytes.size();
    for (const SectionEntry& e : table) total -= e.length + 8;
    return total;
}

size_t ParsedBitstream::section_blob_size(SectionId id) const {
    for (const SectionEntry& e : table) {
        if (e.id == id) return static_cast<size_t>(e.length) + 8;
    }
    return 0;
}

ParsedBitstream parse_bitstream(std::vector<uint8_t> bytes) {
    ParsedBitstream p;
    p.bytes = std::move(bytes);
    const uint8_t* data = p.bytes.data();
    const size_t size = p.bytes.size();
    size_t cursor = 0;
    HACPP_STREAM_CHECK(size >= 6, "stream too short");
    HACPP_STREAM_CHECK(std::memcmp(data, kMagic, 4) == 0, "bad magic; not a HACP stream");
    cursor = 4;
    const uint16_t version = read_le<uint16_t>(data, size, cursor);
    HACPP_STREAM_CHECK(version == kBitstreamVersion,
                       "unsupported stream version " + std::to_string(version));
    BitstreamHeader& h = p.header;
    h.n_total = read_le<uint32_t>(data, size, cursor);
    h.n_valid = read_le<uint32_t>(data, size, cursor);
    h.feature_dim = read_le<uint16_t>(data, size, cursor);
    h.offsets_per = read_le<uint16_t>(data, size, cursor);
    h.n_chunks = read_le<uint16_t>(data, size, cursor);
    h.grid = read_grid_config(data, size, cursor);
    for (int a = 0; a < 3; ++a) h.bounds.min[a] = read_le<float>(data, size, cursor);
    for (int a = 0; a < 3; ++a) h.bounds.max[a] = read_le<float>(data, size, cursor);
    for (int g = 0; g < 3; ++g) h.q0[g] = read_le<float>(data, size, cursor);
    const uint32_t n_channels = read_le<uint32_t>(data, size, cursor);
    HACPP_STREAM_CHECK(
        n_channels == static_cast<uint32_t>(h.feature_dim + 6 + 3 * h.offsets_per),
        "channel bound count mismatch");
    h.channel_bounds.resize(n_channels);
    for (auto& [lo, hi] : h.channel_bounds) {
        lo = read_le<int32_t>(data, size, cursor);
        hi = read_le<int32_t>(data, size, cursor);
    }
    h.grid_count_one = read_le<uint16_t>(data, size, cursor);
    h.mask_count_one = read_le<uint16_t>(data, size, cursor);

    const uint8_t n_sections = read_le<uint8_t>(data, size, cursor);
    HACPP_STREAM_CHECK(n_sections <= kSectionCount, "too many sections");
    for (uint8_t i = 0; i < n_sections; ++i) {
        SectionEntry e;
        e.id = static_cast<SectionId>(read_le<uint8_t>(data, size, cursor));
        e.offset = read_le<uint64_t>(data, size, cursor);
        e.length = read_le<uint32_t>(data, size, cursor);
        e.crc = read_le<uint32_t>(data, size, cursor);
        HACPP_STREAM_CHECK(e.offset + 8 + e.length <= size, "section out of file bounds");
        p.table.push_back(e);
    }
    return p;
}

}  // namespace hacpp
