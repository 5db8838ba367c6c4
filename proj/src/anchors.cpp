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

#include "hacpp/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "hacpp/rng.hpp"

namespace hacpp {

namespace {

void check_row_finite(const std::vector<float>& data, int64_t row, int64_t dim,
                      const char* group) {
    for (int64_t j = 0; j < dim; ++j) {
        if (!std::isfinite(data[row * dim + j])) {
            throw Error(std::string("non-finite ") + group + " value at row " +
                        std::to_string(row) + ", channel " + std::to_string(j));
        }
    }
}

}  // namespace

void AnchorSet::validate_structure() const {
    HACPP_CHECK(count >= 1, "anchor set must contain at least one anchor");
    HACPP_CHECK(feature_dim >= 1 && offsets_per >= 1, "anchor dims must be positive");
    HACPP_CHECK(static_cast<int64_t>(locations.size()) == count * 3, "locations size mismatch");
    HACPP_CHECK(static_cast<int64_t>(features.size()) == count * feature_dim,
                "features size mismatch");
    HACPP_CHECK(static_cast<int64_t>(scalings.size()) == count * 6, "scalings size mismatch");
    HACPP_CHECK(static_cast<int64_t>(offsets.size()) == count * offset_dim(),
                "offsets size mismatch");
    HACPP_CHECK(masks.empty() || static_cast<int64_t>(masks.size()) == count * offsets_per,
                "masks size mismatch");
    for (int64_t i = 0; i < count; ++i) {
        check_row_finite(locations, i, 3, "location");
        check_row_finite(features, i, feature_dim, "feature");
        check_row_finite(offsets, i, offset_dim(), "offset");
        check_row_finite(scalings, i, 6, "scaling");
    }
}

void AnchorSet::validate() const {
    validate_structure();
    for (int64_t i = 0; i < count; ++i) {
        for (int64_t j = 0; j < 6; ++j) {
            const float l = scalings[i * 6 + j];
            if (l <= 0.0f || l >= 1.0f) {
                throw Error("scaling value " + std::to_string(l) + " outside (0,1) at row " +
                            std::to_string(i) + ", channel " + std::to_string(j));
            }
        }
    }
}

// --- PLY ------------------------------------------------------------------------

namespace {

std::vector<std::string> expected_properties(int64_t feature_dim, int64_t offsets_per,
                                             bool with_masks) {
    std::vector<std::string> props = {"x", "y", "z"};
    for (int64_t j = 0; j < feature_dim; ++j) props.push_back("f_anchor_" + std::to_string(j));
    for (int64_t j = 0; j < 6; ++j) props.push_back("l_" + std::to_string(j));
    for (int64_t j = 0; j < 3 * offsets_per; ++j) props.push_back("o_" + std::to_string(j));
    if (with_masks) {
        for (int64_t j = 0; j < offsets_per; ++j) props.push_back("m_" + std::to_string(j));
    }
    return props;
}

struct PlyHeader {
    int64_t count = 0;
    std::vector<std::string> properties;
    size_t data_offset = 0;
};

PlyHeader parse_ply_header(const std::vector<uint8_t>& bytes, const std::string& path) {
    PlyHeader h;
    size_t pos = 0;
    auto next_line = [&]() -> std::string {
        HACPP_CHECK(pos < bytes.size(), "unexpected end of PLY header in " + path);
        std::string line;
        while (pos < bytes.size() && bytes[pos] != '\n') line.push_back(bytes[pos++]);
        ++pos;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
    };

    HACPP_CHECK(next_line() == "ply", path + ": not a PLY file");
    bool saw_format = false;
    for (;;) {
        const std::string line = next_line();
        if (line == "end_header") break;
        std::istringstream ss(line);
        std::string word;
        ss >> word;
        if (word == "comment") continue;
        if (word == "format") {
            std::string fmt;
            ss >> fmt;
            HACPP_CHECK(fmt == "binary_little_endian",
                        path + ": unsupported PLY format '" + fmt + "'");
            saw_format = true;
        } else if (word == "element") {
            std::string name;
            ss >> name >> h.count;
            HACPP_CHECK(name == "vertex", path + ": unsupported PLY element '" + name + "'");
        } else if (word == "property") {
            std::string type, name;
            ss >> type >> name;
            HACPP_CHECK(type == "float", path + ": property '" + name +
                                             "' has unsupported type '" + type + "'");
            h.properties.push_back(name);
        } else {
            throw Error(path + ": unsupported PLY header line '" + line + "'");
        }
    }
    HACPP_CHECK(saw_format, path + ": missing PLY format line");
    h.data_offset = pos;
    return h;
}

// Derives (D^a, K, mask presence) from the property list and verifies the
// exact layout.
struct PropertyLayout {
    int64_t feature_dim;
    int64_t offsets_per;
    bool with_masks;
};

PropertyLayout check_properties(const std::vector<std::string>& props, const std::string& path) {
    int64_t feature_dim = 0, offset_channels = 0, mask_channels = 0;
    for (const std::string& p : props) {
        if (p.rfind("f_anchor_", 0) == 0) ++feature_dim;
        if (p.rfind("o_", 0) == 0) ++offset_channels;
        if (p.rfind("m_", 0) == 0) ++mask_channels;
    }
    HACPP_CHECK(feature_dim >= 1, path + ": no f_anchor_* properties found");
    HACPP_CHECK(offset_channels >= 3 && offset_channels % 3 == 0,
                path + ": offset property count must be a positive multiple of 3");
    const bool with_masks = mask_channels > 0;
    HACPP_CHECK(!with_masks || mask_channels == offset_channels / 3,
                path + ": mask property count must equal the offset count K");
    const auto expected = expected_properties(feature_dim, offset_channels / 3, with_masks);
    if (props.size() != expected.size()) {
        throw Error(path + ": expected " + std::to_string(expected.size()) +
                    " properties, found " + std::to_string(props.size()));
    }
    for (size_t i = 0; i < props.size(); ++i) {
        if (props[i] != expected[i]) {
            throw Error(path + ": unexpected property '" + props[i] + "' at index " +
                        std::to_string(i) + " (expected '" + expected[i] + "')");
        }
    }
    return {feature_dim, offset_channels / 3, with_masks};
}

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    HACPP_CHECK(f.good(), "cannot open file: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    return bytes;
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary);
    HACPP_CHECK(f.good(), "cannot open file for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    HACPP_CHECK(f.good(), "write failed: " + path);
}

AnchorSet rows_to_anchors(const float* rows, int64_t count, int64_t feature_dim,
                          int64_t offsets_per, bool with_masks) {
    AnchorSet a;
    a.count = count;
    a.feature_dim = feature_dim;
    a.offsets_per = offsets_per;
    const int64_t row_w = 3 + feature_dim + 6 + 3 * offsets_per + (with_masks ? offsets_per : 0);
    a.locations.resize(count * 3);
    a.features.resize(count * feature_dim);
    a.scalings.resize(count * 6);
    a.offsets.resize(count * 3 * offsets_per);
    if (with_masks) a.masks.resize(count * offsets_per);
    for (int64_t i = 0; i < count; ++i) {
        const float* r = rows + i * row_w;
        std::copy(r, r + 3, a.locations.begin() + i * 3);
        std::copy(r + 3, r + 3 + feature_dim, a.features.begin() + i * feature_dim);
        std::copy(r + 3 + feature_dim, r + 3 + feature_dim + 6, a.scalings.begin() + i * 6);
        std::copy(r + 3 + feature_dim + 6, r + 3 + feature_dim + 6 + 3 * offsets_per,
                  a.offsets.begin() + i * 3 * offsets_per);
        if (with_masks) {
            for (int64_t k = 0; k < offsets_per; ++k) {
                a.masks[i * offsets_per + k] =
                    r[3 + feature_dim + 6 + 3 * offsets_per + k] != 0.0f ? 1 : 0;
            }
        }
    }
    return a;
}

std::vector<float> anchors_to_rows(const AnchorSet& a) {
    const bool with_masks = !a.masks.empty();
    const int64_t row_w = 3 + a.attribute_dim() + (with_masks ? a.offsets_per : 0);
    std::vector<float> rows(a.count * row_w);
    for (int64_t i = 0; i < a.count; ++i) {
        float* r = rows.data() + i * row_w;
        std::copy(a.locations.begin() + i * 3, a.locations.begin() + (i + 1) * 3, r);
        std::copy(a.features.begin() + i * a.feature_dim,
                  a.features.begin() + (i + 1) * a.feature_dim, r + 3);
        std::copy(a.scalings.begin() + i * 6, a.scalings.begin() + (i + 1) * 6,
                  r + 3 + a.feature_dim);
        std::copy(a.offsets.begin() + i * a.offset_dim(),
                  a.offsets.begin() + (i + 1) * a.offset_dim(), r + 3 + a.feature_dim + 6);
        if (with_masks) {
            for (int64_t k = 0; k < a.offsets_per; ++k) {
                r[3 + a.attribute_dim() + k] = a.masks[i * a.offsets_per + k] ? 1.0f : 0.0f;
            }
        }
    }
    return rows;
}

}  // namespace

AnchorSet load_anchors(const std::string& path, AnchorFormat format) {
    const std::vector<uint8_t> bytes = read_file(path);
    AnchorSet a;
    if (format == AnchorFormat::Ply) {
        const PlyHeader h = parse_ply_header(bytes, path);
        const PropertyLayout layout = check_properties(h.properties, path);
        HACPP_CHECK(h.count >= 1, path + ": vertex count must be at least 1");
        const int64_t row_w = 3 + layout.feature_dim + 6 + 3 * layout.offsets_per +
                              (layout.with_masks ? layout.offsets_per : 0);
        const size_t need = h.data_offset + static_cast<size_t>(h.count * row_w) * 4;
        HACPP_CHECK(bytes.size() >= need, path + ": truncated PLY payload");
        std::vector<float> rows(static_cast<size_t>(h.count * row_w));
        std::memcpy(rows.data(), bytes.data() + h.data_offset, rows.size() * 4);
        a = rows_to_anchors(rows.data(), h.count, layout.feature_dim, layout.offsets_per,
                            layout.with_masks);
    } else {
        size_t cursor = 0;
        const uint32_t magic = read_le<uint32_t>(bytes.data(), bytes.size(), cursor);
        HACPP_CHECK(magic == 0x52414e41u, path + ": bad raw anchor magic");  // "ANAR"
        const int64_t count = read_le<uint32_t>(bytes.data(), bytes.size(), cursor);
        const int64_t feature_dim = read_le<uint32_t>(bytes.data(), bytes.size(), cursor);
        const int64_t offsets_per = read_le<uint32_t>(bytes.data(), bytes.size(), cursor);
        HACPP_CHECK(count >= 1 && feature_dim >= 1 && offsets_per >= 1,
                    path + ": bad raw anchor header");
        const int64_t row_w = 3 + feature_dim + 6 + 3 * offsets_per;
        HACPP_CHECK(bytes.size() - cursor >= static_cast<size_t>(count * row_w) * 4,
                    path + ": truncated raw anchor payload");
        std::vector<float> rows(static_cast<size_t>(count * row_w));
        std::memcpy(rows.data(), bytes.data() + cursor, rows.size() * 4);
        a = rows_to_anchors(rows.data(), count, feature_dim, offsets_per, false);
    }
    a.validate();
    return a;
}

void save_anchors(const AnchorSet& anchors, const std::string& path, AnchorFormat format) {
    anchors.validate_structure();
    const std::vector<float> rows = anchors_to_rows(anchors);
    std::vector<uint8_t> bytes;
    if (format == AnchorFormat::Ply) {
        std::ostringstream header;
        header << "ply\nformat binary_little_endian 1.0\n";
        header << "element vertex " << anchors.count << "\n";
        for (const std::string& p : expected_properties(anchors.feature_dim, anchors.offsets_per,
                                                        !anchors.masks.empty())) {
            header << "property float " << p << "\n";
        }
        header << "end_header\n";
        const std::string hs = header.str();
        bytes.insert(bytes.end(), hs.begin(), hs.end());
    } else {
        HACPP_CHECK(anchors.masks.empty(), "raw-binary format does not carry masks");
        append_le<uint32_t>(bytes, 0x52414e41u);
        append_le<uint32_t>(bytes, static_cast<uint32_t>(anchors.count));
        append_le<uint32_t>(bytes, static_cast<uint32_t>(anchors.feature_dim));
        append_le<uint32_t>(bytes, static_cast<uint32_t>(anchors.offsets_per));
    }
    const size_t off = bytes.size();
    bytes.resize(off + rows.size() * 4);
    std::memcpy(bytes.data() + off, rows.data(), rows.size() * 4);
    write_file(path, bytes);
}

// --- geometry -----------------------------------------------------------------------

SceneBounds compute_bounds(const AnchorSet& anchors, float margin) {
    HACPP_CHECK(anchors.count >= 1, "compute_bounds: no anchors");
    HACPP_CHECK(margin >= 0.0f, "compute_bounds: margin must be non-negative");
    SceneBounds b;
    for (int a = 0; a < 3; ++a) {
        b.min[a] = b.max[a] = anchors.locations[a];
    }
    for (int64_t i = 1; i < anchors.count; ++i) {
        for (int a = 0; a < 3; ++a) {
            b.min[a] = std::min(b.min[a], anchors.locations[i * 3 + a]);
            b.max[a] = std::max(b.max[a], anchors.locations[i * 3 + a]);
        }
    }
    float max_extent = 0.0f;
    for (int a = 0; a < 3; ++a) max_extent = std::max(max_extent, b.max[a] - b.min[a]);
    for (int a = 0; a < 3; ++a) {
        const float extent = b.max[a] - b.min[a];
        if (extent == 0.0f && margin == 0.0f) {
            throw Error("degenerate bounds on axis " + std::to_string(a) +
                        "; a margin > 0 is required");
        }
        // Degenerate axes borrow the largest extent (or 1 for a single point)
        // so the box stays non-degenerate.
        float pad = margin * extent;
        if (extent == 0.0f) pad = margin * (max_extent > 0.0f ? max_extent : 1.0f);
        b.min[a] -= pad;
        b.max[a] += pad;
        HACPP_CHECK(b.max[a] > b.min[a], "bounds still degenerate on axis " + std::to_string(a));
    }
    return b;
}

std::array<float, 3> normalize_location(const std::array<float, 3>& x, const SceneBounds& b) {
    std::array<float, 3> out{};
    for (int a = 0; a < 3; ++a) {
        const float t = (x[a] - b.min[a]) / (b.max[a] - b.min[a]);
        out[a] = std::clamp(t, 0.0f, 1.0f);
    }
    return out;
}

// --- synthetic generator -----------------------------------------------------------

namespace {

// Smooth, bounded field over the unit cube: a small bank of sinusoids with
// channel-specific directions and phases.
double smooth_field(const std::array<double, 3>& p, uint64_t seed, uint64_t channel) {
    SequentialRng rng(seed, 0x5eedf1e1dull ^ channel);
    double value = 0.0;
    for (int h = 0; h < 3; ++h) {
        const double wx = rng.uniform(-2.0, 2.0);
        const double wy = rng.uniform(-2.0, 2.0);
        const double wz = rng.uniform(-2.0, 2.0);
        const double phase = rng.uniform(0.0, 2.0 * M_PI);
        const double amp = rng.uniform(0.3, 1.0);
        value += amp * std::sin(2.0 * M_PI * (wx * p[0] + wy * p[1] + wz * p[2]) + phase);
    }
    return value / 1.8;
}

}  // namespace

AnchorSet generate_synthetic(const SyntheticConfig& cfg) {
    HACPP_CHECK(cfg.count >= 1 && cfg.feature_dim >= 1 && cfg.offsets_per >= 1,
                "generate_synthetic: bad dimensions");
    AnchorSet a;
    a.count = cfg.count;
    a.feature_dim = cfg.feature_dim;
    a.offsets_per = cfg.offsets_per;
    a.locations.resize(cfg.count * 3);
    a.features.resize(cfg.count * cfg.feature_dim);
    a.scalings.resize(cfg.count * 6);
    a.offsets.resize(cfg.count * 3 * cfg.offsets_per);

    SequentialRng loc_rng(cfg.seed, 1);
    if (cfg.clustered) {
        const int64_t n_clusters = std::max<int64_t>(1, cfg.count / 256);
        std::vector<std::array<double, 3>> centers(n_clusters);
        for (auto& c : centers) {
            for (int ax = 0; ax < 3; ++ax) c[ax] = loc_rng.uniform(0.15, 0.85);
        }
        for (int64_t i = 0; i < cfg.count; ++i) {
            const auto& c = centers[loc_rng.below(n_clusters)];
            for (int ax = 0; ax < 3; ++ax) {
                const double v = c[ax] + cfg.cluster_extent * loc_rng.normal();
                a.locations[i * 3 + ax] = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    } else {
        for (int64_t i = 0; i < cfg.count * 3; ++i) {
            a.locations[i] = static_cast<float>(loc_rng.uniform());
        }
    }

    // Per-anchor latent shared across feature channels: intra-anchor structure
    // that location alone cannot predict.
    SequentialRng attr_rng(cfg.seed, 2);
    std::vector<double> latents(cfg.count * cfg.latent_dim);
    for (double& z : latents) z = attr_rng.normal();
    std::vector<double> latent_w(cfg.feature_dim * cfg.latent_dim);
    for (double& w : latent_w) w = attr_rng.normal() * 0.7;

    for (int64_t i = 0; i < cfg.count; ++i) {
        const std::array<double, 3> p = {a.locations[i * 3 + 0], a.locations[i * 3 + 1],
                                         a.locations[i * 3 + 2]};
        for (int64_t j = 0; j < cfg.feature_dim; ++j) {
            double v = smooth_field(p, cfg.seed, static_cast<uint64_t>(j));
            for (int64_t z = 0; z < cfg.latent_dim; ++z) {
                v += latent_w[j * cfg.latent_dim + z] * latents[i * cfg.latent_dim + z];
            }
            v += cfg.feature_noise * attr_rng.normal();
            a.features[i * cfg.feature_dim + j] = static_cast<float>(v);
        }
        for (int64_t j = 0; j < 6; ++j) {
            const double raw = 0.6 * smooth_field(p, cfg.seed ^ 0xabcdull, 100 + j) +
                               0.05 * attr_rng.normal();
            const double l = 1.0 / (1.0 + std::exp(-raw));
            a.scalings[i * 6 + j] =
                static_cast<float>(std::clamp(l, 1e-4, 1.0 - 1e-4));
        }
        for (int64_t k = 0; k < cfg.offsets_per; ++k) {
            const bool zeroed = attr_rng.uniform() < cfg.offset_zero_fraction;
            for (int64_t j = 0; j < 3; ++j) {
                double v;
                if (zeroed) {
                    v = 0.01 * attr_rng.normal();
                } else {
                    v = 0.5 * smooth_field(p, cfg.seed ^ 0x0ff5ull, 200 + k * 3 + j) +
                        0.15 * attr_rng.normal();
                }
                a.offsets[i * 3 * cfg.offsets_per + k * 3 + j] = static_cast<float>(v);
            }
        }
    }
    a.validate();
    return a;
}

}  // namespace hacpp
