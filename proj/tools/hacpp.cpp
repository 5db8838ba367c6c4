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

// Command line surface: synthetic data generation, training, encoding,
// decoding and stream inspection.
//
// Exit codes: 0 success, 2 input error, 3 stream error, 4 numeric divergence.

#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "hacpp/location_codec.hpp"
#include "hacpp/pipeline.hpp"

using nlohmann::json;

namespace {

hacpp::AnchorFormat format_for(const std::string& path) {
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".ply") {
        return hacpp::AnchorFormat::Ply;
    }
    return hacpp::AnchorFormat::RawBinary;
}

std::vector<uint8_t> read_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f.good()) throw hacpp::Error("cannot open file: " + path);
    return std::vector<uint8_t>((std::istreambuf_iterator<char>(f)),
                                std::istreambuf_iterator<char>());
}

void write_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f.good()) throw hacpp::Error("cannot open file for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f.good()) throw hacpp::Error("write failed: " + path);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    if (!f.good()) throw hacpp::Error("cannot open file for writing: " + path);
    f << text;
}

void print_size_breakdown(const hacpp::EncodeResult& r) {
    const auto& s = r.sizes;
    std::printf("section      bytes\n");
    std::printf("x^a     %10zu\n", s.locations);
    std::printf("f^a     %10zu\n", s.feature);
    std::printf("l       %10zu\n", s.scaling);
    std::printf("o       %10zu\n", s.offsets);
    std::printf("H       %10zu\n", s.grid);
    std::printf("m       %10zu\n", s.masks);
    std::printf("MLP     %10zu\n", s.weights);
    std::printf("framing %10zu\n", s.framing);
    std::printf("total   %10zu\n", s.total());
    std::printf("valid anchors: %u\n", r.n_valid);
}

struct FitOptions {
    std::string input;
    std::string out = "model.state";
    std::string metrics_path;
    hacpp::TrainConfig cfg;
    bool iters_set = false;
    bool phases_set = false;
};

int run_fit(FitOptions& opt) {
    if (opt.iters_set && !opt.phases_set) {
        // Keep the three-phase shape when only the total is overridden.
        opt.cfg.phase1_end = std::max<int64_t>(1, opt.cfg.iterations / 10);
        opt.cfg.phase2_end = std::max<int64_t>(opt.cfg.phase1_end + 1, opt.cfg.iterations / 3);
    }
    opt.cfg.validate();
    const hacpp::AnchorSet anchors = hacpp::load_anchors(opt.input, format_for(opt.input));
    hacpp::TrainMetrics metrics;
    const hacpp::TrainedModel model = hacpp::train(anchors, opt.cfg, &metrics);
    model.save(opt.out);

    json j;
    j["lambda"] = opt.cfg.lambda_rate;
    j["iterations"] = opt.cfg.iterations;
    j["seed"] = opt.cfg.seed;
    j["sample_fraction"] = opt.cfg.sample_fraction;
    j["valid_anchor_ratio"] = metrics.valid_anchor_ratio;
    j["valid_gaussian_ratio"] = metrics.valid_gaussian_ratio;
    j["bits_per_param"] = {{"feature", metrics.final_bits_per_param_feature},
                           {"scaling", metrics.final_bits_per_param_scaling},
                           {"offset", metrics.final_bits_per_param_offset}};
    json curve = json::array();
    for (const auto& e : metrics.curve) {
        curve.push_back({{"iteration", e.iteration},
                         {"phase", e.phase},
                         {"distortion", e.loss.distortion},
                         {"entropy_bits", e.loss.entropy_bits},
                         {"hash_bits", e.loss.hash_bits},
                         {"total", e.loss.total}});
    }
    j["loss_curve"] = curve;
    if (!opt.metrics_path.empty()) write_text(opt.metrics_path, j.dump(2) + "\n");
    std::printf("trained %lld anchors, state written to %s\n",
                static_cast<long long>(anchors.count), opt.out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"learned entropy codec for anchor-based 3D Gaussian scenes"};
    app.require_subcommand(1);

    // --- gen ---------------------------------------------------------------
    auto* gen = app.add_subcommand("gen", "generate a synthetic correlated anchor cloud");
    hacpp::SyntheticConfig gen_cfg;
    std::string gen_out = "anchors.ply";
    bool gen_uniform = false;
    gen->add_option("--out", gen_out, "output PLY path");
    gen->add_option("--n", gen_cfg.count, "anchor count");
    gen->add_option("--d-feature", gen_cfg.feature_dim, "feature dimension");
    gen->add_option("--k-offsets", gen_cfg.offsets_per, "offsets per anchor");
    gen->add_option("--seed", gen_cfg.seed, "generator seed");
    gen->add_flag("--uniform", gen_uniform, "uniform locations instead of clustered");
    gen->add_option("--zero-frac", gen_cfg.offset_zero_fraction,
                    "fraction of near-zero offsets");
    gen->add_option("--cluster-extent", gen_cfg.cluster_extent, "cluster radius fraction");

    // --- fit ---------------------------------------------------------------
    auto* fit = app.add_subcommand("fit", "train codec state for an anchor cloud");
    FitOptions fit_opt;
    fit->add_option("--input", fit_opt.input, "input anchors (.ply or raw)")->required();
    fit->add_option("--out", fit_opt.out, "output model state path");
    fit->add_option("--metrics", fit_opt.metrics_path, "metrics JSON path");
    fit->add_option("--lambda", fit_opt.cfg.lambda_rate, "rate weight");
    auto* iters_opt = fit->add_option("--iters", fit_opt.cfg.iterations, "total iterations");
    auto* p1_opt = fit->add_option("--phase1", fit_opt.cfg.phase1_end, "phase 1 end iteration");
    auto* p2_opt = fit->add_option("--phase2", fit_opt.cfg.phase2_end, "phase 2 end iteration");
    fit->add_option("--seed", fit_opt.cfg.seed, "training seed");
    fit->add_option("--sample-frac", fit_opt.cfg.sample_fraction,
                    "anchor fraction entropy-trained per iteration");
    fit->add_option("--lr", fit_opt.cfg.adam.lr, "optimizer learning rate");
    fit->add_option("--mask-lr", fit_opt.cfg.mask_lr, "mask logits learning rate");
    fit->add_option("--grid-3d-levels", fit_opt.cfg.grid.levels_3d, "3D grid levels");
    fit->add_option("--grid-2d-levels", fit_opt.cfg.grid.levels_2d, "2D grid levels");
    fit->add_option("--q0-feature", fit_opt.cfg.q0_feature, "base step for features");
    fit->add_option("--q0-scaling", fit_opt.cfg.q0_scaling, "base step for scalings");
    fit->add_option("--q0-offset", fit_opt.cfg.q0_offset, "base step for offsets");
    fit->add_option("--chunks", fit_opt.cfg.n_chunks, "intra-context chunk count");
    bool no_intra = false;
    fit->add_flag("--no-intra", no_intra, "disable the intra-anchor context");

    // --- encode ------------------------------------------------------------
    auto* enc = app.add_subcommand("encode", "encode anchors with trained state");
    std::string enc_input, enc_state, enc_out = "out.hacp";
    enc->add_option("--input", enc_input, "input anchors (.ply or raw)")->required();
    enc->add_option("--state", enc_state, "trained model state")->required();
    enc->add_option("--out", enc_out, "output bitstream path");

    // --- decode ------------------------------------------------------------
    auto* dec = app.add_subcommand("decode", "decode a bitstream to a PLY reconstruction");
    std::string dec_input, dec_out = "recon.ply";
    dec->add_option("--input", dec_input, "input bitstream")->required();
    dec->add_option("--out", dec_out, "output PLY path");

    // --- inspect -----------------------------------------------------------
    auto* ins = app.add_subcommand("inspect", "report stream statistics");
    std::string ins_input, ins_csv;
    int ins_voxel_res = 0;
    ins->add_option("--input", ins_input, "input bitstream")->required();
    ins->add_option("--stats-voxel-res", ins_voxel_res,
                    "emit per-voxel bit allocation at this resolution");
    ins->add_option("--stats-out", ins_csv, "per-voxel CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) {
            gen_cfg.clustered = !gen_uniform;
            const hacpp::AnchorSet anchors = hacpp::generate_synthetic(gen_cfg);
            hacpp::save_anchors(anchors, gen_out, format_for(gen_out));
            std::printf("wrote %lld anchors to %s\n", static_cast<long long>(anchors.count),
                        gen_out.c_str());
            return 0;
        }
        if (fit->parsed()) {
            fit_opt.iters_set = iters_opt->count() > 0;
            fit_opt.phases_set = p1_opt->count() > 0 || p2_opt->count() > 0;
            fit_opt.cfg.enable_intra = !no_intra;
            return run_fit(fit_opt);
        }
        if (enc->parsed()) {
            const hacpp::AnchorSet anchors = hacpp::load_anchors(enc_input,
                                                                 format_for(enc_input));
            const hacpp::TrainedModel model = hacpp::TrainedModel::load(enc_state);
            const hacpp::EncodeResult result = hacpp::encode(anchors, model);
            write_bytes(enc_out, result.bytes);
            print_size_breakdown(result);
            return 0;
        }
        if (dec->parsed()) {
            const hacpp::DecodeResult result = hacpp::decode(read_bytes(dec_input));
            if (result.anchors.count == 0) {
                std::printf("stream contains no valid anchors; nothing to write\n");
                return 0;
            }
            hacpp::save_anchors(result.anchors, dec_out, hacpp::AnchorFormat::Ply);
            std::printf("decoded %lld anchors to %s\n",
                        static_cast<long long>(result.anchors.count), dec_out.c_str());
            return 0;
        }
        if (ins->parsed()) {
            const std::vector<uint8_t> bytes = read_bytes(ins_input);
            const hacpp::ParsedBitstream parsed = hacpp::parse_bitstream(bytes);
            const hacpp::DecodeResult result = hacpp::decode(bytes);
            const auto& est = result.estimate;
            const auto& h = result.header;
            std::printf("anchors: total %u, valid %u, r(anchor)=%.4f\n", h.n_total, h.n_valid,
                        h.n_total ? static_cast<double>(h.n_valid) / h.n_total : 0.0);
            int64_t valid_offsets = 0;
            for (uint8_t b : result.anchors.masks) valid_offsets += b;
            const double r_gauss =
                h.n_total ? static_cast<double>(valid_offsets) /
                                (static_cast<double>(h.n_total) * h.offsets_per)
                          : 0.0;
            std::printf("gaussians: valid %lld, r(gaussian)=%.4f\n",
                        static_cast<long long>(valid_offsets), r_gauss);
            auto section_bits = [&](hacpp::SectionId id) {
                return 8.0 * static_cast<double>(parsed.section_blob_size(id));
            };
            auto report_group = [&](const char* name, hacpp::SectionId id, double est_bits,
                                    int64_t params) {
                if (params == 0) return;
                std::printf("%-8s actual %.3f bits/param, estimated %.3f bits/param\n", name,
                            section_bits(id) / static_cast<double>(params),
                            est_bits / static_cast<double>(params));
            };
            report_group("f^a", hacpp::SectionId::Feature, est.feature_bits, est.feature_params);
            report_group("l", hacpp::SectionId::Scaling, est.scaling_bits, est.scaling_params);
            report_group("o", hacpp::SectionId::Offsets, est.offset_bits, est.offset_params);
            if (h.n_valid > 0) {
                std::printf("x^a      actual %.3f bits/point\n",
                            section_bits(hacpp::SectionId::Locations) /
                                static_cast<double>(h.n_valid));
                std::printf("m        actual %.3f bits/mask\n",
                            section_bits(hacpp::SectionId::Masks) /
                                (static_cast<double>(h.n_valid) * h.offsets_per));
            }
            if (ins_voxel_res > 0) {
                const auto stats =
                    hacpp::bit_allocation_stats(result.anchors.locations,
                                                est.per_anchor_bits, h.bounds, ins_voxel_res);
                const std::string csv = hacpp::voxel_stats_csv(stats);
                if (ins_csv.empty()) {
                    std::fputs(csv.c_str(), stdout);
                } else {
                    write_text(ins_csv, csv);
                }
            }
            return 0;
        }
    } catch (const hacpp::DivergenceError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const hacpp::StreamError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const hacpp::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
