#include <cmath>
#include <fstream>
#include <iostream>
#include <random>

#include "CLI11.hpp"
#include "opnet/errors.hpp"
#include "opnet/harness.hpp"
#include "opnet/tensor_io.hpp"

namespace opnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << text;
    if (!os) throw IoError("failed writing " + path.string());
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

json shape_json(const Shape& s) { return json::array({s.b, s.c, s.h, s.w}); }

json pyramid_shapes_json(const FeaturePyramid& p) {
    json out = json::object();
    for (std::size_t i = 0; i < p.levels.size(); ++i) {
        out[level_name(i)] = shape_json(p.levels[i].shape());
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Pyramid directories

void write_pyramid_dir(const fs::path& dir, const FeaturePyramid& p) {
    ensure_dir(dir);
    for (std::size_t i = 0; i < p.levels.size(); ++i) {
        write_opt1(dir / (level_name(i) + ".opt1"), p.levels[i]);
    }
    json meta;
    meta["strides"] = kPyramidStrides;
    meta["channels"] = p.channels();
    write_text(dir / "meta.json", meta.dump() + "\n");
}

FeaturePyramid read_pyramid_dir(const fs::path& dir) {
    const fs::path meta_path = dir / "meta.json";
    std::ifstream is(meta_path);
    if (!is) throw IoError("missing or unreadable " + meta_path.string());
    json meta;
    try {
        meta = json::parse(is);
    } catch (const json::parse_error& e) {
        throw IoError("corrupt " + meta_path.string() + ": " + e.what());
    }
    if (!meta.is_object() || !meta.contains("channels") || !meta.contains("strides")) {
        throw IoError("corrupt " + meta_path.string() + ": needs 'strides' and 'channels'");
    }
    std::size_t channels = 0;
    std::vector<std::size_t> strides;
    try {
        channels = meta["channels"].get<std::size_t>();
        strides = meta["strides"].get<std::vector<std::size_t>>();
    } catch (const json::exception& e) {
        throw IoError("corrupt " + meta_path.string() + ": " + e.what());
    }
    if (!std::equal(strides.begin(), strides.end(), kPyramidStrides.begin(),
                    kPyramidStrides.end())) {
        throw ContractViolation(meta_path.string() + ": strides must be [4,8,16,32,64]");
    }

    FeaturePyramid p;
    for (std::size_t i = 0; i < kPyramidLevels; ++i) {
        p.levels.push_back(read_opt1(dir / (level_name(i) + ".opt1")));
        if (p.levels.back().shape().c != channels) {
            throw ContractViolation(level_name(i) + " has " +
                                    std::to_string(p.levels.back().shape().c) +
                                    " channels but meta.json declares " +
                                    std::to_string(channels));
        }
    }
    p.validate();
    return p;
}

// ---------------------------------------------------------------------------
// Commands

void cmd_gen(const HarnessConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    write_pyramid_dir(out_dir, FeaturePyramid::randn(cfg.batch, cfg.channels, cfg.s2_height,
                                                     cfg.s2_width, rng));
}

void cmd_forward(const HarnessConfig& cfg, const fs::path& in_dir, const fs::path& out_dir,
                 std::ostream& log) {
    cfg.validate();
    FeaturePyramid input = read_pyramid_dir(in_dir);
    const std::size_t channels = input.channels();
    const OpConfig op_cfg = cfg.op_config();
    op_cfg.validate(channels);
    OpNetParams params = make_params(cfg, channels);

    const Shape intermediate = intp_reduce(input, params.mp).value.shape();
    log << "MP-OP intermediate shape " << intermediate << '\n';
    FeaturePyramid output = opnet_feature_path(input, params, op_cfg).value;
    for (const auto& level : output.levels) {
        if (!level.all_finite()) throw NumericalError("forward produced non-finite values");
    }

    write_pyramid_dir(out_dir, output);
    json shapes;
    shapes["input"] = pyramid_shapes_json(input);
    shapes["output"] = pyramid_shapes_json(output);
    shapes["mp_op_intermediate"] = shape_json(intermediate);
    write_text(out_dir / "shapes.json", shapes.dump(2) + "\n");
    for (std::size_t i = 0; i < output.levels.size(); ++i) {
        log << level_name(i) << ' ' << output.levels[i].shape() << '\n';
    }
}

bool cmd_gradcheck(const HarnessConfig& cfg, GradScope scope, const fs::path& out_dir,
                   std::ostream& log) {
    cfg.validate();
    GradCheckReport report = run_gradcheck_suite(scope, cfg.seed, cfg.gradcheck_seeds,
                                                 cfg.gradcheck_epsilon, cfg.gradcheck_threshold);
    ensure_dir(out_dir);
    write_text(out_dir / "gradcheck.csv", report.to_csv());
    log << report.entries.size() << " checks, worst relative error " << report.worst()
        << ", threshold " << report.threshold << ": " << (report.pass ? "PASS" : "FAIL") << '\n';
    return report.pass;
}

void cmd_count(const HarnessConfig& cfg, const std::string& sweep, const fs::path& out_dir,
               std::ostream& log) {
    cfg.validate();
    const auto levels =
        FeaturePyramid::shapes_for(cfg.batch, cfg.channels, cfg.s2_height, cfg.s2_width);
    AccountingConfig acc;
    acc.base_cfg = cfg.op_config();
    const AccountingReport report = count_pyramid_macs_params(acc, levels);
    const auto pairs = parse_sweep(sweep);
    const ComplexityAudit audit =
        complexity_audit(pairs, cfg.batch, cfg.s2_height, cfg.s2_width, cfg.seed);

    json doc = json::parse(report.to_json());
    json rows = json::array();
    for (const auto& r : audit.rows) {
        rows.push_back({{"heads", r.heads},
                        {"channels", r.channels},
                        {"similarity_macs", r.measured},
                        {"predicted_macs", r.predicted}});
    }
    doc["sweep"] = {{"rows", rows}, {"note", audit.note}};
    if (audit.channel_exponent) doc["sweep"]["channel_exponent"] = *audit.channel_exponent;
    if (audit.head_exponent) doc["sweep"]["head_exponent"] = *audit.head_exponent;

    ensure_dir(out_dir);
    write_text(out_dir / "accounting.csv", report.to_csv());
    write_text(out_dir / "accounting.json", doc.dump(2) + "\n");
    write_text(out_dir / "complexity.csv", audit.to_csv());
    log << report.render_table();
    if (!audit.rows.empty()) log << audit.to_csv() << audit.note << '\n';
}

std::vector<std::pair<int, int>> synthetic_level_pairs(std::uint64_t seed, std::size_t count,
                                                       double perturb) {
    std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ull);
    std::uniform_real_distribution<double> log_side(std::log(8.0), std::log(1024.0));
    std::uniform_real_distribution<double> log_aspect(std::log(0.5), std::log(2.0));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double side = std::exp(log_side(rng));
        const double aspect = std::sqrt(std::exp(log_aspect(rng)));
        const int gt = assign_fpn_level({side * aspect, side / aspect, std::nullopt});
        int chosen = gt;
        const bool flip = unit(rng) < perturb;
        const bool up = unit(rng) < 0.5;
        if (flip) {
            chosen = gt + (up ? 1 : -1);
            if (chosen > 6) chosen = gt - 1;
            if (chosen < 2) chosen = gt + 1;
        }
        pairs.emplace_back(chosen, gt);
    }
    return pairs;
}

void cmd_experiment(const HarnessConfig& cfg, const fs::path& out_dir, std::ostream& log) {
    cfg.validate();
    ToyTaskOptions options;
    options.channels = cfg.toy_channels;
    options.heads = cfg.toy_heads;
    options.s2_size = cfg.toy_s2;
    const ToyTaskResult trace = toy_task_run(cfg.seed, cfg.steps, cfg.sgd, options);

    const auto pairs = synthetic_level_pairs(cfg.seed, cfg.boxes, cfg.perturb);
    const MismatchReport mismatch = mismatch_rate(pairs);

    ensure_dir(out_dir);
    write_text(out_dir / "loss.csv", trace.to_csv());
    write_text(out_dir / "mismatch.csv", mismatch_csv(mismatch, "synthetic"));
    log << "loss " << trace.losses.front() << " -> " << trace.losses.back() << " over "
        << trace.losses.size() << " steps\n";
    if (trace.tuning_warning) {
        log << "warning: loss rose within a 10-step window after step 50; consider tuning\n";
    }
    log << "overall mismatch rate " << mismatch.overall << " over " << mismatch.count
        << " boxes\n";
}

// ---------------------------------------------------------------------------
// Entry point

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Channel-relation attention over feature pyramids"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir = "opnet_out";
    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
        cmd->add_option("--seed", seed, "Random seed");
        cmd->add_option("--out", out_dir, "Output directory");
    };

    std::optional<std::size_t> channels, heads, s2;
    CLI::App* gen = app.add_subcommand("gen", "Write a seeded standard-normal pyramid");
    add_common(gen);
    gen->add_option("--channels", channels, "Channel count");
    gen->add_option("--s2", s2, "S2 height and width");

    std::string in_dir, params_path;
    CLI::App* forward = app.add_subcommand("forward", "Run the feature path on a pyramid");
    add_common(forward);
    forward->add_option("--in", in_dir, "Input pyramid directory")->required();
    forward->add_option("--params", params_path, "Parameter JSON {init, seed}");
    forward->add_option("--heads", heads, "Attention heads");

    std::string scope_text = "all";
    std::optional<double> threshold;
    CLI::App* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
    add_common(gradcheck_cmd);
    gradcheck_cmd->add_option("--scope", scope_text, "primitive|attention|pyramid|all");
    gradcheck_cmd->add_option("--threshold", threshold, "Relative error threshold");

    std::string sweep;
    CLI::App* count = app.add_subcommand("count", "MAC and parameter accounting");
    add_common(count);
    count->add_option("--sweep", sweep, "Complexity sweep, e.g. \"P=1,2,4 C=8\"");
    count->add_option("--channels", channels, "Channel count");
    count->add_option("--heads", heads, "Attention heads");
    count->add_option("--s2", s2, "S2 height and width");

    std::optional<std::size_t> steps;
    std::optional<double> perturb;
    CLI::App* experiment = app.add_subcommand("experiment", "Toy training and level mismatch");
    add_common(experiment);
    experiment->add_option("--steps", steps, "Training steps");
    experiment->add_option("--perturb", perturb, "Level perturbation rate in [0, 1]");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        HarnessConfig cfg = config_path.empty() ? HarnessConfig{} : load_config(config_path);
        if (seed) cfg.seed = *seed;
        if (channels) cfg.channels = *channels;
        if (heads) cfg.heads = *heads;
        if (s2) cfg.s2_height = cfg.s2_width = *s2;
        if (threshold) cfg.gradcheck_threshold = *threshold;
        if (steps) cfg.steps = *steps;
        if (perturb) cfg.perturb = *perturb;
        if (!params_path.empty()) {
            std::ifstream is(params_path);
            if (!is) throw IoError("cannot open parameter file " + params_path);
            json doc;
            try {
                doc = json::parse(is);
            } catch (const json::parse_error& e) {
                throw IoError("corrupt parameter file " + params_path + ": " + e.what());
            }
            if (doc.contains("init")) cfg.init = doc["init"].get<std::string>();
            if (doc.contains("seed")) cfg.seed = doc["seed"].get<std::uint64_t>();
        }
        cfg.validate();

        if (gen->parsed()) {
            cmd_gen(cfg, out_dir);
        } else if (forward->parsed()) {
            cmd_forward(cfg, in_dir, out_dir, out);
        } else if (gradcheck_cmd->parsed()) {
            if (!cmd_gradcheck(cfg, parse_scope(scope_text), out_dir, out)) return kExitNumerical;
        } else if (count->parsed()) {
            cmd_count(cfg, sweep, out_dir, out);
        } else if (experiment->parsed()) {
            cmd_experiment(cfg, out_dir, out);
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const IoError& e) {
        err << "I/O error: " << e.what() << '\n';
        return kExitIo;
    } catch (const ContractViolation& e) {
        err << "contract violation: " << e.what() << '\n';
        return kExitContract;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const json::exception& e) {
        err << "config error: " << e.what() << '\n';
        return kExitUsage;
    }
    return kExitOk;
}

}  // namespace opnet
