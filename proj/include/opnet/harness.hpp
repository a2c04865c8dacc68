#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "opnet/accounting.hpp"
#include "opnet/pyramid.hpp"
#include "opnet/training.hpp"

namespace opnet {

/// Process exit codes shared by every command.
enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 1,
    kExitIo = 2,
    kExitContract = 3,
    kExitNumerical = 4,
};

/// All run parameters. Every field has a default, so an empty JSON document
/// is a valid config.
struct HarnessConfig {
    std::size_t channels = 256;
    std::size_t heads = 2;
    std::array<std::size_t, kPyramidLevels> strides = kPyramidStrides;
    double temperature = 1.0;
    std::size_t batch = 1;
    std::size_t s2_height = 64;
    std::size_t s2_width = 64;
    std::uint64_t seed = 42;
    std::string init = "random";  // "random" | "identity"

    double gradcheck_epsilon = 1e-5;
    double gradcheck_threshold = 1e-4;
    std::size_t gradcheck_seeds = 3;

    SgdConfig sgd{};
    std::size_t toy_channels = 4;
    std::size_t toy_heads = 2;
    std::size_t toy_s2 = 8;
    std::size_t steps = 200;
    double perturb = 0.0;
    std::size_t boxes = 1000;

    void validate() const;
    OpConfig op_config() const { return {heads, temperature}; }

    static HarnessConfig from_json(const nlohmann::json& doc);
    nlohmann::json to_json() const;
};

/// Reads a JSON config file; missing keys keep their defaults.
HarnessConfig load_config(const std::filesystem::path& path);

// -- pyramid directories ----------------------------------------------------

/// Writes S2.opt1 .. S6.opt1 and meta.json ({"strides": [...], "channels": C}).
void write_pyramid_dir(const std::filesystem::path& dir, const FeaturePyramid& p);
/// Reads a pyramid directory; throws IoError naming the missing or corrupt
/// file and ContractViolation when the pyramid structure is inconsistent.
FeaturePyramid read_pyramid_dir(const std::filesystem::path& dir);

// -- gradient-check suites --------------------------------------------------

enum class GradScope { Primitive, Attention, Pyramid, All };
GradScope parse_scope(const std::string& text);

/// Runs every finite-difference check in `scope` over `seeds` consecutive
/// seeds starting at `seed`. Entry names look like "conv.weight@seed42".
GradCheckReport run_gradcheck_suite(GradScope scope, std::uint64_t seed, std::size_t seeds,
                                    double epsilon, double threshold);

// -- commands -----------------------------------------------------------------

/// Parses "P=1,2,4 C=8,16" into the cartesian product of (P, C) pairs.
std::vector<std::pair<std::size_t, std::size_t>> parse_sweep(const std::string& text);

/// Parameters for `forward`: deterministic random init from the seed, or the
/// residual-identity configuration.
OpNetParams make_params(const HarnessConfig& cfg, std::size_t channels);

void cmd_gen(const HarnessConfig& cfg, const std::filesystem::path& out_dir);
void cmd_forward(const HarnessConfig& cfg, const std::filesystem::path& in_dir,
                 const std::filesystem::path& out_dir, std::ostream& log);
/// Returns true when every check passes.
bool cmd_gradcheck(const HarnessConfig& cfg, GradScope scope,
                   const std::filesystem::path& out_dir, std::ostream& log);
void cmd_count(const HarnessConfig& cfg, const std::string& sweep,
               const std::filesystem::path& out_dir, std::ostream& log);

/// Synthetic (chosen, gt) level pairs: box sizes log-uniform, gt from
/// assign_fpn_level, and with probability `perturb` the chosen level is
/// shifted by one (towards the valid side at the ends).
std::vector<std::pair<int, int>> synthetic_level_pairs(std::uint64_t seed, std::size_t count,
                                                       double perturb);
void cmd_experiment(const HarnessConfig& cfg, const std::filesystem::path& out_dir,
                    std::ostream& log);

/// Full command-line entry point; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace opnet
