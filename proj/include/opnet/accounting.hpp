#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "opnet/attention.hpp"
#include "opnet/tensor.hpp"

namespace opnet {

// Counting conventions: one MAC is one multiply-accumulate. Softmax
// exponentials and divisions, and temperature scaling, are not counted. A
// 3x3 convolution counts all nine taps at every output position, padded
// borders included. Bilinear resampling counts four MACs per output sample
// and nothing for a same-size resize; average pooling counts one per input
// element. "GMACs" renders macs / 1e9 with two decimals.

struct ConvCount {
    std::uint64_t macs = 0;
    std::uint64_t params = 0;
};

/// macs = B * C_out * C_in * k^2 * H * W; params = C_out * C_in * k^2 (+ C_out).
ConvCount count_conv(const Shape& input, std::uint64_t c_in, std::uint64_t c_out,
                     std::uint64_t k, bool with_bias);

/// Settings the static counters need beyond the level shapes.
struct AccountingConfig {
    OpConfig base_cfg{};             // per-level heads
    OpConfig cross_cfg{1, 1.0};      // cross-level heads
};

struct StageEntry {
    std::string stage;
    std::uint64_t macs = 0;
    std::uint64_t params = 0;

    friend bool operator==(const StageEntry&, const StageEntry&) = default;
};

/// Stages of the feature path, in execution order.
const std::vector<std::string>& stage_names();

/// Static count of one named stage over the given level shapes. Base stages
/// accept any number of levels; cross-level stages need zero or five.
/// Throws ConfigError for unknown names.
StageEntry count_stage(const std::string& stage, const AccountingConfig& cfg,
                       std::span<const Shape> levels);

class AccountingReport {
public:
    void add(StageEntry entry);
    const std::vector<StageEntry>& entries() const { return entries_; }
    StageEntry totals() const;

    /// "stage,macs,params" rows followed by a "total" row.
    std::string to_csv() const;
    std::string to_json(int indent = 2) const;
    /// Human-readable table with GMACs and #Params (M) columns.
    std::string render_table() const;

    static std::string render_gmacs(std::uint64_t macs);
    static std::string render_mparams(std::uint64_t params);

private:
    std::vector<StageEntry> entries_;
};

/// Every stage of the feature path, base attention through cross-level fusion.
AccountingReport count_pyramid_macs_params(const AccountingConfig& cfg,
                                           std::span<const Shape> levels);

struct ComplexityRow {
    std::size_t heads = 0;
    std::size_t channels = 0;
    std::uint64_t measured = 0;   // instrumented gram + weighted-sum MACs
    std::uint64_t predicted = 0;  // 2 * B * (C^2 / P) * H * W
};

struct ComplexityAudit {
    std::vector<ComplexityRow> rows;
    std::optional<double> channel_exponent;  // log-log slope at fixed P
    std::optional<double> head_exponent;     // log-log slope at fixed C
    std::string note;

    std::string to_csv() const;
};

/// Runs one instrumented multi-head block per (P, C) pair on a (B, C, H, W)
/// input and tabulates the similarity-stage MACs.
ComplexityAudit complexity_audit(std::span<const std::pair<std::size_t, std::size_t>> sweep,
                                 std::size_t batch, std::size_t height, std::size_t width,
                                 std::uint64_t seed = 0);

}  // namespace opnet
