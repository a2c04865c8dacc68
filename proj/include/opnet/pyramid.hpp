#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "opnet/attention.hpp"
#include "opnet/ops.hpp"
#include "opnet/tensor.hpp"

namespace opnet {

inline constexpr std::size_t kPyramidLevels = 5;
inline constexpr std::array<std::size_t, kPyramidLevels> kPyramidStrides = {4, 8, 16, 32, 64};
/// Level index of the finest map (S2).
inline constexpr int kFirstLevel = 2;

/// Name of pyramid level i (0-based), "S2" .. "S6".
std::string level_name(std::size_t i);

/// Five feature maps S2..S6 sharing batch and channel extents; each level's
/// spatial extent is the previous one halved, rounding up.
struct FeaturePyramid {
    std::vector<Tensor> levels;

    static std::array<std::size_t, kPyramidLevels> strides() { return kPyramidStrides; }

    /// Level shapes for an S2 extent of (s2_h, s2_w).
    static std::vector<Shape> shapes_for(std::size_t batch, std::size_t channels,
                                         std::size_t s2_h, std::size_t s2_w);
    static FeaturePyramid randn(std::size_t batch, std::size_t channels, std::size_t s2_h,
                                std::size_t s2_w, std::mt19937_64& rng, double stddev = 1.0);
    static FeaturePyramid zeros_like(const FeaturePyramid& like);

    std::size_t batch() const { return levels.front().shape().b; }
    std::size_t channels() const { return levels.front().shape().c; }
    std::vector<Shape> shapes() const;

    /// Throws ContractViolation naming the first offending level.
    void validate() const;

    FeaturePyramid& operator+=(const FeaturePyramid& other);
};

double max_abs_diff(const FeaturePyramid& a, const FeaturePyramid& b);
bool identical(const FeaturePyramid& a, const FeaturePyramid& b);

/// Learnable state of the cross-level block.
struct MpOpParams {
    std::vector<ConvParams> reduce;   // per level, 1x1 C -> 1 with bias
    AttentionParams cross;            // 1x1 5 -> 5 q/k/v transforms
    std::vector<ConvParams> restore;  // per level, 3x3 2C -> C with bias
    OpConfig cross_cfg{1, 1.0};

    /// Reduce convs start as channel averages (weights 1/C, bias 0).
    static MpOpParams random(std::size_t channels, std::mt19937_64& rng);
    /// Restore convs pass the original block through; everything else zero.
    static MpOpParams residual_identity(std::size_t channels);
    static MpOpParams zeros_like(const MpOpParams& like);

    std::size_t param_count() const;
    void validate(std::size_t channels) const;
};

/// Per-level base attention plus the 3x3 fusion over (original, adjusted).
struct BaseOpParams {
    AttentionParams attention;
    ConvParams fuse;  // 3x3 2C -> C with bias

    static BaseOpParams random(std::size_t channels, std::mt19937_64& rng);
    static BaseOpParams residual_identity(std::size_t channels);
    static BaseOpParams zeros_like(const BaseOpParams& like);
    std::size_t param_count() const { return attention.param_count() + fuse.param_count(); }
};

/// Every learnable tensor of the feature path.
struct OpNetParams {
    std::vector<BaseOpParams> base;  // one per level
    MpOpParams mp;

    static OpNetParams random(std::size_t channels, std::mt19937_64& rng);
    /// Fusion convs pass originals through and all value transforms are zero.
    static OpNetParams residual_identity(std::size_t channels);
    static OpNetParams zeros_like(const OpNetParams& like);

    std::size_t param_count() const;
};

/// A named view over one parameter tensor's scalars.
struct NamedParam {
    std::string name;
    std::span<double> values;
};

/// Parameter views in a fixed order, e.g. "base.S2.attention.query.weight".
std::vector<NamedParam> named_parameters(OpNetParams& params);
std::vector<NamedParam> named_parameters(MpOpParams& params, const std::string& prefix = "mp");
std::vector<NamedParam> named_parameters(AttentionParams& params, const std::string& prefix);
std::vector<NamedParam> named_parameters(ConvParams& params, const std::string& prefix);

struct MpOpGrads {
    FeaturePyramid input;
    MpOpParams params;
};

struct OpNetGrads {
    FeaturePyramid input;
    OpNetParams params;
};

struct IntpGrads {
    FeaturePyramid input;
    std::vector<ConvParams> reduce;
};

/// Reduces each level to one channel, resizes it to the S2 extent and stacks
/// the five maps in level order: (B, 5, H_S2, W_S2).
Traced<IntpGrads> intp_reduce(const FeaturePyramid& p, const MpOpParams& params);

/// Cross-level attention over the stacked maps, then per-level
/// restore_conv(avg_pool(level weight) * level ++ level).
Traced<MpOpGrads, FeaturePyramid> mp_op_forward(const FeaturePyramid& p,
                                                const MpOpParams& params);

/// Intermediates of one cross-level pass, for inspection and invariant checks.
struct MpOpTrace {
    Tensor stacked;       // (B, 5, H_S2, W_S2)
    Tensor cross_weights; // (B, 1, 5, 5) when the cross block has one head
    Tensor recombined;    // (B, 5, H_S2, W_S2)
};
MpOpTrace mp_op_trace(const FeaturePyramid& p, const MpOpParams& params);

/// Per-level base attention and fusion, then the cross-level block.
Traced<OpNetGrads, FeaturePyramid> opnet_feature_path(const FeaturePyramid& p,
                                                      const OpNetParams& params,
                                                      const OpConfig& cfg);

/// Ground-truth object size used by the level-mismatch metric.
struct GtBox {
    double width = 0.0;
    double height = 0.0;
    std::optional<int> assigned_level;
};

/// clamp(4 + floor(log2(sqrt(w * h) / 224)), 2, 6).
int assign_fpn_level(const GtBox& box);

/// Overall and per-ground-truth-level mismatch rates. Empty buckets stay
/// unset.
struct MismatchReport {
    double overall = 0.0;
    std::size_t count = 0;
    std::array<std::optional<double>, kPyramidLevels> per_level;
};

/// Pairs are (chosen_level, gt_level), each in [2, 6].
MismatchReport mismatch_rate(std::span<const std::pair<int, int>> pairs);

/// CSV with header "series,S2,S3,S4,S5,S6,overall" and one data row; empty
/// buckets are left blank.
std::string mismatch_csv(const MismatchReport& report, const std::string& series);

}  // namespace opnet
