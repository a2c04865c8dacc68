#include "opnet/pyramid.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "opnet/errors.hpp"
#include "opnet/instrument.hpp"

namespace opnet {

namespace {

std::size_t half_up(std::size_t n) { return (n + 1) / 2; }

// 3x3 2C -> C conv that copies input block `block` (0 or 1) through.
ConvParams passthrough_fuse(std::size_t channels, std::size_t block) {
    ConvParams p = ConvParams::zeros(2 * channels, channels, 3, true);
    for (std::size_t c = 0; c < channels; ++c) p.weight.at(c, block * channels + c, 1, 1) = 1.0;
    return p;
}

ConvParams averaging_reduce(std::size_t channels) {
    ConvParams p = ConvParams::zeros(channels, 1, 1, true);
    for (std::size_t c = 0; c < channels; ++c) {
        p.weight.at(0, c, 0, 0) = 1.0 / static_cast<double>(channels);
    }
    return p;
}

void check_conv(const ConvParams& p, std::size_t c_in, std::size_t c_out, std::size_t k,
                const std::string& what) {
    p.validate();
    if (p.in_channels() != c_in || p.out_channels() != c_out || p.kernel() != k) {
        throw ContractViolation(what + " must be " + std::to_string(k) + "x" + std::to_string(k) +
                                " " + std::to_string(c_in) + "->" + std::to_string(c_out) +
                                ", got " + to_string(p.weight.shape()));
    }
}

}  // namespace

std::string level_name(std::size_t i) { return "S" + std::to_string(i + kFirstLevel); }

// ---------------------------------------------------------------------------
// FeaturePyramid

std::vector<Shape> FeaturePyramid::shapes_for(std::size_t batch, std::size_t channels,
                                              std::size_t s2_h, std::size_t s2_w) {
    std::vector<Shape> out;
    std::size_t h = s2_h, w = s2_w;
    for (std::size_t i = 0; i < kPyramidLevels; ++i) {
        out.push_back({batch, channels, h, w});
        h = half_up(h);
        w = half_up(w);
    }
    return out;
}

FeaturePyramid FeaturePyramid::randn(std::size_t batch, std::size_t channels, std::size_t s2_h,
                                     std::size_t s2_w, std::mt19937_64& rng, double stddev) {
    FeaturePyramid p;
    for (const Shape& s : shapes_for(batch, channels, s2_h, s2_w)) {
        p.levels.push_back(Tensor::randn(s, rng, stddev));
    }
    return p;
}

FeaturePyramid FeaturePyramid::zeros_like(const FeaturePyramid& like) {
    FeaturePyramid p;
    for (const auto& l : like.levels) p.levels.emplace_back(l.shape());
    return p;
}

std::vector<Shape> FeaturePyramid::shapes() const {
    std::vector<Shape> out;
    for (const auto& l : levels) out.push_back(l.shape());
    return out;
}

void FeaturePyramid::validate() const {
    if (levels.size() != kPyramidLevels) {
        throw ContractViolation("pyramid has " + std::to_string(levels.size()) +
                                " levels, expected " + std::to_string(kPyramidLevels));
    }
    const Shape s2 = levels[0].shape();
    if (s2.h == 0 || s2.w == 0) {
        throw ContractViolation("S2 has empty spatial extent " + to_string(s2));
    }
    for (std::size_t i = 1; i < kPyramidLevels; ++i) {
        const Shape prev = levels[i - 1].shape();
        const Shape s = levels[i].shape();
        if (s.b != s2.b || s.c != s2.c) {
            throw ContractViolation(level_name(i) + " shape " + to_string(s) +
                                    " does not share batch/channels with S2 " + to_string(s2));
        }
        if (s.h != half_up(prev.h) || s.w != half_up(prev.w)) {
            throw ContractViolation(level_name(i) + " spatial extent " + std::to_string(s.h) +
                                    "x" + std::to_string(s.w) + " should be " +
                                    std::to_string(half_up(prev.h)) + "x" +
                                    std::to_string(half_up(prev.w)));
        }
    }
}

FeaturePyramid& FeaturePyramid::operator+=(const FeaturePyramid& other) {
    if (other.levels.size() != levels.size()) {
        throw ContractViolation("cannot add pyramids with different level counts");
    }
    for (std::size_t i = 0; i < levels.size(); ++i) levels[i] += other.levels[i];
    return *this;
}

double max_abs_diff(const FeaturePyramid& a, const FeaturePyramid& b) {
    if (a.levels.size() != b.levels.size()) {
        throw ContractViolation("pyramids have different level counts");
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.levels.size(); ++i) {
        m = std::max(m, max_abs_diff(a.levels[i], b.levels[i]));
    }
    return m;
}

bool identical(const FeaturePyramid& a, const FeaturePyramid& b) {
    if (a.levels.size() != b.levels.size()) return false;
    for (std::size_t i = 0; i < a.levels.size(); ++i) {
        if (!a.levels[i].identical(b.levels[i])) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Parameters

MpOpParams MpOpParams::random(std::size_t channels, std::mt19937_64& rng) {
    MpOpParams p;
    for (std::size_t i = 0; i < kPyramidLevels; ++i) p.reduce.push_back(averaging_reduce(channels));
    p.cross = AttentionParams::random(kPyramidLevels, rng);
    for (std::size_t i = 0; i < kPyramidLevels; ++i) {
        p.restore.push_back(ConvParams::random(2 * channels, channels, 3, true, rng));
    }
    return p;
}

MpOpParams MpOpParams::residual_identity(std::size_t channels) {
    MpOpParams p;
    for (std::size_t i = 0; i < kPyramidLevels; ++i) {
        p.reduce.push_back(averaging_reduce(channels));
        p.restore.push_back(passthrough_fuse(channels, 1));
    }
    p.cross = AttentionParams::identity(kPyramidLevels);
    p.cross.value = ConvParams::zeros(kPyramidLevels, kPyramidLevels, 1, false);
    return p;
}

MpOpParams MpOpParams::zeros_like(const MpOpParams& like) {
    MpOpParams p;
    for (const auto& r : like.reduce) p.reduce.push_back(ConvParams::zeros_like(r));
    p.cross = AttentionParams::zeros_like(like.cross);
    for (const auto& r : like.restore) p.restore.push_back(ConvParams::zeros_like(r));
    p.cross_cfg = like.cross_cfg;
    return p;
}

std::size_t MpOpParams::param_count() const {
    std::size_t n = cross.param_count();
    for (const auto& r : reduce) n += r.param_count();
    for (const auto& r : restore) n += r.param_count();
    return n;
}

void MpOpParams::validate(std::size_t channels) const {
    if (reduce.size() != kPyramidLevels || restore.size() != kPyramidLevels) {
        throw ContractViolation("cross-level parameters need one reduce and one restore conv "
                                "per level");
    }
    for (std::size_t i = 0; i < kPyramidLevels; ++i) {
        check_conv(reduce[i], channels, 1, 1, level_name(i) + " reduce transform");
        check_conv(restore[i], 2 * channels, channels, 3, level_name(i) + " restore conv");
    }
    cross.validate();
    if (cross.channels() != kPyramidLevels) {
        throw ContractViolation("cross-level transforms must act on " +
                                std::to_string(kPyramidLevels) + " channels");
    }
    cross_cfg.validate(kPyramidLevels);
}

BaseOpParams BaseOpParams::random(std::size_t channels, std::mt19937_64& rng) {
    BaseOpParams p;
    p.attention = AttentionParams::random(channels, rng);
    p.fuse = ConvParams::random(2 * channels, channels, 3, true, rng);
    return p;
}

BaseOpParams BaseOpParams::residual_identity(std::size_t channels) {
    BaseOpParams p;
    p.attention = AttentionParams::identity(channels);
    p.attention.value = ConvParams::zeros(channels, channels, 1, false);
    p.fuse = passthrough_fuse(channels, 0);
    return p;
}

BaseOpParams BaseOpParams::zeros_like(const BaseOpParams& like) {
    return {AttentionParams::zeros_like(like.attention), ConvParams::zeros_like(like.fuse)};
}

OpNetParams OpNetParams::random(std::size_t channels, std::mt19937_64& rng) {
    OpNetParams p;
    for (std::size_t i = 0; i < kPyramidLevels; ++i) {
        p.base.push_back(BaseOpParams::random(channels, rng));
    }
    p.mp = MpOpParams::random(channels, rng);
    return p;
}

OpNetParams OpNetParams::residual_identity(std::size_t channels) {
    OpNetParams p;
    for (std::size_t i = 0; i < kPyramidLevels; ++i) {
        p.base.push_back(BaseOpParams::residual_identity(channels));
    }
    p.mp = MpOpParams::residual_identity(channels);
    return p;
}

OpNetParams OpNetParams::zeros_like(const OpNetParams& like) {
    OpNetParams p;
    for (const auto& b : like.base) p.base.push_back(BaseOpParams::zeros_like(b));
    p.mp = MpOpParams::zeros_like(like.mp);
    return p;
}

std::size_t OpNetParams::param_count() const {
    std::size_t n = mp.param_count();
    for (const auto& b : base) n += b.param_count();
    return n;
}

std::vector<NamedParam> named_parameters(ConvParams& params, const std::string& prefix) {
    std::vector<NamedParam> out{{prefix + ".weight", params.weight.data()}};
    if (params.has_bias()) out.push_back({prefix + ".bias", params.bias});
    return out;
}

std::vector<NamedParam> named_parameters(AttentionParams& params, const std::string& prefix) {
    std::vector<NamedParam> out = named_parameters(params.query, prefix + ".query");
    for (auto& np : named_parameters(params.key, prefix + ".key")) out.push_back(std::move(np));
    for (auto& np : named_parameters(params.value, prefix + ".value")) out.push_back(std::move(np));
    return out;
}

std::vector<NamedParam> named_parameters(MpOpParams& params, const std::string& prefix) {
    std::vector<NamedParam> out;
    auto append = [&out](std::vector<NamedParam> more) {
        for (auto& np : more) out.push_back(std::move(np));
    };
    for (std::size_t i = 0; i < params.reduce.size(); ++i) {
        append(named_parameters(params.reduce[i], prefix + ".reduce." + level_name(i)));
    }
    append(named_parameters(params.cross, prefix + ".cross"));
    for (std::size_t i = 0; i < params.restore.size(); ++i) {
        append(named_parameters(params.restore[i], prefix + ".restore." + level_name(i)));
    }
    return out;
}

std::vector<NamedParam> named_parameters(OpNetParams& params) {
    std::vector<NamedParam> out;
    auto append = [&out](std::vector<NamedParam> more) {
        for (auto& np : more) out.push_back(std::move(np));
    };
    for (std::size_t i = 0; i < params.base.size(); ++i) {
        const std::string prefix = "base." + level_name(i);
        append(named_parameters(params.base[i].attention, prefix + ".attention"));
        append(named_parameters(params.base[i].fuse, prefix + ".fuse"));
    }
    append(named_parameters(params.mp, "mp"));
    return out;
}

// ---------------------------------------------------------------------------
// Cross-level block

Traced<IntpGrads> intp_reduce(const FeaturePyramid& p, const MpOpParams& params) {
    p.validate();
    params.validate(p.channels());
    const Shape s2 = p.levels[0].shape();

    std::vector<VjpFn<ConvGrads>> reduce_vjps;
    std::vector<VjpFn<Tensor>> resize_vjps;
    std::vector<Tensor> maps;
    for (std::size_t i = 0; i < kPyramidLevels; ++i) {
        auto reduced = conv(p.levels[i], params.reduce[i]);
        auto resized = bilinear_resize(reduced.value, s2.h, s2.w);
        maps.push_back(std::move(resized.value));
        reduce_vjps.push_back(std::move(reduced.vjp));
        resize_vjps.push_back(std::move(resized.vjp));
    }
    auto stacked = concat_channels(maps);

    auto vjp = [reduce_vjps = std::move(reduce_vjps), resize_vjps = std::move(resize_vjps),
                join = std::move(stacked.vjp)](const Tensor& g) {
        std::vector<Tensor> parts = join(g);
        IntpGrads grads;
        for (std::size_t i = 0; i < kPyramidLevels; ++i) {
            ConvGrads d = reduce_vjps[i](resize_vjps[i](parts[i]));
            grads.input.levels.push_back(std::move(d.input));
            grads.reduce.push_back(std::move(d.params));
        }
        return grads;
    };
    return {std::move(stacked.value), std::move(vjp)};
}

namespace {

struct LevelScale {
    VjpFn<Tensor> slice, pool, repeat;
    VjpFn<PairGrads> mul;
    VjpFn<std::vector<Tensor>> join;
    VjpFn<ConvGrads> restore;
};

}  // namespace

Traced<MpOpGrads, FeaturePyramid> mp_op_forward(const FeaturePyramid& p,
                                                const MpOpParams& params) {
    Traced<IntpGrads> stacked = [&] {
        StageScope stage("mp_op_reduce");
        return intp_reduce(p, params);
    }();
    Traced<AttentionGrads> recombined = [&] {
        StageScope stage("mp_op_attention");
        return op_multihead_forward(stacked.value, params.cross, params.cross_cfg);
    }();

    const std::size_t channels = p.channels();
    FeaturePyramid out;
    std::vector<LevelScale> levels;
    for (std::size_t i = 0; i < kPyramidLevels; ++i) {
        const Tensor& level = p.levels[i];
        LevelScale ls;
        Tensor joined;
        {
            StageScope stage("mp_op_scale");
            auto weight = slice_channels(recombined.value, i, 1);
            auto pooled = global_avg_pool(weight.value);
            auto expanded = repeat_channels(pooled.value, channels);
            auto scaled = broadcast_mul(expanded.value, level);
            auto cat = concat_channels({scaled.value, level});
            ls.slice = std::move(weight.vjp);
            ls.pool = std::move(pooled.vjp);
            ls.repeat = std::move(expanded.vjp);
            ls.mul = std::move(scaled.vjp);
            ls.join = std::move(cat.vjp);
            joined = std::move(cat.value);
        }
        StageScope stage("mp_op_fusion");
        auto restored = conv(joined, params.restore[i]);
        ls.restore = std::move(restored.vjp);
        out.levels.push_back(std::move(restored.value));
        levels.push_back(std::move(ls));
    }

    auto vjp = [levels = std::move(levels), stacked_vjp = std::move(stacked.vjp),
                cross_vjp = std::move(recombined.vjp),
                rshape = recombined.value.shape()](const FeaturePyramid& g) {
        if (g.levels.size() != kPyramidLevels) {
            throw ContractViolation("cross-level cotangent must have 5 levels");
        }
        MpOpGrads grads;
        Tensor d_recombined(rshape);
        for (std::size_t i = 0; i < kPyramidLevels; ++i) {
            const LevelScale& ls = levels[i];
            ConvGrads d_restore = ls.restore(g.levels[i]);
            std::vector<Tensor> d_parts = ls.join(d_restore.input);
            PairGrads d_mul = ls.mul(d_parts[0]);
            d_recombined += ls.slice(ls.pool(ls.repeat(d_mul.first)));
            Tensor d_level = std::move(d_parts[1]);
            d_level += d_mul.second;
            grads.input.levels.push_back(std::move(d_level));
            grads.params.restore.push_back(std::move(d_restore.params));
        }
        AttentionGrads d_cross = cross_vjp(d_recombined);
        IntpGrads d_stacked = stacked_vjp(d_cross.input);
        grads.input += d_stacked.input;
        grads.params.reduce = std::move(d_stacked.reduce);
        grads.params.cross = std::move(d_cross.params);
        return grads;
    };
    return {std::move(out), std::move(vjp)};
}

MpOpTrace mp_op_trace(const FeaturePyramid& p, const MpOpParams& params) {
    MpOpTrace trace;
    trace.stacked = intp_reduce(p, params).value;
    trace.recombined = op_multihead_forward(trace.stacked, params.cross, params.cross_cfg).value;
    auto weights = op_multihead_weights(trace.stacked, params.cross, params.cross_cfg);
    if (weights.size() == 1) trace.cross_weights = std::move(weights.front());
    return trace;
}

// ---------------------------------------------------------------------------
// Full feature path

namespace {

struct BaseLevel {
    VjpFn<AttentionGrads> attention;
    VjpFn<std::vector<Tensor>> join;
    VjpFn<ConvGrads> fuse;
};

}  // namespace

Traced<OpNetGrads, FeaturePyramid> opnet_feature_path(const FeaturePyramid& p,
                                                      const OpNetParams& params,
                                                      const OpConfig& cfg) {
    p.validate();
    const std::size_t channels = p.channels();
    cfg.validate(channels);
    if (params.base.size() != kPyramidLevels) {
        throw ContractViolation("feature path needs base parameters for each of the 5 levels");
    }

    FeaturePyramid stage_a;
    std::vector<BaseLevel> base;
    for (std::size_t i = 0; i < kPyramidLevels; ++i) {
        const Tensor& level = p.levels[i];
        check_conv(params.base[i].fuse, 2 * channels, channels, 3,
                   level_name(i) + " fusion conv");
        BaseLevel bl;
        Tensor joined;
        {
            StageScope stage("base_op");
            auto adjusted = op_multihead_forward(level, params.base[i].attention, cfg);
            auto cat = concat_channels({level, adjusted.value});
            bl.attention = std::move(adjusted.vjp);
            bl.join = std::move(cat.vjp);
            joined = std::move(cat.value);
        }
        StageScope stage("base_op_fusion");
        auto fused = conv(joined, params.base[i].fuse);
        bl.fuse = std::move(fused.vjp);
        stage_a.levels.push_back(std::move(fused.value));
        base.push_back(std::move(bl));
    }

    auto stage_b = mp_op_forward(stage_a, params.mp);

    auto vjp = [base = std::move(base), mp_vjp = std::move(stage_b.vjp)](const FeaturePyramid& g) {
        MpOpGrads d_mp = mp_vjp(g);
        OpNetGrads grads;
        grads.params.mp = std::move(d_mp.params);
        for (std::size_t i = 0; i < kPyramidLevels; ++i) {
            const BaseLevel& bl = base[i];
            ConvGrads d_fuse = bl.fuse(d_mp.input.levels[i]);
            std::vector<Tensor> d_parts = bl.join(d_fuse.input);
            AttentionGrads d_att = bl.attention(d_parts[1]);
            Tensor d_level = std::move(d_parts[0]);
            d_level += d_att.input;
            grads.input.levels.push_back(std::move(d_level));
            grads.params.base.push_back({std::move(d_att.params), std::move(d_fuse.params)});
        }
        return grads;
    };
    return {std::move(stage_b.value), std::move(vjp)};
}

// ---------------------------------------------------------------------------
// Level assignment and mismatch metric

int assign_fpn_level(const GtBox& box) {
    if (!(box.width > 0.0) || !(box.height > 0.0) || !std::isfinite(box.width) ||
        !std::isfinite(box.height)) {
        throw ContractViolation("box dimensions must be positive and finite");
    }
    const double k = 4.0 + std::floor(std::log2(std::sqrt(box.width * box.height) / 224.0));
    return static_cast<int>(std::clamp(k, 2.0, 6.0));
}

MismatchReport mismatch_rate(std::span<const std::pair<int, int>> pairs) {
    std::array<std::size_t, kPyramidLevels> total{}, wrong{};
    std::size_t mismatched = 0;
    for (const auto& [chosen, gt] : pairs) {
        for (int level : {chosen, gt}) {
            if (level < kFirstLevel || level >= kFirstLevel + static_cast<int>(kPyramidLevels)) {
                throw ContractViolation("pyramid level " + std::to_string(level) +
                                        " outside [2, 6]");
            }
        }
        const auto bucket = static_cast<std::size_t>(gt - kFirstLevel);
        ++total[bucket];
        if (chosen != gt) {
            ++wrong[bucket];
            ++mismatched;
        }
    }
    MismatchReport report;
    report.count = pairs.size();
    report.overall = pairs.empty() ? 0.0
                                   : static_cast<double>(mismatched) /
                                         static_cast<double>(pairs.size());
    for (std::size_t i = 0; i < kPyramidLevels; ++i) {
        if (total[i] > 0) {
            report.per_level[i] = static_cast<double>(wrong[i]) / static_cast<double>(total[i]);
        }
    }
    return report;
}

std::string mismatch_csv(const MismatchReport& report, const std::string& series) {
    std::ostringstream os;
    os << "series";
    for (std::size_t i = 0; i < kPyramidLevels; ++i) os << ',' << level_name(i);
    os << ",overall\n" << series;
    os << std::setprecision(17);
    for (const auto& rate : report.per_level) {
        os << ',';
        if (rate) os << *rate;
    }
    os << ',' << report.overall << '\n';
    return os.str();
}

}  // namespace opnet
