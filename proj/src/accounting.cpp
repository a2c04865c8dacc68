#include "opnet/accounting.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include "json.hpp"
#include "opnet/errors.hpp"
#include "opnet/instrument.hpp"
#include "opnet/pyramid.hpp"

namespace opnet {

ConvCount count_conv(const Shape& input, std::uint64_t c_in, std::uint64_t c_out,
                     std::uint64_t k, bool with_bias) {
    ConvCount n;
    n.macs = input.b * c_out * c_in * k * k * input.h * input.w;
    n.params = c_out * c_in * k * k;
    if (with_bias && n.params > 0) n.params += c_out;
    return n;
}

const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names = {
        "base_op",         "base_op_fusion", "mp_op_reduce",
        "mp_op_attention", "mp_op_scale",    "mp_op_fusion",
    };
    return names;
}

namespace {

std::uint64_t fusion_macs(const Shape& level) {
    return count_conv(level, 2 * level.c, level.c, 3, true).macs;
}

std::uint64_t fusion_params(std::uint64_t c) {
    return count_conv({1, 2 * c, 1, 1}, 2 * c, c, 3, true).params;
}

void require_full_pyramid(const std::string& stage, std::span<const Shape> levels) {
    if (levels.size() != kPyramidLevels) {
        throw ContractViolation(stage + " needs all 5 pyramid levels, got " +
                                std::to_string(levels.size()));
    }
}

}  // namespace

StageEntry count_stage(const std::string& stage, const AccountingConfig& cfg,
                       std::span<const Shape> levels) {
    const auto& names = stage_names();
    if (std::find(names.begin(), names.end(), stage) == names.end()) {
        throw ConfigError("unknown accounting stage '" + stage + "'");
    }
    StageEntry e{stage, 0, 0};
    if (levels.empty()) return e;

    if (stage == "base_op") {
        for (const Shape& s : levels) {
            e.macs += count_op_macs(s, cfg.base_cfg).total();
            e.params += 3 * count_conv(s, s.c, s.c, 1, false).params;
        }
    } else if (stage == "base_op_fusion") {
        for (const Shape& s : levels) {
            e.macs += fusion_macs(s);
            e.params += fusion_params(s.c);
        }
    } else {
        require_full_pyramid(stage, levels);
        const Shape s2 = levels[0];
        const std::uint64_t c = s2.c;
        const std::uint64_t s2_plane = s2.b * s2.h * s2.w;
        if (stage == "mp_op_reduce") {
            for (const Shape& s : levels) {
                const ConvCount reduce = count_conv(s, c, 1, 1, true);
                e.macs += reduce.macs;
                e.params += reduce.params;
                if (s.h != s2.h || s.w != s2.w) e.macs += 4 * s2_plane;
            }
        } else if (stage == "mp_op_attention") {
            const Shape stacked{s2.b, kPyramidLevels, s2.h, s2.w};
            e.macs = count_op_macs(stacked, cfg.cross_cfg).total();
            e.params = 3 * kPyramidLevels * kPyramidLevels;
        } else if (stage == "mp_op_scale") {
            for (const Shape& s : levels) e.macs += s2_plane + s.numel();
        } else if (stage == "mp_op_fusion") {
            for (const Shape& s : levels) {
                e.macs += fusion_macs(s);
                e.params += fusion_params(c);
            }
        }
    }
    return e;
}

// ---------------------------------------------------------------------------
// AccountingReport

void AccountingReport::add(StageEntry entry) { entries_.push_back(std::move(entry)); }

StageEntry AccountingReport::totals() const {
    StageEntry t{"total", 0, 0};
    for (const auto& e : entries_) {
        t.macs += e.macs;
        t.params += e.params;
    }
    return t;
}

std::string AccountingReport::render_gmacs(std::uint64_t macs) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << static_cast<double>(macs) / 1e9;
    return os.str();
}

std::string AccountingReport::render_mparams(std::uint64_t params) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << static_cast<double>(params) / 1e6;
    return os.str();
}

std::string AccountingReport::to_csv() const {
    std::ostringstream os;
    os << "stage,macs,params\n";
    for (const auto& e : entries_) os << e.stage << ',' << e.macs << ',' << e.params << '\n';
    const StageEntry t = totals();
    os << t.stage << ',' << t.macs << ',' << t.params << '\n';
    return os.str();
}

std::string AccountingReport::to_json(int indent) const {
    nlohmann::ordered_json doc;
    doc["entries"] = nlohmann::ordered_json::array();
    for (const auto& e : entries_) {
        doc["entries"].push_back({{"stage", e.stage},
                                  {"macs", e.macs},
                                  {"params", e.params},
                                  {"gmacs", render_gmacs(e.macs)},
                                  {"mparams", render_mparams(e.params)}});
    }
    const StageEntry t = totals();
    doc["totals"] = {{"macs", t.macs},
                     {"params", t.params},
                     {"gmacs", render_gmacs(t.macs)},
                     {"mparams", render_mparams(t.params)}};
    doc["notes"] = {
        "macs are exact multiply-accumulate counts; gmacs = macs / 1e9",
        "softmax exponentials/divisions and temperature scaling are not counted",
    };
    return doc.dump(indent);
}

std::string AccountingReport::render_table() const {
    std::ostringstream os;
    os << std::left << std::setw(18) << "stage" << std::right << std::setw(12) << "GMACs"
       << std::setw(14) << "#Params (M)" << '\n';
    auto row = [&os](const StageEntry& e) {
        os << std::left << std::setw(18) << e.stage << std::right << std::setw(12)
           << render_gmacs(e.macs) << std::setw(14) << render_mparams(e.params) << '\n';
    };
    for (const auto& e : entries_) row(e);
    row(totals());
    return os.str();
}

AccountingReport count_pyramid_macs_params(const AccountingConfig& cfg,
                                           std::span<const Shape> levels) {
    AccountingReport report;
    for (const auto& name : stage_names()) report.add(count_stage(name, cfg, levels));
    return report;
}

// ---------------------------------------------------------------------------
// Complexity audit

namespace {

std::optional<double> mean_slope(
    const std::map<std::size_t, std::vector<std::pair<double, double>>>& groups) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& [key, points] : groups) {
        if (points.size() < 2) continue;
        double mx = 0.0, my = 0.0;
        for (const auto& [x, y] : points) {
            mx += x;
            my += y;
        }
        mx /= static_cast<double>(points.size());
        my /= static_cast<double>(points.size());
        double sxy = 0.0, sxx = 0.0;
        for (const auto& [x, y] : points) {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
        }
        if (sxx == 0.0) continue;
        sum += sxy / sxx;
        ++n;
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
}

}  // namespace

ComplexityAudit complexity_audit(std::span<const std::pair<std::size_t, std::size_t>> sweep,
                                 std::size_t batch, std::size_t height, std::size_t width,
                                 std::uint64_t seed) {
    ComplexityAudit audit;
    std::map<std::size_t, std::vector<std::pair<double, double>>> by_heads, by_channels;
    for (const auto& [heads, channels] : sweep) {
        OpConfig cfg{heads, 1.0};
        cfg.validate(channels);
        std::mt19937_64 rng(seed + 1000 * heads + channels);
        Tensor m = Tensor::randn({batch, channels, height, width}, rng, 0.1);
        AttentionParams params = AttentionParams::random(channels, rng);

        MacCounter counter;
        {
            CountingScope scope(counter);
            (void)op_multihead_forward(m, params, cfg);
        }
        ComplexityRow row;
        row.heads = heads;
        row.channels = channels;
        row.measured = counter.kind(MacKind::Gram) + counter.kind(MacKind::WeightedSum);
        row.predicted = count_op_macs(m.shape(), cfg).similarity;
        audit.rows.push_back(row);
        if (row.measured > 0) {
            const double y = std::log2(static_cast<double>(row.measured));
            by_heads[heads].push_back({std::log2(static_cast<double>(channels)), y});
            by_channels[channels].push_back({std::log2(static_cast<double>(heads)), y});
        }
    }
    audit.channel_exponent = mean_slope(by_heads);
    audit.head_exponent = mean_slope(by_channels);
    audit.note =
        "similarity-stage MACs are 2*B*(C^2/P)*H*W: quadratic in C, inversely proportional "
        "to P, and linear in H*W. The often-quoted O(P*C^2) omits the spatial factor and "
        "grows with P, whereas the exact count shrinks as P grows.";
    return audit;
}

std::string ComplexityAudit::to_csv() const {
    std::ostringstream os;
    os << "heads,channels,similarity_macs,predicted_macs\n";
    for (const auto& r : rows) {
        os << r.heads << ',' << r.channels << ',' << r.measured << ',' << r.predicted << '\n';
    }
    return os.str();
}

}  // namespace opnet
