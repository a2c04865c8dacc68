// Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
// failure.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "opnet/accounting.hpp"
#include "opnet/harness.hpp"
#include "opnet/instrument.hpp"
#include "opnet/tensor_io.hpp"
#include "opnet/training.hpp"
#include "oracles.hpp"

using namespace opnet;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void criterion(const char* name, const std::function<Outcome()>& body) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s  %-24s %s (%.2fs)\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass) ++failures;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

Outcome oracle_equivalence() {
    std::mt19937_64 rng(1001);
    double worst = 0.0;
    const int instances = 40;
    for (int t = 0; t < instances; ++t) {
        const Shape s{1 + rng() % 2, 1 + rng() % 5, 1 + rng() % 4, 1 + rng() % 4};
        Tensor m = Tensor::randn(s, rng);
        AttentionParams p = AttentionParams::random(s.c, rng);
        worst = std::max(worst, max_abs_diff(ca_forward(m, p).value, oracle::ca(m, p)));
    }
    return {worst <= 1e-10, std::to_string(instances) + " instances, max abs err " + fmt("%.3e", worst)};
}

Outcome multihead_reduction() {
    std::mt19937_64 rng(1002);
    bool bitwise = true;
    for (int t = 0; t < 10; ++t) {
        const std::size_t c = 1 + rng() % 6;
        Tensor m = Tensor::randn({1 + rng() % 2, c, 1 + rng() % 4, 1 + rng() % 4}, rng);
        AttentionParams p = AttentionParams::random(c, rng);
        bitwise &= op_multihead_forward(m, p, {1, 1.0}).value.identical(ca_forward(m, p).value);
    }
    double worst = 0.0;
    for (int t = 0; t < 10; ++t) {
        Tensor m = Tensor::randn({1 + rng() % 2, 4, 1 + rng() % 4, 1 + rng() % 4}, rng);
        AttentionParams p = AttentionParams::random(4, rng);
        // Each head applies ca_forward to its own channel slice with its own
        // 2x2 transform blocks; cross-head blocks are zeroed.
        for (ConvParams* cp : {&p.query, &p.key, &p.value})
            for (std::size_t i = 0; i < 4; ++i)
                for (std::size_t j = 0; j < 4; ++j)
                    if (i / 2 != j / 2) cp->weight.at(i, j, 0, 0) = 0.0;
        std::vector<Tensor> heads;
        for (std::size_t h = 0; h < 2; ++h) {
            AttentionParams ph{oracle::block(p.query, 2 * h, 2, 2 * h, 2),
                               oracle::block(p.key, 2 * h, 2, 2 * h, 2),
                               oracle::block(p.value, 2 * h, 2, 2 * h, 2)};
            heads.push_back(ca_forward(slice_channels(m, 2 * h, 2).value, ph).value);
        }
        worst = std::max(worst, max_abs_diff(op_multihead_forward(m, p, {2, 1.0}).value,
                                             concat_channels(heads).value));
    }
    return {bitwise && worst <= 1e-12, std::string("P=1 bitwise ") + (bitwise ? "yes" : "no") +
                                           ", P=2 C=4 max abs err " + fmt("%.3e", worst)};
}

Outcome shape_contract() {
    std::mt19937_64 rng(1003);
    const std::size_t batch = 2, channels = 4;
    FeaturePyramid p = FeaturePyramid::randn(batch, channels, 64, 64, rng);
    OpNetParams params = OpNetParams::random(channels, rng);
    const Shape stacked = intp_reduce(p, params.mp).value.shape();
    const bool preserved = opnet_feature_path(p, params, {2, 1.0}).value.shapes() == p.shapes();
    return {stacked == Shape{batch, 5, 64, 64} && preserved,
            "intermediate " + to_string(stacked) + ", shapes preserved " + (preserved ? "yes" : "no")};
}

Outcome gradient_suite() {
    GradCheckReport r = run_gradcheck_suite(GradScope::All, 42, 3, 1e-5, 1e-4);
    std::string detail = std::to_string(r.entries.size()) + " tensors over 3 seeds, worst rel err " +
                         fmt("%.3e", r.worst());
    for (const auto& e : r.entries) {
        if (e.max_rel_error >= r.threshold) {
            detail += "\n      over threshold: " + e.name + " " + fmt("%.3e", e.max_rel_error);
        }
    }
    return {r.pass, detail};
}

double worst_row_error(const Tensor& w) {
    const Shape s = w.shape();
    double worst = 0.0;
    for (std::size_t r = 0; r < s.b * s.h; ++r) {
        double sum = 0.0;
        for (std::size_t j = 0; j < s.w; ++j) sum += w.data()[r * s.w + j];
        worst = std::max(worst, std::abs(sum - 1.0));
    }
    return worst;
}

Outcome normalization() {
    std::mt19937_64 rng(1005);
    double worst = 0.0;
    int instances = 0;
    for (int t = 0; t < 100; ++t, ++instances) {
        const std::size_t heads = std::size_t{1} << (rng() % 3);
        const std::size_t c = heads * (1 + rng() % 3);
        Tensor m = Tensor::randn({1 + rng() % 2, c, 1 + rng() % 5, 1 + rng() % 5}, rng, 2.0);
        AttentionParams p = AttentionParams::random(c, rng);
        for (const Tensor& w : op_multihead_weights(m, p, {heads, 1.0})) {
            worst = std::max(worst, worst_row_error(w));
        }
    }
    for (int t = 0; t < 100; ++t, ++instances) {
        const std::size_t c = 1 + rng() % 3;
        FeaturePyramid p = FeaturePyramid::randn(1 + rng() % 2, c, 2 + rng() % 8, 2 + rng() % 8, rng);
        MpOpParams params = MpOpParams::random(c, rng);
        worst = std::max(worst, worst_row_error(mp_op_trace(p, params).cross_weights));
    }
    return {worst <= 1e-12, std::to_string(instances) +
                                " instances (intra-head and 5x5 cross-level), max |row sum - 1| " +
                                fmt("%.3e", worst)};
}

Outcome complexity() {
    std::vector<std::pair<std::size_t, std::size_t>> sweep;
    for (std::size_t c : {8u, 16u, 32u})
        for (std::size_t p : {1u, 2u, 4u, 8u}) sweep.emplace_back(p, c);
    const std::size_t b = 2, h = 5, w = 3;
    ComplexityAudit audit = complexity_audit(sweep, b, h, w, 7);
    bool exact = audit.rows.size() == sweep.size();
    for (const auto& row : audit.rows) {
        const std::uint64_t d = row.channels / row.heads;
        exact &= row.measured == 2 * b * d * d * row.heads * h * w;
    }
    bool halves = true;
    for (std::size_t i = 0; i + 1 < audit.rows.size(); ++i) {
        if (audit.rows[i].channels == audit.rows[i + 1].channels) {
            halves &= audit.rows[i].measured == 2 * audit.rows[i + 1].measured;
        }
    }
    std::printf("      %s\n", audit.note.c_str());
    return {exact && halves && !audit.note.empty(),
            std::to_string(audit.rows.size()) + " (P,C) points exact " + (exact ? "yes" : "no") +
                ", halving with P " + (halves ? "yes" : "no") + ", head exponent " +
                fmt("%.3f", audit.head_exponent.value_or(NAN))};
}

Outcome accounting() {
    std::mt19937_64 rng(1007);
    int configs = 0;
    bool ok = true;
    std::ostringstream why;
    for (; configs < 12; ++configs) {
        const std::size_t heads = 1 + rng() % 3;
        const std::size_t c = heads * (1 + rng() % 3);
        AccountingConfig cfg;
        cfg.base_cfg = {heads, 0.5 + static_cast<double>(rng() % 3)};
        FeaturePyramid p = FeaturePyramid::randn(1 + rng() % 2, c, 1 + rng() % 12, 1 + rng() % 12, rng);
        OpNetParams params = OpNetParams::random(c, rng);

        MacCounter counter;
        {
            CountingScope scope(counter);
            opnet_feature_path(p, params, cfg.base_cfg);
        }
        const auto shapes = p.shapes();
        const AccountingReport report = count_pyramid_macs_params(cfg, shapes);
        for (const auto& e : report.entries()) {
            if (counter.stage(e.stage) != e.macs) {
                ok = false;
                why << " " << e.stage << " static " << e.macs << " vs run " << counter.stage(e.stage);
            }
        }
        if (counter.total() != report.totals().macs) ok = false;

        OpNetParams grads = OpNetParams::zeros_like(params);
        for (auto& np : named_parameters(grads)) std::ranges::fill(np.values, 1.0);
        PathOptimizer opt(params, SgdConfig{});
        const std::size_t touched = opt.step(grads);
        if (touched != report.totals().params) {
            ok = false;
            why << " params static " << report.totals().params << " vs optimizer " << touched;
        }
    }
    return {ok, std::to_string(configs) + " random configs, per-stage MACs and params integer-equal" +
                    why.str()};
}

Outcome trainability() {
    ToyTaskResult r = toy_task_run(42, 200, {0.005, 0.0, 0.95});
    const double ratio = r.losses.back() / r.losses.front();
    return {ratio <= 0.1, "loss " + fmt("%.4g", r.losses.front()) + " -> " +
                              fmt("%.4g", r.losses.back()) + ", ratio " + fmt("%.4f", ratio) +
                              (r.tuning_warning ? " (tuning warning)" : "")};
}

Outcome residual_identity() {
    std::mt19937_64 rng(1009);
    double worst = 0.0;
    for (int t = 0; t < 5; ++t) {
        const std::size_t c = 2 * (1 + rng() % 3);
        FeaturePyramid p = FeaturePyramid::randn(1 + rng() % 2, c, 4 + rng() % 13, 4 + rng() % 13, rng);
        FeaturePyramid out = opnet_feature_path(p, OpNetParams::residual_identity(c), {2, 1.0}).value;
        worst = std::max(worst, max_abs_diff(out, p));
    }
    return {worst <= 1e-12, "max abs err " + fmt("%.3e", worst)};
}

Outcome metric() {
    bool ok = true;
    std::vector<std::pair<int, int>> all_match = {{2, 2}, {3, 3}, {4, 4}, {5, 5}, {6, 6}};
    ok &= mismatch_rate(all_match).overall == 0.0;
    std::vector<std::pair<int, int>> mixed = {{2, 2}, {3, 4}, {4, 4}, {6, 5}};
    const MismatchReport r = mismatch_rate(mixed);
    ok &= r.overall == 0.5 && r.per_level[0] == 0.0 && r.per_level[2] == 0.5 &&
          r.per_level[3] == 1.0 && !r.per_level[1] && !r.per_level[4];
    ok &= assign_fpn_level({224, 224, {}}) == 4 && assign_fpn_level({1, 1, {}}) == 2 &&
          assign_fpn_level({2000, 2000, {}}) == 6;
    const std::string csv = mismatch_csv(r, "x");
    const bool layout = csv.rfind("series,S2,S3,S4,S5,S6,overall\n", 0) == 0;
    return {ok && layout, std::string("direct counting ") + (ok ? "exact" : "wrong") +
                              ", CSV level columns " + (layout ? "S2..S6" : "missing")};
}

Outcome io_roundtrip() {
    std::mt19937_64 rng(1011);
    int count = 0;
    bool ok = true;
    for (; count < 100; ++count) {
        std::array<std::size_t, 4> e;
        for (auto& x : e) x = 1 + rng() % 4;
        e[count % 4] = 1;  // degenerate extent in every position
        if (count % 10 == 0) e = {1, 1, 1, 1};
        Tensor t = Tensor::randn({e[0], e[1], e[2], e[3]}, rng, 1e3);
        std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
        write_opt1(ss, t);
        ok &= read_opt1(ss).identical(t);
    }
    return {ok, std::to_string(count) + " tensors bitwise " + (ok ? "equal" : "DIFFERENT")};
}

}  // namespace

int main() {
    criterion("oracle_equivalence", oracle_equivalence);
    criterion("multihead_reduction", multihead_reduction);
    criterion("shape_contract", shape_contract);
    criterion("gradient_suite", gradient_suite);
    criterion("normalization", normalization);
    criterion("complexity_audit", complexity);
    criterion("accounting_consistency", accounting);
    criterion("trainability", trainability);
    criterion("residual_identity", residual_identity);
    criterion("metric_correctness", metric);
    criterion("opt1_roundtrip", io_roundtrip);
    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
