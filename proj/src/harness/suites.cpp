// Finite-difference suites over every primitive and composite forward.
// Inputs are drawn at standard deviation 0.5.

#include <random>

#include "opnet/harness.hpp"
#include "opnet/ops.hpp"

namespace opnet {

namespace {

constexpr double kInputScale = 0.5;

double dot(const Tensor& a, const Tensor& b) {
    long double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += static_cast<long double>(a.data()[i]) * b.data()[i];
    return static_cast<double>(s);
}

double dot(const FeaturePyramid& a, const FeaturePyramid& b) {
    long double s = 0.0;
    for (std::size_t l = 0; l < a.levels.size(); ++l) {
        const auto x = a.levels[l].data();
        const auto y = b.levels[l].data();
        for (std::size_t i = 0; i < x.size(); ++i) s += static_cast<long double>(x[i]) * y[i];
    }
    return static_cast<double>(s);
}

FeaturePyramid ones_like(const FeaturePyramid& p) {
    FeaturePyramid out;
    for (const auto& l : p.levels) out.levels.emplace_back(l.shape(), 1.0);
    return out;
}

std::vector<double> copy_of(std::span<const double> s) { return {s.begin(), s.end()}; }

class SuiteRunner {
public:
    SuiteRunner(std::uint64_t seed, double epsilon, double threshold, GradCheckReport& report)
        : seed_(seed), epsilon_(epsilon), threshold_(threshold), report_(report) {}

    void run(const std::string& name, const std::function<double()>& f,
             std::vector<GradCheckCase> cases) {
        for (auto& c : cases) c.name = name + "." + c.name + "@seed" + std::to_string(seed_);
        GradCheckReport part = gradcheck(f, std::move(cases), epsilon_, threshold_);
        for (auto& e : part.entries) report_.entries.push_back(std::move(e));
    }

private:
    std::uint64_t seed_;
    double epsilon_;
    double threshold_;
    GradCheckReport& report_;
};

void primitive_suite(std::uint64_t seed, SuiteRunner& run) {
    std::mt19937_64 rng(seed);
    auto randn = [&rng](Shape s) { return Tensor::randn(s, rng, kInputScale); };

    for (std::size_t k : {1u, 3u}) {
        Tensor x = randn({2, 3, 4, 4});
        ConvParams p = ConvParams::random(3, 2, k, true, rng);
        Tensor r = randn({2, 2, 4, 4});
        ConvGrads g = conv(x, p).vjp(r);
        run.run(k == 1 ? "conv1x1" : "conv3x3", [&] { return dot(r, conv(x, p).value); },
                {{"input", x.data(), copy_of(g.input.data())},
                 {"weight", p.weight.data(), copy_of(g.params.weight.data())},
                 {"bias", p.bias, g.params.bias}});
    }
    {
        Tensor x = randn(matrix_shape(2, 3, 4));
        Tensor r = randn(x.shape());
        Tensor g = softmax_rows(x).vjp(r);
        run.run("softmax_rows", [&] { return dot(r, softmax_rows(x).value); },
                {{"logits", x.data(), copy_of(g.data())}});
    }
    {
        Tensor a = randn({2, 3, 3, 3});
        Tensor b = randn({2, 2, 3, 3});
        Tensor r = randn(matrix_shape(2, 3, 2));
        PairGrads g = channel_gram(a, b).vjp(r);
        run.run("channel_gram", [&] { return dot(r, channel_gram(a, b).value); },
                {{"a", a.data(), copy_of(g.first.data())},
                 {"b", b.data(), copy_of(g.second.data())}});
    }
    {
        Tensor w = randn(matrix_shape(2, 2, 3));
        Tensor v = randn({2, 3, 3, 3});
        Tensor r = randn({2, 2, 3, 3});
        PairGrads g = weighted_channel_sum(w, v).vjp(r);
        run.run("weighted_channel_sum", [&] { return dot(r, weighted_channel_sum(w, v).value); },
                {{"weights", w.data(), copy_of(g.first.data())},
                 {"values", v.data(), copy_of(g.second.data())}});
    }
    for (const auto& [in, out] : {std::pair<Shape, std::pair<std::size_t, std::size_t>>{
                                      {2, 2, 3, 4}, {5, 7}},
                                  {{2, 2, 6, 5}, {3, 2}}}) {
        Tensor x = randn(in);
        Tensor r = randn({in.b, in.c, out.first, out.second});
        Tensor g = bilinear_resize(x, out.first, out.second).vjp(r);
        run.run(out.first > in.h ? "bilinear_up" : "bilinear_down",
                [&, out = out] { return dot(r, bilinear_resize(x, out.first, out.second).value); },
                {{"input", x.data(), copy_of(g.data())}});
    }
    {
        Tensor x = randn({2, 3, 3, 4});
        Tensor r = randn({2, 3, 1, 1});
        Tensor g = global_avg_pool(x).vjp(r);
        run.run("global_avg_pool", [&] { return dot(r, global_avg_pool(x).value); },
                {{"input", x.data(), copy_of(g.data())}});
    }
    {
        Tensor a = randn({2, 2, 3, 3});
        Tensor b = randn({2, 1, 3, 3});
        Tensor r = randn({2, 3, 3, 3});
        auto g = concat_channels({a, b}).vjp(r);
        run.run("concat_channels", [&] { return dot(r, concat_channels({a, b}).value); },
                {{"first", a.data(), copy_of(g[0].data())},
                 {"second", b.data(), copy_of(g[1].data())}});
    }
    {
        Tensor s = randn({2, 3, 1, 1});
        Tensor x = randn({2, 3, 3, 3});
        Tensor r = randn(x.shape());
        PairGrads g = broadcast_mul(s, x).vjp(r);
        run.run("broadcast_mul", [&] { return dot(r, broadcast_mul(s, x).value); },
                {{"scale", s.data(), copy_of(g.first.data())},
                 {"input", x.data(), copy_of(g.second.data())}});
    }
    {
        Tensor x = randn({2, 4, 2, 3});
        Tensor r = randn({2, 2, 2, 3});
        Tensor g = slice_channels(x, 1, 2).vjp(r);
        run.run("slice_channels", [&] { return dot(r, slice_channels(x, 1, 2).value); },
                {{"input", x.data(), copy_of(g.data())}});
    }
    {
        Tensor x = randn({2, 1, 2, 3});
        Tensor r = randn({2, 3, 2, 3});
        Tensor g = repeat_channels(x, 3).vjp(r);
        run.run("repeat_channels", [&] { return dot(r, repeat_channels(x, 3).value); },
                {{"input", x.data(), copy_of(g.data())}});
    }
}

std::vector<GradCheckCase> attention_cases(Tensor& m, AttentionParams& p,
                                           const AttentionGrads& g) {
    return {{"input", m.data(), copy_of(g.input.data())},
            {"query", p.query.weight.data(), copy_of(g.params.query.weight.data())},
            {"key", p.key.weight.data(), copy_of(g.params.key.weight.data())},
            {"value", p.value.weight.data(), copy_of(g.params.value.weight.data())}};
}

void attention_suite(std::uint64_t seed, SuiteRunner& run) {
    std::mt19937_64 rng(seed);
    {
        Tensor m = Tensor::randn({2, 3, 3, 3}, rng, kInputScale);
        AttentionParams p = AttentionParams::random(3, rng);
        Tensor ones(m.shape(), 1.0);
        AttentionGrads g = ca_forward(m, p).vjp(ones);
        run.run("ca_forward", [&] { return dot(ones, ca_forward(m, p).value); },
                attention_cases(m, p, g));
    }
    for (const OpConfig cfg : {OpConfig{2, 1.0}, OpConfig{4, 0.5}}) {
        Tensor m = Tensor::randn({2, 4, 3, 3}, rng, kInputScale);
        AttentionParams p = AttentionParams::random(4, rng);
        Tensor ones(m.shape(), 1.0);
        AttentionGrads g = op_multihead_forward(m, p, cfg).vjp(ones);
        run.run("op_multihead_P" + std::to_string(cfg.heads),
                [&, cfg] { return dot(ones, op_multihead_forward(m, p, cfg).value); },
                attention_cases(m, p, g));
    }
}

std::vector<GradCheckCase> pyramid_input_cases(FeaturePyramid& p, const FeaturePyramid& g) {
    std::vector<GradCheckCase> cases;
    for (std::size_t i = 0; i < p.levels.size(); ++i) {
        cases.push_back({"input." + level_name(i), p.levels[i].data(),
                         copy_of(g.levels[i].data())});
    }
    return cases;
}

template <class Params>
void append_param_cases(std::vector<GradCheckCase>& cases, Params& params, Params& grads) {
    auto live = named_parameters(params);
    auto analytic = named_parameters(grads);
    for (std::size_t i = 0; i < live.size(); ++i) {
        cases.push_back({live[i].name, live[i].values, copy_of(analytic[i].values)});
    }
}

void pyramid_suite(std::uint64_t seed, SuiteRunner& run) {
    constexpr std::size_t kChannels = 4;
    constexpr std::size_t kS2 = 8;
    std::mt19937_64 rng(seed);
    {
        FeaturePyramid p = FeaturePyramid::randn(1, kChannels, kS2, kS2, rng, kInputScale);
        MpOpParams params = MpOpParams::random(kChannels, rng);
        for (auto& r : params.reduce) r = ConvParams::random(kChannels, 1, 1, true, rng);
        auto traced = intp_reduce(p, params);
        Tensor ones(traced.value.shape(), 1.0);
        IntpGrads g = traced.vjp(ones);
        auto cases = pyramid_input_cases(p, g.input);
        for (std::size_t i = 0; i < kPyramidLevels; ++i) {
            for (auto& np : named_parameters(params.reduce[i], "reduce." + level_name(i))) {
                auto& dr = g.reduce[i];
                cases.push_back({np.name, np.values,
                                 np.name.ends_with("bias") ? dr.bias
                                                           : copy_of(dr.weight.data())});
            }
        }
        run.run("intp_reduce", [&] { return dot(ones, intp_reduce(p, params).value); },
                std::move(cases));
    }
    {
        FeaturePyramid p = FeaturePyramid::randn(1, kChannels, kS2, kS2, rng, kInputScale);
        MpOpParams params = MpOpParams::random(kChannels, rng);
        for (auto& r : params.reduce) r = ConvParams::random(kChannels, 1, 1, true, rng);
        auto traced = mp_op_forward(p, params);
        const FeaturePyramid r = ones_like(traced.value);
        MpOpGrads g = traced.vjp(r);
        auto cases = pyramid_input_cases(p, g.input);
        append_param_cases(cases, params, g.params);
        run.run("mp_op_forward", [&] { return dot(r, mp_op_forward(p, params).value); },
                std::move(cases));
    }
    {
        FeaturePyramid p = FeaturePyramid::randn(1, kChannels, kS2, kS2, rng, kInputScale);
        OpNetParams params = OpNetParams::random(kChannels, rng);
        const OpConfig cfg{2, 1.0};
        auto traced = opnet_feature_path(p, params, cfg);
        const FeaturePyramid r = ones_like(traced.value);
        OpNetGrads g = traced.vjp(r);
        auto cases = pyramid_input_cases(p, g.input);
        append_param_cases(cases, params, g.params);
        run.run("opnet_feature_path",
                [&] { return dot(r, opnet_feature_path(p, params, cfg).value); },
                std::move(cases));
    }
}

}  // namespace

GradCheckReport run_gradcheck_suite(GradScope scope, std::uint64_t seed, std::size_t seeds,
                                    double epsilon, double threshold) {
    GradCheckReport report;
    report.epsilon = epsilon;
    report.threshold = threshold;
    for (std::size_t i = 0; i < seeds; ++i) {
        SuiteRunner runner(seed + i, epsilon, threshold, report);
        if (scope == GradScope::Primitive || scope == GradScope::All) {
            primitive_suite(seed + i, runner);
        }
        if (scope == GradScope::Attention || scope == GradScope::All) {
            attention_suite(seed + i, runner);
        }
        if (scope == GradScope::Pyramid || scope == GradScope::All) {
            pyramid_suite(seed + i, runner);
        }
    }
    report.pass = !report.entries.empty() && report.worst() < threshold;
    return report;
}

}  // namespace opnet
