#include "opnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include "opnet/errors.hpp"

namespace opnet {

void SgdConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
}

std::size_t sgd_step(std::span<const std::span<double>> params,
                     std::span<const std::span<const double>> grads,
                     std::span<const std::span<double>> velocity, const SgdConfig& cfg) {
    cfg.validate();
    if (params.size() != grads.size() || params.size() != velocity.size()) {
        throw ContractViolation("sgd_step needs matching parameter, gradient and velocity lists");
    }
    std::size_t updated = 0;
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto p = params[t];
        auto g = grads[t];
        auto v = velocity[t];
        if (g.size() != p.size() || v.size() != p.size()) {
            throw ContractViolation("sgd_step buffer " + std::to_string(t) + " sizes differ: " +
                                    std::to_string(p.size()) + "/" + std::to_string(g.size()) +
                                    "/" + std::to_string(v.size()));
        }
        for (std::size_t i = 0; i < p.size(); ++i) {
            v[i] = cfg.momentum * v[i] + g[i] + cfg.weight_decay * p[i];
            p[i] -= cfg.learning_rate * v[i];
        }
        updated += p.size();
    }
    return updated;
}

PathOptimizer::PathOptimizer(OpNetParams& params, SgdConfig cfg)
    : params_(&params), cfg_(cfg), velocity_(OpNetParams::zeros_like(params)) {
    cfg_.validate();
}

std::size_t PathOptimizer::step(OpNetParams& grads) {
    std::vector<std::span<double>> p, v;
    std::vector<std::span<const double>> g;
    for (auto& np : named_parameters(*params_)) p.push_back(np.values);
    for (auto& np : named_parameters(grads)) g.emplace_back(np.values);
    for (auto& np : named_parameters(velocity_)) v.push_back(np.values);
    return sgd_step(p, g, v, cfg_);
}

// ---------------------------------------------------------------------------
// gradcheck

double GradCheckReport::worst() const {
    double w = 0.0;
    for (const auto& e : entries) w = std::max(w, e.max_rel_error);
    return w;
}

std::string GradCheckReport::to_csv() const {
    std::vector<GradCheckEntry> sorted = entries;
    std::ranges::sort(sorted, {}, &GradCheckEntry::name);
    std::ostringstream os;
    os << "name,count,max_rel_error,pass\n" << std::setprecision(6) << std::scientific;
    for (const auto& e : sorted) {
        os << e.name << ',' << e.count << ',' << e.max_rel_error << ','
           << (e.max_rel_error < threshold ? "true" : "false") << '\n';
    }
    return os.str();
}

GradCheckReport gradcheck(const std::function<double()>& f, std::vector<GradCheckCase> cases,
                          double epsilon, double threshold) {
    if (!(epsilon > 0.0)) throw ConfigError("gradcheck epsilon must be positive");
    const double base = f();
    const double again = f();
    if (base != again && !(std::isnan(base) && std::isnan(again))) {
        throw DeterminismError("objective is not deterministic: " + std::to_string(base) +
                               " vs " + std::to_string(again));
    }

    GradCheckReport report;
    report.epsilon = epsilon;
    report.threshold = threshold;
    for (auto& c : cases) {
        if (c.analytic.size() != c.values.size()) {
            throw ContractViolation("analytic gradient for " + c.name + " has " +
                                    std::to_string(c.analytic.size()) + " entries, expected " +
                                    std::to_string(c.values.size()));
        }
        GradCheckEntry entry{c.name, c.values.size(), 0.0};
        for (std::size_t i = 0; i < c.values.size(); ++i) {
            const double saved = c.values[i];
            c.values[i] = saved + epsilon;
            const double up = f();
            c.values[i] = saved - epsilon;
            const double down = f();
            c.values[i] = saved;
            const double numeric = (up - down) / (2.0 * epsilon);
            const double analytic = c.analytic[i];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            double rel = std::abs(analytic - numeric) / denom;
            if (std::isnan(rel)) rel = INFINITY;
            entry.max_rel_error = std::max(entry.max_rel_error, rel);
        }
        report.entries.push_back(std::move(entry));
    }
    report.pass = std::ranges::all_of(
        report.entries, [threshold](const GradCheckEntry& e) { return e.max_rel_error < threshold; });
    return report;
}

// ---------------------------------------------------------------------------
// Toy task

std::string ToyTaskResult::to_csv() const {
    std::ostringstream os;
    os << "step,loss\n" << std::setprecision(17);
    for (std::size_t i = 0; i < losses.size(); ++i) os << i << ',' << losses[i] << '\n';
    return os.str();
}

ToyTaskResult toy_task_run(std::uint64_t seed, std::size_t steps, const SgdConfig& cfg,
                           const ToyTaskOptions& options) {
    if (steps == 0) throw ConfigError("toy task needs at least one step");
    cfg.validate();
    const OpConfig op_cfg{options.heads, 1.0};
    op_cfg.validate(options.channels);

    std::mt19937_64 rng(seed);
    const FeaturePyramid input = FeaturePyramid::randn(options.batch, options.channels,
                                                       options.s2_size, options.s2_size, rng);
    const OpNetParams teacher = OpNetParams::random(options.channels, rng);
    OpNetParams student =
        options.student_equals_teacher ? teacher : OpNetParams::random(options.channels, rng);
    const FeaturePyramid target = opnet_feature_path(input, teacher, op_cfg).value;

    std::size_t count = 0;
    for (const auto& l : target.levels) count += l.numel();
    const double inv_count = 1.0 / static_cast<double>(count);

    PathOptimizer optimizer(student, cfg);
    ToyTaskResult result;
    for (std::size_t step = 0; step < steps; ++step) {
        auto out = opnet_feature_path(input, student, op_cfg);
        double loss = 0.0;
        FeaturePyramid grad = FeaturePyramid::zeros_like(out.value);
        for (std::size_t l = 0; l < out.value.levels.size(); ++l) {
            const auto y = out.value.levels[l].data();
            const auto t = target.levels[l].data();
            auto g = grad.levels[l].data();
            for (std::size_t i = 0; i < y.size(); ++i) {
                const double d = y[i] - t[i];
                loss += d * d;
                g[i] = 2.0 * d * inv_count;
            }
        }
        loss *= inv_count;
        if (!std::isfinite(loss)) {
            throw NumericalError("toy task diverged at step " + std::to_string(step));
        }
        result.losses.push_back(loss);
        OpNetGrads grads = out.vjp(grad);
        optimizer.step(grads.params);
        for (const auto& np : named_parameters(student)) {
            if (!std::ranges::all_of(np.values, [](double v) { return std::isfinite(v); })) {
                throw NumericalError("toy task diverged at step " + std::to_string(step) +
                                     ": " + np.name + " is non-finite");
            }
        }
    }

    for (std::size_t i = 50; i + 10 < result.losses.size(); ++i) {
        if (result.losses[i + 10] > result.losses[i]) {
            result.tuning_warning = true;
            break;
        }
    }
    return result;
}

}  // namespace opnet
