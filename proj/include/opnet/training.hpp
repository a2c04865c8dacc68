#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "opnet/attention.hpp"
#include "opnet/pyramid.hpp"

namespace opnet {

/// SGD with classical momentum and coupled L2 weight decay.
struct SgdConfig {
    double learning_rate = 0.005;
    double weight_decay = 0.0001;
    double momentum = 0.95;

    void validate() const;
};

/// One update over matching parameter, gradient and velocity buffers:
///   v <- momentum * v + g + weight_decay * p;  p <- p - lr * v.
/// Returns the number of scalars updated.
std::size_t sgd_step(std::span<const std::span<double>> params,
                     std::span<const std::span<const double>> grads,
                     std::span<const std::span<double>> velocity, const SgdConfig& cfg);

/// Optimizer state for a full feature path.
class PathOptimizer {
public:
    PathOptimizer(OpNetParams& params, SgdConfig cfg);
    /// Applies one step with `grads` laid out like the parameters.
    std::size_t step(OpNetParams& grads);

private:
    OpNetParams* params_;
    SgdConfig cfg_;
    OpNetParams velocity_;
};

/// One parameter tensor to check: a view into the live storage the objective
/// reads, and the analytic gradient for it.
struct GradCheckCase {
    std::string name;
    std::span<double> values;
    std::vector<double> analytic;
};

struct GradCheckEntry {
    std::string name;
    std::size_t count = 0;
    double max_rel_error = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double epsilon = 0.0;
    double threshold = 0.0;
    bool pass = false;

    double worst() const;
    /// "name,count,max_rel_error,pass" rows, sorted by name.
    std::string to_csv() const;
};

/// Central-difference check of every scalar of every case. The relative
/// error is |a - n| / max(|a|, |n|, 1e-8). Throws DeterminismError when two
/// baseline evaluations of `f` differ.
GradCheckReport gradcheck(const std::function<double()>& f, std::vector<GradCheckCase> cases,
                          double epsilon = 1e-5, double threshold = 1e-4);

/// Teacher-student regression on the feature path.
struct ToyTaskOptions {
    std::size_t batch = 1;
    std::size_t channels = 4;
    std::size_t heads = 2;
    std::size_t s2_size = 8;
    /// Start the student from the teacher's parameters.
    bool student_equals_teacher = false;
};

struct ToyTaskResult {
    std::vector<double> losses;  // loss before each update
    /// Set when the loss rises within some 10-step window after step 50.
    bool tuning_warning = false;

    std::string to_csv() const;
};

/// Fits a fresh parameter set to the outputs of a frozen random one by
/// mean-squared error. Throws NumericalError naming the step on divergence.
ToyTaskResult toy_task_run(std::uint64_t seed, std::size_t steps, const SgdConfig& cfg,
                           const ToyTaskOptions& options = {});

}  // namespace opnet
