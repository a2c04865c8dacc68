#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>

namespace opnet {

/// Kinds of multiply-accumulate work recorded by the kernels.
enum class MacKind { Conv, Gram, WeightedSum, Resize, Pool, Scale };

const char* to_string(MacKind kind);

/// Per-run tally of executed multiply-accumulates, keyed by (stage, kind).
///
/// Kernels report into the counter installed on the calling thread by a
/// `CountingScope`; with no scope active nothing is recorded. Softmax
/// exponentials, divisions and temperature scaling are not counted.
class MacCounter {
public:
    void add(MacKind kind, std::uint64_t macs);

    std::uint64_t total() const;
    std::uint64_t stage(const std::string& name) const;
    std::uint64_t kind(MacKind kind) const;
    std::uint64_t stage_kind(const std::string& name, MacKind kind) const;
    const std::map<std::pair<std::string, MacKind>, std::uint64_t>& entries() const {
        return counts_;
    }

    const std::string& current_stage() const { return stage_; }
    void set_stage(std::string name) { stage_ = std::move(name); }

private:
    std::string stage_ = "unstaged";
    std::map<std::pair<std::string, MacKind>, std::uint64_t> counts_;
};

/// Installs `counter` as the active counter for the current thread.
class CountingScope {
public:
    explicit CountingScope(MacCounter& counter);
    ~CountingScope();
    CountingScope(const CountingScope&) = delete;
    CountingScope& operator=(const CountingScope&) = delete;

private:
    MacCounter* previous_;
};

/// Labels work recorded inside this scope with a stage name.
class StageScope {
public:
    explicit StageScope(std::string name);
    ~StageScope();
    StageScope(const StageScope&) = delete;
    StageScope& operator=(const StageScope&) = delete;

private:
    MacCounter* counter_;
    std::string previous_;
};

/// Records into the active counter, if any.
void record_macs(MacKind kind, std::uint64_t macs);

}  // namespace opnet
