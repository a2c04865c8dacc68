#include "opnet/instrument.hpp"

namespace opnet {

namespace {
thread_local MacCounter* active_counter = nullptr;
}

const char* to_string(MacKind kind) {
    switch (kind) {
        case MacKind::Conv: return "conv";
        case MacKind::Gram: return "gram";
        case MacKind::WeightedSum: return "weighted_sum";
        case MacKind::Resize: return "resize";
        case MacKind::Pool: return "pool";
        case MacKind::Scale: return "scale";
    }
    return "unknown";
}

void MacCounter::add(MacKind kind, std::uint64_t macs) { counts_[{stage_, kind}] += macs; }

std::uint64_t MacCounter::total() const {
    std::uint64_t sum = 0;
    for (const auto& [key, n] : counts_) sum += n;
    return sum;
}

std::uint64_t MacCounter::stage(const std::string& name) const {
    std::uint64_t sum = 0;
    for (const auto& [key, n] : counts_) {
        if (key.first == name) sum += n;
    }
    return sum;
}

std::uint64_t MacCounter::kind(MacKind k) const {
    std::uint64_t sum = 0;
    for (const auto& [key, n] : counts_) {
        if (key.second == k) sum += n;
    }
    return sum;
}

std::uint64_t MacCounter::stage_kind(const std::string& name, MacKind k) const {
    auto it = counts_.find({name, k});
    return it == counts_.end() ? 0 : it->second;
}

CountingScope::CountingScope(MacCounter& counter) : previous_(active_counter) {
    active_counter = &counter;
}

CountingScope::~CountingScope() { active_counter = previous_; }

StageScope::StageScope(std::string name) : counter_(active_counter) {
    if (counter_ != nullptr) {
        previous_ = counter_->current_stage();
        counter_->set_stage(std::move(name));
    }
}

StageScope::~StageScope() {
    if (counter_ != nullptr) counter_->set_stage(previous_);
}

void record_macs(MacKind kind, std::uint64_t macs) {
    if (active_counter != nullptr && macs != 0) active_counter->add(kind, macs);
}

}  // namespace opnet
