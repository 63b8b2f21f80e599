#include <algorithm>
#include <mutex>
#include <unordered_map>

#include <c10/core/Allocator.h>
#include <c10/util/ThreadLocalDebugInfo.h>

#include "mtvnet/instrumentation.hpp"

namespace mtvnet {

namespace {

thread_local ActivationRecorder* g_recorder = nullptr;

// Receives the CPU allocator's memory reports for the thread (and the
// intra-op / autograd workers that inherit its debug info).
class PeakTracker : public c10::MemoryReportingInfoBase {
 public:
  void reportMemoryUsage(void* ptr, int64_t alloc_size, size_t, size_t, c10::Device) override {
    std::lock_guard<std::mutex> lock(mu_);
    if (alloc_size > 0) {
      live_[ptr] = alloc_size;
      current_ += alloc_size;
      peak_ = std::max(peak_, current_);
    } else {
      auto it = live_.find(ptr);
      if (it == live_.end()) return;  // allocated before the scope opened
      current_ -= it->second;
      live_.erase(it);
    }
  }
  bool memoryProfilingEnabled() const override { return true; }

  std::int64_t peak() const {
    std::lock_guard<std::mutex> lock(mu_);
    return peak_;
  }
  std::int64_t current() const {
    std::lock_guard<std::mutex> lock(mu_);
    return current_;
  }

 private:
  mutable std::mutex mu_;
  std::unordered_map<void*, std::int64_t> live_;
  std::int64_t current_ = 0;
  std::int64_t peak_ = 0;
};

}  // namespace

std::int64_t ActivationRecorder::total() const {
  std::int64_t t = 0;
  for (const auto& [k, v] : counts_) t += v;
  return t;
}

ScopedActivationRecorder::ScopedActivationRecorder(ActivationRecorder& rec) : previous_(g_recorder) {
  g_recorder = &rec;
}

ScopedActivationRecorder::~ScopedActivationRecorder() { g_recorder = previous_; }

bool recording_activations() { return g_recorder != nullptr; }

void record_activation(const std::string& key, const torch::Tensor& t) {
  if (g_recorder != nullptr && !key.empty()) g_recorder->observe(key, t);
}

struct PeakMemoryScope::State {
  std::shared_ptr<PeakTracker> tracker = std::make_shared<PeakTracker>();
  c10::DebugInfoGuard guard{c10::DebugInfoKind::PROFILER_STATE, tracker};
};

PeakMemoryScope::PeakMemoryScope() : state_(std::make_unique<State>()) {}

PeakMemoryScope::~PeakMemoryScope() = default;

std::int64_t PeakMemoryScope::peak_bytes() const { return state_->tracker->peak(); }

std::int64_t PeakMemoryScope::current_bytes() const { return state_->tracker->current(); }

}  // namespace mtvnet
