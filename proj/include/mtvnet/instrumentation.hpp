#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>

#include <torch/torch.h>

namespace mtvnet {

/// Collects element counts of named forward activations. Modules report
/// through record_activation(); nothing is recorded unless a recorder is
/// installed on the current thread with ScopedActivationRecorder.
class ActivationRecorder {
 public:
  virtual ~ActivationRecorder() = default;
  /// Called by record_activation(); subclasses may inspect the values.
  virtual void observe(const std::string& key, const torch::Tensor& t) { record(key, t.numel()); }
  void record(const std::string& key, std::int64_t elements) { counts_[key] += elements; }
  const std::map<std::string, std::int64_t>& counts() const { return counts_; }
  std::int64_t total() const;
  void clear() { counts_.clear(); }

 private:
  std::map<std::string, std::int64_t> counts_;
};

class ScopedActivationRecorder {
 public:
  explicit ScopedActivationRecorder(ActivationRecorder& rec);
  ~ScopedActivationRecorder();
  ScopedActivationRecorder(const ScopedActivationRecorder&) = delete;
  ScopedActivationRecorder& operator=(const ScopedActivationRecorder&) = delete;

 private:
  ActivationRecorder* previous_;
};

bool recording_activations();
void record_activation(const std::string& key, const torch::Tensor& t);

/// Tracks live and peak bytes of CPU tensor storage while installed. Only
/// allocations made inside the scope are counted.
class PeakMemoryScope {
 public:
  PeakMemoryScope();
  ~PeakMemoryScope();
  PeakMemoryScope(const PeakMemoryScope&) = delete;
  PeakMemoryScope& operator=(const PeakMemoryScope&) = delete;

  std::int64_t peak_bytes() const;
  std::int64_t current_bytes() const;

 private:
  struct State;
  std::unique_ptr<State> state_;
};

}  // namespace mtvnet
