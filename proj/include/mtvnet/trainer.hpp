#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "mtvnet/checkpoint.hpp"
#include "mtvnet/config.hpp"
#include "mtvnet/evaluator.hpp"
#include "mtvnet/network.hpp"

namespace mtvnet {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mean absolute error over every element.
torch::Tensor l1_loss(const torch::Tensor& pred, const torch::Tensor& target);

/// Learning rate for (1-based) iteration `iter`: lr0 halved once for every
/// milestone already passed (iter > milestone).
double lr_at(const TrainConfig& cfg, std::int64_t iter);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Bias-corrected Adam over a fixed list of named parameters.
class Adam {
 public:
  Adam(NamedTensors params, AdamOptions opts);

  /// Applies one update at rate `lr` from the current .grad() of every
  /// parameter. Missing gradients count as zero. Throws TrainingError naming
  /// the first parameter with a non-finite gradient, before touching anything.
  void step(double lr);
  void zero_grad();

  std::int64_t steps() const { return steps_; }
  const NamedTensors& params() const { return params_; }

  /// Moments as "adam_m:<name>" / "adam_v:<name>".
  NamedTensors state() const;
  void load_state(const Checkpoint& ckpt, std::int64_t steps);

 private:
  NamedTensors params_;
  std::vector<torch::Tensor> m_, v_;
  AdamOptions opts_;
  std::int64_t steps_ = 0;
};

struct LossRecord {
  std::int64_t iter = 0;
  double loss = 0.0;
  double lr = 0.0;
};

std::string loss_trace_csv(const std::vector<LossRecord>& trace);

/// Single-stream trainer over paired HR/LR volumes. Batches are drawn with a
/// seeded generator, so the loss trace is a function of the config alone.
class Trainer {
 public:
  Trainer(const ExperimentConfig& cfg, std::vector<VolumePair> data);

  /// Runs iterations until `iteration() == until` (or total_iters when
  /// until < 0). Writes periodic checkpoints when an output directory is set.
  void run(std::int64_t until = -1, const std::function<void(const LossRecord&)>& on_step = {});
  LossRecord step();

  std::int64_t iteration() const { return iteration_; }
  const std::vector<LossRecord>& trace() const { return trace_; }
  Mtvnet& net() { return net_; }
  const ExperimentConfig& config() const { return cfg_; }

  void set_output_dir(std::filesystem::path dir) { out_dir_ = std::move(dir); }
  Checkpoint make_checkpoint() const;
  /// Restores parameters, optimizer moments, iteration, RNG state and loss trace.
  void restore(const Checkpoint& ckpt);
  /// Writes ckpt_<iter>.mtvckpt, last.mtvckpt and loss.csv into the output directory.
  void write_artifacts() const;

 private:
  ExperimentConfig cfg_;
  std::vector<VolumePair> data_;
  Mtvnet net_{nullptr};
  std::optional<Adam> adam_;
  std::mt19937_64 rng_;
  std::int64_t iteration_ = 0;
  std::vector<LossRecord> trace_;
  std::filesystem::path out_dir_;
};

/// Builds the training pair (HR, degraded LR) for an HR volume.
VolumePair make_training_pair(const Volume& hr, const ExperimentConfig& cfg);

}  // namespace mtvnet
