#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "mtvnet/config.hpp"
#include "mtvnet/network.hpp"
#include "mtvnet/volume.hpp"

namespace mtvnet {

// ---------------------------------------------------------------- LAM

/// Cuboid in the SR output grid of the innermost context.
struct Box {
  Index3 origin{0, 0, 0};
  Index3 extent{1, 1, 1};
};

/// Batched contexts (coarsest first, each [1, C, e, e, e]) -> SR output [1, C, S, S, S].
using ContextModel = std::function<torch::Tensor(const std::vector<torch::Tensor>&)>;

struct LamOptions {
  int steps = 64;               // K
  double baseline_sigma = 4.0;  // blur of the baseline, LR voxels
};

struct LamMap {
  torch::Tensor attribution;         // [E, E, E] over the outermost context, |signed|
  torch::Tensor signed_attribution;  // [E, E, E], sums to about F(input) - F(baseline)
  torch::Tensor slice_average;       // [E, E], axial mean over the box's LR slice range
  Box box;
  double di = 0.0;
  double f_input = 0.0;
  double f_baseline = 0.0;
};

/// Integrated gradients from a blurred baseline along I_a = b + a (I - b),
/// a = k / K for k = 1..K, with target F = sum of the output over `box`.
/// `outer` is the outermost LR context [C, E, E, E]; inner contexts are its
/// centred crops at `extents` (coarsest first, extents.front() == E).
LamMap lam_3d(const ContextModel& model, const torch::Tensor& outer, const std::vector<int>& extents, int scale,
              const Box& box, const LamOptions& opts = {});

/// 100 (1 - Gini) of the non-negative values; 0 for an all-zero input.
double diffusion_index(const torch::Tensor& attribution);

/// Adapts a network to ContextModel.
ContextModel as_context_model(Mtvnet& net);

// ------------------------------------------------------ model accounting

/// Closed-form trainable parameter count of the network built from `cfg`.
std::int64_t analytic_parameter_count(const ModelConfig& cfg);

/// Closed-form element counts of every activation the network reports
/// through record_activation during a forward pass with batch `batch`.
std::map<std::string, std::int64_t> analytic_activation_counts(const ModelConfig& cfg, std::int64_t batch = 1);
std::int64_t analytic_activation_total(const ModelConfig& cfg, std::int64_t batch = 1);

/// Per-level extents for an outermost LR extent `resolution`, halving towards
/// the finest level (patch sizes and depths kept from `cfg`).
ModelConfig with_resolution(const ModelConfig& cfg, int resolution);

struct ProfileRow {
  std::string label;
  int resolution = 0;
  bool valid = false;
  std::string error;  // why the geometry is invalid
  std::vector<LevelTokenCounts> levels;
  std::int64_t total_ites = 0;
  std::int64_t total_cats = 0;
  std::int64_t parameters = 0;
  std::int64_t activation_elements = 0;
  std::optional<std::int64_t> recorded_elements;  // instrumented forward
  std::optional<std::int64_t> peak_bytes;         // measured allocator peak
};

struct ProfileOptions {
  bool measure = false;  // run a forward pass per valid row
  std::int64_t batch = 1;
};

std::vector<ProfileRow> profile_memory(const ModelConfig& cfg, const std::string& label,
                                       const std::vector<int>& resolutions, const ProfileOptions& opts = {});

std::string profile_csv(const std::vector<ProfileRow>& rows);

/// Runs one forward pass and returns the recorded activation counts.
std::map<std::string, std::int64_t> record_forward_activations(Mtvnet& net, std::int64_t batch = 1);

}  // namespace mtvnet
