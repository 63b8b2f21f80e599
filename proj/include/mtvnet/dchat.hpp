#pragma once

#include <cstdint>
#include <string>

#include <torch/torch.h>

#include "mtvnet/config.hpp"
#include "mtvnet/svhat.hpp"

namespace mtvnet {

/// Densely connected stack of SVHAT layers. Each stream (ITE, CAT) keeps its
/// own dense state [input | skip_1 | ... | skip_T] and its own 1x1x1 gate
/// back to C_emb. Layers alternate unshifted / shifted windows.
class DchatBlockImpl : public torch::nn::Module {
 public:
  DchatBlockImpl(const ModelConfig& cfg, std::int64_t token_edge, int layers, bool has_cross, std::string tag = {});

  /// input + delta(input)
  SvhatState forward(const SvhatState& input, const SvhatState* prev);
  /// Gated dense features, before the local residual.
  SvhatState delta(const SvhatState& input, const SvhatState* prev);

  /// Dense-state channel count per stream: C_emb + T * C_skip.
  std::int64_t dense_channels() const;

  int num_layers;
  bool use_cat;
  bool use_shift;
  double slope;
  std::int64_t emb_channels, skip_channels;
  std::string tag;
  torch::nn::ModuleList layers{nullptr};
  torch::nn::ModuleList ite_skips{nullptr}, cat_skips{nullptr};
  torch::nn::Linear ite_gate{nullptr}, cat_gate{nullptr};
};
TORCH_MODULE(DchatBlock);

/// Sequential DCHAT blocks; each block's first layer receives the previous
/// level's final tokens when the group has cross inputs.
class DchatGroupImpl : public torch::nn::Module {
 public:
  DchatGroupImpl(const ModelConfig& cfg, const LevelSpec& level, bool has_cross, std::string tag = {});
  SvhatState forward(const SvhatState& input, const SvhatState* prev);

  torch::nn::ModuleList blocks{nullptr};
};
TORCH_MODULE(DchatGroup);

}  // namespace mtvnet
