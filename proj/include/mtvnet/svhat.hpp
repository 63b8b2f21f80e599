#pragma once

#include <cstdint>
#include <string>

#include <torch/torch.h>

#include "mtvnet/attention.hpp"
#include "mtvnet/config.hpp"

namespace mtvnet {

/// Token state of one level: ITEs [N,G,G,G,C] and CATs [N,g,g,g,C].
/// `cats` is undefined when carrier tokens are disabled.
struct SvhatState {
  torch::Tensor ites;
  torch::Tensor cats;
};

/// Elementwise x = x_bar + x_cross for both streams.
SvhatState fuse_cross(const SvhatState& bar, const SvhatState& cross);

/// Pre-normalised full attention across every CAT of a level.
class CatAttentionImpl : public torch::nn::Module {
 public:
  CatAttentionImpl(const ModelConfig& cfg, std::string tag = {});
  torch::Tensor forward(const torch::Tensor& cats);

  std::int64_t max_tokens;
  std::string tag;
  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
  MultiHeadAttention attn{nullptr};
  Mlp mlp{nullptr};
  torch::Tensor gamma1, gamma2;
};
TORCH_MODULE(CatAttention);

/// Post-normalised attention over joint [ITE, CAT] window sequences,
/// optionally on the cyclically shifted grid.
class JointWindowAttentionImpl : public torch::nn::Module {
 public:
  JointWindowAttentionImpl(const ModelConfig& cfg, std::int64_t token_edge, std::string tag = {});

  SvhatState forward(const torch::Tensor& ites, const torch::Tensor& cats, bool shifted);
  /// Explicit masks [nW, T, T]; an undefined tensor means no masking.
  SvhatState forward_with_masks(const torch::Tensor& ites, const torch::Tensor& cats, const torch::Tensor& masks,
                                bool shifted);
  /// Cached mask set for this geometry.
  const torch::Tensor& masks(bool shifted);

  int window;
  int cat_edge;  // 0 when CATs are disabled
  std::int64_t token_edge;
  std::string tag;
  MultiHeadAttention attn{nullptr};
  RelativePositionBias rel_bias{nullptr};
  torch::nn::LayerNorm norm_attn{nullptr}, norm_mlp{nullptr};
  Mlp mlp{nullptr};

 private:
  torch::Tensor masks_shifted_;  // unregistered: boolean, must survive dtype casts
};
TORCH_MODULE(JointWindowAttention);

/// LN(MCA(cur, MLP(prev))) over all CATs of the current and previous level.
class CrossCatAttentionImpl : public torch::nn::Module {
 public:
  explicit CrossCatAttentionImpl(const ModelConfig& cfg);
  torch::Tensor forward(const torch::Tensor& cur, const torch::Tensor& prev);

  Mlp prev_proj{nullptr};
  MultiHeadAttention attn{nullptr};
  torch::nn::LayerNorm norm{nullptr};
};
TORCH_MODULE(CrossCatAttention);

/// Windowed cross-attention from current-level ITE windows to the matching
/// previous-level windows. Windows correspond by index, so both grids must
/// have the same edge.
class CrossIteAttentionImpl : public torch::nn::Module {
 public:
  explicit CrossIteAttentionImpl(const ModelConfig& cfg);
  torch::Tensor forward(const torch::Tensor& cur, const torch::Tensor& prev);

  int window;
  Mlp prev_proj{nullptr};
  MultiHeadAttention attn{nullptr};
  torch::nn::LayerNorm norm{nullptr};
};
TORCH_MODULE(CrossIteAttention);

/// One SVHAT layer: optional cross-level fusion, CAT attention, then joint
/// window attention.
class SvhatLayerImpl : public torch::nn::Module {
 public:
  SvhatLayerImpl(const ModelConfig& cfg, std::int64_t token_edge, bool has_cross, std::string tag = {});

  /// `prev` must be given exactly when the layer was built with cross inputs.
  SvhatState forward(const SvhatState& state, const SvhatState* prev, bool shifted);

  bool has_cross;
  bool use_cat;
  CrossCatAttention cross_cats{nullptr};
  CrossIteAttention cross_ites{nullptr};
  CatAttention cat_attn{nullptr};
  JointWindowAttention joint{nullptr};
};
TORCH_MODULE(SvhatLayer);

}  // namespace mtvnet
