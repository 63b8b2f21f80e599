#pragma once

#include <string>

#include <torch/torch.h>

#include "mtvnet/config.hpp"

namespace mtvnet {

/// Multi-head attention with separate query and key/value sources.
///
/// Scores are softmax(q k^T / sqrt(d_head) + bias) for kDotProduct, or
/// SwinV2-style scaled cosine similarity for kCosine. `mask` is boolean,
/// true = admissible, broadcastable to [B, heads, Tq, Tk]; masked logits are
/// set to -inf before the softmax.
class MultiHeadAttentionImpl : public torch::nn::Module {
 public:
  MultiHeadAttentionImpl(int dim, int heads, AttentionScore score = AttentionScore::kDotProduct);

  /// q_in [B, Tq, C], kv_in [B, Tk, C] -> [B, Tq, C]
  torch::Tensor forward(const torch::Tensor& q_in, const torch::Tensor& kv_in, const torch::Tensor& bias = {},
                        const torch::Tensor& mask = {});
  /// Softmax-normalised attention weights [B, heads, Tq, Tk].
  torch::Tensor attention_weights(const torch::Tensor& q_in, const torch::Tensor& kv_in,
                                  const torch::Tensor& bias = {}, const torch::Tensor& mask = {});

  int dim;
  int heads;
  AttentionScore score;
  torch::nn::Linear q_proj{nullptr}, k_proj{nullptr}, v_proj{nullptr}, out_proj{nullptr};
  torch::Tensor logit_scale;  // cosine scoring only, [heads, 1, 1]
  std::string record_key;     // attention weights are reported under this name when non-empty

 private:
  torch::Tensor split_heads(const torch::Tensor& x) const;
  torch::Tensor weights_from_projected(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& bias,
                                       const torch::Tensor& mask);
};
TORCH_MODULE(MultiHeadAttention);

/// Learned bias over relative ITE offsets inside an m^3 window.
class RelativePositionBiasImpl : public torch::nn::Module {
 public:
  RelativePositionBiasImpl(std::int64_t window, int heads);
  /// [heads, m^3, m^3]
  torch::Tensor forward();
  /// Zero-padded to a joint sequence of m^3 + extra tokens: [heads, T, T].
  torch::Tensor padded(std::int64_t extra);

  std::int64_t window;
  torch::Tensor table;  // [(2m-1)^3, heads]
  torch::Tensor index;  // [m^3, m^3]; kept unregistered so dtype casts leave it integral
};
TORCH_MODULE(RelativePositionBias);

/// Two-layer perceptron with GELU.
class MlpImpl : public torch::nn::Module {
 public:
  MlpImpl(int in_dim, int hidden_dim, int out_dim);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(Mlp);

}  // namespace mtvnet
