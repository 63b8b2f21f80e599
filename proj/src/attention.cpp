#include "mtvnet/attention.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "mtvnet/instrumentation.hpp"
#include "mtvnet/tokenizer.hpp"

namespace mtvnet {

namespace F = torch::nn::functional;

MultiHeadAttentionImpl::MultiHeadAttentionImpl(int dim_, int heads_, AttentionScore score_)
    : dim(dim_), heads(heads_), score(score_) {
  if (heads <= 0 || dim % heads != 0) throw std::invalid_argument("attention dim must be divisible by heads");
  q_proj = register_module("q_proj", torch::nn::Linear(dim, dim));
  k_proj = register_module("k_proj", torch::nn::Linear(dim, dim));
  v_proj = register_module("v_proj", torch::nn::Linear(dim, dim));
  out_proj = register_module("out_proj", torch::nn::Linear(dim, dim));
  if (score == AttentionScore::kCosine) {
    logit_scale = register_parameter("logit_scale", torch::full({heads, 1, 1}, std::log(10.0)));
  }
}

torch::Tensor MultiHeadAttentionImpl::split_heads(const torch::Tensor& x) const {
  const auto b = x.size(0), t = x.size(1);
  return x.view({b, t, heads, dim / heads}).transpose(1, 2);
}

torch::Tensor MultiHeadAttentionImpl::weights_from_projected(const torch::Tensor& q, const torch::Tensor& k,
                                                             const torch::Tensor& bias, const torch::Tensor& mask) {
  torch::Tensor logits;
  if (score == AttentionScore::kCosine) {
    auto qn = F::normalize(q, F::NormalizeFuncOptions().dim(-1));
    auto kn = F::normalize(k, F::NormalizeFuncOptions().dim(-1));
    logits = torch::matmul(qn, kn.transpose(-2, -1)) * torch::clamp_max(logit_scale, std::log(100.0)).exp();
  } else {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(dim / heads));
    logits = torch::matmul(q, k.transpose(-2, -1)) * inv_sqrt_d;
  }
  if (bias.defined()) logits = logits + bias;
  if (mask.defined()) logits = logits.masked_fill(mask.logical_not(), -std::numeric_limits<double>::infinity());
  auto weights = torch::softmax(logits, -1);
  if (!record_key.empty()) record_activation(record_key, weights);
  return weights;
}

torch::Tensor MultiHeadAttentionImpl::attention_weights(const torch::Tensor& q_in, const torch::Tensor& kv_in,
                                                        const torch::Tensor& bias, const torch::Tensor& mask) {
  return weights_from_projected(split_heads(q_proj(q_in)), split_heads(k_proj(kv_in)), bias, mask);
}

torch::Tensor MultiHeadAttentionImpl::forward(const torch::Tensor& q_in, const torch::Tensor& kv_in,
                                              const torch::Tensor& bias, const torch::Tensor& mask) {
  auto q = split_heads(q_proj(q_in));
  auto k = split_heads(k_proj(kv_in));
  auto v = split_heads(v_proj(kv_in));
  auto attn = weights_from_projected(q, k, bias, mask);
  auto out = torch::matmul(attn, v).transpose(1, 2).reshape({q_in.size(0), q_in.size(1), dim});
  return out_proj(out);
}

RelativePositionBiasImpl::RelativePositionBiasImpl(std::int64_t window_, int heads) : window(window_) {
  const auto span = 2 * window - 1;
  table = register_parameter("table", torch::randn({span * span * span, heads}) * 0.02);
  index = relative_position_index(window);
}

torch::Tensor RelativePositionBiasImpl::forward() {
  const auto n = window * window * window;
  return table.index_select(0, index.reshape({-1})).view({n, n, -1}).permute({2, 0, 1});
}

torch::Tensor RelativePositionBiasImpl::padded(std::int64_t extra) {
  auto b = forward();
  if (extra == 0) return b;
  return F::pad(b, F::PadFuncOptions({0, extra, 0, extra}));
}

MlpImpl::MlpImpl(int in_dim, int hidden_dim, int out_dim) {
  fc1 = register_module("fc1", torch::nn::Linear(in_dim, hidden_dim));
  fc2 = register_module("fc2", torch::nn::Linear(hidden_dim, out_dim));
}

torch::Tensor MlpImpl::forward(const torch::Tensor& x) { return fc2(F::gelu(fc1(x))); }

}  // namespace mtvnet
