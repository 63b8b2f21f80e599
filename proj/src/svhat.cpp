#include "mtvnet/svhat.hpp"

#include <cmath>
#include <stdexcept>

#include "mtvnet/instrumentation.hpp"
#include "mtvnet/tokenizer.hpp"

namespace mtvnet {

namespace {

int hidden_dim(const ModelConfig& cfg) {
  return static_cast<int>(std::lround(cfg.emb_channels * cfg.mlp_ratio));
}

torch::nn::LayerNorm make_norm(const ModelConfig& cfg) {
  return torch::nn::LayerNorm(
      torch::nn::LayerNormOptions({static_cast<std::int64_t>(cfg.emb_channels)}).eps(cfg.layer_norm_eps));
}

std::string join(const std::string& tag, const char* suffix) { return tag.empty() ? std::string{} : tag + suffix; }

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.defined() != b.defined() || (a.defined() && a.sizes() != b.sizes())) {
    throw std::invalid_argument(std::string("fuse_cross: ") + what + " shapes differ");
  }
}

}  // namespace

SvhatState fuse_cross(const SvhatState& bar, const SvhatState& cross) {
  require_same_shape(bar.ites, cross.ites, "ITE");
  require_same_shape(bar.cats, cross.cats, "CAT");
  SvhatState out{bar.ites + cross.ites, {}};
  if (bar.cats.defined()) out.cats = bar.cats + cross.cats;
  return out;
}

CatAttentionImpl::CatAttentionImpl(const ModelConfig& cfg, std::string tag_)
    : max_tokens(cfg.max_full_attention_cats), tag(std::move(tag_)) {
  norm1 = register_module("norm1", make_norm(cfg));
  norm2 = register_module("norm2", make_norm(cfg));
  attn = register_module("attn", MultiHeadAttention(cfg.emb_channels, cfg.heads, cfg.attention_score));
  attn->record_key = join(tag, ".cat_attn.weights");
  mlp = register_module("mlp", Mlp(cfg.emb_channels, hidden_dim(cfg), cfg.emb_channels));
  gamma1 = register_parameter("gamma1", torch::full({cfg.emb_channels}, cfg.gamma_init));
  gamma2 = register_parameter("gamma2", torch::full({cfg.emb_channels}, cfg.gamma_init));
}

torch::Tensor CatAttentionImpl::forward(const torch::Tensor& cats) {
  const auto n = cats.size(0);
  const auto g = cats.size(1);
  const auto count = g * cats.size(2) * cats.size(3);
  if (count > max_tokens) {
    throw std::invalid_argument("cat_attention: " + std::to_string(count) + " CATs exceed the full-attention cap " +
                                std::to_string(max_tokens));
  }
  auto x = cats.reshape({n, count, cats.size(4)});
  auto y = norm1(x);
  x = x + gamma1 * attn(y, y);
  x = x + gamma2 * mlp(norm2(x));
  auto out = x.view(cats.sizes());
  if (recording_activations() && !tag.empty()) record_activation(tag + ".cat_attn.out", out);
  return out;
}

JointWindowAttentionImpl::JointWindowAttentionImpl(const ModelConfig& cfg, std::int64_t token_edge_, std::string tag_)
    : window(cfg.window),
      cat_edge(cfg.features.use_cat ? cfg.cat_edge : 0),
      token_edge(token_edge_),
      tag(std::move(tag_)) {
  if (token_edge % window != 0) {
    throw std::invalid_argument("joint_window_attention: token edge not divisible by the window edge");
  }
  attn = register_module("attn", MultiHeadAttention(cfg.emb_channels, cfg.heads, cfg.attention_score));
  attn->record_key = join(tag, ".window_attn.weights");
  rel_bias = register_module("rel_bias", RelativePositionBias(window, cfg.heads));
  norm_attn = register_module("norm_attn", make_norm(cfg));
  norm_mlp = register_module("norm_mlp", make_norm(cfg));
  mlp = register_module("mlp", Mlp(cfg.emb_channels, hidden_dim(cfg), cfg.emb_channels));
}

const torch::Tensor& JointWindowAttentionImpl::masks(bool shifted) {
  static const torch::Tensor kNone;
  if (!shifted) return kNone;
  if (!masks_shifted_.defined()) masks_shifted_ = build_shift_masks(token_edge, window, cat_edge, true);
  return masks_shifted_;
}

SvhatState JointWindowAttentionImpl::forward(const torch::Tensor& ites, const torch::Tensor& cats, bool shifted) {
  return forward_with_masks(ites, cats, masks(shifted), shifted);
}

SvhatState JointWindowAttentionImpl::forward_with_masks(const torch::Tensor& ites, const torch::Tensor& cats,
                                                        const torch::Tensor& mask_set, bool shifted) {
  const std::int64_t m = window;
  const std::int64_t c = cat_edge;
  if (ites.dim() != 5 || ites.size(1) != token_edge) {
    throw std::invalid_argument("joint_window_attention: ITE grid does not match the configured geometry");
  }
  if (c > 0) {
    const auto g = token_edge / m * c;
    if (!cats.defined() || cats.dim() != 5 || cats.size(1) != g) {
      throw std::invalid_argument("joint_window_attention: CAT grid does not match the configured geometry");
    }
  } else if (cats.defined()) {
    throw std::invalid_argument("joint_window_attention: CATs given but disabled");
  }
  const auto batch = ites.size(0);
  const auto nw_edge = token_edge / m;
  const auto n_windows = nw_edge * nw_edge * nw_edge;
  const auto t_ite = m * m * m;
  const auto t = t_ite + c * c * c;
  if (mask_set.defined() &&
      (mask_set.dim() != 3 || mask_set.size(0) != n_windows || mask_set.size(1) != t || mask_set.size(2) != t)) {
    throw std::invalid_argument("joint_window_attention: mask set does not match the window geometry");
  }

  torch::Tensor xi = ites;
  torch::Tensor xc = cats;
  if (shifted) {
    auto s = cyclic_shift_pair(xi, xc, window, cat_edge);
    xi = s.ites;
    xc = s.cats;
  }
  auto x = window_partition(xi, m);
  if (c > 0) x = torch::cat({x, window_partition(xc, c)}, 1);

  torch::Tensor mask;
  if (mask_set.defined()) mask = mask_set.repeat({batch, 1, 1}).unsqueeze(1);
  auto bias = rel_bias->padded(t - t_ite).to(x.dtype());

  x = x + norm_attn(attn(x, x, bias, mask));
  x = x + norm_mlp(mlp(x));

  SvhatState out;
  out.ites = window_reverse(x.narrow(1, 0, t_ite), m, batch, token_edge);
  if (c > 0) out.cats = window_reverse(x.narrow(1, t_ite, t - t_ite), c, batch, nw_edge * c);
  if (shifted) {
    auto u = cyclic_unshift_pair(out.ites, out.cats, window, cat_edge);
    out.ites = u.ites;
    out.cats = u.cats;
  }
  return out;
}

CrossCatAttentionImpl::CrossCatAttentionImpl(const ModelConfig& cfg) {
  prev_proj = register_module("prev_proj", Mlp(cfg.emb_channels, cfg.emb_channels, cfg.emb_channels));
  attn = register_module("attn", MultiHeadAttention(cfg.emb_channels, cfg.heads, cfg.attention_score));
  norm = register_module("norm", make_norm(cfg));
}

torch::Tensor CrossCatAttentionImpl::forward(const torch::Tensor& cur, const torch::Tensor& prev) {
  if (!cur.defined() || !prev.defined() || cur.dim() != 5 || prev.dim() != 5 || cur.size(0) != prev.size(0) ||
      cur.size(4) != prev.size(4)) {
    throw std::invalid_argument("cross_attend_cats: current and previous CAT grids are incompatible");
  }
  const auto n = cur.size(0), ch = cur.size(4);
  auto q = cur.reshape({n, -1, ch});
  auto kv = prev_proj(prev.reshape({n, -1, ch}));
  return norm(attn(q, kv)).view(cur.sizes());
}

CrossIteAttentionImpl::CrossIteAttentionImpl(const ModelConfig& cfg) : window(cfg.window) {
  prev_proj = register_module("prev_proj", Mlp(cfg.emb_channels, cfg.emb_channels, cfg.emb_channels));
  attn = register_module("attn", MultiHeadAttention(cfg.emb_channels, cfg.heads, cfg.attention_score));
  norm = register_module("norm", make_norm(cfg));
}

torch::Tensor CrossIteAttentionImpl::forward(const torch::Tensor& cur, const torch::Tensor& prev) {
  if (!cur.defined() || !prev.defined() || cur.sizes() != prev.sizes()) {
    throw std::invalid_argument("cross_attend_ites: no window correspondence between grids of different shape");
  }
  auto q = window_partition(cur, window);
  auto kv = window_partition(prev_proj(prev), window);
  auto out = norm(attn(q, kv));
  return window_reverse(out, window, cur.size(0), cur.size(1));
}

SvhatLayerImpl::SvhatLayerImpl(const ModelConfig& cfg, std::int64_t token_edge, bool has_cross_, std::string tag)
    : has_cross(has_cross_), use_cat(cfg.features.use_cat) {
  if (has_cross) {
    if (use_cat) cross_cats = register_module("cross_cats", CrossCatAttention(cfg));
    cross_ites = register_module("cross_ites", CrossIteAttention(cfg));
  }
  if (use_cat) cat_attn = register_module("cat_attn", CatAttention(cfg, tag));
  joint = register_module("joint", JointWindowAttention(cfg, token_edge, tag));
}

SvhatState SvhatLayerImpl::forward(const SvhatState& state, const SvhatState* prev, bool shifted) {
  if (has_cross && prev == nullptr) throw std::invalid_argument("svhat_forward: cross inputs required");
  if (!has_cross && prev != nullptr) throw std::invalid_argument("svhat_forward: unexpected cross inputs");
  if (use_cat != state.cats.defined()) {
    throw std::invalid_argument("svhat_forward: CAT stream presence does not match the configuration");
  }
  SvhatState x = state;
  if (has_cross) {
    SvhatState cross{cross_ites(x.ites, prev->ites), {}};
    if (use_cat) cross.cats = cross_cats(x.cats, prev->cats);
    x = fuse_cross(x, cross);
  }
  if (use_cat) x.cats = cat_attn(x.cats);
  return joint(x.ites, x.cats, shifted);
}

}  // namespace mtvnet
