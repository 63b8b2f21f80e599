#include "mtvnet/network.hpp"

#include <stdexcept>

#include "mtvnet/instrumentation.hpp"

namespace mtvnet {

namespace F = torch::nn::functional;

torch::Tensor pixel_shuffle_3d(const torch::Tensor& x, int r) {
  if (r < 1) throw std::invalid_argument("pixel_shuffle_3d: factor must be positive");
  if (x.dim() != 5) throw std::invalid_argument("pixel_shuffle_3d expects [N, C*r^3, H, W, D]");
  const std::int64_t r3 = static_cast<std::int64_t>(r) * r * r;
  if (x.size(1) % r3 != 0) {
    throw std::invalid_argument("pixel_shuffle_3d: " + std::to_string(x.size(1)) + " channels not divisible by " +
                                std::to_string(r3));
  }
  if (r == 1) return x;
  const auto n = x.size(0), c = x.size(1) / r3, h = x.size(2), w = x.size(3), d = x.size(4);
  return x.reshape({n, c, r, r, r, h, w, d})
      .permute({0, 1, 5, 2, 6, 3, 7, 4})
      .reshape({n, c, h * r, w * r, d * r});
}

torch::Tensor pixel_unshuffle_3d(const torch::Tensor& x, int r) {
  if (r < 1) throw std::invalid_argument("pixel_unshuffle_3d: factor must be positive");
  if (x.dim() != 5) throw std::invalid_argument("pixel_unshuffle_3d expects [N, C, rH, rW, rD]");
  for (int a = 2; a < 5; ++a) {
    if (x.size(a) % r != 0) throw std::invalid_argument("pixel_unshuffle_3d: spatial edge not divisible by factor");
  }
  if (r == 1) return x;
  const auto n = x.size(0), c = x.size(1), h = x.size(2) / r, w = x.size(3) / r, d = x.size(4) / r;
  return x.reshape({n, c, h, r, w, r, d, r})
      .permute({0, 1, 3, 5, 7, 2, 4, 6})
      .reshape({n, c * r * r * r, h, w, d});
}

void icnr_init_(torch::nn::Conv3d& conv, int r) {
  auto& weight = conv->weight;
  const std::int64_t r3 = static_cast<std::int64_t>(r) * r * r;
  if (weight.size(0) % r3 != 0) throw std::invalid_argument("icnr_init: output channels not divisible by r^3");
  torch::NoGradGuard guard;
  std::vector<std::int64_t> base_shape(weight.sizes().begin(), weight.sizes().end());
  base_shape[0] /= r3;
  auto base = torch::empty(base_shape, weight.options());
  torch::nn::init::kaiming_normal_(base);
  weight.copy_(base.repeat_interleave(r3, 0));
  if (conv->bias.defined()) {
    auto b = conv->bias.view({-1, r3}).select(1, 0).clone();
    conv->bias.copy_(b.repeat_interleave(r3, 0));
  }
}

double max_block_variance(const torch::Tensor& y, int r) {
  auto blocks = pixel_unshuffle_3d(y.to(torch::kFloat64), r);
  const auto n = blocks.size(0), c = y.size(1);
  auto grouped = blocks.view({n, c, static_cast<std::int64_t>(r) * r * r, -1});
  return grouped.var(2, /*unbiased=*/false).max().item<double>();
}

LevelStageImpl::LevelStageImpl(const ModelConfig& cfg, const LevelSpec& level_, bool has_prev_, std::string tag_)
    : level(level_), has_prev(has_prev_), fusion(cfg.sfe_fusion), tag(std::move(tag_)) {
  sfe = register_module("sfe", ShallowFeatureExtractor(cfg.in_channels, cfg.emb_channels));
  if (has_prev && fusion == SfeFusion::kConcat) {
    fuse = register_module("fuse", torch::nn::Conv3d(torch::nn::Conv3dOptions(2 * cfg.emb_channels, cfg.emb_channels, 1)));
  }
  embed = register_module("embed", PatchEmbed(cfg.emb_channels, level.patch_size));
  if (cfg.features.use_cat) {
    cat_init = register_module("cat_init", CarrierInit(cfg.emb_channels, cfg.window, cfg.cat_edge, level.token_edge()));
  }
  group = register_module("group", DchatGroup(cfg, level, has_prev, tag));
}

LevelStageImpl::Output LevelStageImpl::forward(const torch::Tensor& context, const torch::Tensor& prev_features,
                                               const SvhatState* prev_tokens) {
  if (context.dim() != 5 || context.size(2) != level.context_extent || context.size(3) != level.context_extent ||
      context.size(4) != level.context_extent) {
    throw std::invalid_argument("mtvnet forward: context of extent " + std::to_string(context.size(-1)) +
                                " does not match configured extent " + std::to_string(level.context_extent));
  }
  const bool record = recording_activations() && !tag.empty();
  Output out;
  out.features = sfe(context);
  if (record) record_activation(tag + ".sfe", out.features);
  if (has_prev) {
    auto cropped = crop_and_pass(prev_features, level.context_extent);
    if (fusion == SfeFusion::kAdd) {
      out.features = out.features + cropped;
    } else {
      out.features = fuse(torch::cat({out.features, cropped}, 1));
    }
    if (record) record_activation(tag + ".fused", out.features);
  }
  SvhatState tokens;
  tokens.ites = embed(out.features);
  if (record) record_activation(tag + ".embed", tokens.ites);
  if (!cat_init.is_empty()) {
    tokens.cats = cat_init(tokens.ites);
    if (record) record_activation(tag + ".cat_init", tokens.cats);
  }
  out.tokens = group(tokens, prev_tokens);
  return out;
}

ReconstructionHeadImpl::ReconstructionHeadImpl(const ModelConfig& cfg, std::string tag_)
    : stages(cfg.upsample_stages()), slope(cfg.leaky_slope), tag(std::move(tag_)) {
  const int c = cfg.emb_channels;
  const int half = c / 2;
  const int p = cfg.finest().patch_size;
  deconv = register_module("deconv", torch::nn::ConvTranspose3d(torch::nn::ConvTranspose3dOptions(c, c, p).stride(p)));
  pre1 = register_module("pre1", torch::nn::Conv3d(torch::nn::Conv3dOptions(c, c, 3).padding(1)));
  pre2 = register_module("pre2", torch::nn::Conv3d(torch::nn::Conv3dOptions(c, c, 3).padding(1)));
  halve = register_module("halve", torch::nn::Conv3d(torch::nn::Conv3dOptions(c, half, 1)));
  preconvs = register_module("preconvs", torch::nn::ModuleList());
  for (int r : stages) {
    torch::nn::Conv3d conv(torch::nn::Conv3dOptions(half, half * r * r * r, 3).padding(1));
    icnr_init_(conv, r);
    preconvs->push_back(conv);
  }
  out = register_module("out", torch::nn::Conv3d(torch::nn::Conv3dOptions(half, cfg.in_channels, 1)));
}

torch::Tensor ReconstructionHeadImpl::forward(const torch::Tensor& tokens, const torch::Tensor& skip) {
  const bool record = recording_activations() && !tag.empty();
  auto x = deconv(tokens.permute({0, 4, 1, 2, 3}));
  if (record) record_activation(tag + ".deconv", x);
  if (x.sizes() != skip.sizes()) throw std::invalid_argument("reconstruction: token upsampling does not match the SFE");
  auto lrelu = F::LeakyReLUFuncOptions().negative_slope(slope);
  x = pre1(x);
  if (record) record_activation(tag + ".pre1", x);
  x = F::leaky_relu(x, lrelu);
  if (record) record_activation(tag + ".pre_act", x);
  x = pre2(x);
  if (record) record_activation(tag + ".pre2", x);
  x = x + skip;
  if (record) record_activation(tag + ".skip", x);
  return upsample(x);
}

torch::Tensor ReconstructionHeadImpl::upsample(const torch::Tensor& features) {
  const bool record = recording_activations() && !tag.empty();
  auto lrelu = F::LeakyReLUFuncOptions().negative_slope(slope);
  auto x = halve(features);
  if (record) record_activation(tag + ".halve", x);
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string st = tag + ".stage" + std::to_string(i);
    x = preconvs[i]->as<torch::nn::Conv3dImpl>()->forward(x);
    if (record) record_activation(st + ".preconv", x);
    x = F::leaky_relu(pixel_shuffle_3d(x, stages[i]), lrelu);
    if (record) record_activation(st + ".shuffle", x);
  }
  x = out(x);
  if (record) record_activation(tag + ".out", x);
  return x;
}

MtvnetImpl::MtvnetImpl(const ModelConfig& cfg) : cfg_(cfg) {
  validate(cfg_);
  const int total = static_cast<int>(cfg_.levels.size());
  const int active = cfg_.active_levels();
  for (int k = total - active; k < total; ++k) {
    const std::string name = "level" + std::to_string(total - k);
    stages.push_back(register_module(name, LevelStage(cfg_, cfg_.levels[k], k > total - active, name)));
  }
  head = register_module("head", ReconstructionHead(cfg_, "head"));
}

torch::Tensor MtvnetImpl::forward(const std::vector<torch::Tensor>& contexts) {
  const auto total = cfg_.levels.size();
  const auto active = stages.size();
  if (contexts.size() != total && contexts.size() != active) {
    throw std::invalid_argument("mtvnet forward: expected " + std::to_string(total) + " level contexts, got " +
                                std::to_string(contexts.size()));
  }
  const std::size_t first = contexts.size() - active;
  torch::Tensor features;
  SvhatState tokens;
  for (std::size_t k = 0; k < active; ++k) {
    auto out = stages[k]->forward(contexts[first + k], features, k == 0 ? nullptr : &tokens);
    features = out.features;
    tokens = out.tokens;
  }
  return head(tokens.ites, features);
}

std::int64_t count_parameters(torch::nn::Module& module) {
  std::int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

}  // namespace mtvnet
