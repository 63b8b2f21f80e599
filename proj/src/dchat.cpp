#include "mtvnet/dchat.hpp"

#include <stdexcept>
#include <vector>

#include "mtvnet/instrumentation.hpp"

namespace mtvnet {

namespace F = torch::nn::functional;

DchatBlockImpl::DchatBlockImpl(const ModelConfig& cfg, std::int64_t token_edge, int layers_, bool has_cross,
                               std::string tag_)
    : num_layers(layers_),
      use_cat(cfg.features.use_cat),
      use_shift(cfg.features.use_cyclic_shift),
      slope(cfg.leaky_slope),
      emb_channels(cfg.emb_channels),
      skip_channels(cfg.skip_channels),
      tag(std::move(tag_)) {
  if (num_layers < 1) throw std::invalid_argument("dchat_block: at least one layer required");
  layers = register_module("layers", torch::nn::ModuleList());
  ite_skips = register_module("ite_skips", torch::nn::ModuleList());
  if (use_cat) cat_skips = register_module("cat_skips", torch::nn::ModuleList());
  for (int t = 0; t < num_layers; ++t) {
    const std::string layer_tag = tag.empty() ? std::string{} : tag + ".l" + std::to_string(t);
    layers->push_back(SvhatLayer(cfg, token_edge, has_cross && t == 0, layer_tag));
    ite_skips->push_back(torch::nn::Linear(emb_channels, skip_channels));
    if (use_cat) cat_skips->push_back(torch::nn::Linear(emb_channels, skip_channels));
  }
  ite_gate = register_module("ite_gate", torch::nn::Linear(dense_channels(), emb_channels));
  if (use_cat) cat_gate = register_module("cat_gate", torch::nn::Linear(dense_channels(), emb_channels));
}

std::int64_t DchatBlockImpl::dense_channels() const { return emb_channels + num_layers * skip_channels; }

SvhatState DchatBlockImpl::delta(const SvhatState& input, const SvhatState* prev) {
  const bool record = recording_activations() && !tag.empty();
  std::vector<torch::Tensor> ite_dense{input.ites};
  std::vector<torch::Tensor> cat_dense;
  if (use_cat) cat_dense.push_back(input.cats);

  SvhatState state = input;
  for (int t = 0; t < num_layers; ++t) {
    const bool shifted = use_shift && (t % 2 == 1);
    state = layers[t]->as<SvhatLayerImpl>()->forward(state, t == 0 ? prev : nullptr, shifted);
    if (record) {
      const std::string lt = tag + ".l" + std::to_string(t);
      record_activation(lt + ".out.ites", state.ites);
      if (use_cat) record_activation(lt + ".out.cats", state.cats);
    }
    ite_dense.push_back(F::leaky_relu(ite_skips[t]->as<torch::nn::LinearImpl>()->forward(state.ites),
                                      F::LeakyReLUFuncOptions().negative_slope(slope)));
    if (use_cat) {
      cat_dense.push_back(F::leaky_relu(cat_skips[t]->as<torch::nn::LinearImpl>()->forward(state.cats),
                                        F::LeakyReLUFuncOptions().negative_slope(slope)));
    }
  }

  SvhatState out;
  auto dense_ites = torch::cat(ite_dense, -1);
  if (record) record_activation(tag + ".dense.ites", dense_ites);
  out.ites = ite_gate(dense_ites);
  if (use_cat) {
    auto dense_cats = torch::cat(cat_dense, -1);
    if (record) record_activation(tag + ".dense.cats", dense_cats);
    out.cats = cat_gate(dense_cats);
  }
  return out;
}

SvhatState DchatBlockImpl::forward(const SvhatState& input, const SvhatState* prev) {
  auto d = delta(input, prev);
  SvhatState out{input.ites + d.ites, {}};
  if (use_cat) out.cats = input.cats + d.cats;
  return out;
}

DchatGroupImpl::DchatGroupImpl(const ModelConfig& cfg, const LevelSpec& level, bool has_cross, std::string tag) {
  if (level.num_blocks < 1 || level.num_blocks > 3) throw std::invalid_argument("dchat_group: 1 to 3 blocks");
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (int b = 0; b < level.num_blocks; ++b) {
    const std::string block_tag = tag.empty() ? std::string{} : tag + ".b" + std::to_string(b);
    blocks->push_back(DchatBlock(cfg, level.token_edge(), level.layers_per_block, has_cross, block_tag));
  }
}

SvhatState DchatGroupImpl::forward(const SvhatState& input, const SvhatState* prev) {
  SvhatState x = input;
  for (const auto& b : *blocks) x = b->as<DchatBlockImpl>()->forward(x, prev);
  return x;
}

}  // namespace mtvnet
