#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "mtvnet/config.hpp"
#include "mtvnet/dchat.hpp"
#include "mtvnet/svhat.hpp"
#include "mtvnet/tokenizer.hpp"

namespace mtvnet {

/// Channel-to-space rearrangement for [N, C*r^3, H, W, D]:
///   out(c, r*h + a, r*w + b, r*d + e) = in(c*r^3 + a*r^2 + b*r + e, h, w, d)
torch::Tensor pixel_shuffle_3d(const torch::Tensor& x, int r);
/// Exact inverse of pixel_shuffle_3d.
torch::Tensor pixel_unshuffle_3d(const torch::Tensor& x, int r);

/// ICNR: draws C_out / r^3 base filters (Kaiming normal) and replicates each
/// across its r^3 contiguous shuffle group. The bias is replicated the same way.
void icnr_init_(torch::nn::Conv3d& conv, int r);

/// Largest within-block variance over all r^3 output blocks of [N, C, H, W, D].
double max_block_variance(const torch::Tensor& y, int r);

/// SFE, optional fusion with the previous level, patch embedding, CAT
/// initialisation and the DCHAT group of one level.
class LevelStageImpl : public torch::nn::Module {
 public:
  LevelStageImpl(const ModelConfig& cfg, const LevelSpec& level, bool has_prev, std::string tag = {});

  struct Output {
    torch::Tensor features;  // fused SFE [N, C_emb, e, e, e]
    SvhatState tokens;
  };
  Output forward(const torch::Tensor& context, const torch::Tensor& prev_features, const SvhatState* prev_tokens);

  LevelSpec level;
  bool has_prev;
  SfeFusion fusion;
  std::string tag;
  ShallowFeatureExtractor sfe{nullptr};
  torch::nn::Conv3d fuse{nullptr};  // concat fusion only
  PatchEmbed embed{nullptr};
  CarrierInit cat_init{nullptr};
  DchatGroup group{nullptr};
};
TORCH_MODULE(LevelStage);

/// Token deconvolution, pre-reconstruction convolutions, long skip, channel
/// halving and pixel-shuffle upsampling to C_in channels.
class ReconstructionHeadImpl : public torch::nn::Module {
 public:
  explicit ReconstructionHeadImpl(const ModelConfig& cfg, std::string tag = {});
  /// tokens [N, G, G, G, C_emb] and long-skip features [N, C_emb, e, e, e].
  torch::Tensor forward(const torch::Tensor& tokens, const torch::Tensor& skip);
  /// Everything after the long skip: [N, C_emb, e, e, e] -> [N, C_in, s*e, ...].
  torch::Tensor upsample(const torch::Tensor& features);

  std::vector<int> stages;
  double slope;
  std::string tag;
  torch::nn::ConvTranspose3d deconv{nullptr};
  torch::nn::Conv3d pre1{nullptr}, pre2{nullptr}, halve{nullptr}, out{nullptr};
  torch::nn::ModuleList preconvs{nullptr};
};
TORCH_MODULE(ReconstructionHead);

/// The full multi-level network. Levels are registered as "level1" (finest)
/// up to "level3" (coarsest); only the finest exists when use_multicontext
/// is off.
class MtvnetImpl : public torch::nn::Module {
 public:
  explicit MtvnetImpl(const ModelConfig& cfg);

  /// `contexts` are [N, C_in, e_k, e_k, e_k], coarsest first. Either every
  /// configured level or only the active ones may be given; surplus coarse
  /// levels are ignored when multi-context is off.
  torch::Tensor forward(const std::vector<torch::Tensor>& contexts);

  const ModelConfig& config() const { return cfg_; }

  std::vector<LevelStage> stages;  // coarsest active level first
  ReconstructionHead head{nullptr};

 private:
  ModelConfig cfg_;
};
TORCH_MODULE(Mtvnet);

std::int64_t count_parameters(torch::nn::Module& module);

}  // namespace mtvnet
