#pragma once

#include <cstdint>
#include <string>

#include <torch/torch.h>

#include "mtvnet/config.hpp"

namespace mtvnet {

// Layout conventions
//   feature volumes  [N, C, H, W, D]   (channel-first, D fastest)
//   token grids      [N, G, G, G, C]   (channels-last)
//   windows          [N * nW, m^3, C]  windows lexicographic over (wh, ww, wd),
//                                      tokens lexicographic within a window

/// Splits a channels-last grid into non-overlapping m^3 windows.
torch::Tensor window_partition(const torch::Tensor& grid, std::int64_t m);
/// Inverse of window_partition for a batch of `batch` grids of edge `grid_edge`.
torch::Tensor window_reverse(const torch::Tensor& windows, std::int64_t m, std::int64_t batch,
                             std::int64_t grid_edge);

/// Rolls a channels-last grid so that source position (s, s, s) lands at the origin.
torch::Tensor cyclic_shift(const torch::Tensor& grid, std::int64_t shift);
torch::Tensor cyclic_unshift(const torch::Tensor& grid, std::int64_t shift);

struct ShiftedPair {
  torch::Tensor ites;
  torch::Tensor cats;  // undefined when CATs are disabled
};

/// Co-shifts ITEs by floor(M/2) and CATs by floor(c/2).
ShiftedPair cyclic_shift_pair(const torch::Tensor& ites, const torch::Tensor& cats, int window, int cat_edge);
ShiftedPair cyclic_unshift_pair(const torch::Tensor& ites, const torch::Tensor& cats, int window, int cat_edge);

/// Per-window pair admissibility over the joint [ITE..., CAT...] sequence.
/// Returns bool [nW, M^3 + c^3, M^3 + c^3] (c = 0 drops the CAT part).
/// Unshifted masks are all-true. A token's region is the triple of axis
/// segments cut at M - floor(M/2) (ITEs) or c - floor(c/2) (CATs) inside
/// the last window along each axis; a pair is admissible iff regions match.
torch::Tensor build_shift_masks(std::int64_t grid_edge, int window, int cat_edge, bool shifted);

/// Text export: one row per line, '1' admissible, '0' masked.
std::string mask_to_text(const torch::Tensor& mask);

/// Relative-position index for an m^3 window: [m^3, m^3] into a (2m-1)^3 table.
torch::Tensor relative_position_index(std::int64_t m);

/// Central crop of a feature volume [N, C, E, E, E] down to `next_extent`.
torch::Tensor crop_and_pass(const torch::Tensor& features, std::int64_t next_extent);

/// 3x3x3 unit-stride convolution C_in -> C_emb.
class ShallowFeatureExtractorImpl : public torch::nn::Module {
 public:
  ShallowFeatureExtractorImpl(int in_channels, int emb_channels);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv3d conv{nullptr};
};
TORCH_MODULE(ShallowFeatureExtractor);

/// p x p x p strided convolution; returns a channels-last token grid.
class PatchEmbedImpl : public torch::nn::Module {
 public:
  PatchEmbedImpl(int emb_channels, int patch_size);
  torch::Tensor forward(const torch::Tensor& features);

  int patch_size;
  torch::nn::Conv3d proj{nullptr};
};
TORCH_MODULE(PatchEmbed);

/// CAT initialisation from ITEs: convolution with kernel = stride = floor(M/c),
/// plus a learned absolute position embedding over the CAT grid.
class CarrierInitImpl : public torch::nn::Module {
 public:
  CarrierInitImpl(int emb_channels, int window, int cat_edge, std::int64_t token_edge);
  torch::Tensor forward(const torch::Tensor& ites);

  int stride;
  torch::nn::Conv3d proj{nullptr};
  torch::Tensor pos_embed;  // [1, g, g, g, C]
};
TORCH_MODULE(CarrierInit);

}  // namespace mtvnet
