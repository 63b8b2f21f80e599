#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "mtvnet/config.hpp"

namespace mtvnet {

using Index3 = std::array<std::int64_t, 3>;

/// A C x H x W x D float32 intensity grid. Axis order is (H, W, D) with D
/// the fastest-varying; D is the axial direction for slice-wise metrics.
struct Volume {
  torch::Tensor data;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::string name;

  std::int64_t channels() const { return data.size(0); }
  Index3 dims() const { return {data.size(1), data.size(2), data.size(3)}; }
};

/// Single-file store: text header then raw little-endian float32 payload.
///
///   MTVVOL1
///   dims <H> <W> <D>
///   channels <C>
///   spacing <sx> <sy> <sz>
///   name <name>
///   dtype float32le
///   end
///   <C*H*W*D float32, D fastest>
void write_volume(const Volume& v, const std::filesystem::path& path);
Volume read_volume(const std::filesystem::path& path);

/// Per-volume min-max rescale to [0, 1]. A constant volume maps to zeros.
Volume normalize_min_max(const Volume& v);

/// Separable isotropic Gaussian over the three spatial axes of a
/// [..., H, W, D] tensor; kernel truncated at `truncate * sigma`, edges
/// replicated so constants are preserved.
torch::Tensor gaussian_blur3d(const torch::Tensor& x, double sigma, double truncate = 4.0);

/// Trilinear resampling with cell-centred alignment (align_corners = false).
/// Accepts [C, H, W, D] or [N, C, H, W, D].
torch::Tensor upsample_trilinear(const torch::Tensor& x, int scale);
torch::Tensor downsample_trilinear(const torch::Tensor& x, int scale);

/// HR -> LR: optional Gaussian blur (sigma = s/2) then trilinear sampling at
/// LR cell centres. Each HR edge must be divisible by `scale`.
Volume degrade(const Volume& hr, int scale, bool blur, double sigma = -1.0);

/// True where the max-over-channels intensity exceeds eps. Shape [H, W, D].
torch::Tensor foreground_mask(const Volume& v, double eps = 1e-6);
torch::Tensor foreground_mask(const torch::Tensor& data, double eps = 1e-6);

enum class PadMode { kNone, kReflect, kReplicate };

/// Cube crop [C, e, e, e] starting at `origin`. Out-of-range voxels are
/// filled according to `pad` (kNone throws). Differentiable w.r.t. `data`.
torch::Tensor extract_crop(const torch::Tensor& data, const Index3& origin, std::int64_t extent,
                           PadMode pad = PadMode::kNone);

/// Concentric LR crops (coarsest first) and the HR target of the innermost one.
struct NestedPatch {
  std::vector<torch::Tensor> lr_contexts;  // each [C, e_k, e_k, e_k]
  torch::Tensor hr_target;                 // [C, s*e_last, ...], undefined if no HR given
  Index3 center{0, 0, 0};                  // LR voxel coordinate
};

/// Crops every level around `center`: crop k spans [center - e_k/2, center + e_k/2).
NestedPatch extract_nested(const Volume& lr, const Volume* hr, const std::vector<int>& extents, int scale,
                           const Index3& center, PadMode pad);

std::vector<int> context_extents(const ModelConfig& cfg);

/// Samples centres uniformly over valid positions. Without padding the
/// outermost context must fit; with reflection padding only the innermost.
class NestedSampler {
 public:
  NestedSampler(std::vector<int> extents, int scale, bool padding);

  NestedPatch sample(const Volume& lr, const Volume& hr, std::mt19937_64& rng) const;
  /// Half-open per-axis range [lo, hi) of admissible centres.
  std::pair<Index3, Index3> center_range(const Index3& lr_dims) const;

 private:
  std::vector<int> extents_;
  int scale_;
  bool padding_;
};

NestedPatch sample_nested(const Volume& lr, const Volume& hr, const ModelConfig& cfg, bool padding,
                          std::mt19937_64& rng);

}  // namespace mtvnet
