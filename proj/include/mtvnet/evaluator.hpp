#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "mtvnet/sr_model.hpp"
#include "mtvnet/volume.hpp"

namespace mtvnet {

/// Regular tile origins with stride tile - overlap; the last tile is clamped
/// to the volume edge. Requires n >= tile.
std::vector<std::int64_t> tile_origins(std::int64_t n, std::int64_t tile, std::int64_t overlap);

/// Per-axis layout of the prediction tiles, in LR voxels.
struct TilingPlan {
  std::int64_t tile = 0;
  std::int64_t overlap = 0;  // LR voxels; 4 * s in HR
  int scale = 1;
  std::array<std::vector<std::int64_t>, 3> origins;
  Index3 lr_dims{0, 0, 0};

  std::size_t tile_count() const { return origins[0].size() * origins[1].size() * origins[2].size(); }
};

TilingPlan make_tiling_plan(const Index3& lr_dims, std::int64_t tile, int scale, std::int64_t overlap = 4);

/// HR-resolution blend profile (length s * tile) for the tile at position
/// `index` along one axis: raised-cosine ramps across the bands shared with
/// neighbouring tiles, flat elsewhere.
torch::Tensor blend_profile(const std::vector<std::int64_t>& origins, std::size_t index, std::int64_t tile,
                            int scale);

/// Sum of all tile weights at every HR voxel, before normalization.
torch::Tensor blend_weight_field(const TilingPlan& plan);

struct ReconstructOptions {
  std::int64_t overlap = 4;  // LR voxels
  int tile_batch = 4;
};

/// Tiled SR inference with normalized overlap blending.
Volume reconstruct(const Volume& lr, SrModel& model, const ReconstructOptions& opts = {});

struct VolumeMetrics {
  std::string name;
  double psnr = 0.0;
  double ssim = 0.0;
  double nrmse = 0.0;
  std::int64_t slices_used = 0;
  bool skipped = false;
};

struct MetricsReport {
  std::vector<VolumeMetrics> volumes;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  double mean_nrmse = 0.0;
  std::int64_t volumes_used = 0;

  std::string to_csv() const;
  std::string to_text() const;
};

inline constexpr double kMinForegroundFraction = 0.25;

/// Axial (last-axis) slice-wise metrics averaged over slices whose ground
/// truth foreground fraction is at least kMinForegroundFraction. A volume
/// with no qualifying slice is marked skipped.
VolumeMetrics slice_metrics(const torch::Tensor& pred, const torch::Tensor& ref, const std::string& name = {});

struct VolumePair {
  Volume hr;
  Volume lr;
};

MetricsReport evaluate(const std::vector<VolumePair>& pairs, SrModel& model, const ReconstructOptions& opts = {},
                       std::vector<Volume>* predictions = nullptr);

}  // namespace mtvnet
