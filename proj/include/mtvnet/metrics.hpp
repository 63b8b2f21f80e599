#pragma once

#include <torch/torch.h>

namespace mtvnet {

/// PSNR is capped here when the slices are identical.
inline constexpr double kPsnrCap = 100.0;

// All metrics take 2D slices of equal shape with data range 1.0 and compute
// in double precision.

/// 10 log10(1 / MSE), or kPsnrCap when MSE is zero.
double psnr(const torch::Tensor& pred, const torch::Tensor& ref);

/// Mean SSIM over all valid 7x7 windows: uniform window, K1 = 0.01,
/// K2 = 0.03, unbiased (sample) variances. Both edges must be at least 7.
double ssim(const torch::Tensor& pred, const torch::Tensor& ref);

/// RMSE divided by the RMS of the reference. Zero reference gives 0 when
/// the prediction is also zero, infinity otherwise.
double nrmse(const torch::Tensor& pred, const torch::Tensor& ref);

inline constexpr int kSsimWindow = 7;

}  // namespace mtvnet
