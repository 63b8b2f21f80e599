#include "mtvnet/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace mtvnet {

namespace {

constexpr double kK1 = 0.01;
constexpr double kK2 = 0.03;

void check_pair(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.dim() != 2 || a.sizes() != b.sizes()) {
    throw std::invalid_argument(std::string(what) + ": expects two 2D slices of equal shape");
  }
}

// Sums over every w x w window (valid positions) using a zero-padded integral image.
torch::Tensor window_sums(const torch::Tensor& x, int w) {
  auto integral = torch::zeros({x.size(0) + 1, x.size(1) + 1}, x.options());
  integral.narrow(0, 1, x.size(0)).narrow(1, 1, x.size(1)).copy_(x.cumsum(0).cumsum(1));
  const auto h = x.size(0) - w + 1;
  const auto v = x.size(1) - w + 1;
  auto a = integral.narrow(0, w, h).narrow(1, w, v);
  auto b = integral.narrow(0, 0, h).narrow(1, w, v);
  auto c = integral.narrow(0, w, h).narrow(1, 0, v);
  auto d = integral.narrow(0, 0, h).narrow(1, 0, v);
  return a - b - c + d;
}

}  // namespace

double psnr(const torch::Tensor& pred, const torch::Tensor& ref) {
  check_pair(pred, ref, "psnr");
  const double mse = (pred.to(torch::kFloat64) - ref.to(torch::kFloat64)).square().mean().item<double>();
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const torch::Tensor& pred, const torch::Tensor& ref) {
  check_pair(pred, ref, "ssim");
  if (pred.size(0) < kSsimWindow || pred.size(1) < kSsimWindow) {
    throw std::invalid_argument("ssim: slices must be at least 7x7");
  }
  auto x = pred.to(torch::kFloat64).contiguous();
  auto y = ref.to(torch::kFloat64).contiguous();
  const double np = kSsimWindow * kSsimWindow;
  const double cov_norm = np / (np - 1.0);
  auto ux = window_sums(x, kSsimWindow) / np;
  auto uy = window_sums(y, kSsimWindow) / np;
  auto uxx = window_sums(x * x, kSsimWindow) / np;
  auto uyy = window_sums(y * y, kSsimWindow) / np;
  auto uxy = window_sums(x * y, kSsimWindow) / np;
  auto vx = cov_norm * (uxx - ux * ux);
  auto vy = cov_norm * (uyy - uy * uy);
  auto vxy = cov_norm * (uxy - ux * uy);
  const double c1 = kK1 * kK1;
  const double c2 = kK2 * kK2;
  auto s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
  return s.mean().item<double>();
}

double nrmse(const torch::Tensor& pred, const torch::Tensor& ref) {
  check_pair(pred, ref, "nrmse");
  auto r = ref.to(torch::kFloat64);
  const double err = (pred.to(torch::kFloat64) - r).square().mean().sqrt().item<double>();
  const double denom = r.square().mean().sqrt().item<double>();
  if (denom == 0.0) return err == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return err / denom;
}

}  // namespace mtvnet
