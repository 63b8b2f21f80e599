#include "mtvnet/evaluator.hpp"

#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "mtvnet/io_util.hpp"
#include "mtvnet/metrics.hpp"

namespace mtvnet {

torch::Tensor TrilinearUpsampler::predict(const std::vector<torch::Tensor>& contexts) {
  if (contexts.size() != 2) throw std::invalid_argument("trilinear baseline expects halo and prediction contexts");
  auto up = upsample_trilinear(contexts.front(), scale_);
  const std::int64_t off = scale_;
  const std::int64_t len = static_cast<std::int64_t>(scale_) * extent_;
  return up.narrow(2, off, len).narrow(3, off, len).narrow(4, off, len).contiguous();
}

torch::Tensor MtvnetSrModel::predict(const std::vector<torch::Tensor>& contexts) {
  torch::NoGradGuard guard;
  const auto dtype = net_->parameters().front().scalar_type();
  std::vector<torch::Tensor> in;
  in.reserve(contexts.size());
  for (const auto& c : contexts) in.push_back(c.to(dtype));
  return net_->forward(in).to(torch::kFloat32);
}

std::vector<std::int64_t> tile_origins(std::int64_t n, std::int64_t tile, std::int64_t overlap) {
  if (tile <= 0 || overlap < 0 || overlap >= tile) throw std::invalid_argument("tile_origins: invalid tile/overlap");
  if (n < tile) {
    throw std::invalid_argument("volume edge " + std::to_string(n) + " is smaller than the prediction tile " +
                                std::to_string(tile));
  }
  const std::int64_t stride = tile - overlap;
  std::vector<std::int64_t> o;
  for (std::int64_t p = 0;; p += stride) {
    if (p + tile >= n) {
      o.push_back(n - tile);
      break;
    }
    o.push_back(p);
  }
  return o;
}

TilingPlan make_tiling_plan(const Index3& lr_dims, std::int64_t tile, int scale, std::int64_t overlap) {
  TilingPlan plan;
  plan.tile = tile;
  plan.overlap = overlap;
  plan.scale = scale;
  plan.lr_dims = lr_dims;
  for (int a = 0; a < 3; ++a) plan.origins[a] = tile_origins(lr_dims[a], tile, overlap);
  return plan;
}

torch::Tensor blend_profile(const std::vector<std::int64_t>& origins, std::size_t index, std::int64_t tile,
                            int scale) {
  const std::int64_t len = tile * scale;
  auto w = torch::ones({len}, torch::kFloat64);
  auto acc = w.accessor<double, 1>();
  const std::int64_t o = origins[index];
  auto rise = [](std::int64_t k, std::int64_t band) {
    return 0.5 - 0.5 * std::cos(std::numbers::pi * (static_cast<double>(k) + 0.5) / static_cast<double>(band));
  };
  if (index > 0) {
    const std::int64_t band = (origins[index - 1] + tile - o) * scale;
    for (std::int64_t k = 0; k < std::min(band, len); ++k) acc[k] *= rise(k, band);
  }
  if (index + 1 < origins.size()) {
    const std::int64_t band = (o + tile - origins[index + 1]) * scale;
    const std::int64_t start = len - band;
    for (std::int64_t k = std::max<std::int64_t>(0, -start); k < band; ++k) acc[start + k] *= 1.0 - rise(k, band);
  }
  return w;
}

namespace {

torch::Tensor tile_weight(const TilingPlan& plan, std::size_t i, std::size_t j, std::size_t k) {
  auto wh = blend_profile(plan.origins[0], i, plan.tile, plan.scale);
  auto ww = blend_profile(plan.origins[1], j, plan.tile, plan.scale);
  auto wd = blend_profile(plan.origins[2], k, plan.tile, plan.scale);
  return wh.view({-1, 1, 1}) * ww.view({1, -1, 1}) * wd.view({1, 1, -1});
}

}  // namespace

torch::Tensor blend_weight_field(const TilingPlan& plan) {
  const std::int64_t s = plan.scale;
  const std::int64_t len = plan.tile * s;
  auto field = torch::zeros({plan.lr_dims[0] * s, plan.lr_dims[1] * s, plan.lr_dims[2] * s}, torch::kFloat64);
  for (std::size_t i = 0; i < plan.origins[0].size(); ++i)
    for (std::size_t j = 0; j < plan.origins[1].size(); ++j)
      for (std::size_t k = 0; k < plan.origins[2].size(); ++k) {
        field.narrow(0, plan.origins[0][i] * s, len)
            .narrow(1, plan.origins[1][j] * s, len)
            .narrow(2, plan.origins[2][k] * s, len)
            .add_(tile_weight(plan, i, j, k));
      }
  return field;
}

Volume reconstruct(const Volume& lr, SrModel& model, const ReconstructOptions& opts) {
  const auto extents = model.context_extents();
  const std::int64_t tile = extents.back();
  const int s = model.scale();
  const auto dims = lr.dims();
  const auto plan = make_tiling_plan(dims, tile, s, opts.overlap);
  const std::int64_t len = tile * s;
  const auto c = lr.channels();

  auto out = torch::zeros({c, dims[0] * s, dims[1] * s, dims[2] * s}, torch::kFloat64);
  auto weight = torch::zeros({dims[0] * s, dims[1] * s, dims[2] * s}, torch::kFloat64);

  struct Pending {
    std::size_t i, j, k;
  };
  std::vector<Pending> pending;
  std::vector<std::vector<torch::Tensor>> levels(extents.size());

  auto flush = [&]() {
    if (pending.empty()) return;
    std::vector<torch::Tensor> batch;
    for (auto& l : levels) batch.push_back(torch::stack(l));
    auto pred = model.predict(batch).to(torch::kFloat64);
    if (pred.dim() != 5 || pred.size(0) != static_cast<std::int64_t>(pending.size()) || pred.size(1) != c ||
        pred.size(2) != len || pred.size(3) != len || pred.size(4) != len) {
      throw std::runtime_error("reconstruct: model prediction has an unexpected shape");
    }
    for (std::size_t b = 0; b < pending.size(); ++b) {
      const auto& p = pending[b];
      auto w = tile_weight(plan, p.i, p.j, p.k);
      const auto oh = plan.origins[0][p.i] * s, ow = plan.origins[1][p.j] * s, od = plan.origins[2][p.k] * s;
      out.narrow(1, oh, len).narrow(2, ow, len).narrow(3, od, len).add_(pred[static_cast<std::int64_t>(b)] * w);
      weight.narrow(0, oh, len).narrow(1, ow, len).narrow(2, od, len).add_(w);
    }
    pending.clear();
    for (auto& l : levels) l.clear();
  };

  for (std::size_t i = 0; i < plan.origins[0].size(); ++i)
    for (std::size_t j = 0; j < plan.origins[1].size(); ++j)
      for (std::size_t k = 0; k < plan.origins[2].size(); ++k) {
        const Index3 center{plan.origins[0][i] + tile / 2, plan.origins[1][j] + tile / 2,
                            plan.origins[2][k] + tile / 2};
        auto patch = extract_nested(lr, nullptr, extents, s, center, model.pad_mode());
        for (std::size_t l = 0; l < extents.size(); ++l) levels[l].push_back(patch.lr_contexts[l]);
        pending.push_back({i, j, k});
        if (static_cast<int>(pending.size()) >= std::max(1, opts.tile_batch)) flush();
      }
  flush();

  Volume sr;
  sr.data = (out / weight).to(torch::kFloat32);
  sr.name = lr.name;
  for (int a = 0; a < 3; ++a) sr.spacing[a] = lr.spacing[a] / s;
  return sr;
}

VolumeMetrics slice_metrics(const torch::Tensor& pred, const torch::Tensor& ref, const std::string& name) {
  if (pred.sizes() != ref.sizes() || ref.dim() != 4) {
    throw std::invalid_argument("slice_metrics: prediction and reference must both be [C, H, W, D] of equal shape");
  }
  VolumeMetrics m;
  m.name = name;
  auto fg = foreground_mask(ref);
  const auto slice_voxels = static_cast<double>(ref.size(1) * ref.size(2));
  for (std::int64_t z = 0; z < ref.size(3); ++z) {
    const double frac = fg.select(2, z).sum().item<double>() / slice_voxels;
    if (frac < kMinForegroundFraction) continue;
    double p = 0, s = 0, n = 0;
    for (std::int64_t ch = 0; ch < ref.size(0); ++ch) {
      auto a = pred[ch].select(2, z);
      auto b = ref[ch].select(2, z);
      p += psnr(a, b);
      s += ssim(a, b);
      n += nrmse(a, b);
    }
    const double channels = static_cast<double>(ref.size(0));
    m.psnr += p / channels;
    m.ssim += s / channels;
    m.nrmse += n / channels;
    ++m.slices_used;
  }
  if (m.slices_used == 0) {
    m.skipped = true;
    return m;
  }
  m.psnr /= static_cast<double>(m.slices_used);
  m.ssim /= static_cast<double>(m.slices_used);
  m.nrmse /= static_cast<double>(m.slices_used);
  return m;
}

MetricsReport evaluate(const std::vector<VolumePair>& pairs, SrModel& model, const ReconstructOptions& opts,
                       std::vector<Volume>* predictions) {
  MetricsReport report;
  for (const auto& pair : pairs) {
    auto sr = reconstruct(pair.lr, model, opts);
    auto vm = slice_metrics(sr.data, pair.hr.data, pair.hr.name);
    if (!vm.skipped) {
      report.mean_psnr += vm.psnr;
      report.mean_ssim += vm.ssim;
      report.mean_nrmse += vm.nrmse;
      ++report.volumes_used;
    }
    report.volumes.push_back(vm);
    if (predictions != nullptr) predictions->push_back(std::move(sr));
  }
  if (report.volumes_used > 0) {
    const auto n = static_cast<double>(report.volumes_used);
    report.mean_psnr /= n;
    report.mean_ssim /= n;
    report.mean_nrmse /= n;
  }
  return report;
}

std::string MetricsReport::to_csv() const {
  std::ostringstream out;
  out << "volume,psnr,ssim,nrmse,slices_used,skipped\n";
  for (const auto& v : volumes) {
    out << v.name << ',' << format_double(v.psnr) << ',' << format_double(v.ssim) << ',' << format_double(v.nrmse)
        << ',' << v.slices_used << ',' << (v.skipped ? 1 : 0) << '\n';
  }
  out << "mean," << format_double(mean_psnr) << ',' << format_double(mean_ssim) << ',' << format_double(mean_nrmse)
      << ',' << volumes_used << ",0\n";
  return out.str();
}

std::string MetricsReport::to_text() const {
  std::ostringstream out;
  out << std::fixed;
  for (const auto& v : volumes) {
    if (v.skipped) {
      out << v.name << ": skipped (no slice with enough foreground)\n";
      continue;
    }
    out << v.name << ": PSNR " << std::setprecision(3) << v.psnr << " dB  SSIM " << std::setprecision(4) << v.ssim
        << "  NRMSE " << v.nrmse << "  (" << v.slices_used << " slices)\n";
  }
  out << "mean over " << volumes_used << " volume(s): PSNR " << std::setprecision(3) << mean_psnr << " dB  SSIM "
      << std::setprecision(4) << mean_ssim << "  NRMSE " << mean_nrmse << '\n';
  return out.str();
}

}  // namespace mtvnet
