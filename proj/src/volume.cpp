#include "mtvnet/volume.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mtvnet/io_util.hpp"

namespace mtvnet {

namespace F = torch::nn::functional;

namespace {

constexpr const char* kVolumeMagic = "MTVVOL1";

torch::Tensor as_batched(const torch::Tensor& x, bool& was_unbatched) {
  was_unbatched = x.dim() == 4;
  if (x.dim() != 4 && x.dim() != 5) {
    throw std::invalid_argument("expected [C,H,W,D] or [N,C,H,W,D] tensor");
  }
  return was_unbatched ? x.unsqueeze(0) : x;
}

std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

torch::Tensor axis_indices(std::int64_t start, std::int64_t extent, std::int64_t n, PadMode pad) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(extent));
  for (std::int64_t k = 0; k < extent; ++k) {
    const std::int64_t i = start + k;
    if (pad == PadMode::kReflect) idx[static_cast<std::size_t>(k)] = reflect_index(i, n);
    else idx[static_cast<std::size_t>(k)] = std::clamp<std::int64_t>(i, 0, n - 1);
  }
  return torch::tensor(idx, torch::kLong);
}

}  // namespace

void write_volume(const Volume& v, const std::filesystem::path& path) {
  if (v.data.dim() != 4) throw std::invalid_argument("volume data must be [C,H,W,D]");
  auto data = v.data.to(torch::kFloat32).contiguous().cpu();
  if (!torch::isfinite(data).all().item<bool>()) {
    throw std::invalid_argument("volume '" + v.name + "' contains non-finite values");
  }
  std::ostringstream header;
  header << kVolumeMagic << "\n";
  header << "dims " << data.size(1) << " " << data.size(2) << " " << data.size(3) << "\n";
  header << "channels " << data.size(0) << "\n";
  header << "spacing " << format_double(v.spacing[0]) << " " << format_double(v.spacing[1]) << " "
         << format_double(v.spacing[2]) << "\n";
  header << "name " << v.name << "\n";
  header << "dtype float32le\n";
  header << "end\n";
  const auto h = header.str();
  atomic_write(path, [&](std::ostream& os) {
    os.write(h.data(), static_cast<std::streamsize>(h.size()));
    const auto n = static_cast<std::size_t>(data.numel());
    const float* p = data.data_ptr<float>();
    if constexpr (std::endian::native == std::endian::little) {
      os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(float)));
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        auto bits = std::bit_cast<std::uint32_t>(p[i]);
        bits = __builtin_bswap32(bits);
        os.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
      }
    }
  });
}

Volume read_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open volume: " + path.string());
  auto expect_line = [&](const std::string& key) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": truncated header");
    if (line.rfind(key, 0) != 0) {
      throw std::runtime_error(path.string() + ": expected header field '" + key + "', got '" + line + "'");
    }
    return line.size() > key.size() ? line.substr(key.size() + 1) : std::string{};
  };
  std::string magic;
  std::getline(in, magic);
  if (magic != kVolumeMagic) throw std::runtime_error(path.string() + ": not an MTVVOL1 file");
  Volume v;
  std::int64_t h = 0, w = 0, d = 0, c = 0;
  {
    std::istringstream ss(expect_line("dims"));
    ss >> h >> w >> d;
  }
  c = std::stoll(expect_line("channels"));
  {
    std::istringstream ss(expect_line("spacing"));
    ss >> v.spacing[0] >> v.spacing[1] >> v.spacing[2];
  }
  v.name = expect_line("name");
  if (expect_line("dtype") != "float32le") throw std::runtime_error(path.string() + ": unsupported dtype");
  expect_line("end");
  if (h <= 0 || w <= 0 || d <= 0 || c <= 0) throw std::runtime_error(path.string() + ": invalid dims");
  v.data = torch::empty({c, h, w, d}, torch::kFloat32);
  const auto bytes = static_cast<std::streamsize>(v.data.numel() * 4);
  in.read(reinterpret_cast<char*>(v.data.data_ptr<float>()), bytes);
  if (in.gcount() != bytes) throw std::runtime_error(path.string() + ": truncated payload");
  if constexpr (std::endian::native != std::endian::little) {
    auto* p = reinterpret_cast<std::uint32_t*>(v.data.data_ptr<float>());
    for (std::int64_t i = 0; i < v.data.numel(); ++i) p[i] = __builtin_bswap32(p[i]);
  }
  return v;
}

Volume normalize_min_max(const Volume& v) {
  Volume out = v;
  auto lo = v.data.min();
  auto hi = v.data.max();
  auto range = (hi - lo).item<double>();
  out.data = range > 0 ? (v.data - lo) / range : torch::zeros_like(v.data);
  return out;
}

torch::Tensor gaussian_blur3d(const torch::Tensor& x, double sigma, double truncate) {
  if (sigma <= 0) return x;
  const auto radius = static_cast<std::int64_t>(std::ceil(truncate * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (std::int64_t i = -radius; i <= radius; ++i) {
    const double val = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = val;
    sum += val;
  }
  for (auto& val : k) val /= sum;
  auto kernel = torch::tensor(k, torch::TensorOptions().dtype(torch::kFloat64)).to(x.scalar_type());

  const auto shape = x.sizes().vec();
  const auto n = x.dim();
  if (n < 3) throw std::invalid_argument("gaussian_blur3d needs at least three spatial dims");
  auto y = x.reshape({-1, 1, shape[n - 3], shape[n - 2], shape[n - 1]});
  const std::array<std::vector<std::int64_t>, 3> kshape = {
      std::vector<std::int64_t>{1, 1, 2 * radius + 1, 1, 1},
      std::vector<std::int64_t>{1, 1, 1, 2 * radius + 1, 1},
      std::vector<std::int64_t>{1, 1, 1, 1, 2 * radius + 1}};
  const std::array<std::vector<std::int64_t>, 3> pads = {
      std::vector<std::int64_t>{0, 0, 0, 0, radius, radius},
      std::vector<std::int64_t>{0, 0, radius, radius, 0, 0},
      std::vector<std::int64_t>{radius, radius, 0, 0, 0, 0}};
  for (int axis = 0; axis < 3; ++axis) {
    y = F::pad(y, F::PadFuncOptions(pads[axis]).mode(torch::kReplicate));
    y = F::conv3d(y, kernel.reshape(kshape[axis]));
  }
  return y.reshape(shape);
}

torch::Tensor upsample_trilinear(const torch::Tensor& x, int scale) {
  bool unbatched = false;
  auto b = as_batched(x, unbatched);
  if (scale == 1) return x;
  auto out = F::interpolate(b, F::InterpolateFuncOptions()
                                   .size(std::vector<std::int64_t>{b.size(2) * scale, b.size(3) * scale,
                                                                   b.size(4) * scale})
                                   .mode(torch::kTrilinear)
                                   .align_corners(false));
  return unbatched ? out.squeeze(0) : out;
}

torch::Tensor downsample_trilinear(const torch::Tensor& x, int scale) {
  bool unbatched = false;
  auto b = as_batched(x, unbatched);
  for (int i = 2; i < 5; ++i) {
    if (b.size(i) % scale != 0) {
      throw std::invalid_argument("spatial edge " + std::to_string(b.size(i)) + " not divisible by scale " +
                                  std::to_string(scale));
    }
  }
  if (scale == 1) return x;
  auto out = F::interpolate(b, F::InterpolateFuncOptions()
                                   .size(std::vector<std::int64_t>{b.size(2) / scale, b.size(3) / scale,
                                                                   b.size(4) / scale})
                                   .mode(torch::kTrilinear)
                                   .align_corners(false));
  return unbatched ? out.squeeze(0) : out;
}

Volume degrade(const Volume& hr, int scale, bool blur, double sigma) {
  if (scale < 1) throw std::invalid_argument("scale must be positive");
  for (auto e : hr.dims()) {
    if (e % scale != 0) {
      throw std::invalid_argument("HR edge " + std::to_string(e) + " not divisible by scale " +
                                  std::to_string(scale));
    }
  }
  auto x = hr.data;
  if (blur) x = gaussian_blur3d(x, sigma > 0 ? sigma : 0.5 * scale);
  Volume lr;
  lr.data = downsample_trilinear(x, scale).contiguous();
  for (int i = 0; i < 3; ++i) lr.spacing[static_cast<std::size_t>(i)] = hr.spacing[static_cast<std::size_t>(i)] * scale;
  lr.name = hr.name;
  return lr;
}

torch::Tensor foreground_mask(const torch::Tensor& data, double eps) {
  return std::get<0>(data.max(0)) > eps;
}

torch::Tensor foreground_mask(const Volume& v, double eps) { return foreground_mask(v.data, eps); }

torch::Tensor extract_crop(const torch::Tensor& data, const Index3& origin, std::int64_t extent, PadMode pad) {
  if (data.dim() != 4) throw std::invalid_argument("extract_crop expects [C,H,W,D]");
  bool inside = true;
  for (int a = 0; a < 3; ++a) {
    const auto n = data.size(a + 1);
    if (origin[static_cast<std::size_t>(a)] < 0 || origin[static_cast<std::size_t>(a)] + extent > n) inside = false;
  }
  if (inside) {
    return data.narrow(1, origin[0], extent).narrow(2, origin[1], extent).narrow(3, origin[2], extent);
  }
  if (pad == PadMode::kNone) {
    throw std::out_of_range("crop of extent " + std::to_string(extent) + " at (" + std::to_string(origin[0]) + "," +
                            std::to_string(origin[1]) + "," + std::to_string(origin[2]) +
                            ") exceeds the volume and padding is disabled");
  }
  auto out = data;
  for (int a = 0; a < 3; ++a) {
    auto idx = axis_indices(origin[static_cast<std::size_t>(a)], extent, data.size(a + 1), pad).to(data.device());
    out = out.index_select(a + 1, idx);
  }
  return out;
}

std::vector<int> context_extents(const ModelConfig& cfg) {
  std::vector<int> e;
  for (const auto& lv : cfg.levels) e.push_back(lv.context_extent);
  return e;
}

NestedPatch extract_nested(const Volume& lr, const Volume* hr, const std::vector<int>& extents, int scale,
                           const Index3& center, PadMode pad) {
  NestedPatch p;
  p.center = center;
  for (int e : extents) {
    Index3 origin{center[0] - e / 2, center[1] - e / 2, center[2] - e / 2};
    p.lr_contexts.push_back(extract_crop(lr.data, origin, e, pad));
  }
  if (hr != nullptr) {
    const int inner = extents.back();
    Index3 origin{scale * (center[0] - inner / 2), scale * (center[1] - inner / 2), scale * (center[2] - inner / 2)};
    p.hr_target = extract_crop(hr->data, origin, static_cast<std::int64_t>(scale) * inner, PadMode::kNone);
  }
  return p;
}

NestedSampler::NestedSampler(std::vector<int> extents, int scale, bool padding)
    : extents_(std::move(extents)), scale_(scale), padding_(padding) {
  if (extents_.empty()) throw std::invalid_argument("NestedSampler needs at least one extent");
}

std::pair<Index3, Index3> NestedSampler::center_range(const Index3& lr_dims) const {
  const int governing = padding_ ? extents_.back() : extents_.front();
  Index3 lo{}, hi{};
  for (std::size_t a = 0; a < 3; ++a) {
    if (lr_dims[a] < governing) {
      throw std::invalid_argument("LR volume edge " + std::to_string(lr_dims[a]) + " smaller than context " +
                                  std::to_string(governing) + (padding_ ? "" : " (padding disabled)"));
    }
    lo[a] = governing / 2;
    hi[a] = lr_dims[a] - governing + governing / 2 + 1;
  }
  return {lo, hi};
}

NestedPatch NestedSampler::sample(const Volume& lr, const Volume& hr, std::mt19937_64& rng) const {
  const auto dims = lr.dims();
  const auto hdims = hr.dims();
  for (std::size_t a = 0; a < 3; ++a) {
    if (hdims[a] != dims[a] * scale_) throw std::invalid_argument("HR/LR dims inconsistent with scale");
  }
  auto [lo, hi] = center_range(dims);
  Index3 c{};
  for (std::size_t a = 0; a < 3; ++a) {
    std::uniform_int_distribution<std::int64_t> dist(lo[a], hi[a] - 1);
    c[a] = dist(rng);
  }
  return extract_nested(lr, &hr, extents_, scale_, c, padding_ ? PadMode::kReflect : PadMode::kNone);
}

NestedPatch sample_nested(const Volume& lr, const Volume& hr, const ModelConfig& cfg, bool padding,
                          std::mt19937_64& rng) {
  std::vector<int> extents;
  for (int i = static_cast<int>(cfg.levels.size()) - cfg.active_levels(); i < static_cast<int>(cfg.levels.size());
       ++i) {
    extents.push_back(cfg.levels[static_cast<std::size_t>(i)].context_extent);
  }
  return NestedSampler(extents, cfg.scale, padding).sample(lr, hr, rng);
}

}  // namespace mtvnet
