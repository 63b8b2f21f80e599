#include "mtvnet/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mtvnet {

namespace {

torch::Tensor white_noise(int edge, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  auto t = torch::empty({edge, edge, edge}, torch::kFloat64);
  auto* p = t.data_ptr<double>();
  for (std::int64_t i = 0; i < t.numel(); ++i) p[i] = normal(rng);
  return t;
}

// Signed integer frequency index of each FFT bin along one axis.
torch::Tensor frequency_index(int edge) {
  auto k = torch::arange(edge, torch::kFloat64);
  return torch::where(k <= edge / 2, k, k - edge);
}

torch::Tensor low_pass(const torch::Tensor& field, double cutoff) {
  const int edge = static_cast<int>(field.size(0));
  auto k = frequency_index(edge);
  auto k2 = k.view({-1, 1, 1}).pow(2) + k.view({1, -1, 1}).pow(2) + k.view({1, 1, -1}).pow(2);
  auto spectrum = torch::fft::fftn(field);
  spectrum = spectrum * (k2 <= cutoff * cutoff).to(spectrum.dtype());
  return torch::real(torch::fft::ifftn(spectrum));
}

torch::Tensor rescale01(const torch::Tensor& x) {
  auto lo = x.min();
  auto range = (x.max() - lo).item<double>();
  return range > 0 ? (x - lo) / range : torch::zeros_like(x);
}

torch::Tensor standardize(const torch::Tensor& x) {
  auto sd = x.std().item<double>();
  return sd > 0 ? (x - x.mean()) / sd : torch::zeros_like(x);
}

Volume wrap(torch::Tensor field, std::string name) {
  Volume v;
  v.data = field.to(torch::kFloat32).unsqueeze(0).contiguous();
  v.name = std::move(name);
  return v;
}

}  // namespace

std::vector<Ellipsoid> ellipsoid_phantom_layout(int edge, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double a, double b) { return a + (b - a) * u01(rng); };
  std::vector<Ellipsoid> out;
  Ellipsoid outer;
  for (std::size_t a = 0; a < 3; ++a) {
    outer.center[a] = edge * (0.5 + uniform(-0.05, 0.05));
    outer.radii[a] = edge * uniform(0.30, 0.42);
  }
  outer.intensity = 0.6;
  out.push_back(outer);
  const int inner_count = 3 + static_cast<int>(u01(rng) * 4.0);
  for (int i = 0; i < inner_count; ++i) {
    // Offset within the unit ball of radius 0.5 in outer-normalised coordinates;
    // semi-axes at most 0.3 keep the inner ellipsoid inside the outer one.
    std::array<double, 3> off{};
    do {
      for (auto& o : off) o = uniform(-0.5, 0.5);
    } while (off[0] * off[0] + off[1] * off[1] + off[2] * off[2] > 0.25);
    Ellipsoid e;
    for (std::size_t a = 0; a < 3; ++a) {
      e.center[a] = outer.center[a] + off[a] * outer.radii[a];
      e.radii[a] = outer.radii[a] * uniform(0.1, 0.3);
    }
    e.intensity = uniform(0.2, 1.0);
    out.push_back(e);
  }
  return out;
}

Volume render_ellipsoids(const std::vector<Ellipsoid>& layout, int edge) {
  auto coord = torch::arange(edge, torch::kFloat64) + 0.5;
  auto x = coord.view({-1, 1, 1});
  auto y = coord.view({1, -1, 1});
  auto z = coord.view({1, 1, -1});
  auto field = torch::zeros({edge, edge, edge}, torch::kFloat64);
  for (const auto& e : layout) {
    auto r2 = ((x - e.center[0]) / e.radii[0]).pow(2) + ((y - e.center[1]) / e.radii[1]).pow(2) +
              ((z - e.center[2]) / e.radii[2]).pow(2);
    field = torch::where(r2 <= 1.0, torch::full_like(field, e.intensity), field);
  }
  return wrap(field, "ellipsoids");
}

Volume make_ellipsoid_phantom(int edge, std::mt19937_64& rng) {
  auto layout = ellipsoid_phantom_layout(edge, rng);
  auto v = render_ellipsoids(layout, edge);
  auto texture = rescale01(low_pass(white_noise(edge, rng), edge / 8.0)) * 2.0 - 1.0;
  auto field = v.data[0].to(torch::kFloat64);
  field = field * (1.0 + 0.1 * texture);
  v.data = rescale01(field).to(torch::kFloat32).unsqueeze(0).contiguous();
  return v;
}

Volume make_band_limited_noise(int edge, double cutoff, std::mt19937_64& rng) {
  if (cutoff <= 0) throw std::invalid_argument("noise cutoff must be positive");
  return wrap(rescale01(low_pass(white_noise(edge, rng), cutoff)), "noise");
}

Volume make_trabecular(int edge, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double period = 8.0 + 6.0 * u01(rng);
  const double thickness = 0.25 + 0.2 * u01(rng);

  // Uniform random rotation from a unit quaternion.
  const double u1 = u01(rng), u2 = u01(rng), u3 = u01(rng);
  const double qw = std::sqrt(1 - u1) * std::sin(2 * std::numbers::pi * u2);
  const double qx = std::sqrt(1 - u1) * std::cos(2 * std::numbers::pi * u2);
  const double qy = std::sqrt(u1) * std::sin(2 * std::numbers::pi * u3);
  const double qz = std::sqrt(u1) * std::cos(2 * std::numbers::pi * u3);
  const double rot[3][3] = {
      {1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw), 2 * (qx * qz + qy * qw)},
      {2 * (qx * qy + qz * qw), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw)},
      {2 * (qx * qz - qy * qw), 2 * (qy * qz + qx * qw), 1 - 2 * (qx * qx + qy * qy)}};

  auto coord = torch::arange(edge, torch::kFloat64) - 0.5 * edge;
  auto grid = torch::meshgrid({coord, coord, coord}, "ij");
  const double warp_amp = 0.15 * period;
  std::array<torch::Tensor, 3> p;
  for (std::size_t a = 0; a < 3; ++a) {
    p[a] = grid[a] + warp_amp * standardize(low_pass(white_noise(edge, rng), 3.0));
  }
  const double k = 2 * std::numbers::pi / period;
  std::array<torch::Tensor, 3> q;
  for (std::size_t r = 0; r < 3; ++r) q[r] = k * (rot[r][0] * p[0] + rot[r][1] * p[1] + rot[r][2] * p[2]);
  auto g = torch::sin(q[0]) * torch::cos(q[1]) + torch::sin(q[1]) * torch::cos(q[2]) +
           torch::sin(q[2]) * torch::cos(q[0]);
  // Coarse density modulation gives the pattern structure at a second scale.
  auto density = standardize(low_pass(white_noise(edge, rng), 2.0));
  auto local_t = thickness * (1.0 + 0.3 * torch::tanh(density));
  auto field = torch::sigmoid((local_t - g.abs()) / 0.08);
  return wrap(rescale01(field), "trabecular");
}

std::vector<Volume> make_synthetic_corpus(const GeneratorSpec& spec) {
  if (spec.generator != "ellipsoid" && spec.generator != "noise" && spec.generator != "trabecular") {
    throw std::invalid_argument("unknown generator '" + spec.generator + "' (expected ellipsoid|noise|trabecular)");
  }
  if (spec.count < 1 || spec.edge < 4) throw std::invalid_argument("generator needs count >= 1 and edge >= 4");
  std::mt19937_64 rng(spec.seed);
  std::vector<Volume> out;
  for (int i = 0; i < spec.count; ++i) {
    Volume v;
    if (spec.generator == "ellipsoid") v = make_ellipsoid_phantom(spec.edge, rng);
    else if (spec.generator == "noise") v = make_band_limited_noise(spec.edge, spec.cutoff, rng);
    else v = make_trabecular(spec.edge, rng);
    v.name = spec.generator + "_" + std::to_string(i);
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace mtvnet
