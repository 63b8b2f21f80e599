#pragma once

// Independent reference implementations used as test oracles. They favour
// explicit loops over clever tensor algebra so they share as little code
// with the library as possible.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "mtvnet/instrumentation.hpp"
#include "mtvnet/svhat.hpp"

namespace oracle {

using I3 = std::array<std::int64_t, 3>;

inline std::int64_t flat3(const I3& p, std::int64_t g) { return (p[0] * g + p[1]) * g + p[2]; }

inline I3 unflat3(std::int64_t i, std::int64_t g) { return {i / (g * g), (i / g) % g, i % g}; }

inline std::int64_t pmod(std::int64_t a, std::int64_t n) { return ((a % n) + n) % n; }

/// softmax(q k^T / sqrt(d) + bias) v for one head, everything [T, d] in double.
inline torch::Tensor attention(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v,
                               const torch::Tensor& bias = {}, const torch::Tensor& allowed = {}) {
  auto qd = q.to(torch::kFloat64).contiguous(), kd = k.to(torch::kFloat64).contiguous(),
       vd = v.to(torch::kFloat64).contiguous();
  const auto tq = qd.size(0), tk = kd.size(0), d = qd.size(1), dv = vd.size(1);
  auto out = torch::zeros({tq, dv}, torch::kFloat64);
  auto Q = qd.accessor<double, 2>(), K = kd.accessor<double, 2>(), V = vd.accessor<double, 2>();
  auto O = out.accessor<double, 2>();
  auto bd = bias.defined() ? bias.to(torch::kFloat64).expand({tq, tk}).contiguous() : torch::zeros({tq, tk}, torch::kFloat64);
  auto md = allowed.defined() ? allowed.to(torch::kBool).expand({tq, tk}).contiguous() : torch::ones({tq, tk}, torch::kBool);
  auto Bs = bd.accessor<double, 2>();
  auto Ms = md.accessor<bool, 2>();
  std::vector<double> logit(static_cast<std::size_t>(tk));
  for (std::int64_t i = 0; i < tq; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < tk; ++j) {
      double s = 0;
      for (std::int64_t c = 0; c < d; ++c) s += Q[i][c] * K[j][c];
      s /= std::sqrt(static_cast<double>(d));
      s += Bs[i][j];
      if (!Ms[i][j]) s = -std::numeric_limits<double>::infinity();
      logit[static_cast<std::size_t>(j)] = s;
      mx = std::max(mx, s);
    }
    double z = 0;
    for (auto& l : logit) z += (l = std::exp(l - mx));
    for (std::int64_t j = 0; j < tk; ++j)
      for (std::int64_t c = 0; c < dv; ++c) O[i][c] += logit[static_cast<std::size_t>(j)] / z * V[j][c];
  }
  return out;
}

/// Multi-head attention through the module's own projections but with the
/// attention core computed by `attention` above. q_in [Tq, C], kv_in [Tk, C].
inline torch::Tensor mha(mtvnet::MultiHeadAttentionImpl& m, const torch::Tensor& q_in, const torch::Tensor& kv_in) {
  torch::NoGradGuard g;
  auto q = m.q_proj(q_in.to(torch::kFloat64)), k = m.k_proj(kv_in.to(torch::kFloat64)),
       v = m.v_proj(kv_in.to(torch::kFloat64));
  const auto dh = m.dim / m.heads;
  std::vector<torch::Tensor> heads;
  for (int h = 0; h < m.heads; ++h) {
    heads.push_back(attention(q.narrow(1, h * dh, dh), k.narrow(1, h * dh, dh), v.narrow(1, h * dh, dh)));
  }
  return m.out_proj(torch::cat(heads, 1));
}

/// Token descriptor of the joint ITE+CAT grid as seen by a (possibly
/// shifted) window partition, derived from global coordinates only.
struct TokenPlace {
  bool is_cat;
  I3 pos;     // position in its own (unshifted) grid
  I3 window;  // window triple after the shift
  I3 local;   // coordinate inside the window after the shift
  I3 wrapped; // 1 where the token came around the grid edge
};

inline TokenPlace place(bool is_cat, const I3& pos, std::int64_t grid, std::int64_t m, std::int64_t shift) {
  TokenPlace t{is_cat, pos, {}, {}, {}};
  for (int a = 0; a < 3; ++a) {
    const auto p = pmod(pos[a] - shift, grid);
    t.window[a] = p / m;
    t.local[a] = p % m;
    t.wrapped[a] = p >= grid - shift ? 1 : 0;
  }
  return t;
}

/// Brute-force reference for the joint shifted-window attention block:
/// every query gathers the tokens that share its shifted window and were not
/// wrapped relative to it, adds the relative-position bias for ITE pairs,
/// and is then passed through the module's residual/LN/MLP tail.
/// `ites` [1,G,G,G,C], `cats` [1,g,g,g,C] or undefined.
inline mtvnet::SvhatState joint_window_attention(mtvnet::JointWindowAttentionImpl& mod, const torch::Tensor& ites,
                                                 const torch::Tensor& cats, bool shifted) {
  torch::NoGradGuard guard;
  const std::int64_t G = ites.size(1), C = ites.size(4), M = mod.window, c = mod.cat_edge;
  const std::int64_t g = c > 0 ? cats.size(1) : 0;
  const std::int64_t s_ite = shifted ? M / 2 : 0, s_cat = shifted ? c / 2 : 0;
  const int heads = mod.attn->heads;
  const std::int64_t dh = C / heads;

  std::vector<TokenPlace> places;
  std::vector<torch::Tensor> rows;
  for (std::int64_t i = 0; i < G * G * G; ++i) {
    auto p = unflat3(i, G);
    places.push_back(place(false, p, G, M, s_ite));
    rows.push_back(ites[0][p[0]][p[1]][p[2]]);
  }
  for (std::int64_t i = 0; i < g * g * g; ++i) {
    auto p = unflat3(i, g);
    places.push_back(place(true, p, g, c, s_cat));
    rows.push_back(cats[0][p[0]][p[1]][p[2]]);
  }
  auto x = torch::stack(rows).to(torch::kFloat64);  // [N, C]
  auto& at = *mod.attn;
  auto Q = at.q_proj(x), K = at.k_proj(x), V = at.v_proj(x);
  auto table = mod.rel_bias->table.to(torch::kFloat64).contiguous();
  auto T = table.accessor<double, 2>();
  const std::int64_t span = 2 * M - 1;
  const auto n = static_cast<std::int64_t>(places.size());
  auto attn_out = torch::zeros({n, C}, torch::kFloat64);

  for (std::int64_t i = 0; i < n; ++i) {
    std::vector<std::int64_t> nb;
    for (std::int64_t j = 0; j < n; ++j) {
      if (places[i].window == places[j].window && places[i].wrapped == places[j].wrapped) nb.push_back(j);
    }
    auto idx = torch::tensor(nb, torch::kLong);
    std::vector<double> bias_row(nb.size(), 0.0);
    for (int h = 0; h < heads; ++h) {
      if (!places[static_cast<std::size_t>(i)].is_cat) {
        for (std::size_t k = 0; k < nb.size(); ++k) {
          const auto& pj = places[static_cast<std::size_t>(nb[k])];
          if (pj.is_cat) continue;  // no positional bias towards carrier tokens
          const auto& li = places[static_cast<std::size_t>(i)].local;
          const auto id = ((li[0] - pj.local[0] + M - 1) * span + (li[1] - pj.local[1] + M - 1)) * span +
                          (li[2] - pj.local[2] + M - 1);
          bias_row[k] = T[id][h];
        }
      }
      auto bias = torch::tensor(bias_row, torch::kFloat64).unsqueeze(0);
      auto qh = Q[i].narrow(0, h * dh, dh).unsqueeze(0);
      auto kh = K.index_select(0, idx).narrow(1, h * dh, dh);
      auto vh = V.index_select(0, idx).narrow(1, h * dh, dh);
      attn_out[i].narrow(0, h * dh, dh).copy_(attention(qh, kh, vh, bias)[0]);
    }
  }
  auto y = x + mod.norm_attn(at.out_proj(attn_out));
  y = y + mod.norm_mlp(mod.mlp(y));

  mtvnet::SvhatState out;
  out.ites = y.narrow(0, 0, G * G * G).reshape({1, G, G, G, C});
  if (c > 0) out.cats = y.narrow(0, G * G * G, g * g * g).reshape({1, g, g, g, C});
  return out;
}

/// Admissibility of token pairs for one window, from global coordinates.
inline torch::Tensor window_mask(std::int64_t grid, std::int64_t m, std::int64_t c, bool shifted,
                                 std::int64_t window_index) {
  const std::int64_t nwe = grid / m;
  const std::int64_t g = nwe * c;
  const I3 w = unflat3(window_index, nwe);
  std::vector<TokenPlace> members;
  // Collect the window's members in the library's in-window order.
  for (std::int64_t i = 0; i < m * m * m; ++i) {
    const I3 l = unflat3(i, m);
    for (std::int64_t q = 0; q < grid * grid * grid; ++q) {
      auto t = place(false, unflat3(q, grid), grid, m, shifted ? m / 2 : 0);
      if (t.window == w && t.local == l) members.push_back(t);
    }
  }
  for (std::int64_t i = 0; i < c * c * c; ++i) {
    const I3 l = unflat3(i, c);
    for (std::int64_t q = 0; q < g * g * g; ++q) {
      auto t = place(true, unflat3(q, g), g, c, shifted ? c / 2 : 0);
      if (t.window == w && t.local == l) members.push_back(t);
    }
  }
  const auto n = static_cast<std::int64_t>(members.size());
  auto mask = torch::zeros({n, n}, torch::kBool);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < n; ++j)
      mask[i][j] = members[static_cast<std::size_t>(i)].wrapped == members[static_cast<std::size_t>(j)].wrapped;
  return mask;
}

/// Direct 3D cross-correlation, [Cin, E, E, E] with weight [Cout, Cin, k, k, k].
inline torch::Tensor conv3d(const torch::Tensor& x, const torch::Tensor& w, const torch::Tensor& b, int stride,
                            int pad) {
  auto xd = x.to(torch::kFloat64).contiguous(), wd = w.to(torch::kFloat64).contiguous(),
       bd = b.to(torch::kFloat64).contiguous();
  const auto cin = xd.size(0), e = xd.size(1), cout = wd.size(0), k = wd.size(2);
  const auto o = (e + 2 * pad - k) / stride + 1;
  auto out = torch::zeros({cout, o, o, o}, torch::kFloat64);
  auto X = xd.accessor<double, 4>();
  auto W = wd.accessor<double, 5>();
  auto B = bd.accessor<double, 1>();
  auto O = out.accessor<double, 4>();
  for (std::int64_t co = 0; co < cout; ++co)
    for (std::int64_t i = 0; i < o; ++i)
      for (std::int64_t j = 0; j < o; ++j)
        for (std::int64_t l = 0; l < o; ++l) {
          double s = B[co];
          for (std::int64_t ci = 0; ci < cin; ++ci)
            for (std::int64_t a = 0; a < k; ++a)
              for (std::int64_t bb = 0; bb < k; ++bb)
                for (std::int64_t cc = 0; cc < k; ++cc) {
                  const auto y = i * stride + a - pad, z = j * stride + bb - pad, u = l * stride + cc - pad;
                  if (y < 0 || z < 0 || u < 0 || y >= e || z >= e || u >= e) continue;
                  s += X[ci][y][z][u] * W[co][ci][a][bb][cc];
                }
          O[co][i][j][l] = s;
        }
  return out;
}

inline double mse(const torch::Tensor& a, const torch::Tensor& b) {
  auto x = a.to(torch::kFloat64).contiguous(), y = b.to(torch::kFloat64).contiguous();
  auto X = x.accessor<double, 2>(), Y = y.accessor<double, 2>();
  double s = 0;
  for (std::int64_t i = 0; i < x.size(0); ++i)
    for (std::int64_t j = 0; j < x.size(1); ++j) s += (X[i][j] - Y[i][j]) * (X[i][j] - Y[i][j]);
  return s / static_cast<double>(x.numel());
}

inline double psnr(const torch::Tensor& a, const torch::Tensor& b) {
  const double m = mse(a, b);
  return m == 0 ? 100.0 : std::min(100.0, -10.0 * std::log10(m));
}

inline double nrmse(const torch::Tensor& a, const torch::Tensor& b) {
  auto y = b.to(torch::kFloat64).contiguous();
  auto Y = y.accessor<double, 2>();
  double s = 0;
  for (std::int64_t i = 0; i < y.size(0); ++i)
    for (std::int64_t j = 0; j < y.size(1); ++j) s += Y[i][j] * Y[i][j];
  return std::sqrt(mse(a, b)) / std::sqrt(s / static_cast<double>(y.numel()));
}

/// Windowed SSIM with two-pass window statistics, averaged over valid windows.
inline double ssim(const torch::Tensor& a, const torch::Tensor& b, int w = 7) {
  auto x = a.to(torch::kFloat64).contiguous(), y = b.to(torch::kFloat64).contiguous();
  auto X = x.accessor<double, 2>(), Y = y.accessor<double, 2>();
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const double np = w * w;
  double total = 0;
  std::int64_t count = 0;
  for (std::int64_t i = 0; i + w <= x.size(0); ++i)
    for (std::int64_t j = 0; j + w <= x.size(1); ++j) {
      double mx = 0, my = 0;
      for (int u = 0; u < w; ++u)
        for (int v = 0; v < w; ++v) {
          mx += X[i + u][j + v];
          my += Y[i + u][j + v];
        }
      mx /= np;
      my /= np;
      double vx = 0, vy = 0, cxy = 0;
      for (int u = 0; u < w; ++u)
        for (int v = 0; v < w; ++v) {
          const double dx = X[i + u][j + v] - mx, dy = Y[i + u][j + v] - my;
          vx += dx * dx;
          vy += dy * dy;
          cxy += dx * dy;
        }
      vx /= np - 1;
      vy /= np - 1;
      cxy /= np - 1;
      total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return total / static_cast<double>(count);
}

/// Gini via the mean absolute difference: sum |xi - xj| / (2 n^2 mean).
inline double gini_mad(const std::vector<double>& v) {
  const auto n = static_cast<double>(v.size());
  double mean = 0;
  for (double x : v) mean += x;
  mean /= n;
  double s = 0;
  for (double a : v)
    for (double b : v) s += std::fabs(a - b);
  return s / (2.0 * n * n * mean);
}

/// 3D DFT magnitude of a real [E,E,E] tensor by direct summation.
inline std::vector<double> dft3_power(const torch::Tensor& x) {
  auto xd = x.to(torch::kFloat64).contiguous();
  const auto e = xd.size(0);
  auto X = xd.accessor<double, 3>();
  std::vector<double> power(static_cast<std::size_t>(e * e * e));
  const double two_pi = 2.0 * std::acos(-1.0);
  for (std::int64_t a = 0; a < e; ++a)
    for (std::int64_t b = 0; b < e; ++b)
      for (std::int64_t c = 0; c < e; ++c) {
        std::complex<double> s = 0;
        for (std::int64_t i = 0; i < e; ++i)
          for (std::int64_t j = 0; j < e; ++j)
            for (std::int64_t k = 0; k < e; ++k) {
              const double ph = -two_pi * static_cast<double>(a * i + b * j + c * k) / static_cast<double>(e);
              s += X[i][j][k] * std::complex<double>(std::cos(ph), std::sin(ph));
            }
        power[static_cast<std::size_t>((a * e + b) * e + c)] = std::norm(s);
      }
  return power;
}

/// Selects, from a recorded activation, the values that sit right after a
/// piecewise-linear kink (undefined tensor when the key is not of interest).
using KinkSelector = std::function<torch::Tensor(const std::string&, const torch::Tensor&)>;

/// Captures the sign pattern of selected activations during one forward.
class SignProbe : public mtvnet::ActivationRecorder {
 public:
  explicit SignProbe(KinkSelector select) : select_(std::move(select)) {}
  void observe(const std::string& key, const torch::Tensor& t) override {
    record(key, t.numel());
    auto v = select_(key, t);
    if (v.defined()) signs_.push_back(v.detach() >= 0);
  }
  std::vector<torch::Tensor> take() { return std::exchange(signs_, {}); }

 private:
  KinkSelector select_;
  std::vector<torch::Tensor> signs_;
};

inline bool same_signs(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!torch::equal(a[i], b[i])) return false;
  }
  return true;
}

struct GradCheck {
  std::string name;
  double rel_error = 0;
  double analytic_norm = 0;  // over the whole gradient tensor
  int kinks = 0;             // step reductions forced by a kink inside [-h, h]
  bool below_resolution = false;  // sampled gradients under the round-off floor
};

/// Central-difference check of every parameter of `module` against autograd,
/// for the scalar `loss()`. Up to `samples` entries per parameter tensor are
/// probed; the error is ||g_a - g_n|| / max(||g_a||, ||g_n||) over them.
inline std::vector<GradCheck> finite_difference(torch::nn::Module& module, const std::function<torch::Tensor()>& loss,
                                                double h = 1e-4, int samples = 4, std::uint64_t seed = 0,
                                                double loss_magnitude = 0, const KinkSelector& kinks = {}) {
  SignProbe probe(kinks ? kinks : KinkSelector([](const std::string&, const torch::Tensor&) { return torch::Tensor(); }));
  auto evaluate = [&](std::vector<torch::Tensor>* signs) {
    mtvnet::ScopedActivationRecorder scope(probe);
    auto l = loss();
    if (signs != nullptr) *signs = probe.take();
    return l;
  };
  for (auto& p : module.parameters()) p.mutable_grad() = torch::Tensor();
  std::vector<torch::Tensor> base_signs;
  auto l0 = evaluate(&base_signs);
  l0.backward();
  // Central differences cannot resolve gradients below their round-off error,
  // which scales with the sum of absolute terms making up the loss.
  const double magnitude = std::max({1.0, std::abs(l0.item<double>()), loss_magnitude});
  std::mt19937_64 rng(seed);
  std::vector<GradCheck> out;
  for (auto& item : module.named_parameters()) {
    auto p = item.value();
    auto flat = p.view({-1});
    auto grad = p.grad().defined() ? p.grad().reshape({-1}) : torch::zeros_like(flat);
    const std::int64_t n = flat.numel();
    const bool exhaustive = n <= samples;
    std::uniform_int_distribution<std::int64_t> pick(0, n - 1);
    GradCheck check{item.key(), 0, grad.norm().item<double>()};
    double diff2 = 0, an2 = 0, num2 = 0;
    double floor = 0;
    int taken = 0;
    for (std::int64_t k = 0; taken < std::min<std::int64_t>(samples, n) && k < (exhaustive ? n : 50 * samples); ++k) {
      const std::int64_t i = exhaustive ? k : pick(rng);
      // Shrink the step until no kink lies inside [-step, step].
      double step = h, up = 0, down = 0;
      bool straddles = true;
      for (; step >= h * 1e-4; step /= 10) {
        torch::NoGradGuard g;
        std::vector<torch::Tensor> s_up, s_down;
        const double orig = flat[i].item<double>();
        flat[i] = orig + step;
        up = evaluate(&s_up).item<double>();
        flat[i] = orig - step;
        down = evaluate(&s_down).item<double>();
        flat[i] = orig;
        straddles = !same_signs(s_up, base_signs) || !same_signs(s_down, base_signs);
        if (!straddles) break;
        ++check.kinks;
      }
      if (straddles) continue;  // no smooth neighbourhood found; draw another coordinate
      ++taken;
      floor = std::max(floor, 64 * std::numeric_limits<double>::epsilon() * magnitude / step);
      const double num = (up - down) / (2 * step);
      const double an = grad[i].item<double>();
      diff2 += (an - num) * (an - num);
      an2 += an * an;
      num2 += num * num;
    }
    const double scale = std::max(std::sqrt(an2), std::sqrt(num2));
    check.below_resolution = taken > 0 && scale <= floor;
    check.rel_error = taken == 0 ? 1.0 : (check.below_resolution ? 0.0 : std::sqrt(diff2) / scale);
    out.push_back(check);
  }
  return out;
}

}  // namespace oracle
