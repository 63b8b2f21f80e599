#include "mtvnet/tokenizer.hpp"

#include <sstream>
#include <stdexcept>

namespace mtvnet {

namespace {

void check_divisible(std::int64_t edge, std::int64_t m, const char* what) {
  if (m <= 0 || edge % m != 0) {
    throw std::invalid_argument(std::string(what) + ": grid edge " + std::to_string(edge) +
                                " not divisible by window edge " + std::to_string(m));
  }
}

// Per-axis segment (0 or 1) of each in-window coordinate for window index w.
inline int axis_segment(std::int64_t w, std::int64_t windows, std::int64_t j, std::int64_t m, std::int64_t shift) {
  return (shift > 0 && w == windows - 1 && j >= m - shift) ? 1 : 0;
}

}  // namespace

torch::Tensor window_partition(const torch::Tensor& grid, std::int64_t m) {
  if (grid.dim() != 5) throw std::invalid_argument("window_partition expects [N,G,G,G,C]");
  const auto n = grid.size(0), gh = grid.size(1), gw = grid.size(2), gd = grid.size(3), c = grid.size(4);
  check_divisible(gh, m, "window_partition");
  check_divisible(gw, m, "window_partition");
  check_divisible(gd, m, "window_partition");
  auto x = grid.view({n, gh / m, m, gw / m, m, gd / m, m, c});
  return x.permute({0, 1, 3, 5, 2, 4, 6, 7}).reshape({-1, m * m * m, c});
}

torch::Tensor window_reverse(const torch::Tensor& windows, std::int64_t m, std::int64_t batch,
                             std::int64_t grid_edge) {
  check_divisible(grid_edge, m, "window_reverse");
  const auto w = grid_edge / m;
  const auto c = windows.size(-1);
  if (windows.size(0) != batch * w * w * w || windows.size(1) != m * m * m) {
    throw std::invalid_argument("window_reverse: window tensor does not match the grid geometry");
  }
  auto x = windows.reshape({batch, w, w, w, m, m, m, c});
  return x.permute({0, 1, 4, 2, 5, 3, 6, 7}).reshape({batch, grid_edge, grid_edge, grid_edge, c});
}

torch::Tensor cyclic_shift(const torch::Tensor& grid, std::int64_t shift) {
  if (shift == 0) return grid;
  return torch::roll(grid, {-shift, -shift, -shift}, {1, 2, 3});
}

torch::Tensor cyclic_unshift(const torch::Tensor& grid, std::int64_t shift) {
  if (shift == 0) return grid;
  return torch::roll(grid, {shift, shift, shift}, {1, 2, 3});
}

ShiftedPair cyclic_shift_pair(const torch::Tensor& ites, const torch::Tensor& cats, int window, int cat_edge) {
  if (window / 2 <= 0) throw std::invalid_argument("cyclic shift needs a positive ITE shift");
  ShiftedPair out{cyclic_shift(ites, window / 2), {}};
  if (cats.defined()) {
    if (cat_edge / 2 <= 0) throw std::invalid_argument("cyclic shift needs a positive CAT shift");
    out.cats = cyclic_shift(cats, cat_edge / 2);
  }
  return out;
}

ShiftedPair cyclic_unshift_pair(const torch::Tensor& ites, const torch::Tensor& cats, int window, int cat_edge) {
  ShiftedPair out{cyclic_unshift(ites, window / 2), {}};
  if (cats.defined()) out.cats = cyclic_unshift(cats, cat_edge / 2);
  return out;
}

torch::Tensor build_shift_masks(std::int64_t grid_edge, int window, int cat_edge, bool shifted) {
  check_divisible(grid_edge, window, "build_shift_masks");
  const std::int64_t m = window;
  const std::int64_t c = cat_edge;
  const std::int64_t nw_edge = grid_edge / m;
  const std::int64_t nw = nw_edge * nw_edge * nw_edge;
  const std::int64_t t_ite = m * m * m;
  const std::int64_t t_cat = c * c * c;
  const std::int64_t t = t_ite + t_cat;
  if (!shifted) return torch::ones({nw, t, t}, torch::kBool);

  const std::int64_t s_ite = m / 2;
  const std::int64_t s_cat = c / 2;
  auto region = torch::empty({nw, t}, torch::kLong);
  auto r = region.accessor<std::int64_t, 2>();
  for (std::int64_t wh = 0; wh < nw_edge; ++wh) {
    for (std::int64_t ww = 0; ww < nw_edge; ++ww) {
      for (std::int64_t wd = 0; wd < nw_edge; ++wd) {
        const std::int64_t widx = (wh * nw_edge + ww) * nw_edge + wd;
        std::int64_t k = 0;
        for (std::int64_t i = 0; i < m; ++i)
          for (std::int64_t j = 0; j < m; ++j)
            for (std::int64_t l = 0; l < m; ++l, ++k)
              r[widx][k] = axis_segment(wh, nw_edge, i, m, s_ite) * 4 + axis_segment(ww, nw_edge, j, m, s_ite) * 2 +
                           axis_segment(wd, nw_edge, l, m, s_ite);
        for (std::int64_t i = 0; i < c; ++i)
          for (std::int64_t j = 0; j < c; ++j)
            for (std::int64_t l = 0; l < c; ++l, ++k)
              r[widx][k] = axis_segment(wh, nw_edge, i, c, s_cat) * 4 + axis_segment(ww, nw_edge, j, c, s_cat) * 2 +
                           axis_segment(wd, nw_edge, l, c, s_cat);
      }
    }
  }
  return region.unsqueeze(2) == region.unsqueeze(1);
}

std::string mask_to_text(const torch::Tensor& mask) {
  if (mask.dim() != 2) throw std::invalid_argument("mask_to_text expects a 2D mask");
  auto m = mask.to(torch::kBool).contiguous();
  auto a = m.accessor<bool, 2>();
  std::ostringstream out;
  for (std::int64_t i = 0; i < m.size(0); ++i) {
    for (std::int64_t j = 0; j < m.size(1); ++j) out << (a[i][j] ? '1' : '0');
    out << '\n';
  }
  return out.str();
}

torch::Tensor relative_position_index(std::int64_t m) {
  auto coords = torch::stack(torch::meshgrid({torch::arange(m), torch::arange(m), torch::arange(m)}, "ij"))
                    .reshape({3, -1});  // [3, m^3]
  auto rel = coords.unsqueeze(2) - coords.unsqueeze(1);  // [3, m^3, m^3]
  rel = rel + (m - 1);
  const auto span = 2 * m - 1;
  return (rel[0] * span * span + rel[1] * span + rel[2]).contiguous();
}

torch::Tensor crop_and_pass(const torch::Tensor& features, std::int64_t next_extent) {
  if (features.dim() != 5) throw std::invalid_argument("crop_and_pass expects [N,C,E,E,E]");
  const auto e = features.size(2);
  if (next_extent >= e || next_extent <= 0 || (e - next_extent) % 2 != 0 || features.size(3) != e ||
      features.size(4) != e) {
    throw std::invalid_argument("crop_and_pass: cannot centre-crop extent " + std::to_string(e) + " to " +
                                std::to_string(next_extent));
  }
  const auto off = (e - next_extent) / 2;
  return features.narrow(2, off, next_extent).narrow(3, off, next_extent).narrow(4, off, next_extent);
}

ShallowFeatureExtractorImpl::ShallowFeatureExtractorImpl(int in_channels, int emb_channels) {
  conv = register_module("conv", torch::nn::Conv3d(torch::nn::Conv3dOptions(in_channels, emb_channels, 3).padding(1)));
}

torch::Tensor ShallowFeatureExtractorImpl::forward(const torch::Tensor& x) { return conv(x); }

PatchEmbedImpl::PatchEmbedImpl(int emb_channels, int patch) : patch_size(patch) {
  proj = register_module(
      "proj", torch::nn::Conv3d(torch::nn::Conv3dOptions(emb_channels, emb_channels, patch).stride(patch)));
}

torch::Tensor PatchEmbedImpl::forward(const torch::Tensor& features) {
  for (int a = 2; a < 5; ++a) {
    if (features.size(a) % patch_size != 0) {
      throw std::invalid_argument("embed_patches: spatial edge " + std::to_string(features.size(a)) +
                                  " not divisible by patch size " + std::to_string(patch_size));
    }
  }
  return proj(features).permute({0, 2, 3, 4, 1}).contiguous();
}

CarrierInitImpl::CarrierInitImpl(int emb_channels, int window, int cat_edge, std::int64_t token_edge)
    : stride(window / cat_edge) {
  if (stride < 1) throw std::invalid_argument("init_cats: floor(M/c) must be at least 1");
  check_divisible(token_edge, window, "init_cats");
  proj = register_module(
      "proj", torch::nn::Conv3d(torch::nn::Conv3dOptions(emb_channels, emb_channels, stride).stride(stride)));
  const auto g = token_edge / stride;
  pos_embed = register_parameter("pos_embed", torch::randn({1, g, g, g, emb_channels}) * 0.02);
}

torch::Tensor CarrierInitImpl::forward(const torch::Tensor& ites) {
  auto x = ites.permute({0, 4, 1, 2, 3});
  auto cats = proj(x).permute({0, 2, 3, 4, 1});
  if (cats.size(1) != pos_embed.size(1)) {
    throw std::invalid_argument("init_cats: token grid does not match the configured geometry");
  }
  return cats + pos_embed;
}

}  // namespace mtvnet
