#include <gtest/gtest.h>

#include "mtvnet/tokenizer.hpp"
#include "support/oracles.hpp"

using namespace mtvnet;
using oracle::flat3;
using oracle::unflat3;

TEST(Tokenizer, PartitionPlacesTokensByWindowAndOffset) {
  const std::int64_t n = 2, g = 6, m = 3, c = 2;
  auto grid = torch::randn({n, g, g, g, c});
  auto win = window_partition(grid, m);
  const std::int64_t nwe = g / m;
  ASSERT_EQ(win.sizes(), (std::vector<std::int64_t>{n * nwe * nwe * nwe, m * m * m, c}));
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t p = 0; p < g * g * g; ++p) {
      auto q = unflat3(p, g);
      const oracle::I3 w{q[0] / m, q[1] / m, q[2] / m};
      const oracle::I3 l{q[0] % m, q[1] % m, q[2] % m};
      ASSERT_TRUE(torch::equal(win[b * nwe * nwe * nwe + flat3(w, nwe)][flat3(l, m)], grid[b][q[0]][q[1]][q[2]]));
    }
}

TEST(Tokenizer, ShiftMovesSourceToOrigin) {
  const std::int64_t g = 5, s = 2;
  auto grid = torch::randn({1, g, g, g, 3});
  auto shifted = cyclic_shift(grid, s);
  for (std::int64_t p = 0; p < g * g * g; ++p) {
    auto q = unflat3(p, g);
    ASSERT_TRUE(torch::equal(shifted[0][q[0]][q[1]][q[2]],
                             grid[0][(q[0] + s) % g][(q[1] + s) % g][(q[2] + s) % g]));
  }
}

TEST(Tokenizer, RoundTripsAreBitIdentical) {
  for (std::int64_t m : {2, 4}) {
    auto grid = torch::randn({3, 8, 8, 8, 5});
    EXPECT_TRUE(torch::equal(window_reverse(window_partition(grid, m), m, 3, 8), grid));
    EXPECT_TRUE(torch::equal(cyclic_unshift(cyclic_shift(grid, m / 2), m / 2), grid));
  }
}

TEST(Tokenizer, GeometryErrors) {
  EXPECT_THROW(window_partition(torch::zeros({1, 6, 6, 6, 2}), 4), std::invalid_argument);
  EXPECT_THROW(window_reverse(torch::zeros({7, 8, 2}), 2, 1, 4), std::invalid_argument);
  EXPECT_THROW(build_shift_masks(6, 4, 2, true), std::invalid_argument);
}

TEST(Tokenizer, UnshiftedMasksAdmitEverything) {
  auto masks = build_shift_masks(8, 4, 2, false);
  EXPECT_EQ(masks.sizes(), (std::vector<std::int64_t>{8, 72, 72}));
  EXPECT_TRUE(masks.all().item<bool>());
}

TEST(Tokenizer, ShiftedMasksMatchGlobalCoordinates) {
  for (auto [g, m, c] : {std::tuple<std::int64_t, int, int>{8, 4, 2}, {8, 4, 0}, {12, 4, 2}, {8, 2, 2}}) {
    auto masks = build_shift_masks(g, m, c, true);
    const auto nw = (g / m) * (g / m) * (g / m);
    ASSERT_EQ(masks.size(0), nw);
    for (std::int64_t w = 0; w < nw; ++w) {
      ASSERT_TRUE(torch::equal(masks[w], oracle::window_mask(g, m, c, true, w)))
          << "grid " << g << " M " << m << " c " << c << " window " << w;
    }
  }
}

TEST(Tokenizer, InteriorWindowsAreUnmasked) {
  auto masks = build_shift_masks(12, 4, 2, true);
  // Window (0,0,0) never holds wrapped tokens; the corner window (2,2,2)
  // splits into eight regions.
  EXPECT_TRUE(masks[0].all().item<bool>());
  auto corner = masks[26];
  EXPECT_EQ(corner.sum().item<std::int64_t>(), 8 * (8 + 1) * (8 + 1));
}

TEST(Tokenizer, MaskTextExport) {
  auto m = torch::tensor({1, 0, 0, 1}, torch::kBool).reshape({2, 2});
  EXPECT_EQ(mask_to_text(m), "10\n01\n");
}

TEST(Tokenizer, RelativePositionIndexMatchesOffsets) {
  const std::int64_t m = 3, span = 2 * m - 1;
  auto idx = relative_position_index(m);
  ASSERT_EQ(idx.sizes(), (std::vector<std::int64_t>{27, 27}));
  for (std::int64_t i = 0; i < 27; ++i)
    for (std::int64_t j = 0; j < 27; ++j) {
      auto a = unflat3(i, m), b = unflat3(j, m);
      const auto want = ((a[0] - b[0] + 2) * span + (a[1] - b[1] + 2)) * span + (a[2] - b[2] + 2);
      ASSERT_EQ(idx[i][j].item<std::int64_t>(), want);
    }
  EXPECT_EQ(idx.max().item<std::int64_t>(), span * span * span - 1);
  EXPECT_TRUE(torch::equal(idx.diagonal(), torch::full({27}, (span * span * span - 1) / 2, torch::kLong)));
}

TEST(Tokenizer, CropAndPassTakesTheCentre) {
  auto f = torch::randn({1, 2, 8, 8, 8});
  auto c = crop_and_pass(f, 4);
  EXPECT_TRUE(torch::equal(c, f.slice(2, 2, 6).slice(3, 2, 6).slice(4, 2, 6)));
  EXPECT_THROW(crop_and_pass(f, 5), std::invalid_argument);
  EXPECT_THROW(crop_and_pass(f, 8), std::invalid_argument);
}

TEST(Tokenizer, ShallowFeaturesAreAPaddedConvolution) {
  torch::manual_seed(1);
  ShallowFeatureExtractor sfe(2, 3);
  auto x = torch::randn({1, 2, 5, 5, 5});
  auto y = sfe(x)[0];
  auto want = oracle::conv3d(x[0], sfe->conv->weight, sfe->conv->bias, 1, 1);
  EXPECT_LT((y.to(torch::kFloat64) - want).abs().max().item<double>(), 1e-5);
}

TEST(Tokenizer, PatchEmbeddingIsAStridedConvolutionToChannelsLast) {
  torch::manual_seed(2);
  PatchEmbed embed(3, 2);
  auto x = torch::randn({1, 3, 6, 6, 6});
  auto y = embed(x);
  ASSERT_EQ(y.sizes(), (std::vector<std::int64_t>{1, 3, 3, 3, 3}));
  auto want = oracle::conv3d(x[0], embed->proj->weight, embed->proj->bias, 2, 0).permute({1, 2, 3, 0});
  EXPECT_LT((y[0].to(torch::kFloat64) - want).abs().max().item<double>(), 1e-5);
  EXPECT_THROW(embed(torch::randn({1, 3, 5, 6, 6})), std::invalid_argument);
}

TEST(Tokenizer, CarrierTokensSummariseTheirOwnWindow) {
  torch::manual_seed(3);
  const int M = 4, c = 2;
  const std::int64_t G = 8, C = 4;
  CarrierInit init(C, M, c, G);
  auto ites = torch::randn({1, G, G, G, C});
  auto base = init(ites);
  ASSERT_EQ(base.sizes(), (std::vector<std::int64_t>{1, 4, 4, 4, C}));
  // Perturb one ITE window; only the CAT block of that window may move.
  auto pert = ites.clone();
  pert.slice(1, 4, 8).slice(2, 0, 4).slice(3, 4, 8) += 1.0;
  auto moved = (init(pert) - base).abs().sum(-1) > 0;
  auto expect = torch::zeros({4, 4, 4}, torch::kBool);
  expect.slice(0, 2, 4).slice(1, 0, 2).slice(2, 2, 4).fill_(true);
  EXPECT_TRUE(torch::equal(moved[0], expect));
}

TEST(Tokenizer, CoShiftKeepsCarriersAlignedWithTheirWindows) {
  torch::manual_seed(4);
  const int M = 4, c = 2;
  CarrierInit init(6, M, c, 8);
  {
    torch::NoGradGuard g;
    init->pos_embed.zero_();
  }
  auto ites = torch::randn({2, 8, 8, 8, 6});
  auto a = cyclic_shift(init(ites), c / 2);
  auto b = init(cyclic_shift(ites, M / 2));
  EXPECT_LT((a - b).abs().max().item<double>(), 1e-6);
}
