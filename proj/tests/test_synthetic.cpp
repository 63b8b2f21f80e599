#include <gtest/gtest.h>

#include "mtvnet/synthetic.hpp"
#include "support/oracles.hpp"

using namespace mtvnet;

TEST(Synthetic, CorporaAreDeterministic) {
  for (const char* gen : {"ellipsoid", "noise", "trabecular"}) {
    GeneratorSpec spec{gen, 2, 16, 42, 3.0};
    auto a = make_synthetic_corpus(spec);
    auto b = make_synthetic_corpus(spec);
    ASSERT_EQ(a.size(), 2u);
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_TRUE(torch::equal(a[i].data, b[i].data)) << gen;
      EXPECT_EQ(a[i].name, std::string(gen) + "_" + std::to_string(i));
    }
    EXPECT_FALSE(torch::equal(a[0].data, a[1].data)) << gen;
    spec.seed = 43;
    EXPECT_FALSE(torch::equal(make_synthetic_corpus(spec)[0].data, a[0].data)) << gen;
  }
}

TEST(Synthetic, IntensitiesSpanTheUnitInterval) {
  for (const char* gen : {"ellipsoid", "noise", "trabecular"}) {
    auto v = make_synthetic_corpus({gen, 1, 16, 7, 3.0})[0];
    EXPECT_EQ(v.data.sizes(), (std::vector<std::int64_t>{1, 16, 16, 16}));
    EXPECT_EQ(v.data.scalar_type(), torch::kFloat32);
    EXPECT_NEAR(v.data.min().item<double>(), 0.0, 1e-6) << gen;
    EXPECT_NEAR(v.data.max().item<double>(), 1.0, 1e-6) << gen;
  }
}

TEST(Synthetic, UnknownGeneratorThrows) {
  EXPECT_THROW(make_synthetic_corpus({"cube", 1, 16, 0, 3.0}), std::invalid_argument);
}

TEST(Synthetic, EllipsoidRenderingFollowsTheImplicitSurface) {
  Ellipsoid e{{4.0, 5.0, 6.0}, {2.0, 3.0, 1.5}, 0.8};
  auto v = render_ellipsoids({e}, 12);
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 12; ++j)
      for (int k = 0; k < 12; ++k) {
        const double r2 = std::pow((i + 0.5 - 4.0) / 2.0, 2) + std::pow((j + 0.5 - 5.0) / 3.0, 2) +
                          std::pow((k + 0.5 - 6.0) / 1.5, 2);
        const float want = r2 <= 1.0 ? 0.8f : 0.0f;
        ASSERT_EQ(v.data[0][i][j][k].item<float>(), want) << i << "," << j << "," << k;
      }
}

TEST(Synthetic, PhantomForegroundIsTheOuterEllipsoid) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    std::mt19937_64 layout_rng(seed), phantom_rng(seed);
    auto layout = ellipsoid_phantom_layout(24, layout_rng);
    auto outer = render_ellipsoids({layout.front()}, 24);
    auto phantom = make_ellipsoid_phantom(24, phantom_rng);
    EXPECT_TRUE(torch::equal(foreground_mask(phantom), foreground_mask(outer))) << seed;
  }
}

TEST(Synthetic, NoiseIsBandLimited) {
  std::mt19937_64 rng(5);
  const int e = 8;
  const double cutoff = 2.0;
  auto v = make_band_limited_noise(e, cutoff, rng);
  auto power = oracle::dft3_power(v.data[0]);
  auto freq = [&](int i) { return i <= e / 2 ? i : i - e; };
  double inside = 0, outside = 0;
  for (int a = 0; a < e; ++a)
    for (int b = 0; b < e; ++b)
      for (int c = 0; c < e; ++c) {
        const double p = power[static_cast<std::size_t>((a * e + b) * e + c)];
        const int k2 = freq(a) * freq(a) + freq(b) * freq(b) + freq(c) * freq(c);
        (k2 <= cutoff * cutoff ? inside : outside) += p;
      }
  EXPECT_GT(inside, 0.0);
  // float32 storage leaves only rounding noise above the cutoff.
  EXPECT_LT(outside / inside, 1e-10);
}
