#include <gtest/gtest.h>

#include "mtvnet/evaluator.hpp"
#include "mtvnet/metrics.hpp"
#include "support/oracles.hpp"

using namespace mtvnet;

namespace {

class ConstantModel : public SrModel {
 public:
  ConstantModel(int scale, int extent, double value) : scale_(scale), extent_(extent), value_(value) {}
  int scale() const override { return scale_; }
  std::vector<int> context_extents() const override { return {extent_}; }
  torch::Tensor predict(const std::vector<torch::Tensor>& c) override {
    ++calls;
    const auto n = c.front().size(0), len = static_cast<std::int64_t>(scale_) * extent_;
    return torch::full({n, c.front().size(1), len, len, len}, value_);
  }
  int calls = 0;

 private:
  int scale_, extent_;
  double value_;
};

}  // namespace

TEST(Tiling, OriginsOfTheReferenceLayout) {
  EXPECT_EQ(tile_origins(64, 32, 4), (std::vector<std::int64_t>{0, 28, 32}));
  EXPECT_EQ(tile_origins(32, 32, 4), (std::vector<std::int64_t>{0}));
  EXPECT_EQ(tile_origins(40, 16, 4), (std::vector<std::int64_t>{0, 12, 24}));
  EXPECT_THROW(tile_origins(10, 16, 4), std::invalid_argument);
  EXPECT_THROW(tile_origins(32, 16, 16), std::invalid_argument);
}

TEST(Tiling, TilesCoverEveryVoxelAndOverlapEnough) {
  for (std::int64_t n = 16; n <= 70; ++n) {
    for (std::int64_t overlap : {0, 2, 4}) {
      auto o = tile_origins(n, 16, overlap);
      std::vector<int> hits(static_cast<std::size_t>(n), 0);
      for (auto p : o) {
        ASSERT_GE(p, 0);
        ASSERT_LE(p + 16, n);
        for (std::int64_t i = p; i < p + 16; ++i) ++hits[static_cast<std::size_t>(i)];
      }
      for (auto h : hits) ASSERT_GE(h, 1) << n;
      for (std::size_t i = 1; i < o.size(); ++i) {
        ASSERT_GT(o[i], o[i - 1]);
        ASSERT_GE(o[i - 1] + 16 - o[i], overlap);
      }
    }
  }
}

TEST(Tiling, BlendWeightsArePositiveEverywhere) {
  auto plan = make_tiling_plan({40, 16, 29}, 16, 2, 4);
  EXPECT_EQ(plan.tile_count(), 3u * 1u * 3u);
  auto field = blend_weight_field(plan);
  EXPECT_EQ(field.sizes(), (std::vector<std::int64_t>{80, 32, 58}));
  EXPECT_GT(field.min().item<double>(), 0.0);
}

TEST(Tiling, ProfilesFormAPartitionOfUnityOnRegularBands) {
  auto o = tile_origins(64, 32, 4);
  auto total = torch::zeros({128}, torch::kFloat64);
  for (std::size_t i = 0; i < o.size(); ++i) total.narrow(0, o[i] * 2, 64).add_(blend_profile(o, i, 32, 2));
  // Tiles 0/1 share an 8-voxel HR band, tiles 1/2 a 56-voxel band; tile 0
  // and tile 2 overlap as well, so only the regions without triple overlap
  // are exact unit sums.
  EXPECT_LT((total.narrow(0, 0, 56) - 1).abs().max().item<double>(), 1e-12);
  EXPECT_EQ(blend_profile(o, 0, 32, 2)[0].item<double>(), 1.0);
}

TEST(Reconstruct, ConstantPredictionsStayConstant) {
  Volume lr;
  lr.data = torch::rand({1, 23, 17, 30});
  ConstantModel model(2, 16, 0.375);
  auto sr = reconstruct(lr, model, {4, 3});
  EXPECT_EQ(sr.data.sizes(), (std::vector<std::int64_t>{1, 46, 34, 60}));
  EXPECT_LT((sr.data - 0.375).abs().max().item<double>(), 1e-6);
  EXPECT_EQ(model.calls, 4);  // 2 x 2 x 3 tiles in batches of 3
}

TEST(Reconstruct, TiledTrilinearEqualsWholeVolume) {
  torch::manual_seed(4);
  Volume lr;
  lr.data = torch::rand({2, 20, 24, 18});
  TrilinearUpsampler model(3, 8);
  auto tiled = reconstruct(lr, model);
  auto whole = upsample_trilinear(lr.data, 3);
  EXPECT_LT((tiled.data - whole).abs().max().item<double>(), 1e-5);
}

TEST(Reconstruct, IsDeterministic) {
  Volume lr;
  lr.data = torch::rand({1, 20, 20, 20});
  TrilinearUpsampler model(2, 16);
  EXPECT_TRUE(torch::equal(reconstruct(lr, model).data, reconstruct(lr, model, {4, 1}).data));
}

TEST(Metrics, HandCase) {
  auto a = torch::full({8, 8}, 0.5);
  auto b = torch::full({8, 8}, 0.75);
  EXPECT_NEAR(psnr(a, b), 10.0 * std::log10(16.0), 1e-9);
  EXPECT_NEAR(psnr(a, b), 12.0412, 1e-3);
  EXPECT_NEAR(ssim(a, b), (0.75 + 1e-4) / (0.8125 + 1e-4), 1e-12);
  EXPECT_NEAR(nrmse(a, b), 0.25 / 0.75, 1e-12);
}

TEST(Metrics, IdenticalSlicesHitTheCap) {
  auto a = torch::rand({9, 9});
  EXPECT_EQ(psnr(a, a), kPsnrCap);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
  EXPECT_EQ(nrmse(a, a), 0.0);
  auto z = torch::zeros({9, 9});
  EXPECT_EQ(nrmse(z, z), 0.0);
  EXPECT_TRUE(std::isinf(nrmse(a, z)));
  EXPECT_THROW(ssim(torch::zeros({6, 9}), torch::zeros({6, 9})), std::invalid_argument);
}

TEST(Metrics, MatchLoopReferenceOnRandomSlices) {
  torch::manual_seed(8);
  for (int t = 0; t < 10; ++t) {
    auto ref = torch::rand({12, 15});
    auto pred = (ref + 0.1 * torch::randn({12, 15})).clamp(0, 1);
    EXPECT_NEAR(psnr(pred, ref), oracle::psnr(pred, ref), 1e-9);
    EXPECT_NEAR(ssim(pred, ref), oracle::ssim(pred, ref), 1e-9);
    EXPECT_NEAR(nrmse(pred, ref), oracle::nrmse(pred, ref), 1e-9);
  }
}

TEST(SliceMetrics, OnlyForegroundSlicesCount) {
  auto ref = torch::zeros({1, 8, 8, 4});
  ref.select(3, 1).fill_(0.5);                              // full foreground
  ref.select(3, 2).narrow(1, 0, 2).narrow(2, 0, 8).fill_(0.5);  // 16 of 64 voxels
  ref.select(3, 3).narrow(1, 0, 1).fill_(0.5);              // 8 of 64 voxels
  auto pred = ref + 0.01;
  auto m = slice_metrics(pred, ref, "v");
  EXPECT_EQ(m.slices_used, 2);
  EXPECT_FALSE(m.skipped);
  EXPECT_NEAR(m.psnr, 40.0, 1e-4);

  auto empty = slice_metrics(pred, torch::zeros_like(ref));
  EXPECT_TRUE(empty.skipped);
  EXPECT_THROW(slice_metrics(pred, ref.narrow(3, 0, 3)), std::invalid_argument);
}

TEST(Evaluate, SkippedVolumesDoNotEnterTheMean) {
  Volume hr;
  hr.data = torch::zeros({1, 32, 32, 32});
  hr.data.narrow(1, 4, 24).narrow(2, 4, 24).fill_(0.5);
  hr.name = "solid";
  Volume blank;
  blank.data = torch::zeros({1, 32, 32, 32});
  blank.name = "blank";
  std::vector<VolumePair> pairs{{hr, degrade(hr, 2, false)}, {blank, degrade(blank, 2, false)}};
  TrilinearUpsampler model(2, 16);
  std::vector<Volume> preds;
  auto report = evaluate(pairs, model, {}, &preds);
  ASSERT_EQ(report.volumes.size(), 2u);
  EXPECT_EQ(report.volumes_used, 1);
  EXPECT_TRUE(report.volumes[1].skipped);
  EXPECT_DOUBLE_EQ(report.mean_psnr, report.volumes[0].psnr);
  EXPECT_EQ(preds.size(), 2u);
  auto csv = report.to_csv();
  EXPECT_EQ(csv.rfind("volume,psnr,ssim,nrmse,slices_used,skipped\n", 0), 0u);
  EXPECT_NE(csv.find("blank,"), std::string::npos);
  EXPECT_NE(report.to_text().find("skipped"), std::string::npos);
}
