#include <gtest/gtest.h>

#include "mtvnet/attention.hpp"
#include "mtvnet/instrumentation.hpp"
#include "support/oracles.hpp"

using namespace mtvnet;

class AttentionTest : public ::testing::Test {
 protected:
  void SetUp() override {
    torch::manual_seed(17);
    mha = MultiHeadAttention(8, 2);
    mha->to(torch::kFloat64);
  }
  MultiHeadAttention mha{nullptr};
};

TEST_F(AttentionTest, MatchesLoopReference) {
  auto q = torch::randn({1, 5, 8}, torch::kFloat64);
  auto kv = torch::randn({1, 7, 8}, torch::kFloat64);
  auto got = mha(q, kv)[0];
  auto want = oracle::mha(*mha, q[0], kv[0]);
  EXPECT_LT((got - want).abs().max().item<double>(), 1e-12);
}

TEST_F(AttentionTest, SingleKeyReturnsItsProjectedValue) {
  auto q = torch::randn({2, 3, 8}, torch::kFloat64);
  auto kv = torch::randn({2, 1, 8}, torch::kFloat64);
  auto got = mha(q, kv);
  auto want = mha->out_proj(mha->v_proj(kv)).expand({2, 3, 8});
  EXPECT_LT((got - want).abs().max().item<double>(), 1e-12);
}

TEST_F(AttentionTest, WeightsAreRowStochastic) {
  auto q = torch::randn({3, 4, 8}, torch::kFloat64);
  auto kv = torch::randn({3, 6, 8}, torch::kFloat64);
  auto w = mha->attention_weights(q, kv);
  ASSERT_EQ(w.sizes(), (std::vector<std::int64_t>{3, 2, 4, 6}));
  EXPECT_LT((w.sum(-1) - 1).abs().max().item<double>(), 1e-12);
  EXPECT_GE(w.min().item<double>(), 0.0);
}

TEST_F(AttentionTest, MaskedKeysGetExactlyZeroWeight) {
  auto x = torch::randn({1, 4, 8}, torch::kFloat64);
  auto mask = torch::tensor({1, 0, 1, 0}, torch::kBool).view({1, 1, 1, 4});
  auto w = mha->attention_weights(x, x, {}, mask);
  EXPECT_EQ(w.select(3, 1).abs().max().item<double>(), 0.0);
  EXPECT_EQ(w.select(3, 3).abs().max().item<double>(), 0.0);
  // Masking equals dropping the keys.
  auto kept = torch::tensor({0, 2}, torch::kLong);
  auto sub = mha(x, x.index_select(1, kept));
  EXPECT_LT((mha->forward(x, x, {}, mask) - sub).abs().max().item<double>(), 1e-12);
}

TEST_F(AttentionTest, BiasIsAddedToLogits) {
  auto q = torch::randn({1, 3, 8}, torch::kFloat64);
  auto kv = torch::randn({1, 3, 8}, torch::kFloat64);
  auto bias = torch::randn({2, 3, 3}, torch::kFloat64);
  auto w = mha->attention_weights(q, kv, bias);
  auto w0 = mha->attention_weights(q, kv);
  // Ratios of weights shift by exp(bias difference).
  for (int h = 0; h < 2; ++h) {
    const double lhs = std::log(w[0][h][1][0].item<double>() / w[0][h][1][2].item<double>());
    const double rhs = std::log(w0[0][h][1][0].item<double>() / w0[0][h][1][2].item<double>()) +
                       bias[h][1][0].item<double>() - bias[h][1][2].item<double>();
    EXPECT_NEAR(lhs, rhs, 1e-10);
  }
}

TEST_F(AttentionTest, RecordsWeightsOnlyWhenAsked) {
  ActivationRecorder rec;
  auto x = torch::randn({1, 4, 8}, torch::kFloat64);
  {
    ScopedActivationRecorder scope(rec);
    mha(x, x);
    EXPECT_TRUE(rec.counts().empty());
    mha->record_key = "probe";
    mha(x, x);
  }
  EXPECT_EQ(rec.counts().at("probe"), 2 * 4 * 4);
  mha(x, x);
  EXPECT_EQ(rec.total(), 32);
}

TEST(Attention, CosineScoresIgnoreMagnitude) {
  torch::manual_seed(3);
  MultiHeadAttention cos(8, 2, AttentionScore::kCosine);
  auto q = torch::randn({1, 3, 8});
  auto kv = torch::randn({1, 4, 8});
  auto w = cos->attention_weights(q, kv);
  EXPECT_LT((w.sum(-1) - 1).abs().max().item<double>(), 1e-6);
  EXPECT_EQ(cos->logit_scale.sizes(), (std::vector<std::int64_t>{2, 1, 1}));
}

TEST(Attention, RelativeBiasLooksUpTheTable) {
  torch::manual_seed(5);
  RelativePositionBias rb(2, 3);
  auto b = rb->forward();
  ASSERT_EQ(b.sizes(), (std::vector<std::int64_t>{3, 8, 8}));
  // Token 0 = (0,0,0), token 7 = (1,1,1): offset (-1,-1,-1) -> table row 0.
  EXPECT_TRUE(torch::equal(b.select(1, 0).select(1, 7), rb->table[0]));
  EXPECT_TRUE(torch::equal(b.select(1, 7).select(1, 0), rb->table[26]));
  auto p = rb->padded(4);
  EXPECT_EQ(p.sizes(), (std::vector<std::int64_t>{3, 12, 12}));
  EXPECT_EQ(p.slice(1, 8).abs().max().item<double>(), 0.0);
  EXPECT_EQ(p.slice(2, 8).abs().max().item<double>(), 0.0);
}

TEST(Attention, RelativeIndexSurvivesDtypeCasts) {
  RelativePositionBias rb(2, 1);
  rb->to(torch::kFloat64);
  EXPECT_EQ(rb->index.scalar_type(), torch::kLong);
  EXPECT_EQ(rb->forward().scalar_type(), torch::kFloat64);
}
