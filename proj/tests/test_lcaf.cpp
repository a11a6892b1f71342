#include <gtest/gtest.h>

#include <cmath>

#include "befunet/gradcheck.hpp"
#include "befunet/lcaf.hpp"
#include "oracles.hpp"

using namespace befunet;

namespace {

Tensor<double> rand_tensor(Rng& rng, std::vector<int> shape, double lo = -1.0,
                           double hi = 1.0) {
  std::vector<double> v(detail::shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>::from_data(std::move(shape), std::move(v));
}

void set_identity(LinearLayer<double>& l) {
  const int d = l.w.dim(0);
  for (auto& v : l.w.value()) v = 0.0;
  for (int i = 0; i < d; ++i) l.w.value()[static_cast<std::size_t>(i) * d + i] = 1.0;
  if (l.b.defined())
    for (auto& v : l.b.value()) v = 0.0;
}

Lcaf<double> make_lcaf(Rng& rng, int dim, int wh, int ww, int heads,
                       LcafResidual res = LcafResidual::kBody) {
  LcafConfig cfg;
  cfg.win_h = wh;
  cfg.win_w = ww;
  cfg.heads = heads;
  cfg.residual = res;
  return Lcaf<double>(dim, cfg, rng);
}

}  // namespace

TEST(AttentionCost, PaperExampleValues) {
  const auto c = attention_cost(14, 14, 96, 7, 7);
  EXPECT_EQ(c.gca, 14601216ull);
  EXPECT_EQ(c.lca, 9069312ull);
}

TEST(AttentionCost, FullWindowEqualsGlobal) {
  const auto c = attention_cost(12, 10, 32, 12, 10);
  EXPECT_EQ(c.lca, c.gca);
}

TEST(AttentionCost, NonPositiveArgsRejected) {
  EXPECT_THROW(attention_cost(0, 14, 96, 7, 7), ConfigError);
  EXPECT_THROW(attention_cost(14, 14, 96, 7, -1), ConfigError);
}

TEST(AttentionCost, LocalNeverExceedsGlobal) {
  Rng rng(51);
  for (int t = 0; t < 1000; ++t) {
    const int h = rng.uniform_int(1, 64), w = rng.uniform_int(1, 64);
    const int c = rng.uniform_int(1, 256);
    const int hl = rng.uniform_int(1, h), wl = rng.uniform_int(1, w);
    const auto cost = attention_cost(h, w, c, hl, wl);
    EXPECT_LE(cost.lca, cost.gca);
  }
}

TEST(Lcaf, SingletonWindowIsValueProjection) {
  Rng rng(52);
  auto lcaf = make_lcaf(rng, 6, 1, 1, 1);
  auto xe = rand_tensor(rng, {16, 6});
  auto xb = rand_tensor(rng, {16, 6});
  Ctx<double> ctx;
  AttnProbe<double> probe;
  ctx.probe = &probe;
  TokenGrid<double> ge(xe, 4, 4), gb(xb, 4, 4);
  const auto out = lcaf.local_cross_attention(ctx, ge, gb);
  // every window holds one token: the attention weight is exactly 1
  for (const auto& rec : probe.records) {
    ASSERT_EQ(rec.rows, 1);
    ASSERT_EQ(rec.cols, 1);
    EXPECT_DOUBLE_EQ(rec.probs[0], 1.0);
  }
  const auto ref = oracle::linear(xb.value(), 16, 6, lcaf.wv.w.value(), 6,
                                  &lcaf.wv.b.value());
  for (std::size_t i = 0; i < ref.size(); ++i)
    EXPECT_NEAR(out.value()[i], ref[i], 1e-12);
}

TEST(Lcaf, IdenticalModalitiesIdentityProjections) {
  Rng rng(53);
  auto lcaf = make_lcaf(rng, 4, 2, 2, 1);
  set_identity(lcaf.wq);
  set_identity(lcaf.wk);
  set_identity(lcaf.wv);
  auto x = rand_tensor(rng, {16, 4});
  Ctx<double> ctx;
  TokenGrid<double> g(x, 4, 4);
  const auto out = lcaf.local_cross_attention(ctx, g, g);
  // per window: softmax(x x^T / sqrt(d)) x, evaluated by the oracle
  const auto ref = oracle::lca(lcaf, x.value(), x.value(), 4, 4);
  for (std::size_t i = 0; i < ref.size(); ++i)
    EXPECT_NEAR(out.value()[i], ref[i], 1e-10);
}

// The defining property: windowed cross-attention equals global
// cross-attention whose mask forbids cross-window pairs.
TEST(Lcaf, EqualsMaskRestrictedGlobalAttention) {
  Rng rng(54);
  for (int trial = 0; trial < 10; ++trial) {
    const int heads = trial % 2 == 0 ? 1 : 2;
    auto lcaf = make_lcaf(rng, 8, 2, 2, heads);
    auto xe = rand_tensor(rng, {24, 8}, -2.0, 2.0);
    auto xb = rand_tensor(rng, {24, 8}, -2.0, 2.0);
    const int h = 6, w = 4;
    Ctx<double> ctx;
    TokenGrid<double> ge(xe, h, w), gb(xb, h, w);
    const auto out = lcaf.local_cross_attention(ctx, ge, gb);

    // oracle: one global attention with an additive -1e9 cross-window mask
    const auto q = oracle::linear(xe.value(), h * w, 8, lcaf.wq.w.value(), 8,
                                  &lcaf.wq.b.value());
    const auto k = oracle::linear(xb.value(), h * w, 8, lcaf.wk.w.value(), 8,
                                  &lcaf.wk.b.value());
    const auto v = oracle::linear(xb.value(), h * w, 8, lcaf.wv.w.value(), 8,
                                  &lcaf.wv.b.value());
    std::vector<int> win_id(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        win_id[static_cast<std::size_t>(y) * w + x] = (y / 2) * (w / 2) + (x / 2);
    oracle::Vec mask(static_cast<std::size_t>(h) * w * h * w, 0.0);
    for (int i = 0; i < h * w; ++i)
      for (int j = 0; j < h * w; ++j)
        if (win_id[static_cast<std::size_t>(i)] != win_id[static_cast<std::size_t>(j)])
          mask[static_cast<std::size_t>(i) * h * w + j] = -1e9;
    const auto ref = oracle::mha(q, h * w, k, v, h * w, 8, heads, &mask);
    for (std::size_t i = 0; i < ref.size(); ++i)
      EXPECT_NEAR(out.value()[i], ref[i], 1e-8);
  }
}

TEST(Lcaf, SingleHeadMlcaComposition) {
  Rng rng(55);
  auto lcaf = make_lcaf(rng, 6, 2, 2, 1);
  auto xe = rand_tensor(rng, {16, 6});
  auto xb = rand_tensor(rng, {16, 6});
  Ctx<double> ctx;
  TokenGrid<double> ge(xe, 4, 4), gb(xb, 4, 4);
  const auto fused = lcaf.m_lca(ctx, ge, gb);
  // h=1: equals LCA -> Wo -> + residual, computed step by step
  const auto attn = lcaf.local_cross_attention(ctx, ge, gb);
  const auto projected = lcaf.wo.forward(ctx, attn);
  for (std::size_t i = 0; i < fused.numel(); ++i)
    EXPECT_NEAR(fused.value()[i], projected.value()[i] + xb.value()[i], 1e-12);
}

TEST(Lcaf, ZeroOutputProjectionGivesResidual) {
  Rng rng(56);
  for (auto res : {LcafResidual::kBody, LcafResidual::kEdge, LcafResidual::kSum}) {
    auto lcaf = make_lcaf(rng, 6, 2, 2, 2, res);
    for (auto& v : lcaf.wo.w.value()) v = 0.0;
    for (auto& v : lcaf.wo.b.value()) v = 0.0;
    auto xe = rand_tensor(rng, {16, 6});
    auto xb = rand_tensor(rng, {16, 6});
    Ctx<double> ctx;
    TokenGrid<double> ge(xe, 4, 4), gb(xb, 4, 4);
    const auto fused = lcaf.m_lca(ctx, ge, gb);
    for (std::size_t i = 0; i < fused.numel(); ++i) {
      const double want = res == LcafResidual::kBody ? xb.value()[i]
                          : res == LcafResidual::kEdge
                              ? xe.value()[i]
                              : xe.value()[i] + xb.value()[i];
      EXPECT_DOUBLE_EQ(fused.value()[i], want);
    }
  }
}

TEST(Lcaf, ZeroFfnGivesMlcaOutput) {
  Rng rng(57);
  auto lcaf = make_lcaf(rng, 6, 2, 2, 1);
  for (auto& v : lcaf.ffn.fc2.w.value()) v = 0.0;
  for (auto& v : lcaf.ffn.fc2.b.value()) v = 0.0;
  auto xe = rand_tensor(rng, {16, 6});
  auto xb = rand_tensor(rng, {16, 6});
  Ctx<double> ctx;
  TokenGrid<double> ge(xe, 4, 4), gb(xb, 4, 4);
  const auto full = lcaf.forward(ctx, ge, gb);
  const auto fused = lcaf.m_lca(ctx, ge, gb);
  for (std::size_t i = 0; i < fused.numel(); ++i)
    EXPECT_DOUBLE_EQ(full.tokens.value()[i], fused.value()[i]);
}

TEST(Lcaf, FullForwardMatchesOracle) {
  Rng rng(58);
  for (int trial = 0; trial < 5; ++trial) {
    auto lcaf = make_lcaf(rng, 8, 2, 2, 2);
    auto xe = rand_tensor(rng, {16, 8});
    auto xb = rand_tensor(rng, {16, 8});
    Ctx<double> ctx;
    TokenGrid<double> ge(xe, 4, 4), gb(xb, 4, 4);
    const auto out = lcaf.forward(ctx, ge, gb);
    EXPECT_EQ(out.tokens.shape(), xb.shape());
    const auto ref = oracle::lcaf_fused(lcaf, xe.value(), xb.value(), 4, 4);
    for (std::size_t i = 0; i < ref.size(); ++i)
      EXPECT_NEAR(out.tokens.value()[i], ref[i], 1e-8);
  }
}

TEST(Lcaf, AttentionRowsStochasticPerWindow) {
  Rng rng(63);
  auto lcaf = make_lcaf(rng, 8, 2, 2, 2);
  auto xe = rand_tensor(rng, {16, 8}, -3.0, 3.0);
  auto xb = rand_tensor(rng, {16, 8}, -3.0, 3.0);
  AttnProbe<double> probe;
  Ctx<double> ctx;
  ctx.probe = &probe;
  TokenGrid<double> ge(xe, 4, 4), gb(xb, 4, 4);
  lcaf.local_cross_attention(ctx, ge, gb);
  ASSERT_EQ(probe.records.size(), 8u);  // 4 windows x 2 heads
  for (const auto& rec : probe.records) {
    ASSERT_EQ(rec.rows, 4);
    ASSERT_EQ(rec.cols, 4);
    for (int r = 0; r < rec.rows; ++r) {
      double sum = 0;
      for (int c = 0; c < rec.cols; ++c) {
        EXPECT_GE(rec.probs[static_cast<std::size_t>(r) * rec.cols + c], 0.0);
        sum += rec.probs[static_cast<std::size_t>(r) * rec.cols + c];
      }
      EXPECT_NEAR(sum, 1.0, 1e-6);
    }
  }
}

TEST(Lcaf, ShapeMismatchRejected) {
  Rng rng(59);
  auto lcaf = make_lcaf(rng, 6, 2, 2, 1);
  auto xe = rand_tensor(rng, {16, 6});
  auto xb = rand_tensor(rng, {12, 6});
  Ctx<double> ctx;
  TokenGrid<double> ge(xe, 4, 4), gb(xb, 4, 3);
  EXPECT_THROW(lcaf.local_cross_attention(ctx, ge, gb), ShapeError);
}

// Measured projection and score/value counts match the closed forms.
TEST(Lcaf, MeasuredCountsMatchCostModel) {
  Rng rng(60);
  const int h = 8, w = 8, dim = 16;
  auto lcaf = make_lcaf(rng, dim, 2, 2, 2);
  auto xe = rand_tensor(rng, {h * w, dim});
  auto xb = rand_tensor(rng, {h * w, dim});
  OpCounter counter;
  Ctx<double> ctx;
  ctx.counter = &counter;
  LcafCost cost;
  TokenGrid<double> ge(xe, h, w), gb(xb, h, w);
  lcaf.m_lca(ctx, ge, gb, &cost);
  const std::uint64_t hw = static_cast<std::uint64_t>(h) * w;
  EXPECT_EQ(cost.projection_macs, 4 * hw * dim * dim);
  EXPECT_EQ(cost.attention_macs, 2ull * 2 * 2 * hw * dim);
}

// Doubling the token count at a fixed window changes cost-per-token by
// less than 5% (the linear-time property).
TEST(Lcaf, CountedCostScalesLinearlyInTokens) {
  Rng rng(61);
  const int dim = 16;
  auto lcaf = make_lcaf(rng, dim, 2, 2, 2);
  auto cost_at = [&](int h, int w) {
    auto xe = rand_tensor(rng, {h * w, dim});
    auto xb = rand_tensor(rng, {h * w, dim});
    OpCounter counter;
    Ctx<double> ctx;
    ctx.counter = &counter;
    LcafCost cost;
    TokenGrid<double> ge(xe, h, w), gb(xb, h, w);
    lcaf.m_lca(ctx, ge, gb, &cost);
    return cost.projection_macs + cost.attention_macs;
  };
  const double per_token_1 = static_cast<double>(cost_at(8, 8)) / 64.0;
  const double per_token_2 = static_cast<double>(cost_at(8, 16)) / 128.0;
  EXPECT_NEAR(per_token_2 / per_token_1, 1.0, 0.05);
}

TEST(Lcaf, GradcheckProjections) {
  Rng rng(62);
  auto lcaf = make_lcaf(rng, 4, 2, 2, 2);
  std::vector<double> ev(16 * 4), bv(16 * 4);
  for (auto& v : ev) v = rng.uniform(-1, 1);
  for (auto& v : bv) v = rng.uniform(-1, 1);
  auto xe = Tensor<double>::param({16, 4}, ev);
  auto xb = Tensor<double>::param({16, 4}, bv);
  auto mask = rand_tensor(rng, {16, 4});
  auto rep = check_gradients(
      [&lcaf, xe, xb, mask](Ctx<double>& ctx) {
        TokenGrid<double> ge(xe, 4, 4), gb(xb, 4, 4);
        return sum_all(ctx, mul(ctx, lcaf.m_lca(ctx, ge, gb), mask));
      },
      {xe, xb, lcaf.wq.w, lcaf.wk.w, lcaf.wv.w, lcaf.wo.w});
  EXPECT_TRUE(rep.pass) << rep.worst;
}
