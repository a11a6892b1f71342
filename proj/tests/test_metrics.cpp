#include <gtest/gtest.h>

#include <cmath>

#include "befunet/losses.hpp"
#include "befunet/metrics.hpp"
#include "befunet/rng.hpp"

using namespace befunet;

namespace {

BinaryMask random_mask(Rng& rng, int h, int w, double density) {
  BinaryMask m;
  m.h = h;
  m.w = w;
  m.v.resize(static_cast<std::size_t>(h) * w);
  for (auto& v : m.v) v = rng.next_double() < density ? 1 : 0;
  return m;
}

BinaryMask mask_from(int h, int w, std::vector<std::uint8_t> v) {
  return BinaryMask{h, w, std::move(v)};
}

// Brute-force reference: all-pairs distances over independently derived
// boundary sets, nearest-rank percentile.
double hausdorff_oracle(const BinaryMask& a, const BinaryMask& b, int pct) {
  auto boundary = [](const BinaryMask& m) {
    std::vector<std::pair<int, int>> pts;
    for (int y = 0; y < m.h; ++y)
      for (int x = 0; x < m.w; ++x) {
        if (!m.v[static_cast<std::size_t>(y) * m.w + x]) continue;
        bool edge = y == 0 || y == m.h - 1 || x == 0 || x == m.w - 1;
        for (int dy = -1; dy <= 1 && !edge; ++dy)
          for (int dx = -1; dx <= 1 && !edge; ++dx)
            if ((dy || dx) && !m.v[static_cast<std::size_t>(y + dy) * m.w + (x + dx)])
              edge = true;
        if (edge) pts.emplace_back(y, x);
      }
    return pts;
  };
  auto directed = [](const std::vector<std::pair<int, int>>& from,
                     const std::vector<std::pair<int, int>>& to, int pct2) {
    std::vector<double> ds;
    for (auto& p : from) {
      double best = 1e300;
      for (auto& q : to) {
        const double dy = p.first - q.first, dx = p.second - q.second;
        best = std::min(best, dy * dy + dx * dx);
      }
      ds.push_back(std::sqrt(best));
    }
    std::sort(ds.begin(), ds.end());
    std::size_t rank = static_cast<std::size_t>(
        std::ceil(pct2 / 100.0 * static_cast<double>(ds.size())));
    if (rank < 1) rank = 1;
    return ds[rank - 1];
  };
  const auto ba = boundary(a), bb = boundary(b);
  return std::max(directed(ba, bb, pct), directed(bb, ba, pct));
}

}  // namespace

TEST(ConfusionMetrics, IdenticalMasks) {
  Rng rng(101);
  const auto m = random_mask(rng, 8, 8, 0.4);
  EXPECT_DOUBLE_EQ(dice(m, m), 1.0);
  EXPECT_DOUBLE_EQ(iou(m, m), 1.0);
  EXPECT_DOUBLE_EQ(acc(m, m), 1.0);
}

TEST(ConfusionMetrics, DisjointMasks) {
  const auto a = mask_from(2, 2, {1, 1, 0, 0});
  const auto b = mask_from(2, 2, {0, 0, 1, 1});
  EXPECT_DOUBLE_EQ(dice(a, b), 0.0);
  EXPECT_DOUBLE_EQ(iou(a, b), 0.0);
}

TEST(ConfusionMetrics, HalfCoverageHandCounts) {
  // pred covers half of a 4-pixel gt, no false positives:
  // dice = 2*2 / (2*2 + 0 + 2) = 2/3
  const auto gt = mask_from(2, 4, {1, 1, 1, 1, 0, 0, 0, 0});
  const auto pred = mask_from(2, 4, {1, 1, 0, 0, 0, 0, 0, 0});
  const auto c = confusion(pred, gt);
  EXPECT_EQ(c.tp, 2u);
  EXPECT_EQ(c.fp, 0u);
  EXPECT_EQ(c.fn, 2u);
  EXPECT_EQ(c.tn, 4u);
  EXPECT_NEAR(dice(pred, gt), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(se(pred, gt), 0.5, 1e-12);
  EXPECT_DOUBLE_EQ(sp(pred, gt), 1.0);
}

TEST(ConfusionMetrics, CountsSumToPixelCount) {
  Rng rng(102);
  for (int t = 0; t < 50; ++t) {
    const auto a = random_mask(rng, 6, 7, rng.next_double());
    const auto b = random_mask(rng, 6, 7, rng.next_double());
    EXPECT_EQ(confusion(a, b).total(), 42u);
  }
}

TEST(ConfusionMetrics, EmptyConventions) {
  const auto empty = mask_from(2, 2, {0, 0, 0, 0});
  const auto full = mask_from(2, 2, {1, 1, 1, 1});
  EXPECT_DOUBLE_EQ(dice(empty, empty), 1.0);
  EXPECT_DOUBLE_EQ(iou(empty, empty), 1.0);
  EXPECT_DOUBLE_EQ(dice(empty, full), 0.0);
  EXPECT_DOUBLE_EQ(dice(full, empty), 0.0);
}

TEST(ConfusionMetrics, RatiosStayInUnitInterval) {
  Rng rng(103);
  for (int t = 0; t < 500; ++t) {
    const auto a = random_mask(rng, 5, 5, rng.next_double());
    const auto b = random_mask(rng, 5, 5, rng.next_double());
    for (double v : {dice(a, b), iou(a, b), se(a, b), sp(a, b), acc(a, b)}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(ConfusionMetrics, ShapeMismatchRejected) {
  const auto a = mask_from(2, 2, {1, 0, 0, 1});
  const auto b = mask_from(1, 4, {1, 0, 0, 1});
  EXPECT_THROW(confusion(a, b), ShapeError);
}

TEST(Hausdorff, IdenticalMasksGiveZero) {
  Rng rng(104);
  for (int t = 0; t < 10; ++t) {
    auto m = random_mask(rng, 10, 10, 0.3);
    if (m.empty_mask()) m.v[0] = 1;
    EXPECT_DOUBLE_EQ(hausdorff(m, m, 100), 0.0);
    EXPECT_DOUBLE_EQ(hausdorff(m, m, 95), 0.0);
  }
}

TEST(Hausdorff, SinglePixelsThreeFourFive) {
  BinaryMask a{5, 5, std::vector<std::uint8_t>(25, 0)};
  BinaryMask b = a;
  a.v[0] = 1;                 // (0,0)
  b.v[3 * 5 + 4] = 1;         // (3,4)
  EXPECT_DOUBLE_EQ(hausdorff(a, b, 100), 5.0);
}

TEST(Hausdorff, SymmetricInArguments) {
  Rng rng(105);
  for (int t = 0; t < 20; ++t) {
    auto a = random_mask(rng, 12, 12, 0.3);
    auto b = random_mask(rng, 12, 12, 0.3);
    if (a.empty_mask()) a.v[5] = 1;
    if (b.empty_mask()) b.v[7] = 1;
    EXPECT_DOUBLE_EQ(hausdorff(a, b, 100), hausdorff(b, a, 100));
    EXPECT_DOUBLE_EQ(hausdorff(a, b, 95), hausdorff(b, a, 95));
  }
}

TEST(Hausdorff, EmptyMaskRejected) {
  const auto empty = mask_from(2, 2, {0, 0, 0, 0});
  const auto full = mask_from(2, 2, {1, 1, 1, 1});
  EXPECT_THROW(hausdorff(empty, full, 100), UndefinedMetricError);
  EXPECT_THROW(hausdorff(full, empty, 95), UndefinedMetricError);
}

TEST(Hausdorff, MatchesBruteForceOracleExactly) {
  Rng rng(106);
  for (int t = 0; t < 60; ++t) {
    auto a = random_mask(rng, 16, 16, rng.uniform(0.1, 0.6));
    auto b = random_mask(rng, 16, 16, rng.uniform(0.1, 0.6));
    if (a.empty_mask()) a.v[3] = 1;
    if (b.empty_mask()) b.v[9] = 1;
    EXPECT_EQ(hausdorff(a, b, 100), hausdorff_oracle(a, b, 100));
    EXPECT_EQ(hausdorff(a, b, 95), hausdorff_oracle(a, b, 95));
  }
}

TEST(Hausdorff, BoundaryPointsTouchComplementOrBorder) {
  Rng rng(107);
  const auto m = random_mask(rng, 9, 9, 0.5);
  for (const auto& [y, x] : boundary_points(m)) {
    EXPECT_EQ(m.v[static_cast<std::size_t>(y) * m.w + x], 1);
    bool ok = false;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int ny = y + dy, nx = x + dx;
        if (ny < 0 || ny >= m.h || nx < 0 || nx >= m.w) ok = true;
        else if (!m.v[static_cast<std::size_t>(ny) * m.w + nx]) ok = true;
      }
    EXPECT_TRUE(ok);
  }
}

// Cross-module consistency: dice(A,B) == 1 - dice_loss(A,B) for binary
// masks, up to the smoothing epsilon.
TEST(Hausdorff, DiceMatchesOneMinusDiceLoss) {
  Rng rng(108);
  Ctx<double> ctx;
  for (int t = 0; t < 50; ++t) {
    const auto a = random_mask(rng, 8, 8, rng.next_double());
    const auto b = random_mask(rng, 8, 8, rng.next_double());
    std::vector<double> av(a.v.begin(), a.v.end()), bv(b.v.begin(), b.v.end());
    const double dl =
        dice_loss(ctx, Tensor<double>::from_data({64}, av),
                  Tensor<double>::from_data({64}, bv))
            .item();
    EXPECT_NEAR(dice(a, b), 1.0 - dl, 1e-6);
  }
}

TEST(EvaluateDataset, PerfectPredictionsScorePerfectly) {
  Rng rng(109);
  std::vector<std::vector<std::uint8_t>> gts;
  for (int i = 0; i < 3; ++i) {
    std::vector<std::uint8_t> m(64, 0);
    for (auto& v : m) v = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
    gts.push_back(m);
  }
  const auto rep = evaluate_predictions(gts, gts, 8, 8, 3);
  EXPECT_DOUBLE_EQ(rep.mean_dice, 1.0);
  for (const auto& c : rep.per_class) {
    EXPECT_DOUBLE_EQ(c.dice, 1.0);
    if (!std::isnan(c.hd95)) EXPECT_DOUBLE_EQ(c.hd95, 0.0);
  }
}

TEST(EvaluateDataset, ConstantBackgroundScoresZeroDice) {
  std::vector<std::uint8_t> gt(64, 0);
  for (int i = 20; i < 40; ++i) gt[static_cast<std::size_t>(i)] = 1;
  const std::vector<std::uint8_t> pred(64, 0);
  const auto rep = evaluate_predictions({pred}, {gt}, 8, 8, 2);
  EXPECT_DOUBLE_EQ(rep.per_class[0].dice, 0.0);
  EXPECT_TRUE(std::isnan(rep.per_class[0].hd95));  // undefined, reported missing
}

TEST(EvaluateDataset, ThreeSampleToySetMatchesPerSampleMetrics) {
  std::vector<std::vector<std::uint8_t>> gts, preds;
  Rng rng(110);
  for (int i = 0; i < 3; ++i) {
    std::vector<std::uint8_t> g(16), p(16);
    for (auto& v : g) v = static_cast<std::uint8_t>(rng.uniform_int(0, 1));
    for (auto& v : p) v = static_cast<std::uint8_t>(rng.uniform_int(0, 1));
    gts.push_back(g);
    preds.push_back(p);
  }
  const auto rep = evaluate_predictions(preds, gts, 4, 4, 2);
  double want = 0;
  for (int i = 0; i < 3; ++i)
    want += dice(class_mask(preds[static_cast<std::size_t>(i)], 4, 4, 1),
                 class_mask(gts[static_cast<std::size_t>(i)], 4, 4, 1));
  EXPECT_NEAR(rep.per_class[0].dice, want / 3.0, 1e-12);
}

TEST(EvaluateDataset, ReportFormats) {
  std::vector<std::uint8_t> gt(16, 0);
  gt[5] = 1;
  const auto rep = evaluate_predictions({gt}, {gt}, 4, 4, 2);
  const std::string csv = rep.csv_lines();
  EXPECT_NE(csv.find("dice,1,1\n"), std::string::npos);
  EXPECT_NE(csv.find("dice,mean,1\n"), std::string::npos);
  EXPECT_NE(rep.text_table().find("class"), std::string::npos);
}
