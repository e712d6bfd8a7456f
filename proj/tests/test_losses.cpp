#include <gtest/gtest.h>

#include <cmath>

#include "irisloc/localise.hpp"
#include "irisloc/losses.hpp"
#include "irisloc/rng.hpp"
#include "oracles.hpp"

using namespace irisloc;

namespace {

BinaryMask centred_square() {
  BinaryMask m(4, 4);
  m(1, 1) = m(1, 2) = m(2, 1) = m(2, 2) = 1;
  return m;
}

// Frozen from the all-pairs oracle: every square pixel is on the boundary.
const float kR2 = static_cast<float>(std::sqrt(2.0));
const std::vector<float> kSquareSdm = {kR2, 1, 1, kR2, 1, 0, 0, 1, 1, 0, 0, 1, kR2, 1, 1, kR2};

Tensor<double> as_batch(const Grid<float>& g) {
  Tensor<double> t(Shape{1, 1, g.height, g.width});
  for (std::size_t i = 0; i < g.size(); ++i) t[i] = g.values[i];
  return t;
}

Grid<float> as_grid(const BinaryMask& m) {
  Grid<float> g(m.height, m.width);
  for (std::size_t i = 0; i < m.size(); ++i) g.values[i] = m.values[i];
  return g;
}

}  // namespace

TEST(Dice, PerfectAndDisjoint) {
  const auto m = centred_square();
  EXPECT_NEAR(dice_loss(as_grid(m), m), 0.0, 1e-9);
  BinaryMask other(4, 4);
  other(0, 0) = 1;
  EXPECT_NEAR(dice_loss(as_grid(other), m), 1.0, 1e-6);
}

TEST(Dice, TwoTruePositivesTwoFalsePositives) {
  const auto gt = centred_square();
  Grid<float> pred(4, 4);
  pred(1, 1) = pred(1, 2) = pred(0, 0) = pred(3, 3) = 1.0f;
  EXPECT_NEAR(dice_loss(pred, gt), 0.5, 1e-7);
}

TEST(Dice, StableOnEmptyMasks) {
  const BinaryMask empty(4, 4);
  const double v = dice_loss(Grid<float>(4, 4), empty);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, 0.0, 1e-9);
  EXPECT_THROW(dice_loss(Grid<float>(4, 5), empty), ShapeError);
}

TEST(SignedDistance, DegenerateMasks) {
  EXPECT_EQ(signed_distance_map(BinaryMask(5, 5)), SignedDistanceMap(5, 5, 0.0f));
  BinaryMask single(5, 5);
  single(2, 2) = 1;
  const auto sdm = signed_distance_map(single);
  EXPECT_EQ(sdm(2, 2), 0.0f);
  EXPECT_EQ(sdm(1, 2), 1.0f);
  EXPECT_EQ(sdm(3, 2), 1.0f);
  EXPECT_EQ(sdm(2, 1), 1.0f);
  EXPECT_EQ(sdm(2, 3), 1.0f);
}

TEST(SignedDistance, CentredSquareGolden) {
  const auto sdm = signed_distance_map(centred_square());
  for (std::size_t i = 0; i < 16; ++i) EXPECT_FLOAT_EQ(std::abs(sdm.values[i]), kSquareSdm[i]) << i;
  EXPECT_EQ(oracle::signed_distance(centred_square()), sdm);
}

TEST(SignedDistance, MatchesAllPairsOracleAndSignRule) {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const auto h = 3 + rng.below(14), w = 3 + rng.below(14);
    const auto m = oracle::random_mask(rng, h, w, rng.uniform(0.1, 0.9));
    const auto sdm = signed_distance_map(m);
    const auto expect = oracle::signed_distance(m);
    for (std::size_t i = 0; i < m.size(); ++i) {
      EXPECT_EQ(sdm.values[i], expect.values[i]);
      if (m.values[i]) EXPECT_LE(sdm.values[i], 0.0f);
      else EXPECT_GE(sdm.values[i], 0.0f);
    }
  }
}

TEST(Boundary, Examples) {
  const auto m = centred_square();
  const auto sdm = signed_distance_map(m);
  EXPECT_EQ(boundary_loss(Grid<float>(4, 4), sdm), 0.0);
  BinaryMask single(5, 5);
  single(2, 2) = 1;
  EXPECT_EQ(boundary_loss(as_grid(single), signed_distance_map(single)), 0.0);
  double golden_mean = 0.0;
  for (float v : kSquareSdm) golden_mean += v;
  golden_mean /= 16.0;
  EXPECT_NEAR(boundary_loss(Grid<float>(4, 4, 1.0f), sdm), golden_mean, 1e-6);
  EXPECT_NEAR(golden_mean, (4 * std::sqrt(2.0) + 8) / 16.0, 1e-7);
}

TEST(Boundary, GradientIsSdmOverPixelCount) {
  const auto m = centred_square();
  const auto sdm = signed_distance_map(m);
  Tensor<double> p(Shape{1, 1, 4, 4}, 0.3);
  Graph<double> g;
  g.backward(boundary_loss(g.parameter(p), as_batch(sdm)));
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(p.grad()[i], sdm.values[i] / 16.0, 1e-12);
}

TEST(TotalSegLoss, Composition) {
  const auto m = centred_square();
  const Grid<float> half(4, 4, 0.5f);
  EXPECT_EQ(total_seg_loss(half, m, 0.0), dice_loss(half, m));
  const double sum = dice_loss(half, m) + boundary_loss(half, signed_distance_map(m));
  EXPECT_NEAR(total_seg_loss(half, m), sum, 1e-12);
  // Dice: 1 - 2*2/(8+4) = 2/3. Boundary: 0.5 * golden mean.
  EXPECT_NEAR(sum, 2.0 / 3.0 + 0.5 * (4 * std::sqrt(2.0) + 8) / 16.0, 1e-6);
  EXPECT_NEAR(total_seg_loss(half, m, 0.25), 2.0 / 3.0 + 0.125 * (4 * std::sqrt(2.0) + 8) / 16.0, 1e-6);
}

TEST(TotalSegLoss, ZeroSdmEqualsDice) {
  Rng rng(4);
  const auto m = oracle::random_mask(rng, 8, 8, 0.4);
  Tensor<double> p(Shape{1, 1, 8, 8});
  for (auto& v : p.data()) v = rng.uniform();
  Graph<double> g;
  const auto pv = g.constant(p);
  const auto gt = as_batch(as_grid(m));
  const double with_zero_sdm = total_seg_loss(pv, gt, Tensor<double>(Shape{1, 1, 8, 8}), 1.0).value()[0];
  EXPECT_EQ(with_zero_sdm, dice_loss(pv, gt).value()[0]);
}

TEST(TotalSegLoss, GraphMatchesGridFormula) {
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const auto m = oracle::random_mask(rng, 8, 8, 0.5);
    Grid<float> pred(8, 8);
    for (auto& v : pred.values) v = static_cast<float>(rng.uniform());
    Graph<double> g;
    const auto sdm = signed_distance_map(m);
    const auto v = total_seg_loss(g.constant(as_batch(pred)), as_batch(as_grid(m)), as_batch(sdm), 0.7);
    EXPECT_NEAR(v.value()[0], total_seg_loss(pred, m, 0.7), 1e-9);
  }
}

TEST(TotalSegLoss, BatchIsMeanOfSamples) {
  Rng rng(13);
  const auto m0 = oracle::random_mask(rng, 4, 4, 0.5), m1 = oracle::random_mask(rng, 4, 4, 0.5);
  Tensor<double> p(Shape{2, 1, 4, 4}), gt(Shape{2, 1, 4, 4});
  for (auto& v : p.data()) v = rng.uniform();
  for (std::size_t i = 0; i < 16; ++i) {
    gt[i] = m0.values[i];
    gt[16 + i] = m1.values[i];
  }
  Graph<double> g;
  const double batch = dice_loss(g.constant(p), gt).value()[0];
  Grid<float> p0(4, 4), p1(4, 4);
  for (std::size_t i = 0; i < 16; ++i) {
    p0.values[i] = static_cast<float>(p[i]);
    p1.values[i] = static_cast<float>(p[16 + i]);
  }
  EXPECT_NEAR(batch, 0.5 * (dice_loss(p0, m0) + dice_loss(p1, m1)), 1e-6);
}

TEST(Mse, Examples) {
  Grid<float> gt(4, 4);
  for (std::size_t i = 0; i < 16; ++i) gt.values[i] = static_cast<float>(i) / 16.0f;
  EXPECT_EQ(mse_heatmap_loss(gt, gt), 0.0);
  Grid<float> plus = gt;
  for (auto& v : plus.values) v += 1.0f;
  EXPECT_NEAR(mse_heatmap_loss(plus, gt), 1.0, 1e-12);
}

TEST(Mse, ZeroPredictionAgainstGaussian) {
  const auto gt = gaussian_heatmap({32, 32}, 64, 64, 3.0);
  double direct = 0.0;
  for (std::size_t r = 0; r < 64; ++r)
    for (std::size_t c = 0; c < 64; ++c) {
      const double d2 = (static_cast<double>(r) - 32) * (static_cast<double>(r) - 32) +
                        (static_cast<double>(c) - 32) * (static_cast<double>(c) - 32);
      direct += std::exp(-d2 / 9.0);  // g^2 = exp(-d2 / sigma^2)
    }
  direct /= 4096.0;
  // Frozen: sum over the lattice of exp(-d^2/9) is close to 9*pi.
  EXPECT_NEAR(direct, 0.0069029, 1e-6);
  EXPECT_NEAR(mse_heatmap_loss(Grid<float>(64, 64), gt), direct, 1e-7);
}

TEST(Mse, RejectsShapeMismatch) {
  Graph<float> g;
  EXPECT_THROW(mse_loss(g.constant(Tensor<float>(Shape{1, 1, 4, 4})), Tensor<float>(Shape{1, 1, 4, 5})),
               ShapeError);
  EXPECT_THROW(mse_heatmap_loss(Grid<float>(2, 2), Grid<float>(2, 3)), ShapeError);
}
