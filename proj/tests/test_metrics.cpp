#include <gtest/gtest.h>

#include "fdr/metrics.hpp"
#include "oracles.hpp"

using namespace fdr;

namespace {

Volume binary_mask(Dims dims, std::initializer_list<std::size_t> ones) {
  Volume v(dims, VoxelKind::label, 0.0);
  for (auto i : ones) v.data[i] = 1.0;
  return v;
}

}  // namespace

TEST(DiceBinary, IdenticalNonEmptyMasks) {
  const Volume a = binary_mask({4, 4, 4}, {1, 5, 9});
  EXPECT_DOUBLE_EQ(dice_binary(a, a), 1.0);
}

TEST(DiceBinary, DisjointMasks) {
  const Volume a = binary_mask({4, 4, 4}, {1, 2});
  const Volume b = binary_mask({4, 4, 4}, {7, 8});
  EXPECT_DOUBLE_EQ(dice_binary(a, b), 0.0);
}

TEST(DiceBinary, PartialOverlap) {
  const Volume a = binary_mask({4, 4, 4}, {1, 2});
  const Volume b = binary_mask({4, 4, 4}, {2, 3});
  EXPECT_DOUBLE_EQ(dice_binary(a, b), 0.5);
}

TEST(DiceBinary, EmptyMasksAgreeVacuously) {
  const Volume a = binary_mask({4, 4, 4}, {});
  EXPECT_DOUBLE_EQ(dice_binary(a, a), 1.0);
}

TEST(DiceBinary, Symmetric) {
  Rng rng(1);
  Volume a({5, 5, 5}, VoxelKind::label), b({5, 5, 5}, VoxelKind::label);
  for (auto& x : a.data) x = rng.uniform() < 0.3 ? 1.0 : 0.0;
  for (auto& x : b.data) x = rng.uniform() < 0.3 ? 1.0 : 0.0;
  EXPECT_DOUBLE_EQ(dice_binary(a, b), dice_binary(b, a));
}

TEST(DiceBinary, RejectsNonBinaryInput) {
  Volume a({4, 4, 4}, VoxelKind::label, 2.0);
  EXPECT_THROW(dice_binary(a, a), std::invalid_argument);
}

TEST(DiceMultilabel, PerfectAgreement) {
  Rng rng(2);
  const Volume lf = oracles::random_labels({8, 8, 8}, rng, 5);
  const DiceReport r = dice_multilabel(lf, lf);
  for (const auto& [id, v] : r.per_label) EXPECT_DOUBLE_EQ(v, 1.0);
  EXPECT_DOUBLE_EQ(r.mean, 1.0);
}

TEST(DiceMultilabel, AllBackgroundPredictionScoresZero) {
  Rng rng(3);
  const Volume lf = oracles::random_labels({8, 8, 8}, rng, 3);
  const Volume lw({8, 8, 8}, VoxelKind::label, 0.0);
  const DiceReport r = dice_multilabel(lf, lw);
  for (const auto& [id, v] : r.per_label) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(DiceMultilabel, MatchesPerLabelBinaryOracle) {
  Rng rng(4);
  const Volume lf = oracles::random_labels({8, 8, 8}, rng, 2);
  const Volume lw = oracles::random_labels({8, 8, 8}, rng, 2);
  const DiceReport r = dice_multilabel(lf, lw);
  for (const auto& [id, v] : r.per_label) {
    Volume bf(lf.dims, VoxelKind::label), bw(lf.dims, VoxelKind::label);
    for (std::size_t i = 0; i < lf.data.size(); ++i) {
      bf.data[i] = lf.data[i] == id ? 1.0 : 0.0;
      bw.data[i] = lw.data[i] == id ? 1.0 : 0.0;
    }
    EXPECT_DOUBLE_EQ(v, oracles::dice_binary_naive(bf, bw));
  }
  EXPECT_GE(r.mean, 0.0);
  EXPECT_LE(r.mean, 1.0);
}

TEST(DiceMultilabel, ExplicitLabelListControlsInclusion) {
  Volume lf({4, 4, 4}, VoxelKind::label, 0.0);
  lf.data[0] = 1.0;
  lf.data[1] = 2.0;
  const DiceReport r = dice_multilabel(lf, lf, {1});
  EXPECT_EQ(r.per_label.size(), 1u);
  EXPECT_TRUE(r.per_label.contains(1));
}

TEST(Ncc, SelfCorrelation) {
  Rng rng(5);
  const Volume f = oracles::random_volume({8, 8, 8}, rng);
  EXPECT_NEAR(ncc(f, f), 1.0, 1e-12);
}

TEST(Ncc, NegatedInput) {
  Rng rng(6);
  const Volume f = oracles::random_volume({8, 8, 8}, rng);
  Volume w = f;
  for (auto& x : w.data) x = -x;
  EXPECT_NEAR(ncc(f, w), -1.0, 1e-12);
}

TEST(Ncc, AffineInvariance) {
  Rng rng(7);
  const Volume f = oracles::random_volume({8, 8, 8}, rng);
  Volume w = f;
  for (auto& x : w.data) x = 2.0 * x + 3.0;
  EXPECT_NEAR(ncc(f, w), 1.0, 1e-9);
  const Volume g = oracles::random_volume({8, 8, 8}, rng);
  Volume g2 = g;
  for (auto& x : g2.data) x = 0.5 * x + 1.0;
  EXPECT_NEAR(ncc(f, g), ncc(f, g2), 1e-9);
}

TEST(Ncc, ConstantInputThrows) {
  Volume f({4, 4, 4}, VoxelKind::intensity, 3.0);
  Volume w({4, 4, 4}, VoxelKind::intensity, 1.0);
  w.data[0] = 2.0;
  EXPECT_THROW(ncc(f, w), std::invalid_argument);
  EXPECT_THROW(ncc(w, f), std::invalid_argument);
}

TEST(Ssim, IdenticalVolumes) {
  Rng rng(8);
  const Volume a = oracles::random_volume({8, 8, 8}, rng);
  EXPECT_NEAR(ssim(a, a, 10.0), 1.0, 1e-12);
}

TEST(Ssim, ConstantOffsetLowersScore) {
  Rng rng(9);
  const Volume a = oracles::random_volume({8, 8, 8}, rng);
  Volume b = a;
  for (auto& x : b.data) x += 1.0;  // L/10 with L = 10
  const double v = ssim(a, b, 10.0);
  EXPECT_LT(v, 1.0);
  EXPECT_NEAR(v, oracles::ssim_naive(a, b, 10.0), 1e-12);
}

TEST(Ssim, MatchesBruteForceOracle) {
  Rng rng(10);
  const Volume a = oracles::random_volume({8, 8, 8}, rng);
  const Volume b = oracles::random_volume({8, 8, 8}, rng);
  EXPECT_NEAR(ssim(a, b, 10.0), oracles::ssim_naive(a, b, 10.0), 1e-12);
}

TEST(Ssim, Symmetric) {
  Rng rng(11);
  const Volume a = oracles::random_volume({6, 6, 6}, rng);
  const Volume b = oracles::random_volume({6, 6, 6}, rng);
  EXPECT_DOUBLE_EQ(ssim(a, b, 10.0), ssim(b, a, 10.0));
}

TEST(Ssim, RejectsNonPositiveRange) {
  Volume a({4, 4, 4}, VoxelKind::intensity, 1.0);
  EXPECT_THROW(ssim(a, a, 0.0), std::invalid_argument);
  EXPECT_THROW(ssim(a, a, -1.0), std::invalid_argument);
}
