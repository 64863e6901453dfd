#include <gtest/gtest.h>

#include "fdr/losses.hpp"
#include "fdr/metrics.hpp"
#include "fdr/synth.hpp"

using namespace fdr;

TEST(RandomSmoothDvf, ZeroAmplitudeGivesZeroField) {
  const DisplacementField d = random_smooth_dvf({16, 16, 16}, 0.0, 2.0, 1);
  for (const auto& c : d.comp)
    for (double x : c) EXPECT_DOUBLE_EQ(x, 0.0);
}

TEST(RandomSmoothDvf, MaxComponentEqualsAmplitude) {
  const DisplacementField d = random_smooth_dvf({24, 24, 24}, 3.0, 2.0, 7);
  double max_mag = 0.0;
  for (const auto& c : d.comp)
    for (double x : c) max_mag = std::max(max_mag, std::abs(x));
  EXPECT_NEAR(max_mag, 3.0, 1e-9);
}

TEST(RandomSmoothDvf, DeterministicGivenSeed) {
  const DisplacementField a = random_smooth_dvf({16, 16, 16}, 2.0, 2.0, 42);
  const DisplacementField b = random_smooth_dvf({16, 16, 16}, 2.0, 2.0, 42);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(a.comp[c], b.comp[c]);
}

TEST(RandomSmoothDvf, ZeroOnTwoVoxelBoundaryMargin) {
  const Dims dims{20, 20, 20};
  const DisplacementField d = random_smooth_dvf(dims, 3.0, 2.0, 3);
  for (int w = 0; w < dims.nw; ++w)
    for (int v = 0; v < dims.nv; ++v)
      for (int u = 0; u < dims.nu; ++u) {
        const int dist = std::min({u, dims.nu - 1 - u, v, dims.nv - 1 - v, w,
                                   dims.nw - 1 - w});
        if (dist > 1) continue;
        for (int c = 0; c < 3; ++c)
          EXPECT_DOUBLE_EQ(d.at(c, u, v, w), 0.0);
      }
}

TEST(RandomSmoothDvf, SmoothnessDecreasesWithSigma) {
  int wins = 0;
  for (std::uint64_t seed : {11u, 22u, 33u}) {
    const double r1 = smoothness(random_smooth_dvf({32, 32, 32}, 3.0, 1.0, seed));
    const double r2 = smoothness(random_smooth_dvf({32, 32, 32}, 3.0, 2.0, seed));
    const double r4 = smoothness(random_smooth_dvf({32, 32, 32}, 3.0, 4.0, seed));
    if (r1 > r2 && r2 > r4) ++wins;
  }
  EXPECT_GE(wins, 2);
}

TEST(MakePhantom, DeterministicGivenSeed) {
  const Phantom a = make_phantom({16, 16, 16}, 3, 5);
  const Phantom b = make_phantom({16, 16, 16}, 3, 5);
  EXPECT_EQ(a.image.data, b.image.data);
  EXPECT_EQ(a.labels.data, b.labels.data);
}

TEST(MakePhantom, EveryLabelOccupiesAtLeastOneVoxel) {
  const Phantom p = make_phantom({24, 24, 24}, 6, 9);
  std::vector<int> counts(7, 0);
  for (double x : p.labels.data) {
    ASSERT_GE(x, 0.0);
    ASSERT_LE(x, 6.0);
    counts[static_cast<int>(x)]++;
  }
  for (int b = 1; b <= 6; ++b) EXPECT_GT(counts[b], 0);
}

TEST(MakePhantom, NonConstantInEveryInteriorWindow) {
  const Dims dims{32, 32, 32};
  const Phantom p = make_phantom(dims, 5, 13);
  const int r = 4;  // 9^3 windows fully inside the volume
  for (int w = r; w < dims.nw - r; ++w)
    for (int v = r; v < dims.nv - r; ++v)
      for (int u = r; u < dims.nu - r; ++u) {
        double lo = p.image.at(u - r, v - r, w - r), hi = lo;
        for (int dw = -r; dw <= r; ++dw)
          for (int dv = -r; dv <= r; ++dv)
            for (int du = -r; du <= r; ++du) {
              const double x = p.image.at(u + du, v + dv, w + dw);
              lo = std::min(lo, x);
              hi = std::max(hi, x);
            }
        ASSERT_GT(hi - lo, 1e-9) << "constant window at " << u << "," << v
                                 << "," << w;
      }
}

TEST(MakePhantom, LabelVolumePassesValidation) {
  const Phantom p = make_phantom({16, 16, 16}, 3, 21);
  EXPECT_NO_THROW(check_label_volume(p.labels));
}

TEST(MakePair, ZeroAmplitudeGivesIdenticalImages) {
  const SyntheticPair pair = make_pair({16, 16, 16}, 0.0, 2.0, 3);
  EXPECT_EQ(pair.fixed.data, pair.moving.data);
  EXPECT_EQ(pair.labels_fixed.data, pair.labels_moving.data);
}

TEST(MakePair, MisalignmentExistsAtAmplitudeTwo) {
  const SyntheticPair pair = make_pair({32, 32, 32}, 2.0, 3.0, 17);
  const DiceReport dice = dice_multilabel(pair.labels_fixed,
                                          pair.labels_moving);
  EXPECT_LT(dice.mean, 1.0);
  EXPECT_LT(ncc(pair.fixed, pair.moving), 1.0);
  EXPECT_GT(ncc(pair.fixed, pair.moving), 0.0);
}

TEST(MakePair, DeterministicGivenSeed) {
  const SyntheticPair a = make_pair({16, 16, 16}, 2.0, 2.0, 11);
  const SyntheticPair b = make_pair({16, 16, 16}, 2.0, 2.0, 11);
  EXPECT_EQ(a.moving.data, b.moving.data);
  EXPECT_EQ(a.d_true.comp[0], b.d_true.comp[0]);
}
