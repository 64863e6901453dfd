#include <gtest/gtest.h>

#include "fdr/tape.hpp"
#include "fdr/warp.hpp"
#include "oracles.hpp"

using namespace fdr;

namespace {

DisplacementField constant_field(Dims dims, double du, double dv, double dw) {
  DisplacementField d(dims);
  std::fill(d.comp[0].begin(), d.comp[0].end(), du);
  std::fill(d.comp[1].begin(), d.comp[1].end(), dv);
  std::fill(d.comp[2].begin(), d.comp[2].end(), dw);
  return d;
}

}  // namespace

TEST(WarpTrilinear, ZeroFieldIsIdentity) {
  Rng rng(1);
  const Volume m = oracles::random_volume({6, 7, 5}, rng);
  const Volume out = warp_trilinear(m, DisplacementField(m.dims));
  EXPECT_EQ(out.data, m.data);
}

TEST(WarpTrilinear, IntegerShiftMatchesManualShift) {
  Rng rng(2);
  const Dims dims{8, 8, 8};
  const Volume m = oracles::random_volume(dims, rng);
  const Volume out = warp_trilinear(m, constant_field(dims, 1.0, 0.0, 0.0));
  for (int w = 0; w < dims.nw; ++w)
    for (int v = 0; v < dims.nv; ++v)
      for (int u = 0; u < dims.nu; ++u) {
        const double expected = u + 1 < dims.nu ? m.at(u + 1, v, w) : 0.0;
        EXPECT_DOUBLE_EQ(out.at(u, v, w), expected);
      }
}

TEST(WarpTrilinear, HalfVoxelShiftExactOnRamp) {
  const Dims dims{8, 6, 6};
  Volume m(dims, VoxelKind::intensity);
  for (int w = 0; w < dims.nw; ++w)
    for (int v = 0; v < dims.nv; ++v)
      for (int u = 0; u < dims.nu; ++u) m.at(u, v, w) = u;
  const Volume out = warp_trilinear(m, constant_field(dims, 0.5, 0.0, 0.0));
  for (int w = 0; w < dims.nw; ++w)
    for (int v = 0; v < dims.nv; ++v)
      for (int u = 0; u < dims.nu - 1; ++u)
        EXPECT_NEAR(out.at(u, v, w), u + 0.5, 1e-12);
}

TEST(WarpTrilinear, OutputStaysInValueHull) {
  Rng rng(3);
  const Dims dims{7, 7, 7};
  const Volume m = oracles::random_volume(dims, rng, 2.0, 9.0);
  const DisplacementField d = oracles::random_field(dims, rng, 0.0, 3.0);
  const Volume out = warp_trilinear(m, d);
  double lo = 2.0, hi = 9.0;
  for (double x : m.data) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  for (double x : out.data) {
    EXPECT_GE(x, std::min(lo, 0.0) - 1e-12);
    EXPECT_LE(x, std::max(hi, 0.0) + 1e-12);
  }
}

TEST(WarpTrilinear, DimsMismatchThrows) {
  Volume m({4, 4, 4}, VoxelKind::intensity, 1.0);
  DisplacementField d({5, 4, 4});
  EXPECT_THROW(warp_trilinear(m, d), std::invalid_argument);
}

TEST(WarpBackward, ZeroUpstreamGivesZeroGrads) {
  Rng rng(4);
  const Dims dims{6, 6, 6};
  const Volume m = oracles::random_volume(dims, rng);
  const DisplacementField d = oracles::random_field(dims, rng, 0.1, 0.45);
  const Volume upstream(dims, VoxelKind::intensity, 0.0);
  const WarpGrads g = warp_backward(m, d, upstream);
  for (int c = 0; c < 3; ++c)
    for (double x : g.grad_d.comp[c]) EXPECT_DOUBLE_EQ(x, 0.0);
  for (double x : g.grad_m.data) EXPECT_DOUBLE_EQ(x, 0.0);
}

TEST(WarpBackward, FieldGradMatchesFiniteDifferences) {
  Rng rng(5);
  const Dims dims{6, 6, 6};
  const Volume m = oracles::random_volume(dims, rng);
  const DisplacementField d = oracles::random_field(dims, rng, 0.1, 0.45);
  const Volume upstream = oracles::random_volume(dims, rng, -1.0, 1.0);

  const WarpGrads g = warp_backward(m, d, upstream);
  const auto fn = [&](const std::vector<double>& flat) {
    const Volume out =
        warp_trilinear(m, DisplacementField::from_flat(dims, flat));
    double acc = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i)
      acc += upstream.data[i] * out.data[i];
    return acc;
  };
  const auto report = grad_check(fn, d.flat(), g.grad_d.flat(), 1e-4);
  EXPECT_LT(report.max_rel_err, 1e-4);
}

TEST(WarpBackward, IdentityAdjointRoutesDeltaThrough) {
  const Dims dims{6, 6, 6};
  Volume m(dims, VoxelKind::intensity, 1.0);
  Volume upstream(dims, VoxelKind::intensity, 0.0);
  upstream.at(3, 2, 4) = 1.0;
  const WarpGrads g = warp_backward(m, DisplacementField(dims), upstream);
  for (int w = 0; w < dims.nw; ++w)
    for (int v = 0; v < dims.nv; ++v)
      for (int u = 0; u < dims.nu; ++u)
        EXPECT_DOUBLE_EQ(g.grad_m.at(u, v, w),
                         (u == 3 && v == 2 && w == 4) ? 1.0 : 0.0);
}

// The warp is linear in the moving image, so <warp(a,d), b> = <a, J_m^T b>.
TEST(WarpBackward, MovingImageAdjointIdentity) {
  Rng rng(6);
  const Dims dims{7, 6, 8};
  const DisplacementField d = oracles::random_field(dims, rng, 0.0, 2.0);
  const Volume a = oracles::random_volume(dims, rng, -2.0, 2.0);
  const Volume b = oracles::random_volume(dims, rng, -2.0, 2.0);
  const Volume ja = warp_trilinear(a, d);
  const WarpGrads g = warp_backward(a, d, b);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < ja.data.size(); ++i)
    lhs += ja.data[i] * b.data[i];
  for (std::size_t i = 0; i < a.data.size(); ++i)
    rhs += a.data[i] * g.grad_m.data[i];
  EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(lhs)));
}

TEST(WarpNearest, ZeroFieldKeepsLabels) {
  Rng rng(7);
  const Volume labels = oracles::random_labels({6, 6, 6}, rng, 4);
  const Volume out = warp_nearest(labels, DisplacementField(labels.dims));
  EXPECT_EQ(out.data, labels.data);
}

TEST(WarpNearest, IntegerShiftWithBackgroundFill) {
  Rng rng(8);
  const Dims dims{6, 6, 6};
  const Volume labels = oracles::random_labels(dims, rng, 4);
  const Volume out = warp_nearest(labels, constant_field(dims, 0.0, 1.0, 0.0));
  for (int w = 0; w < dims.nw; ++w)
    for (int v = 0; v < dims.nv; ++v)
      for (int u = 0; u < dims.nu; ++u) {
        const double expected = v + 1 < dims.nv ? labels.at(u, v + 1, w) : 0.0;
        EXPECT_DOUBLE_EQ(out.at(u, v, w), expected);
      }
}

TEST(WarpNearest, SubHalfVoxelShiftRoundsDown) {
  Rng rng(9);
  const Dims dims{6, 6, 6};
  const Volume labels = oracles::random_labels(dims, rng, 3);
  const Volume out = warp_nearest(labels, constant_field(dims, 0.4, 0.0, 0.0));
  EXPECT_EQ(out.data, labels.data);
}

TEST(WarpNearest, RejectsIntensityVolumes) {
  Volume v({4, 4, 4}, VoxelKind::intensity, 1.0);
  EXPECT_THROW(warp_nearest(v, DisplacementField(v.dims)),
               std::invalid_argument);
}
