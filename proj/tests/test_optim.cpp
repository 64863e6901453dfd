#include <gtest/gtest.h>

#include "fdr/optim.hpp"
#include "fdr/synth.hpp"
#include "oracles.hpp"

using namespace fdr;

TEST(LrSchedule, PaperValues) {
  TrainConfig cfg;
  EXPECT_NEAR(lr_schedule(cfg, 0), 0.002, 1e-12);
  EXPECT_NEAR(lr_schedule(cfg, 999), 0.002, 1e-12);
  EXPECT_NEAR(lr_schedule(cfg, 1000), 0.0018, 1e-12);
  EXPECT_NEAR(lr_schedule(cfg, 1000000), 0.0001, 1e-12);
}

TEST(AdamStep, ZeroGradientLeavesParamsUnchanged) {
  std::vector<double> params{1.0, -2.0, 3.0};
  const std::vector<double> grads{0.0, 0.0, 0.0};
  AdamState state(3);
  adam_step(params, grads, state, 0.1);
  EXPECT_EQ(params, (std::vector<double>{1.0, -2.0, 3.0}));
}

TEST(AdamStep, FirstStepMovesByLearningRate) {
  std::vector<double> params{0.0};
  const std::vector<double> grads{1.0};
  AdamState state(1);
  adam_step(params, grads, state, 0.1);
  EXPECT_NEAR(params[0], -0.1, 1e-7);
}

TEST(AdamStep, RejectsNonFiniteGradients) {
  std::vector<double> params{0.0};
  std::vector<double> grads{std::numeric_limits<double>::quiet_NaN()};
  AdamState state(1);
  EXPECT_THROW(adam_step(params, grads, state, 0.1), std::runtime_error);
  EXPECT_DOUBLE_EQ(params[0], 0.0);
}

TEST(ClipGlobalNorm, ScalesOnlyWhenAboveThreshold) {
  std::vector<double> g{3.0, 4.0};
  clip_global_norm(g, 10.0);
  EXPECT_DOUBLE_EQ(g[0], 3.0);
  clip_global_norm(g, 2.5);
  EXPECT_NEAR(std::sqrt(g[0] * g[0] + g[1] * g[1]), 2.5, 1e-12);
}

namespace {

std::vector<TrainSample> synthetic_dataset(int n, Dims dims,
                                           std::uint64_t seed) {
  std::vector<TrainSample> out;
  for (int i = 0; i < n; ++i) {
    SyntheticPair pair = make_pair(dims, 2.5, 3.0, seed + i);
    out.push_back({std::move(pair.fixed), std::move(pair.moving),
                   std::move(pair.labels_fixed),
                   std::move(pair.labels_moving)});
  }
  return out;
}

ArchConfig toy_arch() {
  ArchConfig a;
  a.c = 2;
  a.k = 1;
  a.depth = 2;
  return a;
}

TrainConfig toy_config() {
  TrainConfig cfg;
  cfg.weights = desk_weights();
  cfg.lr0 = 0.005;
  cfg.lr_floor = 0.0005;
  cfg.seed = 7;
  return cfg;
}

}  // namespace

TEST(Train, ZeroEpochsReturnsInitialParams) {
  const auto data = synthetic_dataset(2, {16, 16, 16}, 1);
  TrainConfig cfg = toy_config();
  cfg.epochs = 0;
  const TrainResult r = train(data, toy_arch(), cfg);
  EXPECT_TRUE(r.history.rows.empty());
  EXPECT_EQ(r.params.flat, init_params(toy_arch(), cfg.seed).flat);
}

TEST(Train, LossDecreasesOnSmallSyntheticSet) {
  const auto data = synthetic_dataset(2, {16, 16, 16}, 2);
  TrainConfig cfg = toy_config();
  cfg.epochs = 25;  // 2 samples -> 50 iterations
  const TrainResult r = train(data, toy_arch(), cfg);
  ASSERT_EQ(r.history.rows.size(), 50u);
  EXPECT_FALSE(r.history.aborted_non_finite);
  EXPECT_LT(r.history.rows.back().loss_overall,
            r.history.rows.front().loss_overall);
}

TEST(Train, DeterministicGivenSeed) {
  const auto data = synthetic_dataset(2, {16, 16, 16}, 3);
  TrainConfig cfg = toy_config();
  cfg.epochs = 5;
  const TrainResult a = train(data, toy_arch(), cfg);
  const TrainResult b = train(data, toy_arch(), cfg);
  ASSERT_EQ(a.history.rows.size(), b.history.rows.size());
  for (std::size_t i = 0; i < a.history.rows.size(); ++i) {
    EXPECT_EQ(a.history.rows[i].loss_overall, b.history.rows[i].loss_overall);
    EXPECT_EQ(a.history.rows[i].loss_hr, b.history.rows[i].loss_hr);
    EXPECT_EQ(a.history.rows[i].loss_lr, b.history.rows[i].loss_lr);
  }
  EXPECT_EQ(a.params.flat, b.params.flat);
}

TEST(Train, EffectiveHrWeightStrictlyIncreases) {
  const auto data = synthetic_dataset(2, {16, 16, 16}, 4);
  TrainConfig cfg = toy_config();
  cfg.epochs = 3;
  const TrainResult r = train(data, toy_arch(), cfg);
  for (std::size_t i = 1; i < r.history.rows.size(); ++i)
    EXPECT_GT(1.0 - r.history.rows[i].lambda,
              1.0 - r.history.rows[i - 1].lambda);
}

TEST(Train, RecordsValidationMetricsWhenRequested) {
  const auto data = synthetic_dataset(2, {16, 16, 16}, 5);
  const auto val = synthetic_dataset(1, {16, 16, 16}, 50);
  TrainConfig cfg = toy_config();
  cfg.epochs = 2;
  cfg.val_every = 2;
  const TrainResult r = train(data, toy_arch(), cfg, val);
  ASSERT_EQ(r.history.rows.size(), 4u);
  EXPECT_TRUE(std::isnan(r.history.rows[0].val_dice));
  EXPECT_FALSE(std::isnan(r.history.rows[1].val_dice));
  EXPECT_FALSE(std::isnan(r.history.rows[3].val_ncc));
}

// Training on an already-aligned pair must keep the field near identity.
TEST(Train, IdentityPairStaysNearIdentity) {
  Rng rng(6);
  const Phantom ph = make_phantom({16, 16, 16}, 3, 60);
  std::vector<TrainSample> data(1);
  data[0].fixed = ph.image;
  data[0].moving = ph.image;
  TrainConfig cfg = toy_config();
  cfg.epochs = 100;  // one sample -> 100 iterations
  const TrainResult r = train(data, toy_arch(), cfg);
  const DisplacementField d =
      register_learned(r.params, data[0].fixed, data[0].moving);
  double max_mag = 0.0;
  for (const auto& c : d.comp)
    for (double x : c) max_mag = std::max(max_mag, std::abs(x));
  EXPECT_LT(max_mag, 0.5);
  EXPECT_GT(ncc(data[0].fixed, warp_trilinear(data[0].moving, d)), 0.99);
}

TEST(RegisterDirect, IdenticalImagesStayNearIdentity) {
  const Phantom ph = make_phantom({16, 16, 16}, 3, 70);
  // enough iterations for the schedule to reach its floor
  const DisplacementField d =
      register_direct(ph.image, ph.image, 2, 250, direct_config());
  double max_mag = 0.0;
  for (const auto& c : d.comp)
    for (double x : c) max_mag = std::max(max_mag, std::abs(x));
  EXPECT_LT(max_mag, 0.1);
}

TEST(RegisterDirect, ZeroIterationsGiveZeroField) {
  const Phantom ph = make_phantom({16, 16, 16}, 3, 80);
  const DisplacementField d =
      register_direct(ph.image, ph.image, 2, 0, direct_config());
  for (const auto& c : d.comp)
    for (double x : c) EXPECT_DOUBLE_EQ(x, 0.0);
}

TEST(RegisterDirect, RecoversIntegerShift) {
  const Dims dims{32, 32, 32};
  const Phantom ph = make_phantom(dims, 4, 90);
  // moving(u) = fixed(u - 2): registering moving onto fixed needs d_u = +2.
  Volume moving(dims, VoxelKind::intensity, 0.0);
  for (int w = 0; w < dims.nw; ++w)
    for (int v = 0; v < dims.nv; ++v)
      for (int u = 2; u < dims.nu; ++u)
        moving.at(u, v, w) = ph.image.at(u - 2, v, w);

  const DisplacementField d =
      register_direct(ph.image, moving, 2, 200, direct_config());
  double mean_u = 0.0;
  int count = 0;
  for (int w = 8; w < 24; ++w)
    for (int v = 8; v < 24; ++v)
      for (int u = 8; u < 24; ++u) {
        mean_u += d.at(0, u, v, w);
        ++count;
      }
  mean_u /= count;
  EXPECT_GE(mean_u, 1.5);
  EXPECT_LE(mean_u, 2.5);
}

TEST(RegisterDirect, FinestObjectiveNonIncreasingAcrossLevels) {
  const SyntheticPair pair = make_pair({32, 32, 32}, 2.5, 4.0, 42);
  std::vector<double> level_losses;
  register_direct(pair.fixed, pair.moving, 2, 120, direct_config(),
                  &level_losses);
  ASSERT_EQ(level_losses.size(), 2u);
  EXPECT_LE(level_losses[1], level_losses[0] + 1e-9);
}

TEST(RegisterLearned, ZeroHeadParamsGiveZeroField) {
  Rng rng(7);
  const Volume f = oracles::random_volume({8, 8, 8}, rng);
  const Volume m = oracles::random_volume({8, 8, 8}, rng);
  ArchConfig arch;
  arch.c = 2;
  arch.k = 1;
  arch.depth = 1;
  const DisplacementField d = register_learned(init_params(arch, 1), f, m);
  for (const auto& c : d.comp)
    for (double x : c) EXPECT_DOUBLE_EQ(x, 0.0);
}

TEST(RegisterLearned, DeterministicAcrossCalls) {
  Rng rng(8);
  const Volume f = oracles::random_volume({8, 8, 8}, rng);
  const Volume m = oracles::random_volume({8, 8, 8}, rng);
  ArchConfig arch;
  arch.c = 2;
  arch.k = 1;
  arch.depth = 1;
  NetworkParams p = init_params(arch, 2);
  Rng prng(3);
  for (auto& x : p.flat) x += 0.01 * prng.normal();
  const DisplacementField a = register_learned(p, f, m);
  const DisplacementField b = register_learned(p, f, m);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(a.comp[c], b.comp[c]);
}
