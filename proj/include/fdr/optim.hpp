#pragma once

// Adam, the learning-rate schedule, the network training loop (Eq. 2/3
// composition with the decaying LR-loss weight), and the classical engine
// that optimizes a displacement field directly over a resolution pyramid.

#include <cmath>
#include <limits>
#include <optional>

#include "fdr/graph.hpp"
#include "fdr/losses.hpp"
#include "fdr/metrics.hpp"
#include "fdr/network.hpp"
#include "fdr/resample.hpp"
#include "fdr/rng.hpp"

namespace fdr {

struct TrainConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double lr0 = 0.002;
  double lr_decay = 0.9;
  int decay_every = 1000;
  double lr_floor = 1e-4;
  int epochs = 1;
  std::uint64_t seed = 0;
  LossWeights weights;
  double grad_clip_norm = 10.0;  // global-norm clip; guards LNCC spikes
  bool grad_clip = true;
  int val_every = 0;  // 0 disables validation metrics

  void validate() const {
    require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1,
            "TrainConfig: betas must lie in [0, 1)");
    require(lr_floor <= lr0, "TrainConfig: lr_floor must not exceed lr0");
    require(decay_every > 0, "TrainConfig: decay_every must be positive");
    require(epochs >= 0, "TrainConfig: epochs must be >= 0");
    weights.validate();
  }
};

// Step-decayed learning rate with a floor:
// max(lr_floor, lr0 * decay^floor(i / decay_every)).
inline double lr_schedule(const TrainConfig& cfg, std::int64_t i) {
  require(i >= 0, "lr_schedule: iteration index must be >= 0");
  const double lr =
      cfg.lr0 * std::pow(cfg.lr_decay, static_cast<double>(i / cfg.decay_every));
  return std::max(cfg.lr_floor, lr);
}

struct AdamState {
  std::vector<double> m, v;
  std::int64_t t = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

// Standard bias-corrected Adam with eps = 1e-8. Rejects non-finite
// gradients before touching any state.
inline void adam_step(std::vector<double>& params,
                      const std::vector<double>& grads, AdamState& state,
                      double lr, double beta1 = 0.9, double beta2 = 0.999,
                      double eps = 1e-8) {
  require(params.size() == grads.size() && params.size() == state.m.size(),
          "adam_step: size mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i]))
      throw std::runtime_error("adam_step: non-finite gradient at index " +
                               std::to_string(i));
  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grads[i];
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

inline void clip_global_norm(std::vector<double>& grads, double max_norm) {
  double sq = 0.0;
  for (double g : grads) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (double& g : grads) g *= scale;
  }
}

struct TrainSample {
  Volume fixed;
  Volume moving;
  std::optional<Volume> labels_fixed;
  std::optional<Volume> labels_moving;
};

struct HistoryRow {
  std::int64_t iteration = 0;
  double lambda = 0.0;
  double lr = 0.0;
  double loss_overall = 0.0;
  double loss_hr = 0.0;
  double loss_lr = 0.0;
  double val_dice = std::numeric_limits<double>::quiet_NaN();
  double val_ncc = std::numeric_limits<double>::quiet_NaN();
};

struct History {
  std::vector<HistoryRow> rows;
  bool aborted_non_finite = false;
};

struct TrainResult {
  NetworkParams params;
  History history;
};

namespace detail {

inline Volume downsample_times(const Volume& v, int times) {
  Volume out = v;
  for (int i = 0; i < times; ++i) out = downsample2x(out);
  return out;
}

struct ValMetrics {
  double dice = std::numeric_limits<double>::quiet_NaN();
  double ncc_val = std::numeric_limits<double>::quiet_NaN();
};

inline ValMetrics validation_metrics(const NetworkParams& params,
                                     const std::vector<TrainSample>& val) {
  ValMetrics out;
  if (val.empty()) return out;
  double dice_sum = 0.0, ncc_sum = 0.0;
  int dice_n = 0;
  for (const auto& s : val) {
    const NetForward fwd =
        net_forward(nullptr, params, Tape::kNoGrad, s.fixed, s.moving);
    ncc_sum += ncc(s.fixed, warp_trilinear(s.moving, fwd.d_hr));
    if (s.labels_fixed && s.labels_moving) {
      dice_sum +=
          dice_multilabel(*s.labels_fixed,
                          warp_nearest(*s.labels_moving, fwd.d_hr))
              .mean;
      ++dice_n;
    }
  }
  out.ncc_val = ncc_sum / static_cast<double>(val.size());
  if (dice_n > 0) out.dice = dice_sum / dice_n;
  return out;
}

}  // namespace detail

// Unsupervised training: per iteration one (fixed, moving) pair, forward
// pass, Eq. 2/3 loss with lambda(i), backward, Adam with lr(i). The pair
// order is reshuffled every epoch with the run seed. A non-finite loss or
// gradient aborts the run and returns the last good parameters.
inline TrainResult train(const std::vector<TrainSample>& samples,
                         const ArchConfig& arch, const TrainConfig& cfg,
                         const std::vector<TrainSample>& val_samples = {}) {
  arch.validate();
  cfg.validate();
  require(!samples.empty(), "train: empty dataset");
  const int factor = 1 << arch.depth;
  for (const auto& s : samples) {
    require(s.fixed.dims == s.moving.dims, "train: pair dims mismatch");
    require(s.fixed.dims.divisible_by(factor),
            "train: dims " + s.fixed.dims.str() + " not divisible by 2^depth");
    require(s.labels_fixed.has_value() == s.labels_moving.has_value(),
            "train: labels must be provided for both images or neither");
  }

  TrainResult result{init_params(arch, cfg.seed), {}};
  AdamState adam(result.params.flat.size());
  Rng order_rng(cfg.seed ^ 0x5851f42d4c957f2dull);

  std::vector<Volume> moving_lr;
  moving_lr.reserve(samples.size());
  for (const auto& s : samples)
    moving_lr.push_back(detail::downsample_times(s.moving, arch.depth));

  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::int64_t iter = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    for (std::size_t idx : order) {
      const TrainSample& s = samples[idx];

      Tape tape;
      const int params_id = tape.alloc(result.params.flat.size());
      const NetForward fwd =
          net_forward(&tape, result.params, params_id, s.fixed, s.moving);
      const FieldVar d_hr{fwd.d_hr, fwd.id_hr};
      const FieldVar d_lr{fwd.d_lr, fwd.id_lr};

      const ScalarVar l_hr = t_loss_hr(tape, s.fixed, s.moving, d_hr,
                                       s.labels_fixed, s.labels_moving,
                                       cfg.weights);
      ScalarVar root;
      double l_lr_value;
      if (arch.deep_supervision) {
        const ScalarVar l_lr =
            t_loss_lr(tape, s.fixed, moving_lr[idx], d_lr, cfg.weights);
        l_lr_value = l_lr.v;
        root = t_overall(tape, l_hr, l_lr, iter, true);
      } else {
        // LR head still exists; its loss is logged but carries no weight.
        l_lr_value = loss_lr(s.fixed, moving_lr[idx], fwd.d_lr, cfg.weights);
        root = l_hr;
      }

      if (!std::isfinite(root.v)) {
        result.history.aborted_non_finite = true;
        return result;
      }

      tape.backward(root.id);
      std::vector<double> grads = tape.grad(params_id);
      if (cfg.grad_clip) clip_global_norm(grads, cfg.grad_clip_norm);
      try {
        adam_step(result.params.flat, grads, adam, lr_schedule(cfg, iter),
                  cfg.beta1, cfg.beta2);
      } catch (const std::runtime_error&) {
        result.history.aborted_non_finite = true;
        return result;
      }

      HistoryRow row;
      row.iteration = iter;
      row.lambda = lambda_schedule(iter);
      row.lr = lr_schedule(cfg, iter);
      row.loss_overall = root.v;
      row.loss_hr = l_hr.v;
      row.loss_lr = l_lr_value;
      if (cfg.val_every > 0 && (iter + 1) % cfg.val_every == 0) {
        const auto vm =
            detail::validation_metrics(result.params, val_samples);
        row.val_dice = vm.dice;
        row.val_ncc = vm.ncc_val;
      }
      result.history.rows.push_back(row);
      ++iter;
    }
  }
  return result;
}

// Trilinear field upsampling with 2x offset scaling (offsets are in voxel
// units of their own grid).
inline DisplacementField upsample_field_2x(const DisplacementField& d,
                                           Dims target) {
  DisplacementField out(target);
  for (int c = 0; c < 3; ++c) {
    Volume comp(d.dims, VoxelKind::intensity);
    comp.data = d.comp[c];
    Volume up = upsample_trilinear(comp, target);
    for (auto& x : up.data) x *= 2.0;
    out.comp[c] = std::move(up.data);
  }
  return out;
}

// Defaults for the direct engine. Adam's normalized update moves the field
// by ~lr voxels per iteration whatever the gradient magnitude, so the rate
// starts at a sizeable fraction of a voxel and must decay to a small floor
// within the run; the terminal wander around an optimum scales with the
// floor. The network schedule (0.002) would barely move a field within a
// few hundred iterations.
inline TrainConfig direct_config() {
  TrainConfig cfg;
  cfg.lr0 = 0.02;
  cfg.lr_decay = 0.7;
  cfg.decay_every = 25;
  cfg.lr_floor = 0.001;
  cfg.weights = desk_weights();
  return cfg;
}

// Classical coarse-to-fine registration: optimize a displacement field with
// Adam at each pyramid level, upsampling (and 2x-scaling) between levels.
// The learning-rate schedule restarts at each level. The raw-sum smoothness
// term is scaled by 8^level so the regularization pressure per voxel stays
// constant across pyramid levels (an 8x voxel-count drop per level would
// otherwise under-regularize the coarse grids).
inline DisplacementField register_direct(const Volume& f, const Volume& m,
                                         int levels, int iters_per_level,
                                         const TrainConfig& cfg,
                                         std::vector<double>* level_losses =
                                             nullptr) {
  require(f.dims == m.dims, "register_direct: dims mismatch " +
                                f.dims.str() + " vs " + m.dims.str());
  cfg.validate();
  const Pyramid pf = build_pyramid(f, levels);
  const Pyramid pm = build_pyramid(m, levels);

  DisplacementField d(pf.levels[levels - 1].dims);
  for (int level = levels - 1; level >= 0; --level) {
    const Volume& fl = pf.levels[level];
    const Volume& ml = pm.levels[level];
    LossWeights weights = cfg.weights;
    weights.alpha1 = cfg.weights.alpha1 * std::pow(8.0, level);
    AdamState adam(3 * d.voxels());
    std::vector<double> flat = d.flat();
    for (int it = 0; it < iters_per_level; ++it) {
      Tape tape;
      const FieldVar dv = field_leaf(tape, d);
      const ScalarVar loss =
          t_loss_hr(tape, fl, ml, dv, std::nullopt, std::nullopt, weights);
      if (!std::isfinite(loss.v)) break;  // keep the last good field
      tape.backward(loss.id);
      std::vector<double> grads = tape.grad(dv.id);
      if (cfg.grad_clip) clip_global_norm(grads, cfg.grad_clip_norm);
      adam_step(flat, grads, adam, lr_schedule(cfg, it), cfg.beta1, cfg.beta2);
      d = DisplacementField::from_flat(d.dims, flat);
    }
    if (level_losses) {
      // Progress on the fixed finest-level objective: chain-upsample the
      // current field to full resolution and evaluate there.
      DisplacementField full = d;
      for (int l = level; l > 0; --l)
        full = upsample_field_2x(full, pf.levels[l - 1].dims);
      level_losses->push_back(loss_hr(pf.levels[0], pm.levels[0], full,
                                      std::nullopt, std::nullopt,
                                      cfg.weights));
    }
    if (level > 0) d = upsample_field_2x(d, pf.levels[level - 1].dims);
  }
  return d;
}

// Learned registration is a single forward pass.
inline DisplacementField register_learned(const NetworkParams& params,
                                          const Volume& f, const Volume& m) {
  return net_forward(nullptr, params, Tape::kNoGrad, f, m).d_hr;
}

}  // namespace fdr
