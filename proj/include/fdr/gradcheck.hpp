#pragma once

// Seeded finite-difference verification of every analytic gradient in the
// toolkit: the warp adjoint, each loss adjoint, the composed HR/LR losses
// through the tape, and full network parameter gradients on a tiny model.

#include <string>
#include <vector>

#include "fdr/graph.hpp"
#include "fdr/network.hpp"
#include "fdr/optim.hpp"
#include "fdr/tape.hpp"

namespace fdr {

struct OpGradCheck {
  std::string name;
  double max_rel_err = 0.0;
  double tol = 1e-4;
  std::size_t checked = 0;
  bool pass = false;
};

namespace detail {

inline Volume gc_random_volume(Dims dims, Rng& rng) {
  Volume v(dims, VoxelKind::intensity);
  for (auto& x : v.data) x = rng.uniform(0.0, 10.0);
  return v;
}

inline Volume gc_random_labels(Dims dims, Rng& rng, int max_label) {
  Volume v(dims, VoxelKind::label);
  for (auto& x : v.data)
    x = static_cast<double>(rng.uniform_int(0, max_label));
  return v;
}

// Components in +-[0.1, 0.45]: keeps phi clear of the integer-coordinate
// kinks that central differences would straddle.
inline DisplacementField gc_random_field(Dims dims, Rng& rng) {
  DisplacementField d(dims);
  for (auto& c : d.comp)
    for (auto& x : c)
      x = rng.uniform(0.1, 0.45) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  return d;
}

inline OpGradCheck gc_report(const std::string& name,
                             const GradCheckReport& r, double tol) {
  OpGradCheck out;
  out.name = name;
  out.max_rel_err = r.max_rel_err;
  out.tol = tol;
  out.checked = r.checked;
  out.pass = r.max_rel_err <= tol && r.checked > 0;
  return out;
}

// Kink witnesses for the piecewise-smooth pieces of the loss stack: the
// trilinear warp is non-differentiable where any phi component is an
// integer, and the L1 terms of the segmentation loss where their argument
// is zero. Hashing the discrete branches lets grad_check drop probes that
// straddle one.
inline std::uint64_t warp_floor_signature(const DisplacementField& d,
                                          std::uint64_t sig = 0) {
  const Dims dims = d.dims;
  std::size_t i = 0;
  for (int w = 0; w < dims.nw; ++w)
    for (int v = 0; v < dims.nv; ++v)
      for (int u = 0; u < dims.nu; ++u, ++i) {
        sig = sig * 1099511628211ull +
              static_cast<std::uint64_t>(
                  static_cast<std::int64_t>(std::floor(u + d.comp[0][i])));
        sig = sig * 1099511628211ull +
              static_cast<std::uint64_t>(
                  static_cast<std::int64_t>(std::floor(v + d.comp[1][i])));
        sig = sig * 1099511628211ull +
              static_cast<std::uint64_t>(
                  static_cast<std::int64_t>(std::floor(w + d.comp[2][i])));
      }
  return sig;
}

inline std::uint64_t l1_sign_signature(const Volume& lf, const Volume& wlm,
                                       std::uint64_t sig = 0) {
  for (std::size_t i = 0; i < lf.data.size(); ++i) {
    const double diff = wlm.data[i] - lf.data[i];
    sig = sig * 1099511628211ull +
          (diff > 0.0 ? 1u : (diff < 0.0 ? 2u : 3u));
    sig = sig * 1099511628211ull + (wlm.data[i] > 0.0 ? 1u : 2u);
  }
  return sig;
}

inline OpGradCheck gc_warp(std::uint64_t seed) {
  Rng rng(seed);
  const Dims dims{6, 6, 6};
  const Volume m = gc_random_volume(dims, rng);
  const DisplacementField d = gc_random_field(dims, rng);
  Volume upstream(dims, VoxelKind::intensity);
  for (auto& x : upstream.data) x = rng.uniform(-1.0, 1.0);
  const WarpGrads g = warp_backward(m, d, upstream);
  const auto fn = [&](const std::vector<double>& flat) {
    const Volume out =
        warp_trilinear(m, DisplacementField::from_flat(dims, flat));
    double acc = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i)
      acc += upstream.data[i] * out.data[i];
    return acc;
  };
  return gc_report("warp", grad_check(fn, d.flat(), g.grad_d.flat(), 1e-4),
                   1e-4);
}

inline OpGradCheck gc_lncc(std::uint64_t seed) {
  Rng rng(seed);
  const Dims dims{8, 8, 8};
  const Volume f = gc_random_volume(dims, rng);
  const Volume w = gc_random_volume(dims, rng);
  const Volume analytic = lncc_backward(f, w, 5, 1.0);
  const auto fn = [&](const std::vector<double>& x) {
    Volume wx = w;
    wx.data = x;
    return lncc(f, wx, 5);
  };
  return gc_report("lncc", grad_check(fn, w.data, analytic.data, 1e-4), 1e-4);
}

inline OpGradCheck gc_smoothness(std::uint64_t seed) {
  Rng rng(seed);
  const Dims dims{6, 6, 6};
  DisplacementField d(dims);
  for (auto& c : d.comp)
    for (auto& x : c) x = rng.uniform(-2.0, 2.0);
  const DisplacementField analytic = smoothness_backward(d, 1.0);
  const auto fn = [&](const std::vector<double>& flat) {
    return smoothness(DisplacementField::from_flat(dims, flat));
  };
  return gc_report("smoothness",
                   grad_check(fn, d.flat(), analytic.flat(), 1e-4), 1e-4);
}

inline OpGradCheck gc_segloss(std::uint64_t seed) {
  Rng rng(seed);
  const Dims dims{8, 8, 8};
  const Volume lf = gc_random_labels(dims, rng, 5);
  Volume wlm(dims, VoxelKind::intensity);
  for (auto& x : wlm.data) x = rng.uniform(0.01, 5.0);
  const Volume analytic = seg_loss_backward(lf, wlm, 10.0, 1e-9, 1.0);
  const auto fn = [&](const std::vector<double>& x) {
    Volume wx = wlm;
    wx.data = x;
    return seg_loss(lf, wx, 10.0, 1e-9);
  };
  return gc_report("segloss", grad_check(fn, wlm.data, analytic.data, 1e-6),
                   1e-4);
}

inline OpGradCheck gc_loss_hr(std::uint64_t seed) {
  Rng rng(seed);
  const Dims dims{7, 7, 7};
  const Volume f = gc_random_volume(dims, rng);
  const Volume m = gc_random_volume(dims, rng);
  const Volume lf = gc_random_labels(dims, rng, 3);
  const Volume lm = gc_random_labels(dims, rng, 3);
  const DisplacementField d0 = gc_random_field(dims, rng);
  LossWeights weights = desk_weights();
  weights.alpha1 = 1e-3;
  weights.alpha2 = 0.3;
  weights.window_n = 5;

  Tape tape;
  const FieldVar d = field_leaf(tape, d0);
  const ScalarVar root = t_loss_hr(tape, f, m, d, lf, lm, weights);
  tape.backward(root.id);

  const auto fn = [&](const std::vector<double>& flat) {
    return loss_hr(f, m, DisplacementField::from_flat(dims, flat), lf, lm,
                   weights);
  };
  const Volume lm_int = labels_as_intensity(lm);
  const auto sig = [&](const std::vector<double>& flat) {
    const DisplacementField df = DisplacementField::from_flat(dims, flat);
    return l1_sign_signature(lf, warp_trilinear(lm_int, df),
                             warp_floor_signature(df));
  };
  return gc_report(
      "loss_hr",
      grad_check(fn, d0.flat(), tape.grad(d.id), 1e-4, 0, 0, sig), 1e-4);
}

inline OpGradCheck gc_loss_lr(std::uint64_t seed) {
  Rng rng(seed);
  const Dims hr_dims{8, 8, 8};
  const Dims lr_dims{4, 4, 4};
  const Volume f = gc_random_volume(hr_dims, rng);
  const Volume m_lr = gc_random_volume(lr_dims, rng);
  const DisplacementField d0 = gc_random_field(lr_dims, rng);
  LossWeights weights = desk_weights();
  weights.alpha3 = 1e-2;
  weights.window_n = 5;

  Tape tape;
  const FieldVar d = field_leaf(tape, d0);
  const ScalarVar root = t_loss_lr(tape, f, m_lr, d, weights);
  tape.backward(root.id);

  const auto fn = [&](const std::vector<double>& flat) {
    return loss_lr(f, m_lr, DisplacementField::from_flat(lr_dims, flat),
                   weights);
  };
  const auto sig = [&](const std::vector<double>& flat) {
    return warp_floor_signature(DisplacementField::from_flat(lr_dims, flat));
  };
  return gc_report(
      "loss_lr",
      grad_check(fn, d0.flat(), tape.grad(d.id), 1e-4, 0, 0, sig), 1e-4);
}

inline OpGradCheck gc_network(std::uint64_t seed) {
  Rng rng(seed);
  ArchConfig arch;
  arch.c = 2;
  arch.k = 1;
  arch.depth = 1;
  const Dims dims{8, 8, 8};
  const Volume f = gc_random_volume(dims, rng);
  const Volume m = gc_random_volume(dims, rng);
  const Volume lf = gc_random_labels(dims, rng, 3);
  const Volume lm = gc_random_labels(dims, rng, 3);
  const Volume m_lr = downsample2x(m);
  LossWeights weights = desk_weights();
  weights.alpha1 = 1e-4;
  weights.alpha2 = 0.2;
  weights.alpha3 = 8e-4;
  weights.window_n = 5;
  const std::int64_t iter = 100;

  NetworkParams params = init_params(arch, seed);
  // Zero heads would leave the encoder and decoder without any gradient
  // signal; nudge them so the whole parameter vector is exercised.
  for (const char* name : {"lr_head.w", "lr_head.b", "hr_head.w", "hr_head.b"}) {
    const TensorDesc& t = params.tensor(name);
    for (std::size_t i = 0; i < t.size; ++i)
      params.flat[t.offset + i] += 0.05 * rng.normal();
  }

  Tape tape;
  const int params_id = tape.alloc(params.flat.size());
  const NetForward fwd = net_forward(&tape, params, params_id, f, m);
  const ScalarVar l_hr = t_loss_hr(tape, f, m, {fwd.d_hr, fwd.id_hr}, lf, lm,
                                   weights);
  const ScalarVar l_lr =
      t_loss_lr(tape, f, m_lr, {fwd.d_lr, fwd.id_lr}, weights);
  const ScalarVar root = t_overall(tape, l_hr, l_lr, iter);
  const std::vector<double> analytic =
      backward_params(tape, root.id, params_id);

  NetworkParams scratch = params;
  const auto fn = [&](const std::vector<double>& flat) {
    scratch.flat = flat;
    const NetForward out = net_forward(nullptr, scratch, Tape::kNoGrad, f, m);
    const double hr = loss_hr(f, m, out.d_hr, lf, lm, weights);
    const double lr = loss_lr(f, m_lr, out.d_lr, weights);
    return overall_loss(hr, lr, iter);
  };
  const Volume lm_int = labels_as_intensity(lm);
  const auto sig = [&](const std::vector<double>& flat) {
    scratch.flat = flat;
    const NetForward out = net_forward(nullptr, scratch, Tape::kNoGrad, f, m);
    std::uint64_t s = out.prelu_signature;
    s = warp_floor_signature(out.d_hr, s);
    s = warp_floor_signature(out.d_lr, s);
    return l1_sign_signature(lf, warp_trilinear(lm_int, out.d_hr), s);
  };
  return gc_report(
      "network",
      grad_check(fn, params.flat, analytic, 1e-4, 256, seed ^ 0xabcdu, sig),
      1e-3);
}

}  // namespace detail

inline std::vector<OpGradCheck> run_gradcheck(const std::string& op,
                                              std::uint64_t seed) {
  std::vector<OpGradCheck> reports;
  const bool all = op == "all";
  if (all || op == "warp") reports.push_back(detail::gc_warp(seed));
  if (all || op == "lncc") reports.push_back(detail::gc_lncc(seed));
  if (all || op == "smoothness")
    reports.push_back(detail::gc_smoothness(seed));
  if (all || op == "segloss") reports.push_back(detail::gc_segloss(seed));
  if (all) {
    reports.push_back(detail::gc_loss_hr(seed));
    reports.push_back(detail::gc_loss_lr(seed));
  }
  if (all || op == "network") reports.push_back(detail::gc_network(seed));
  if (reports.empty())
    throw std::invalid_argument(
        "gradcheck: unknown op \"" + op +
        "\" (expected all|warp|lncc|smoothness|segloss|network)");
  return reports;
}

}  // namespace fdr
