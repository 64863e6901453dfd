#pragma once

// Training losses: local normalized cross-correlation, shift-based
// smoothness, the multi-label segmentation loss, the decaying LR-loss weight,
// and the high-/low-resolution loss compositions. Every loss has an analytic
// adjoint next to it. All reductions run in a fixed order.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>

#include "fdr/core.hpp"
#include "fdr/resample.hpp"
#include "fdr/warp.hpp"

namespace fdr {

// Stabilizer added to each LNCC window's denominator product; constant
// windows then contribute zero to both value and gradient.
inline constexpr double kLnccEpsilon = 1e-5;

struct LossWeights {
  double alpha1 = 1e-8;  // HR smoothness weight
  double alpha2 = 0.2;   // segmentation loss weight
  double alpha3 = 8e-8;  // LR smoothness weight
  double c1 = 10.0;
  double c2 = 1e-9;
  int window_n = 9;
  // Mean over window centers (volume-size invariant). false restores the
  // raw sum.
  bool lncc_mean = true;

  void validate() const {
    require(alpha1 >= 0 && alpha2 >= 0 && alpha3 >= 0,
            "LossWeights: alphas must be non-negative");
    require(c1 >= 0, "LossWeights: c1 must be non-negative");
    require(c2 > 0, "LossWeights: c2 must be positive");
    require(window_n >= 3 && window_n % 2 == 1,
            "LossWeights: window_n must be odd and >= 3");
  }
};

// Values as published: tuned for raw-sum LNCC on 160x208x176 volumes.
inline LossWeights paper_weights() {
  LossWeights w;
  w.alpha1 = 1e-8;
  w.alpha2 = 0.2;
  w.alpha3 = 8e-8;
  w.c1 = 10.0;
  w.c2 = 1e-9;
  w.window_n = 9;
  w.lncc_mean = false;
  return w;
}

// Desk-scale preset for the synthetic 32^3 experiments: mean-normalized LNCC
// keeps the data term O(1), and alpha1 is rescaled accordingly (the raw-sum
// smoothness over a small grid would otherwise be invisible next to it).
inline LossWeights desk_weights() {
  LossWeights w;
  w.alpha1 = 2e-6;
  w.alpha2 = 0.2;
  w.alpha3 = 8 * w.alpha1;
  w.c1 = 10.0;
  w.c2 = 1e-9;
  w.window_n = 9;
  w.lncc_mean = true;
  return w;
}

namespace detail {

// Clipped box sums along one axis, in place: out(i) = sum_{|j-i|<=r} in(j).
inline void box_sum_axis(std::vector<double>& grid, Dims dims, int axis,
                         int radius, std::vector<double>& scratch) {
  const int n[3] = {dims.nu, dims.nv, dims.nw};
  const std::size_t stride[3] = {
      1, static_cast<std::size_t>(dims.nu),
      static_cast<std::size_t>(dims.nu) * static_cast<std::size_t>(dims.nv)};
  const int len = n[axis];
  const std::size_t step = stride[axis];
  scratch.assign(len + 1, 0.0);
  const int na = n[(axis + 1) % 3];
  const int nb = n[(axis + 2) % 3];
  const std::size_t sa = stride[(axis + 1) % 3];
  const std::size_t sb = stride[(axis + 2) % 3];
  for (int b = 0; b < nb; ++b)
    for (int a = 0; a < na; ++a) {
      double* line = grid.data() + a * sa + b * sb;
      scratch[0] = 0.0;
      for (int i = 0; i < len; ++i) scratch[i + 1] = scratch[i] + line[i * step];
      for (int i = 0; i < len; ++i) {
        const int lo = std::max(i - radius, 0);
        const int hi = std::min(i + radius, len - 1);
        line[i * step] = scratch[hi + 1] - scratch[lo];
      }
    }
}

inline std::vector<double> window_sum(const std::vector<double>& src,
                                      Dims dims, int radius) {
  std::vector<double> out = src;
  std::vector<double> scratch;
  for (int axis = 0; axis < 3; ++axis)
    box_sum_axis(out, dims, axis, radius, scratch);
  return out;
}

inline int axis_count(int i, int n, int r) {
  return std::min(i + r, n - 1) - std::max(i - r, 0) + 1;
}

struct LnccWindows {
  std::vector<double> sum_f, sum_w, sum_ff, sum_ww, sum_fw;
  std::vector<double> count;
  std::vector<double> fc, wc;  // globally centered copies of the inputs
};

// Window statistics for every center. Inputs are centered on their global
// means first; A, B, C below are shift-invariant, so this only improves
// conditioning.
inline LnccWindows lncc_windows(const Volume& f, const Volume& w, int n) {
  const std::size_t nv = f.voxels();
  LnccWindows s;
  s.fc.resize(nv);
  s.wc.resize(nv);
  double mf = 0.0, mw = 0.0;
  for (std::size_t i = 0; i < nv; ++i) {
    mf += f.data[i];
    mw += w.data[i];
  }
  mf /= static_cast<double>(nv);
  mw /= static_cast<double>(nv);
  std::vector<double> ff(nv), ww(nv), fw(nv);
  for (std::size_t i = 0; i < nv; ++i) {
    s.fc[i] = f.data[i] - mf;
    s.wc[i] = w.data[i] - mw;
    ff[i] = s.fc[i] * s.fc[i];
    ww[i] = s.wc[i] * s.wc[i];
    fw[i] = s.fc[i] * s.wc[i];
  }
  const int r = n / 2;
  s.sum_f = window_sum(s.fc, f.dims, r);
  s.sum_w = window_sum(s.wc, f.dims, r);
  s.sum_ff = window_sum(ff, f.dims, r);
  s.sum_ww = window_sum(ww, f.dims, r);
  s.sum_fw = window_sum(fw, f.dims, r);
  s.count.resize(nv);
  std::size_t i = 0;
  for (int wz = 0; wz < f.dims.nw; ++wz) {
    const int cw = axis_count(wz, f.dims.nw, r);
    for (int vy = 0; vy < f.dims.nv; ++vy) {
      const int cv = axis_count(vy, f.dims.nv, r) * cw;
      for (int ux = 0; ux < f.dims.nu; ++ux, ++i)
        s.count[i] = static_cast<double>(axis_count(ux, f.dims.nu, r) * cv);
    }
  }
  return s;
}

inline void lncc_check_args(const Volume& f, const Volume& w, int n) {
  require(f.dims == w.dims, "lncc: dims mismatch " + f.dims.str() + " vs " +
                                w.dims.str());
  require(n >= 1 && n % 2 == 1, "lncc: window size must be odd and positive");
}

}  // namespace detail

// Mean (or raw sum, with mean=false) over all window centers of the squared
// local correlation between f and w. Windows are clipped at the borders and
// statistics use the in-bounds voxel count.
inline double lncc(const Volume& f, const Volume& w, int n, bool mean = true) {
  detail::lncc_check_args(f, w, n);
  const auto s = detail::lncc_windows(f, w, n);
  const std::size_t nv = f.voxels();
  double total = 0.0;
  for (std::size_t i = 0; i < nv; ++i) {
    const double N = s.count[i];
    const double A = s.sum_fw[i] - s.sum_f[i] * s.sum_w[i] / N;
    const double B = std::max(s.sum_ff[i] - s.sum_f[i] * s.sum_f[i] / N, 0.0);
    const double C = std::max(s.sum_ww[i] - s.sum_w[i] * s.sum_w[i] / N, 0.0);
    total += A * A / (B * C + kLnccEpsilon);
  }
  return mean ? total / static_cast<double>(nv) : total;
}

// d lncc / d w, scaled by a scalar upstream gradient. Exact adjoint of the
// value above, window clipping included.
inline Volume lncc_backward(const Volume& f, const Volume& w, int n,
                            double upstream, bool mean = true) {
  detail::lncc_check_args(f, w, n);
  const auto s = detail::lncc_windows(f, w, n);
  const std::size_t nv = f.voxels();
  // Per-center coefficients of (f_j - mean_f) and (w_j - mean_w).
  std::vector<double> p(nv), q(nv), p_mf(nv), q_mw(nv);
  for (std::size_t i = 0; i < nv; ++i) {
    const double N = s.count[i];
    const double A = s.sum_fw[i] - s.sum_f[i] * s.sum_w[i] / N;
    const double B = std::max(s.sum_ff[i] - s.sum_f[i] * s.sum_f[i] / N, 0.0);
    const double C = std::max(s.sum_ww[i] - s.sum_w[i] * s.sum_w[i] / N, 0.0);
    const double D = B * C + kLnccEpsilon;
    p[i] = 2.0 * A / D;
    q[i] = 2.0 * A * A * B / (D * D);
    p_mf[i] = p[i] * s.sum_f[i] / N;
    q_mw[i] = q[i] * s.sum_w[i] / N;
  }
  const int r = n / 2;
  const auto box_p = detail::window_sum(p, f.dims, r);
  const auto box_q = detail::window_sum(q, f.dims, r);
  const auto box_pmf = detail::window_sum(p_mf, f.dims, r);
  const auto box_qmw = detail::window_sum(q_mw, f.dims, r);
  const double norm =
      upstream * (mean ? 1.0 / static_cast<double>(nv) : 1.0);
  Volume grad(f.dims, VoxelKind::intensity);
  for (std::size_t i = 0; i < nv; ++i)
    grad.data[i] = norm * (s.fc[i] * box_p[i] - box_pmf[i] -
                           s.wc[i] * box_q[i] + box_qmw[i]);
  return grad;
}

// Sum over the 7 non-zero shift vectors k in {0,1}^3 of ||d - S_k d||^2,
// restricted to voxels whose shifted partner is in bounds. The k = 0 shift
// contributes identically zero and is skipped.
inline double smoothness(const DisplacementField& d) {
  const Dims dims = d.dims;
  double total = 0.0;
  for (int kw = 0; kw <= 1; ++kw)
    for (int kv = 0; kv <= 1; ++kv)
      for (int ku = 0; ku <= 1; ++ku) {
        if (ku == 0 && kv == 0 && kw == 0) continue;
        for (int w = 0; w + kw < dims.nw; ++w)
          for (int v = 0; v + kv < dims.nv; ++v)
            for (int u = 0; u + ku < dims.nu; ++u) {
              const std::size_t a = dims.index(u, v, w);
              const std::size_t b = dims.index(u + ku, v + kv, w + kw);
              for (int c = 0; c < 3; ++c) {
                const double diff = d.comp[c][a] - d.comp[c][b];
                total += diff * diff;
              }
            }
      }
  return total;
}

inline DisplacementField smoothness_backward(const DisplacementField& d,
                                             double upstream) {
  const Dims dims = d.dims;
  DisplacementField grad(dims);
  for (int kw = 0; kw <= 1; ++kw)
    for (int kv = 0; kv <= 1; ++kv)
      for (int ku = 0; ku <= 1; ++ku) {
        if (ku == 0 && kv == 0 && kw == 0) continue;
        for (int w = 0; w + kw < dims.nw; ++w)
          for (int v = 0; v + kv < dims.nv; ++v)
            for (int u = 0; u + ku < dims.nu; ++u) {
              const std::size_t a = dims.index(u, v, w);
              const std::size_t b = dims.index(u + ku, v + kv, w + kw);
              for (int c = 0; c < 3; ++c) {
                const double g = 2.0 * upstream * (d.comp[c][a] - d.comp[c][b]);
                grad.comp[c][a] += g;
                grad.comp[c][b] -= g;
              }
            }
      }
  return grad;
}

// Multi-label segmentation loss on raw label values:
//   SL = (c1+1)*|LF - W|_1 / (|LF|_1 + |W|_1 + c1*|LF - W|_1 + c2)
// Needs no per-class expansion; peak auxiliary memory is independent of the
// number of classes.
inline double seg_loss(const Volume& lf, const Volume& warped_lm, double c1,
                       double c2) {
  require(lf.dims == warped_lm.dims, "seg_loss: dims mismatch");
  require(lf.kind == VoxelKind::label,
          "seg_loss: first argument must be a label volume");
  require(c1 >= 0, "seg_loss: c1 must be non-negative");
  require(c2 > 0, "seg_loss: c2 must be positive");
  double a = 0.0, b = 0.0, c = 0.0;
  const std::size_t nv = lf.voxels();
  for (std::size_t i = 0; i < nv; ++i) {
    a += std::abs(lf.data[i] - warped_lm.data[i]);
    b += std::abs(lf.data[i]);
    c += std::abs(warped_lm.data[i]);
  }
  return (c1 + 1.0) * a / (b + c + c1 * a + c2);
}

// Gradient with respect to the warped label volume. |.|_1 takes subgradient
// 0 at exact zeros.
inline Volume seg_loss_backward(const Volume& lf, const Volume& warped_lm,
                                double c1, double c2, double upstream) {
  require(lf.dims == warped_lm.dims, "seg_loss: dims mismatch");
  require(c2 > 0, "seg_loss: c2 must be positive");
  double a = 0.0, b = 0.0, c = 0.0;
  const std::size_t nv = lf.voxels();
  for (std::size_t i = 0; i < nv; ++i) {
    a += std::abs(lf.data[i] - warped_lm.data[i]);
    b += std::abs(lf.data[i]);
    c += std::abs(warped_lm.data[i]);
  }
  const double den = b + c + c1 * a + c2;
  const double num = (c1 + 1.0) * a;
  Volume grad(lf.dims, VoxelKind::intensity);
  auto sign = [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); };
  for (std::size_t i = 0; i < nv; ++i) {
    const double sa = sign(warped_lm.data[i] - lf.data[i]);
    const double sc = sign(warped_lm.data[i]);
    grad.data[i] =
        upstream * ((c1 + 1.0) * sa * den - num * (sc + c1 * sa)) / (den * den);
  }
  return grad;
}

// LR-loss weight 0.5^(1 + i/1000): 0.5 at i = 0, decaying toward 0 but never
// clamped.
inline double lambda_schedule(std::int64_t i) {
  require(i >= 0, "lambda_schedule: iteration index must be >= 0");
  return std::pow(0.5, 1.0 + static_cast<double>(i) / 1000.0);
}

// L_HR = -LNCC(F, warp(M, d)) + a1*R(d) [+ a2*SL(LF, warp(raw LM, d))].
// The SL term needs both label volumes and a positive alpha2.
inline double loss_hr(const Volume& f, const Volume& m,
                      const DisplacementField& d_hr,
                      const std::optional<Volume>& labels_f,
                      const std::optional<Volume>& labels_m,
                      const LossWeights& weights) {
  weights.validate();
  require(labels_f.has_value() == labels_m.has_value(),
          "loss_hr: labels must be provided for both images or neither");
  const Volume warped = warp_trilinear(m, d_hr);
  double loss = -lncc(f, warped, weights.window_n, weights.lncc_mean);
  if (weights.alpha1 > 0) loss += weights.alpha1 * smoothness(d_hr);
  if (labels_f && weights.alpha2 > 0) {
    const Volume warped_lm =
        warp_trilinear(labels_as_intensity(*labels_m), d_hr);
    loss += weights.alpha2 * seg_loss(*labels_f, warped_lm, weights.c1,
                                      weights.c2);
  }
  return loss;
}

// L_LR = -LNCC(F_HR, upsample(warp(M_LR, d_LR))) + a3*R(d_LR).
inline double loss_lr(const Volume& f_hr, const Volume& m_lr,
                      const DisplacementField& d_lr,
                      const LossWeights& weights) {
  weights.validate();
  require(m_lr.dims == d_lr.dims, "loss_lr: moving image dims " +
                                      m_lr.dims.str() + " != field dims " +
                                      d_lr.dims.str());
  const Volume warped = warp_trilinear(m_lr, d_lr);
  const Volume up = upsample_trilinear(warped, f_hr.dims);
  double loss = -lncc(f_hr, up, weights.window_n, weights.lncc_mean);
  if (weights.alpha3 > 0) loss += weights.alpha3 * smoothness(d_lr);
  return loss;
}

// L_overall = (1 - lambda(i)) L_HR + lambda(i) L_LR; just L_HR when deep
// supervision is disabled.
inline double overall_loss(double l_hr, double l_lr, std::int64_t i,
                           bool deep_supervision = true) {
  if (!deep_supervision) return l_hr;
  const double lambda = lambda_schedule(i);
  return (1.0 - lambda) * l_hr + lambda * l_lr;
}

}  // namespace fdr
