#pragma once

// Independent brute-force oracles. These deliberately avoid the library's
// separable/box-sum implementations: everything here is written as direct
// per-definition loops and is only suitable for small volumes.

#include <cmath>
#include <map>
#include <vector>

#include "fdr/core.hpp"
#include "fdr/losses.hpp"
#include "fdr/rng.hpp"

namespace fdr::oracles {

inline Volume random_volume(Dims dims, Rng& rng, double lo = 0.0,
                            double hi = 10.0) {
  Volume v(dims, VoxelKind::intensity);
  for (auto& x : v.data) x = rng.uniform(lo, hi);
  return v;
}

inline Volume random_labels(Dims dims, Rng& rng, int max_label) {
  Volume v(dims, VoxelKind::label);
  for (auto& x : v.data)
    x = static_cast<double>(rng.uniform_int(0, max_label));
  return v;
}

inline DisplacementField random_field(Dims dims, Rng& rng, double lo,
                                      double hi) {
  DisplacementField d(dims);
  for (auto& c : d.comp)
    for (auto& x : c) {
      x = rng.uniform(lo, hi);
      if (rng.uniform() < 0.5) x = -x;
    }
  return d;
}

// Direct per-window evaluation of the squared local correlation: two-pass
// means, clipped windows, the same epsilon convention as the contract.
inline double lncc_naive(const Volume& f, const Volume& w, int n,
                         bool mean = true) {
  const int r = n / 2;
  const Dims dims = f.dims;
  double total = 0.0;
  for (int cw = 0; cw < dims.nw; ++cw)
    for (int cv = 0; cv < dims.nv; ++cv)
      for (int cu = 0; cu < dims.nu; ++cu) {
        double mf = 0.0, mw = 0.0;
        int count = 0;
        for (int dw = -r; dw <= r; ++dw)
          for (int dv = -r; dv <= r; ++dv)
            for (int du = -r; du <= r; ++du) {
              const int u = cu + du, v = cv + dv, z = cw + dw;
              if (!dims.contains(u, v, z)) continue;
              mf += f.at(u, v, z);
              mw += w.at(u, v, z);
              ++count;
            }
        mf /= count;
        mw /= count;
        double a = 0.0, b = 0.0, c = 0.0;
        for (int dw = -r; dw <= r; ++dw)
          for (int dv = -r; dv <= r; ++dv)
            for (int du = -r; du <= r; ++du) {
              const int u = cu + du, v = cv + dv, z = cw + dw;
              if (!dims.contains(u, v, z)) continue;
              const double df = f.at(u, v, z) - mf;
              const double dw2 = w.at(u, v, z) - mw;
              a += df * dw2;
              b += df * df;
              c += dw2 * dw2;
            }
        total += a * a / (b * c + kLnccEpsilon);
      }
  return mean ? total / static_cast<double>(dims.voxels()) : total;
}

inline double smoothness_naive(const DisplacementField& d) {
  const Dims dims = d.dims;
  double total = 0.0;
  for (int ku = 0; ku <= 1; ++ku)
    for (int kv = 0; kv <= 1; ++kv)
      for (int kw = 0; kw <= 1; ++kw) {
        if (ku + kv + kw == 0) continue;
        for (int w = 0; w < dims.nw; ++w)
          for (int v = 0; v < dims.nv; ++v)
            for (int u = 0; u < dims.nu; ++u) {
              if (!dims.contains(u + ku, v + kv, w + kw)) continue;
              for (int c = 0; c < 3; ++c) {
                const double diff =
                    d.at(c, u, v, w) - d.at(c, u + ku, v + kv, w + kw);
                total += diff * diff;
              }
            }
      }
  return total;
}

inline double seg_loss_naive(const Volume& lf, const Volume& wlm, double c1,
                             double c2) {
  double a = 0.0, b = 0.0, c = 0.0;
  for (std::size_t i = 0; i < lf.data.size(); ++i) {
    a += std::fabs(lf.data[i] - wlm.data[i]);
    b += std::fabs(lf.data[i]);
    c += std::fabs(wlm.data[i]);
  }
  return (c1 + 1.0) * a / (b + c + c1 * a + c2);
}

inline double ssim_naive(const Volume& a, const Volume& b, double range) {
  const double n = static_cast<double>(a.data.size());
  double ma = 0.0, mb = 0.0;
  for (double x : a.data) ma += x;
  for (double x : b.data) mb += x;
  ma /= n;
  mb /= n;
  double va = 0.0, vb = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    va += (a.data[i] - ma) * (a.data[i] - ma);
    vb += (b.data[i] - mb) * (b.data[i] - mb);
    cov += (a.data[i] - ma) * (b.data[i] - mb);
  }
  va /= n;
  vb /= n;
  cov /= n;
  const double c1 = (0.01 * range) * (0.01 * range);
  const double c2 = (0.03 * range) * (0.03 * range);
  return ((2 * ma * mb + c1) * (2 * cov + c2)) /
         ((ma * ma + mb * mb + c1) * (va + vb + c2));
}

inline double dice_binary_naive(const Volume& a, const Volume& b) {
  double na = 0, nb = 0, ni = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    na += a.data[i];
    nb += b.data[i];
    ni += a.data[i] * b.data[i];
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * ni / (na + nb);
}

// Trilinear interpolation of v at an arbitrary point, straight from the
// 8-corner definition with zero padding.
inline double trilinear_point_naive(const Volume& v, double pu, double pv,
                                    double pw) {
  const int u0 = static_cast<int>(std::floor(pu));
  const int v0 = static_cast<int>(std::floor(pv));
  const int w0 = static_cast<int>(std::floor(pw));
  double acc = 0.0;
  for (int dw = 0; dw <= 1; ++dw)
    for (int dv = 0; dv <= 1; ++dv)
      for (int du = 0; du <= 1; ++du) {
        const int cu = u0 + du, cv = v0 + dv, cw = w0 + dw;
        if (!v.dims.contains(cu, cv, cw)) continue;
        const double wu = 1.0 - std::fabs(pu - cu);
        const double wv = 1.0 - std::fabs(pv - cv);
        const double ww = 1.0 - std::fabs(pw - cw);
        acc += v.at(cu, cv, cw) * wu * wv * ww;
      }
  return acc;
}

// Reference average-Dice-score loss in the memory-hungry one-hot style: one
// pair of one-hot volumes per class, all held live at once, as a training
// graph would. Used as the memory-accounting comparison for the
// segmentation loss and as a value cross-check for multi-label Dice.
inline double ads_one_hot_oracle(const Volume& lf, const Volume& lw,
                                 const std::vector<int>& labels) {
  std::vector<std::vector<double>> onehot_f, onehot_w;
  onehot_f.reserve(labels.size());
  onehot_w.reserve(labels.size());
  for (int id : labels) {
    std::vector<double> of(lf.data.size()), ow(lw.data.size());
    for (std::size_t i = 0; i < lf.data.size(); ++i) {
      of[i] = lf.data[i] == static_cast<double>(id) ? 1.0 : 0.0;
      ow[i] = lw.data[i] == static_cast<double>(id) ? 1.0 : 0.0;
    }
    onehot_f.push_back(std::move(of));
    onehot_w.push_back(std::move(ow));
  }
  double mean = 0.0;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    double na = 0, nb = 0, ni = 0;
    for (std::size_t i = 0; i < onehot_f[k].size(); ++i) {
      na += onehot_f[k][i];
      nb += onehot_w[k][i];
      ni += onehot_f[k][i] * onehot_w[k][i];
    }
    mean += (na + nb == 0) ? 1.0 : 2.0 * ni / (na + nb);
  }
  return mean / static_cast<double>(labels.size());
}

}  // namespace fdr::oracles
