#pragma once

// Evaluation-only measures: Dice overlap (binary and multi-label), global
// normalized cross-correlation, and single-window SSIM.

#include <cmath>
#include <map>
#include <vector>

#include "fdr/core.hpp"

namespace fdr {

// 2|A^B| / (|A|+|B|) for binary masks; two empty masks agree vacuously (1).
inline double dice_binary(const Volume& a, const Volume& b) {
  require(a.dims == b.dims, "dice_binary: dims mismatch");
  std::size_t na = 0, nb = 0, ni = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double x = a.data[i], y = b.data[i];
    require((x == 0.0 || x == 1.0) && (y == 0.0 || y == 1.0),
            "dice_binary: inputs must be binary masks");
    na += x == 1.0;
    nb += y == 1.0;
    ni += (x == 1.0) && (y == 1.0);
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(ni) / static_cast<double>(na + nb);
}

struct DiceReport {
  std::map<int, double> per_label;
  double mean = 0.0;
};

// Per-label Dice for every label present in lf (background 0 excluded), or
// for an explicit label list; mean is unweighted across labels.
inline DiceReport dice_multilabel(const Volume& lf, const Volume& lw,
                                  const std::vector<int>& labels = {}) {
  require(lf.dims == lw.dims, "dice_multilabel: dims mismatch");
  std::vector<int> ids = labels;
  if (ids.empty()) {
    std::map<int, bool> seen;
    for (double x : lf.data) {
      const int id = static_cast<int>(x);
      if (id > 0) seen[id] = true;
    }
    for (auto& [id, _] : seen) ids.push_back(id);
  }
  DiceReport report;
  for (int id : ids) {
    std::size_t na = 0, nb = 0, ni = 0;
    for (std::size_t i = 0; i < lf.data.size(); ++i) {
      const bool in_a = lf.data[i] == static_cast<double>(id);
      const bool in_b = lw.data[i] == static_cast<double>(id);
      na += in_a;
      nb += in_b;
      ni += in_a && in_b;
    }
    report.per_label[id] =
        (na + nb == 0) ? 1.0
                       : 2.0 * static_cast<double>(ni) /
                             static_cast<double>(na + nb);
  }
  for (auto& [_, v] : report.per_label) report.mean += v;
  if (!report.per_label.empty())
    report.mean /= static_cast<double>(report.per_label.size());
  return report;
}

// Global Pearson-style NCC in [-1, 1]. Undefined for constant inputs.
inline double ncc(const Volume& f, const Volume& w) {
  require(f.dims == w.dims, "ncc: dims mismatch");
  const std::size_t n = f.data.size();
  double mf = 0.0, mw = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mf += f.data[i];
    mw += w.data[i];
  }
  mf /= static_cast<double>(n);
  mw /= static_cast<double>(n);
  double sff = 0.0, sww = 0.0, sfw = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double df = f.data[i] - mf;
    const double dw = w.data[i] - mw;
    sff += df * df;
    sww += dw * dw;
    sfw += df * dw;
  }
  require(sff > 0.0 && sww > 0.0, "ncc: undefined for constant input");
  return sfw / std::sqrt(sff * sww);
}

// Single-window SSIM over the whole volume with c1 = (0.01 L)^2 and
// c2 = (0.03 L)^2. Statistics are population (1/N) moments.
inline double ssim(const Volume& a, const Volume& b, double dynamic_range) {
  require(a.dims == b.dims, "ssim: dims mismatch");
  require(dynamic_range > 0, "ssim: dynamic range must be positive");
  const double c1 = 0.01 * dynamic_range * 0.01 * dynamic_range;
  const double c2 = 0.03 * dynamic_range * 0.03 * dynamic_range;
  const std::size_t n = a.data.size();
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a.data[i];
    mb += b.data[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double va = 0.0, vb = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a.data[i] - ma;
    const double db = b.data[i] - mb;
    va += da * da;
    vb += db * db;
    cov += da * db;
  }
  va /= static_cast<double>(n);
  vb /= static_cast<double>(n);
  cov /= static_cast<double>(n);
  return (2.0 * ma * mb + c1) * (2.0 * cov + c2) /
         ((ma * ma + mb * mb + c1) * (va + vb + c2));
}

}  // namespace fdr
