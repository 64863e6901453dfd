#pragma once

// Minimal reverse-mode tape. Nodes are coarse-grained (one per whole-volume
// op) and recorded in execution order, so running them in reverse is a valid
// reverse-topological sweep. Gradient slots are identified by integer ids;
// id -1 means "not differentiated".

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "fdr/core.hpp"
#include "fdr/rng.hpp"

namespace fdr {

class Tape {
 public:
  static constexpr int kNoGrad = -1;

  int alloc(std::size_t n) {
    grads_.emplace_back(n, 0.0);
    return static_cast<int>(grads_.size()) - 1;
  }

  std::vector<double>& grad(int id) { return grads_.at(id); }
  const std::vector<double>& grad(int id) const { return grads_.at(id); }

  void record(std::function<void(Tape&)> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }

  // Reverse accumulation from a scalar root. Grads are cleared first, so a
  // second call over the same graph reproduces the same values.
  void backward(int root) {
    require(root >= 0 && root < static_cast<int>(grads_.size()),
            "Tape::backward: unknown root id");
    require(grads_[root].size() == 1, "Tape::backward: root must be scalar");
    for (auto& g : grads_) std::fill(g.begin(), g.end(), 0.0);
    grads_[root][0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)(*this);
  }

  std::size_t slot_count() const { return grads_.size(); }

 private:
  std::vector<std::vector<double>> grads_;
  std::vector<std::function<void(Tape&)>> nodes_;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // probes that straddled a kink

  bool pass(double tol) const { return max_rel_err <= tol; }
};

// Optional piecewise-smoothness witness: a hash of the discrete decisions
// taken while evaluating fn (activation signs, interpolation corners, L1
// signs). When the hash differs between fn(x+h) and fn(x-h) the central
// difference straddles a non-differentiable point, where the analytic
// gradient follows a one-sided convention; such coordinates are excluded.
using KinkSignatureFn =
    std::function<std::uint64_t(const std::vector<double>&)>;

// Central finite differences of fn at x0 against a supplied analytic
// gradient. Checks every coordinate, or a seeded random subset of at least
// 64 when max_coords is smaller than the dimension. Relative error is
// measured per coordinate against max(|a|, |n|, 1% of the largest gradient
// component), so near-zero components are judged on the gradient's scale.
inline GradCheckReport grad_check(
    const std::function<double(const std::vector<double>&)>& fn,
    std::vector<double> x0, const std::vector<double>& analytic, double step,
    std::size_t max_coords = 0, std::uint64_t subset_seed = 0,
    const KinkSignatureFn& signature = nullptr) {
  require(step > 0, "grad_check: step must be positive");
  require(analytic.size() == x0.size(),
          "grad_check: analytic gradient size mismatch");
  std::vector<std::size_t> coords;
  if (max_coords == 0 || max_coords >= x0.size()) {
    coords.resize(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) coords[i] = i;
  } else {
    const std::size_t want = std::max<std::size_t>(max_coords, 64);
    Rng rng(subset_seed);
    std::vector<std::size_t> all(x0.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    rng.shuffle(all);
    coords.assign(all.begin(),
                  all.begin() + std::min(want, all.size()));
  }

  GradCheckReport report;
  std::vector<double> numeric;
  std::vector<std::size_t> kept;
  numeric.reserve(coords.size());
  kept.reserve(coords.size());
  double gmax = 0.0;
  for (double a : analytic) gmax = std::max(gmax, std::abs(a));
  for (const std::size_t i : coords) {
    const double saved = x0[i];
    x0[i] = saved + step;
    const double fp = fn(x0);
    const std::uint64_t sig_p = signature ? signature(x0) : 0;
    x0[i] = saved - step;
    const double fm = fn(x0);
    const std::uint64_t sig_m = signature ? signature(x0) : 0;
    x0[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("grad_check: fn produced a non-finite value");
    if (signature && sig_p != sig_m) {
      ++report.skipped;
      continue;
    }
    kept.push_back(i);
    numeric.push_back((fp - fm) / (2.0 * step));
    gmax = std::max(gmax, std::abs(numeric.back()));
  }

  report.checked = kept.size();
  for (std::size_t k = 0; k < kept.size(); ++k) {
    const std::size_t i = kept[k];
    const double a = analytic[i];
    const double n = numeric[k];
    const double denom =
        std::max({std::abs(a), std::abs(n), 0.01 * gmax, 1e-12});
    const double rel = std::abs(a - n) / denom;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_index = i;
      report.worst_analytic = a;
      report.worst_numeric = n;
    }
  }
  return report;
}

}  // namespace fdr
