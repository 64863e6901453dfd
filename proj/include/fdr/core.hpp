#pragma once

// Dense 3D grid types used throughout the toolkit. Grids are stored
// row-major with u fastest: index = u + nu*(v + nv*w). Displacements are
// in voxel units of their own grid; the deformation phi(x) = x + d(x) is
// always derived, never stored.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace fdr {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

struct Dims {
  int nu = 0;
  int nv = 0;
  int nw = 0;

  bool operator==(const Dims&) const = default;

  std::size_t voxels() const {
    return static_cast<std::size_t>(nu) * static_cast<std::size_t>(nv) *
           static_cast<std::size_t>(nw);
  }

  std::size_t index(int u, int v, int w) const {
    return static_cast<std::size_t>(u) +
           static_cast<std::size_t>(nu) *
               (static_cast<std::size_t>(v) +
                static_cast<std::size_t>(nv) * static_cast<std::size_t>(w));
  }

  bool contains(int u, int v, int w) const {
    return u >= 0 && u < nu && v >= 0 && v < nv && w >= 0 && w < nw;
  }

  bool positive() const { return nu > 0 && nv > 0 && nw > 0; }

  int min_extent() const { return std::min(nu, std::min(nv, nw)); }

  // Ceiling halving per axis, the pyramid recurrence.
  Dims halved() const { return {(nu + 1) / 2, (nv + 1) / 2, (nw + 1) / 2}; }

  bool divisible_by(int f) const {
    return f > 0 && nu % f == 0 && nv % f == 0 && nw % f == 0;
  }

  std::string str() const {
    return "(" + std::to_string(nu) + "," + std::to_string(nv) + "," +
           std::to_string(nw) + ")";
  }
};

enum class VoxelKind : std::uint8_t { intensity = 0, label = 1 };

struct Volume {
  Dims dims;
  VoxelKind kind = VoxelKind::intensity;
  std::vector<double> data;

  Volume() = default;

  Volume(Dims d, VoxelKind k, double fill = 0.0)
      : dims(d), kind(k), data(d.voxels(), fill) {
    require(d.positive(), "Volume: dims must be positive, got " + d.str());
  }

  double& at(int u, int v, int w) { return data[dims.index(u, v, w)]; }
  double at(int u, int v, int w) const { return data[dims.index(u, v, w)]; }

  std::size_t voxels() const { return dims.voxels(); }
};

struct DisplacementField {
  Dims dims;
  // Offset along u, v, w, each a full scalar grid. Zero field == identity.
  std::array<std::vector<double>, 3> comp;

  DisplacementField() = default;

  explicit DisplacementField(Dims d) : dims(d) {
    require(d.positive(),
            "DisplacementField: dims must be positive, got " + d.str());
    for (auto& c : comp) c.assign(d.voxels(), 0.0);
  }

  double& at(int axis, int u, int v, int w) {
    return comp[axis][dims.index(u, v, w)];
  }
  double at(int axis, int u, int v, int w) const {
    return comp[axis][dims.index(u, v, w)];
  }

  std::size_t voxels() const { return dims.voxels(); }

  // comp0 | comp1 | comp2, the layout used for optimizer and tape slots.
  std::vector<double> flat() const {
    std::vector<double> out;
    out.reserve(3 * voxels());
    for (const auto& c : comp) out.insert(out.end(), c.begin(), c.end());
    return out;
  }

  static DisplacementField from_flat(Dims d, const std::vector<double>& flat) {
    DisplacementField f(d);
    require(flat.size() == 3 * d.voxels(),
            "DisplacementField::from_flat: size mismatch");
    const std::size_t n = d.voxels();
    for (int a = 0; a < 3; ++a)
      std::copy(flat.begin() + a * n, flat.begin() + (a + 1) * n,
                f.comp[a].begin());
    return f;
  }
};

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

// Labels must be exact non-negative integers; enforced at IO and synthesis
// boundaries so arithmetic code can trust it.
inline void check_label_volume(const Volume& v) {
  require(v.kind == VoxelKind::label, "expected a label volume");
  for (double x : v.data)
    require(x >= 0.0 && std::floor(x) == x && x <= 4294967295.0,
            "label volume contains a non-integer or negative value");
}

// Raw label values reinterpreted as intensities. The segmentation loss warps
// label volumes trilinearly on their raw values; this conversion makes that
// explicit at call sites.
inline Volume labels_as_intensity(const Volume& labels) {
  require(labels.kind == VoxelKind::label,
          "labels_as_intensity: expected a label volume");
  Volume out = labels;
  out.kind = VoxelKind::intensity;
  return out;
}

}  // namespace fdr
