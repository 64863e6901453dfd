#pragma once

// Resolution changes: 2x mean-pool downsampling, align-corners trilinear
// upsampling, pyramid construction, and the adjoints of both resamplers.

#include <algorithm>

#include "fdr/core.hpp"

namespace fdr {

// 2x mean pooling with ceiling output dims. Boundary cells average over the
// source voxels that exist (<= 8).
inline Volume downsample2x(const Volume& v) {
  require(v.kind == VoxelKind::intensity,
          "downsample2x: label volumes must never be averaged");
  const Dims out_dims = v.dims.halved();
  Volume out(out_dims, VoxelKind::intensity);
  for (int w = 0; w < out_dims.nw; ++w) {
    const int w1 = std::min(2 * w + 1, v.dims.nw - 1);
    for (int vv = 0; vv < out_dims.nv; ++vv) {
      const int v1 = std::min(2 * vv + 1, v.dims.nv - 1);
      for (int u = 0; u < out_dims.nu; ++u) {
        const int u1 = std::min(2 * u + 1, v.dims.nu - 1);
        double sum = 0.0;
        int count = 0;
        for (int sw = 2 * w; sw <= w1; ++sw)
          for (int sv = 2 * vv; sv <= v1; ++sv)
            for (int su = 2 * u; su <= u1; ++su) {
              sum += v.at(su, sv, sw);
              ++count;
            }
        out.at(u, vv, w) = sum / count;
      }
    }
  }
  return out;
}

// Adjoint of downsample2x: each source voxel receives grad/count of the
// output cell it feeds.
inline Volume downsample2x_backward(const Volume& grad_out, Dims src_dims) {
  require(grad_out.dims == src_dims.halved(),
          "downsample2x_backward: grad dims do not match halved source dims");
  Volume grad_src(src_dims, VoxelKind::intensity);
  for (int w = 0; w < src_dims.nw; ++w)
    for (int v = 0; v < src_dims.nv; ++v)
      for (int u = 0; u < src_dims.nu; ++u) {
        const int ou = u / 2, ov = v / 2, ow = w / 2;
        const int cu = std::min(2 * ou + 1, src_dims.nu - 1) - 2 * ou + 1;
        const int cv = std::min(2 * ov + 1, src_dims.nv - 1) - 2 * ov + 1;
        const int cw = std::min(2 * ow + 1, src_dims.nw - 1) - 2 * ow + 1;
        grad_src.at(u, v, w) = grad_out.at(ou, ov, ow) / (cu * cv * cw);
      }
  return grad_src;
}

namespace detail {

// Align-corners source coordinate: dst * (n_src-1)/(n_dst-1); degenerate
// axes map to 0.
inline double align_corners_coord(int dst, int n_dst, int n_src) {
  if (n_dst <= 1) return 0.0;
  return static_cast<double>(dst) * (n_src - 1) / (n_dst - 1);
}

struct AxisSample {
  int i0, i1;
  double t;  // weight of i1
};

inline AxisSample axis_sample(double x, int n) {
  int i0 = static_cast<int>(std::floor(x));
  if (i0 >= n - 1) return {n - 1, n - 1, 0.0};
  if (i0 < 0) return {0, 0, 0.0};  // not reachable for align-corners coords
  return {i0, i0 + 1, x - i0};
}

}  // namespace detail

inline Volume upsample_trilinear(const Volume& v, Dims target) {
  require(target.positive(), "upsample_trilinear: bad target dims");
  require(target.nu >= v.dims.nu && target.nv >= v.dims.nv &&
              target.nw >= v.dims.nw,
          "upsample_trilinear: target dims " + target.str() +
              " below source dims " + v.dims.str());
  require(v.kind == VoxelKind::intensity,
          "upsample_trilinear: intensity volumes only");
  Volume out(target, VoxelKind::intensity);
  for (int w = 0; w < target.nw; ++w) {
    const auto sw = detail::axis_sample(
        detail::align_corners_coord(w, target.nw, v.dims.nw), v.dims.nw);
    for (int vv = 0; vv < target.nv; ++vv) {
      const auto sv = detail::axis_sample(
          detail::align_corners_coord(vv, target.nv, v.dims.nv), v.dims.nv);
      for (int u = 0; u < target.nu; ++u) {
        const auto su = detail::axis_sample(
            detail::align_corners_coord(u, target.nu, v.dims.nu), v.dims.nu);
        out.at(u, vv, w) =
            (1 - sw.t) * ((1 - sv.t) * ((1 - su.t) * v.at(su.i0, sv.i0, sw.i0) +
                                        su.t * v.at(su.i1, sv.i0, sw.i0)) +
                          sv.t * ((1 - su.t) * v.at(su.i0, sv.i1, sw.i0) +
                                  su.t * v.at(su.i1, sv.i1, sw.i0))) +
            sw.t * ((1 - sv.t) * ((1 - su.t) * v.at(su.i0, sv.i0, sw.i1) +
                                  su.t * v.at(su.i1, sv.i0, sw.i1)) +
                    sv.t * ((1 - su.t) * v.at(su.i0, sv.i1, sw.i1) +
                            su.t * v.at(su.i1, sv.i1, sw.i1)));
      }
    }
  }
  return out;
}

// Adjoint of upsample_trilinear: scatter each target voxel's interpolation
// weights back onto its source corners.
inline Volume upsample_trilinear_backward(const Volume& grad_out,
                                          Dims src_dims) {
  Volume grad_src(src_dims, VoxelKind::intensity);
  const Dims target = grad_out.dims;
  for (int w = 0; w < target.nw; ++w) {
    const auto sw = detail::axis_sample(
        detail::align_corners_coord(w, target.nw, src_dims.nw), src_dims.nw);
    for (int vv = 0; vv < target.nv; ++vv) {
      const auto sv = detail::axis_sample(
          detail::align_corners_coord(vv, target.nv, src_dims.nv),
          src_dims.nv);
      for (int u = 0; u < target.nu; ++u) {
        const auto su = detail::axis_sample(
            detail::align_corners_coord(u, target.nu, src_dims.nu),
            src_dims.nu);
        const double g = grad_out.at(u, vv, w);
        grad_src.at(su.i0, sv.i0, sw.i0) += g * (1 - sw.t) * (1 - sv.t) * (1 - su.t);
        grad_src.at(su.i1, sv.i0, sw.i0) += g * (1 - sw.t) * (1 - sv.t) * su.t;
        grad_src.at(su.i0, sv.i1, sw.i0) += g * (1 - sw.t) * sv.t * (1 - su.t);
        grad_src.at(su.i1, sv.i1, sw.i0) += g * (1 - sw.t) * sv.t * su.t;
        grad_src.at(su.i0, sv.i0, sw.i1) += g * sw.t * (1 - sv.t) * (1 - su.t);
        grad_src.at(su.i1, sv.i0, sw.i1) += g * sw.t * (1 - sv.t) * su.t;
        grad_src.at(su.i0, sv.i1, sw.i1) += g * sw.t * sv.t * (1 - su.t);
        grad_src.at(su.i1, sv.i1, sw.i1) += g * sw.t * sv.t * su.t;
      }
    }
  }
  return grad_src;
}

struct Pyramid {
  std::vector<Volume> levels;  // level 0 = full resolution
};

inline Pyramid build_pyramid(const Volume& v, int levels) {
  require(levels >= 1, "build_pyramid: levels must be >= 1");
  Pyramid p;
  p.levels.push_back(v);
  for (int l = 1; l < levels; ++l)
    p.levels.push_back(downsample2x(p.levels.back()));
  for (int l = 0; l < levels; ++l)
    require(p.levels[l].dims.min_extent() >= 2,
            "build_pyramid: level " + std::to_string(l) + " has dims " +
                p.levels[l].dims.str() + " with an extent below 2");
  return p;
}

}  // namespace fdr
