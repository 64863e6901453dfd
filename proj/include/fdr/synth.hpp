#pragma once

// Synthetic ground truth: smooth random displacement fields, labelled
// geometric phantoms, and warped image pairs. These are the oracle source
// for the end-to-end recovery tests. All generators are pure functions of
// (dims, parameters, seed).

#include <cmath>
#include <vector>

#include "fdr/core.hpp"
#include "fdr/rng.hpp"
#include "fdr/warp.hpp"

namespace fdr {

namespace detail {

// Separable Gaussian blur with a truncated kernel (radius 3*sigma),
// renormalized at the borders.
inline void gaussian_smooth(std::vector<double>& grid, Dims dims,
                            double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i)
    kernel[i + radius] = std::exp(-0.5 * (i / sigma) * (i / sigma));
  const int n[3] = {dims.nu, dims.nv, dims.nw};
  const std::size_t stride[3] = {
      1, static_cast<std::size_t>(dims.nu),
      static_cast<std::size_t>(dims.nu) * static_cast<std::size_t>(dims.nv)};
  std::vector<double> line;
  for (int axis = 0; axis < 3; ++axis) {
    const int len = n[axis];
    const std::size_t step = stride[axis];
    const int na = n[(axis + 1) % 3];
    const int nb = n[(axis + 2) % 3];
    const std::size_t sa = stride[(axis + 1) % 3];
    const std::size_t sb = stride[(axis + 2) % 3];
    line.assign(len, 0.0);
    for (int b = 0; b < nb; ++b)
      for (int a = 0; a < na; ++a) {
        double* p = grid.data() + a * sa + b * sb;
        for (int i = 0; i < len; ++i) line[i] = p[i * step];
        for (int i = 0; i < len; ++i) {
          double acc = 0.0, wsum = 0.0;
          const int lo = std::max(i - radius, 0);
          const int hi = std::min(i + radius, len - 1);
          for (int j = lo; j <= hi; ++j) {
            const double k = kernel[j - i + radius];
            acc += k * line[j];
            wsum += k;
          }
          p[i * step] = acc / wsum;
        }
      }
  }
}

// Zero on the outermost two voxel shells, half strength on the third, full
// strength further in. Keeps warped content inside the grid.
inline double edge_taper(int i, int n) {
  const int dist = std::min(i, n - 1 - i);
  if (dist <= 1) return 0.0;
  if (dist == 2) return 0.5;
  return 1.0;
}

}  // namespace detail

// White noise -> Gaussian smoothing -> edge taper to zero over a 2-voxel
// margin -> rescale so the max component magnitude equals amplitude.
inline DisplacementField random_smooth_dvf(Dims dims, double amplitude,
                                           double smooth_sigma,
                                           std::uint64_t seed) {
  require(amplitude >= 0, "random_smooth_dvf: amplitude must be >= 0");
  require(smooth_sigma > 0, "random_smooth_dvf: smooth_sigma must be > 0");
  DisplacementField d(dims);
  if (amplitude == 0.0) return d;
  Rng rng(seed);
  for (int c = 0; c < 3; ++c) {
    for (auto& x : d.comp[c]) x = rng.normal();
    detail::gaussian_smooth(d.comp[c], dims, smooth_sigma);
  }
  double max_mag = 0.0;
  for (int c = 0; c < 3; ++c) {
    std::size_t i = 0;
    for (int w = 0; w < dims.nw; ++w)
      for (int v = 0; v < dims.nv; ++v)
        for (int u = 0; u < dims.nu; ++u, ++i) {
          d.comp[c][i] *= detail::edge_taper(u, dims.nu) *
                          detail::edge_taper(v, dims.nv) *
                          detail::edge_taper(w, dims.nw);
          max_mag = std::max(max_mag, std::abs(d.comp[c][i]));
        }
  }
  if (max_mag > 0.0) {
    const double scale = amplitude / max_mag;
    for (int c = 0; c < 3; ++c)
      for (auto& x : d.comp[c]) x *= scale;
  }
  return d;
}

struct Phantom {
  Volume image;
  Volume labels;
};

// Smooth textured background plus soft-edged ellipsoids with distinct
// intensities. Labels are 1..n_blobs by nearest-blob membership, 0 outside
// every blob. Retries placement until every blob owns at least one voxel.
inline Phantom make_phantom(Dims dims, int n_blobs, std::uint64_t seed) {
  require(dims.min_extent() >= 16, "make_phantom: dims must be >= 16^3");
  require(n_blobs >= 1, "make_phantom: n_blobs must be >= 1");
  Rng rng(seed);

  Volume image(dims, VoxelKind::intensity);
  for (auto& x : image.data) x = rng.normal();
  detail::gaussian_smooth(image.data, dims, 1.4);
  // Normalize the background texture into [0, 0.55]. The texture persists
  // inside the blobs (blob intensity is additive), so every region carries
  // enough structure to pin the deformation.
  double lo = image.data[0], hi = image.data[0];
  for (double x : image.data) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  for (auto& x : image.data) x = 0.55 * (x - lo) / (hi - lo);

  struct Blob {
    double cu, cv, cw, ru, rv, rw, intensity;
  };
  // Blobs live in the volume core, where a tapered deformation is at full
  // strength; radii stay small so label overlap reacts to misalignment.
  const int margin =
      std::max(5, static_cast<int>(std::lround(0.28 * dims.min_extent())));
  const double rlo = std::max(2.0, 0.0875 * dims.min_extent());
  const double rhi = std::max(2.6, 0.14 * dims.min_extent());
  for (int attempt = 0; attempt < 64; ++attempt) {
    std::vector<Blob> blobs;
    for (int b = 0; b < n_blobs; ++b) {
      Blob blob;
      blob.cu = rng.uniform(margin, dims.nu - 1 - margin);
      blob.cv = rng.uniform(margin, dims.nv - 1 - margin);
      blob.cw = rng.uniform(margin, dims.nw - 1 - margin);
      blob.ru = rng.uniform(rlo, rhi);
      blob.rv = rng.uniform(rlo, rhi);
      blob.rw = rng.uniform(rlo, rhi);
      blob.intensity = 0.55 + 0.45 * (b + 1) / n_blobs;
      blobs.push_back(blob);
    }
    Volume labels(dims, VoxelKind::label);
    std::vector<std::size_t> voxels_per_blob(n_blobs, 0);
    std::size_t i = 0;
    for (int w = 0; w < dims.nw; ++w)
      for (int v = 0; v < dims.nv; ++v)
        for (int u = 0; u < dims.nu; ++u, ++i) {
          int best = -1;
          double best_rho = 1.0;
          for (int b = 0; b < n_blobs; ++b) {
            const double du = (u - blobs[b].cu) / blobs[b].ru;
            const double dv = (v - blobs[b].cv) / blobs[b].rv;
            const double dw = (w - blobs[b].cw) / blobs[b].rw;
            const double rho = std::sqrt(du * du + dv * dv + dw * dw);
            if (rho < best_rho) {
              best_rho = rho;
              best = b;
            }
          }
          if (best >= 0) {
            labels.data[i] = best + 1;
            ++voxels_per_blob[best];
          }
        }
    bool all_present = true;
    for (auto c : voxels_per_blob) all_present = all_present && c > 0;
    if (!all_present) continue;

    // Soft-edged intensity: full value inside rho < 0.75, then a linear
    // falloff that reaches zero exactly at the label boundary (rho = 1), so
    // the image gradient stays non-zero right where the label flips. Blobs
    // add on top of the textured background so no window is ever constant.
    i = 0;
    for (int w = 0; w < dims.nw; ++w)
      for (int v = 0; v < dims.nv; ++v)
        for (int u = 0; u < dims.nu; ++u, ++i)
          for (int b = 0; b < n_blobs; ++b) {
            const double du = (u - blobs[b].cu) / blobs[b].ru;
            const double dv = (v - blobs[b].cv) / blobs[b].rv;
            const double dw = (w - blobs[b].cw) / blobs[b].rw;
            const double rho = std::sqrt(du * du + dv * dv + dw * dw);
            if (rho >= 1.0) continue;
            const double soft = rho <= 0.75 ? 1.0 : (1.0 - rho) / 0.25;
            image.data[i] += blobs[b].intensity * soft;
          }
    return {std::move(image), std::move(labels)};
  }
  throw std::runtime_error("make_phantom: blob placement failed");
}

struct SyntheticPair {
  Volume fixed;
  Volume moving;
  DisplacementField d_true;
  Volume labels_fixed;
  Volume labels_moving;
};

// F and its labels from make_phantom; M = warp(F, d_true) and
// L_M = warp_nearest(L_F, d_true). Registration of M onto F should recover
// a field that undoes d_true; quality is judged by residual image/label
// mismatch, not by comparing fields.
inline SyntheticPair make_pair(Dims dims, double amplitude,
                               double smooth_sigma, std::uint64_t seed,
                               int n_blobs = 7) {
  Phantom ph = make_phantom(dims, n_blobs, seed);
  DisplacementField d_true =
      random_smooth_dvf(dims, amplitude, smooth_sigma, seed ^ 0x9e3779b97f4a7c15ull);
  Volume moving = warp_trilinear(ph.image, d_true);
  Volume labels_moving = warp_nearest(ph.labels, d_true);
  return {std::move(ph.image), std::move(moving), std::move(d_true),
          std::move(ph.labels), std::move(labels_moving)};
}

}  // namespace fdr
