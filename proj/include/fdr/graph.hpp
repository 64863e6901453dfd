#pragma once

// Tape-composed versions of the volume ops and losses. Each t_* runs the
// forward op immediately and records the matching adjoint on the tape.
// Handles pair a value with its gradient-slot id; pass kNoGrad for inputs
// that are data rather than parameters.

#include <memory>
#include <optional>

#include "fdr/losses.hpp"
#include "fdr/resample.hpp"
#include "fdr/tape.hpp"
#include "fdr/warp.hpp"

namespace fdr {

struct VolumeVar {
  Volume v;
  int id = Tape::kNoGrad;
};

struct FieldVar {
  DisplacementField f;
  int id = Tape::kNoGrad;  // slot layout: comp0 | comp1 | comp2
};

struct ScalarVar {
  double v = 0.0;
  int id = Tape::kNoGrad;
};

inline VolumeVar volume_leaf(Tape& t, Volume v) {
  const int id = t.alloc(v.voxels());
  return {std::move(v), id};
}

inline FieldVar field_leaf(Tape& t, DisplacementField f) {
  const int id = t.alloc(3 * f.voxels());
  return {std::move(f), id};
}

inline ScalarVar scalar_leaf(Tape& t, double v) { return {v, t.alloc(1)}; }

namespace detail {

inline void accumulate(std::vector<double>& slot, const std::vector<double>& g) {
  for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += g[i];
}

inline void accumulate_field(std::vector<double>& slot,
                             const DisplacementField& g) {
  const std::size_t n = g.voxels();
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < n; ++i) slot[c * n + i] += g.comp[c][i];
}

inline Volume grad_as_volume(const Tape& t, int id, Dims dims) {
  Volume v(dims, VoxelKind::intensity);
  v.data = t.grad(id);
  return v;
}

}  // namespace detail

inline VolumeVar t_warp(Tape& t, const VolumeVar& m, const FieldVar& d) {
  VolumeVar out{warp_trilinear(m.v, d.f), Tape::kNoGrad};
  if (m.id == Tape::kNoGrad && d.id == Tape::kNoGrad) return out;
  out.id = t.alloc(out.v.voxels());
  auto mv = std::make_shared<const Volume>(m.v);
  auto dv = std::make_shared<const DisplacementField>(d.f);
  const int mid = m.id, did = d.id, oid = out.id;
  t.record([mv, dv, mid, did, oid](Tape& tp) {
    const Volume upstream = detail::grad_as_volume(tp, oid, mv->dims);
    const WarpGrads g = warp_backward(*mv, *dv, upstream);
    if (did != Tape::kNoGrad) detail::accumulate_field(tp.grad(did), g.grad_d);
    if (mid != Tape::kNoGrad) detail::accumulate(tp.grad(mid), g.grad_m.data);
  });
  return out;
}

inline VolumeVar t_upsample(Tape& t, const VolumeVar& src, Dims target) {
  VolumeVar out{upsample_trilinear(src.v, target), Tape::kNoGrad};
  if (src.id == Tape::kNoGrad) return out;
  out.id = t.alloc(out.v.voxels());
  const Dims src_dims = src.v.dims;
  const int sid = src.id, oid = out.id;
  t.record([src_dims, target, sid, oid](Tape& tp) {
    const Volume upstream = detail::grad_as_volume(tp, oid, target);
    detail::accumulate(tp.grad(sid),
                       upsample_trilinear_backward(upstream, src_dims).data);
  });
  return out;
}

inline VolumeVar t_downsample(Tape& t, const VolumeVar& src) {
  VolumeVar out{downsample2x(src.v), Tape::kNoGrad};
  if (src.id == Tape::kNoGrad) return out;
  out.id = t.alloc(out.v.voxels());
  const Dims src_dims = src.v.dims;
  const int sid = src.id, oid = out.id;
  t.record([src_dims, sid, oid](Tape& tp) {
    const Volume upstream =
        detail::grad_as_volume(tp, oid, src_dims.halved());
    detail::accumulate(tp.grad(sid),
                       downsample2x_backward(upstream, src_dims).data);
  });
  return out;
}

inline ScalarVar t_lncc(Tape& t, const Volume& f, const VolumeVar& w, int n,
                        bool mean = true) {
  ScalarVar out{lncc(f, w.v, n, mean), Tape::kNoGrad};
  if (w.id == Tape::kNoGrad) return out;
  out.id = t.alloc(1);
  auto fv = std::make_shared<const Volume>(f);
  auto wv = std::make_shared<const Volume>(w.v);
  const int wid = w.id, oid = out.id;
  t.record([fv, wv, n, mean, wid, oid](Tape& tp) {
    const double up = tp.grad(oid)[0];
    if (up == 0.0) return;
    detail::accumulate(tp.grad(wid),
                       lncc_backward(*fv, *wv, n, up, mean).data);
  });
  return out;
}

inline ScalarVar t_smoothness(Tape& t, const FieldVar& d) {
  ScalarVar out{smoothness(d.f), Tape::kNoGrad};
  if (d.id == Tape::kNoGrad) return out;
  out.id = t.alloc(1);
  auto dv = std::make_shared<const DisplacementField>(d.f);
  const int did = d.id, oid = out.id;
  t.record([dv, did, oid](Tape& tp) {
    const double up = tp.grad(oid)[0];
    if (up == 0.0) return;
    detail::accumulate_field(tp.grad(did), smoothness_backward(*dv, up));
  });
  return out;
}

inline ScalarVar t_segloss(Tape& t, const Volume& lf, const VolumeVar& wlm,
                           double c1, double c2) {
  ScalarVar out{seg_loss(lf, wlm.v, c1, c2), Tape::kNoGrad};
  if (wlm.id == Tape::kNoGrad) return out;
  out.id = t.alloc(1);
  auto lfv = std::make_shared<const Volume>(lf);
  auto wv = std::make_shared<const Volume>(wlm.v);
  const int wid = wlm.id, oid = out.id;
  t.record([lfv, wv, c1, c2, wid, oid](Tape& tp) {
    const double up = tp.grad(oid)[0];
    if (up == 0.0) return;
    detail::accumulate(tp.grad(wid),
                       seg_loss_backward(*lfv, *wv, c1, c2, up).data);
  });
  return out;
}

// out = ca*a + cb*b.
inline ScalarVar t_axpby(Tape& t, double ca, const ScalarVar& a, double cb,
                         const ScalarVar& b) {
  ScalarVar out{ca * a.v + cb * b.v, Tape::kNoGrad};
  if (a.id == Tape::kNoGrad && b.id == Tape::kNoGrad) return out;
  out.id = t.alloc(1);
  const int aid = a.id, bid = b.id, oid = out.id;
  t.record([ca, cb, aid, bid, oid](Tape& tp) {
    const double up = tp.grad(oid)[0];
    if (aid != Tape::kNoGrad) tp.grad(aid)[0] += ca * up;
    if (bid != Tape::kNoGrad) tp.grad(bid)[0] += cb * up;
  });
  return out;
}

inline ScalarVar t_scale(Tape& t, double c, const ScalarVar& a) {
  return t_axpby(t, c, a, 0.0, ScalarVar{});
}

inline ScalarVar t_dot(Tape& t, const VolumeVar& a, const VolumeVar& b) {
  double v = 0.0;
  for (std::size_t i = 0; i < a.v.data.size(); ++i)
    v += a.v.data[i] * b.v.data[i];
  ScalarVar out{v, Tape::kNoGrad};
  if (a.id == Tape::kNoGrad && b.id == Tape::kNoGrad) return out;
  out.id = t.alloc(1);
  auto av = std::make_shared<const std::vector<double>>(a.v.data);
  auto bv = std::make_shared<const std::vector<double>>(b.v.data);
  const int aid = a.id, bid = b.id, oid = out.id;
  t.record([av, bv, aid, bid, oid](Tape& tp) {
    const double up = tp.grad(oid)[0];
    if (aid != Tape::kNoGrad) {
      auto& g = tp.grad(aid);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += up * (*bv)[i];
    }
    if (bid != Tape::kNoGrad) {
      auto& g = tp.grad(bid);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += up * (*av)[i];
    }
  });
  return out;
}

inline ScalarVar t_loss_hr(Tape& t, const Volume& f, const Volume& m,
                           const FieldVar& d_hr,
                           const std::optional<Volume>& labels_f,
                           const std::optional<Volume>& labels_m,
                           const LossWeights& weights) {
  weights.validate();
  require(labels_f.has_value() == labels_m.has_value(),
          "loss_hr: labels must be provided for both images or neither");
  const VolumeVar warped = t_warp(t, VolumeVar{m, Tape::kNoGrad}, d_hr);
  ScalarVar loss = t_scale(
      t, -1.0, t_lncc(t, f, warped, weights.window_n, weights.lncc_mean));
  if (weights.alpha1 > 0)
    loss = t_axpby(t, 1.0, loss, weights.alpha1, t_smoothness(t, d_hr));
  if (labels_f && weights.alpha2 > 0) {
    const VolumeVar warped_lm = t_warp(
        t, VolumeVar{labels_as_intensity(*labels_m), Tape::kNoGrad}, d_hr);
    loss = t_axpby(t, 1.0, loss, weights.alpha2,
                   t_segloss(t, *labels_f, warped_lm, weights.c1, weights.c2));
  }
  return loss;
}

inline ScalarVar t_loss_lr(Tape& t, const Volume& f_hr, const Volume& m_lr,
                           const FieldVar& d_lr, const LossWeights& weights) {
  weights.validate();
  require(m_lr.dims == d_lr.f.dims, "loss_lr: moving image dims " +
                                        m_lr.dims.str() + " != field dims " +
                                        d_lr.f.dims.str());
  const VolumeVar warped = t_warp(t, VolumeVar{m_lr, Tape::kNoGrad}, d_lr);
  const VolumeVar up = t_upsample(t, warped, f_hr.dims);
  ScalarVar loss = t_scale(
      t, -1.0, t_lncc(t, f_hr, up, weights.window_n, weights.lncc_mean));
  if (weights.alpha3 > 0)
    loss = t_axpby(t, 1.0, loss, weights.alpha3, t_smoothness(t, d_lr));
  return loss;
}

inline ScalarVar t_overall(Tape& t, const ScalarVar& l_hr,
                           const ScalarVar& l_lr, std::int64_t i,
                           bool deep_supervision = true) {
  if (!deep_supervision) return l_hr;
  const double lambda = lambda_schedule(i);
  return t_axpby(t, 1.0 - lambda, l_hr, lambda, l_lr);
}

}  // namespace fdr
