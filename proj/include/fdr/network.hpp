#pragma once

// Encoder-decoder registration network. Two-channel input (fixed, moving),
// dual displacement outputs: a full-resolution head after the decoder and an
// auxiliary low-resolution head at the bottom of the encoder. Stride-2
// convolutions downsample, nearest-neighbour upsampling plus convolution
// restores resolution, encoder features are added (not concatenated) into
// the decoder, and every stage can carry an identity skip for residual
// learning. All convolutions are 3x3x3, each followed by instance
// normalization and PReLU; the channel count doubles per encoder stage.

#include <cstring>
#include <functional>
#include <memory>
#include <string>

#include "fdr/core.hpp"
#include "fdr/rng.hpp"
#include "fdr/tape.hpp"

namespace fdr {

struct ArchConfig {
  int c = 8;      // channels in the first layer
  int k = 1;      // convolutions per encoder/decoder stage
  int depth = 3;  // number of stride-2 downsamplings
  bool additive_forwarding = true;
  bool residual_learning = true;
  bool deep_supervision = true;

  void validate() const {
    require(c >= 1 && k >= 1 && depth >= 1,
            "ArchConfig: c, k and depth must all be >= 1");
  }
};

struct TensorDesc {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
  bool frozen = false;
};

struct NetworkParams {
  ArchConfig arch;
  std::vector<TensorDesc> layout;
  std::vector<double> flat;

  const TensorDesc& tensor(const std::string& name) const {
    for (const auto& t : layout)
      if (t.name == name) return t;
    throw std::invalid_argument("NetworkParams: no tensor named " + name);
  }

  TensorDesc& tensor(const std::string& name) {
    for (auto& t : layout)
      if (t.name == name) return t;
    throw std::invalid_argument("NetworkParams: no tensor named " + name);
  }

  const double* ptr(const TensorDesc& t) const { return flat.data() + t.offset; }
};

namespace detail {

// Single source of truth for the parameter set; init_params, param_count and
// the forward pass all walk this enumeration.
inline void for_each_tensor(
    const ArchConfig& a,
    const std::function<void(const std::string&, std::vector<int>)>& emit) {
  const auto conv_block = [&](const std::string& prefix, int ic, int oc) {
    emit(prefix + ".w", {oc, ic, 3, 3, 3});
    emit(prefix + ".gamma", {oc});
    emit(prefix + ".beta", {oc});
    emit(prefix + ".prelu", {oc});
  };
  conv_block("stem", 2, a.c);
  for (int s = 0; s <= a.depth; ++s) {
    const int ch = a.c << s;
    if (s > 0) conv_block("enc" + std::to_string(s) + ".down", ch / 2, ch);
    for (int j = 0; j < a.k; ++j)
      conv_block("enc" + std::to_string(s) + ".conv" + std::to_string(j), ch,
                 ch);
  }
  emit("lr_head.w", {3, a.c << a.depth, 3, 3, 3});
  emit("lr_head.b", {3});
  for (int s = a.depth; s >= 1; --s) {
    const int ch_in = a.c << s;
    const int ch_out = a.c << (s - 1);
    const std::string stage = "dec" + std::to_string(s - 1);
    conv_block(stage + ".up", ch_in, ch_out);
    for (int j = 0; j < a.k; ++j)
      conv_block(stage + ".conv" + std::to_string(j), ch_out, ch_out);
  }
  emit("hr_head.w", {3, a.c, 3, 3, 3});
  emit("hr_head.b", {3});
}

inline std::size_t shape_size(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int s : shape) n *= static_cast<std::size_t>(s);
  return n;
}

}  // namespace detail

inline std::size_t param_count(const ArchConfig& arch) {
  arch.validate();
  std::size_t total = 0;
  detail::for_each_tensor(arch, [&](const std::string&, std::vector<int> s) {
    total += detail::shape_size(s);
  });
  return total;
}

// Fan-in-scaled random kernels, unit instance-norm gain, PReLU slope 0.25,
// and zero displacement heads so training starts at the identity transform.
inline NetworkParams init_params(const ArchConfig& arch, std::uint64_t seed) {
  arch.validate();
  NetworkParams p;
  p.arch = arch;
  std::size_t offset = 0;
  detail::for_each_tensor(arch,
                          [&](const std::string& name, std::vector<int> s) {
                            TensorDesc t;
                            t.name = name;
                            t.shape = std::move(s);
                            t.size = detail::shape_size(t.shape);
                            t.offset = offset;
                            offset += t.size;
                            p.layout.push_back(std::move(t));
                          });
  p.flat.assign(offset, 0.0);
  Rng rng(seed);
  for (const auto& t : p.layout) {
    double* dst = p.flat.data() + t.offset;
    const bool is_head =
        t.name.rfind("lr_head", 0) == 0 || t.name.rfind("hr_head", 0) == 0;
    if (is_head) continue;  // zero-initialized
    if (t.name.ends_with(".w")) {
      const int fan_in = t.shape[1] * 27;
      const double std_dev = std::sqrt(2.0 / fan_in);
      for (std::size_t i = 0; i < t.size; ++i)
        dst[i] = std_dev * rng.normal();
    } else if (t.name.ends_with(".gamma")) {
      std::fill(dst, dst + t.size, 1.0);
    } else if (t.name.ends_with(".prelu")) {
      std::fill(dst, dst + t.size, 0.25);
    }  // .beta stays zero
  }
  return p;
}

// Channel-major feature maps: data[((c*nw + w)*nv + v)*nu + u].
struct FeatureMap {
  int channels = 0;
  Dims dims;
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(int ch, Dims d) : channels(ch), dims(d), data(ch * d.voxels()) {}
  std::size_t voxels() const { return dims.voxels(); }
};

namespace nn {

// out += conv(in), 3x3x3 kernels, stride 1, zero padding, nu >= 2. A
// per-row accumulator stays in L1 while every (ic, tap) contribution
// streams over it; the inner loops are contiguous in u.
inline void conv3d_s1(const double* in, int ic, Dims dims, const double* w,
               double* out, int oc) {
  const int nu = dims.nu, nv = dims.nv, nw = dims.nw;
  const std::size_t vol = dims.voxels();
  std::vector<double> acc(nu);
  for (int o = 0; o < oc; ++o) {
    double* outc = out + o * vol;
    for (int z = 0; z < nw; ++z)
      for (int y = 0; y < nv; ++y) {
        std::memset(acc.data(), 0, nu * sizeof(double));
        for (int i = 0; i < ic; ++i) {
          const double* inc = in + i * vol;
          const double* wk = w + (static_cast<std::size_t>(o) * ic + i) * 27;
          for (int kw = 0; kw < 3; ++kw) {
            const int zz = z + kw - 1;
            if (zz < 0 || zz >= nw) continue;
            for (int kv = 0; kv < 3; ++kv) {
              const int yy = y + kv - 1;
              if (yy < 0 || yy >= nv) continue;
              const double* irow =
                  inc + (static_cast<std::size_t>(zz) * nv + yy) * nu;
              const double* wrow = wk + (kw * 3 + kv) * 3;
              // ku = 0 (shift -1), 1 (0), 2 (+1)
              const double w0 = wrow[0], w1 = wrow[1], w2 = wrow[2];
              acc[0] += w1 * irow[0] + w2 * irow[1];
              for (int x = 1; x < nu - 1; ++x)
                acc[x] += w0 * irow[x - 1] + w1 * irow[x] + w2 * irow[x + 1];
              if (nu > 1)
                acc[nu - 1] += w0 * irow[nu - 2] + w1 * irow[nu - 1];
            }
          }
        }
        double* orow = outc + (static_cast<std::size_t>(z) * nv + y) * nu;
        for (int x = 0; x < nu; ++x) orow[x] += acc[x];
      }
  }
}

inline void conv3d_s1_grad_in(const double* gout, int oc, Dims dims, const double* w,
                       double* gin, int ic) {
  const int nu = dims.nu, nv = dims.nv, nw = dims.nw;
  const std::size_t vol = dims.voxels();
  std::vector<double> acc(nu);
  for (int i = 0; i < ic; ++i) {
    double* ginc = gin + i * vol;
    for (int z = 0; z < nw; ++z)
      for (int y = 0; y < nv; ++y) {
        std::memset(acc.data(), 0, nu * sizeof(double));
        for (int o = 0; o < oc; ++o) {
          const double* goutc = gout + o * vol;
          const double* wk = w + (static_cast<std::size_t>(o) * ic + i) * 27;
          for (int kw = 0; kw < 3; ++kw) {
            const int zz = z - (kw - 1);
            if (zz < 0 || zz >= nw) continue;
            for (int kv = 0; kv < 3; ++kv) {
              const int yy = y - (kv - 1);
              if (yy < 0 || yy >= nv) continue;
              const double* grow =
                  goutc + (static_cast<std::size_t>(zz) * nv + yy) * nu;
              const double* wrow = wk + (kw * 3 + kv) * 3;
              // gin[x] += w[ku] * gout[x - (ku-1)]
              const double w0 = wrow[0], w1 = wrow[1], w2 = wrow[2];
              acc[0] += w1 * grow[0] + w0 * grow[1];
              for (int x = 1; x < nu - 1; ++x)
                acc[x] += w2 * grow[x - 1] + w1 * grow[x] + w0 * grow[x + 1];
              if (nu > 1)
                acc[nu - 1] += w2 * grow[nu - 2] + w1 * grow[nu - 1];
            }
          }
        }
        double* grow_out = ginc + (static_cast<std::size_t>(z) * nv + y) * nu;
        for (int x = 0; x < nu; ++x) grow_out[x] += acc[x];
      }
  }
}

inline void conv3d_s1_grad_w(const double* in, int ic, Dims dims, const double* gout,
                      int oc, double* gw) {
  const int nu = dims.nu, nv = dims.nv, nw = dims.nw;
  const std::size_t vol = dims.voxels();
  for (int o = 0; o < oc; ++o) {
    const double* goutc = gout + o * vol;
    for (int i = 0; i < ic; ++i) {
      const double* inc = in + i * vol;
      double wacc[27] = {0};
      for (int z = 0; z < nw; ++z)
        for (int y = 0; y < nv; ++y) {
          const double* grow =
              goutc + (static_cast<std::size_t>(z) * nv + y) * nu;
          for (int kw = 0; kw < 3; ++kw) {
            const int zz = z + kw - 1;
            if (zz < 0 || zz >= nw) continue;
            for (int kv = 0; kv < 3; ++kv) {
              const int yy = y + kv - 1;
              if (yy < 0 || yy >= nv) continue;
              const double* irow =
                  inc + (static_cast<std::size_t>(zz) * nv + yy) * nu;
              double d0 = 0, d1 = 0, d2 = 0;
              for (int x = 1; x < nu - 1; ++x) {
                const double g = grow[x];
                d0 += g * irow[x - 1];
                d1 += g * irow[x];
                d2 += g * irow[x + 1];
              }
              d1 += grow[0] * irow[0] + grow[nu - 1] * irow[nu - 1];
              d2 += grow[0] * irow[1];
              d0 += grow[nu - 1] * irow[nu - 2];
              double* wrow = wacc + (kw * 3 + kv) * 3;
              wrow[0] += d0;
              wrow[1] += d1;
              wrow[2] += d2;
            }
          }
        }
      double* gwk = gw + (static_cast<std::size_t>(o) * ic + i) * 27;
      for (int k = 0; k < 27; ++k) gwk[k] += wacc[k];
    }
  }
}

// Stride-2 convolution, 3x3x3, zero padding, even input dims. Output is
// half resolution: out(X) = sum_k w_k * in(2X + k - 1).
inline void conv3d_s2(const double* in, int ic, Dims in_dims, const double* w,
                      double* out, int oc) {
  const Dims od{in_dims.nu / 2, in_dims.nv / 2, in_dims.nw / 2};
  const std::size_t ivol = in_dims.voxels();
  const std::size_t ovol = od.voxels();
  for (int o = 0; o < oc; ++o) {
    double* outc = out + o * ovol;
    for (int i = 0; i < ic; ++i) {
      const double* inc = in + i * ivol;
      const double* wk = w + (static_cast<std::size_t>(o) * ic + i) * 27;
      std::size_t oi = 0;
      for (int z = 0; z < od.nw; ++z)
        for (int y = 0; y < od.nv; ++y)
          for (int x = 0; x < od.nu; ++x, ++oi) {
            double acc = 0.0;
            for (int kw = 0; kw < 3; ++kw) {
              const int zz = 2 * z + kw - 1;
              if (zz < 0 || zz >= in_dims.nw) continue;
              for (int kv = 0; kv < 3; ++kv) {
                const int yy = 2 * y + kv - 1;
                if (yy < 0 || yy >= in_dims.nv) continue;
                const double* irow =
                    inc + (static_cast<std::size_t>(zz) * in_dims.nv + yy) *
                              in_dims.nu;
                const double* wrow = wk + (kw * 3 + kv) * 3;
                for (int ku = 0; ku < 3; ++ku) {
                  const int xx = 2 * x + ku - 1;
                  if (xx < 0 || xx >= in_dims.nu) continue;
                  acc += wrow[ku] * irow[xx];
                }
              }
            }
            outc[oi] += acc;
          }
    }
  }
}

inline void conv3d_s2_grad_in(const double* gout, int oc, Dims in_dims,
                              const double* w, double* gin, int ic) {
  const Dims od{in_dims.nu / 2, in_dims.nv / 2, in_dims.nw / 2};
  const std::size_t ivol = in_dims.voxels();
  const std::size_t ovol = od.voxels();
  for (int i = 0; i < ic; ++i) {
    double* ginc = gin + i * ivol;
    for (int o = 0; o < oc; ++o) {
      const double* goutc = gout + o * ovol;
      const double* wk = w + (static_cast<std::size_t>(o) * ic + i) * 27;
      std::size_t ii = 0;
      for (int z = 0; z < in_dims.nw; ++z)
        for (int y = 0; y < in_dims.nv; ++y)
          for (int x = 0; x < in_dims.nu; ++x, ++ii) {
            double acc = 0.0;
            for (int kw = 0; kw < 3; ++kw) {
              const int zz = z - kw + 1;
              if (zz < 0 || zz % 2 != 0 || zz / 2 >= od.nw) continue;
              for (int kv = 0; kv < 3; ++kv) {
                const int yy = y - kv + 1;
                if (yy < 0 || yy % 2 != 0 || yy / 2 >= od.nv) continue;
                for (int ku = 0; ku < 3; ++ku) {
                  const int xx = x - ku + 1;
                  if (xx < 0 || xx % 2 != 0 || xx / 2 >= od.nu) continue;
                  acc += wk[(kw * 3 + kv) * 3 + ku] *
                         goutc[(static_cast<std::size_t>(zz / 2) * od.nv +
                                yy / 2) *
                                   od.nu +
                               xx / 2];
                }
              }
            }
            ginc[ii] += acc;
          }
    }
  }
}

inline void conv3d_s2_grad_w(const double* in, int ic, Dims in_dims,
                             const double* gout, int oc, double* gw) {
  const Dims od{in_dims.nu / 2, in_dims.nv / 2, in_dims.nw / 2};
  const std::size_t ivol = in_dims.voxels();
  const std::size_t ovol = od.voxels();
  for (int o = 0; o < oc; ++o) {
    const double* goutc = gout + o * ovol;
    for (int i = 0; i < ic; ++i) {
      const double* inc = in + i * ivol;
      double* gwk = gw + (static_cast<std::size_t>(o) * ic + i) * 27;
      std::size_t oi = 0;
      for (int z = 0; z < od.nw; ++z)
        for (int y = 0; y < od.nv; ++y)
          for (int x = 0; x < od.nu; ++x, ++oi) {
            const double g = goutc[oi];
            if (g == 0.0) continue;
            for (int kw = 0; kw < 3; ++kw) {
              const int zz = 2 * z + kw - 1;
              if (zz < 0 || zz >= in_dims.nw) continue;
              for (int kv = 0; kv < 3; ++kv) {
                const int yy = 2 * y + kv - 1;
                if (yy < 0 || yy >= in_dims.nv) continue;
                for (int ku = 0; ku < 3; ++ku) {
                  const int xx = 2 * x + ku - 1;
                  if (xx < 0 || xx >= in_dims.nu) continue;
                  gwk[(kw * 3 + kv) * 3 + ku] +=
                      g * inc[(static_cast<std::size_t>(zz) * in_dims.nv + yy) *
                                  in_dims.nu +
                              xx];
                }
              }
            }
          }
    }
  }
}

}  // namespace nn

struct FeatVar {
  FeatureMap fm;
  int id = Tape::kNoGrad;
};

namespace detail {

inline bool tensor_trainable(const NetworkParams& p, const TensorDesc& t,
                             int params_id) {
  return params_id != Tape::kNoGrad && !t.frozen;
}

// Convolution with optional bias; stride 1 or 2.
inline FeatVar net_conv(Tape* tape, const NetworkParams& p, int params_id,
                        const std::string& wname, const FeatVar& x, int stride,
                        const std::string& bias_name = "") {
  const TensorDesc& wt = p.tensor(wname);
  const int oc = wt.shape[0];
  const int ic = wt.shape[1];
  require(ic == x.fm.channels, "net_conv: channel mismatch at " + wname);
  const Dims in_dims = x.fm.dims;
  Dims out_dims = in_dims;
  if (stride == 2) {
    require(in_dims.divisible_by(2), "net_conv: odd dims at stride 2");
    out_dims = {in_dims.nu / 2, in_dims.nv / 2, in_dims.nw / 2};
  }
  FeatVar out{FeatureMap(oc, out_dims), Tape::kNoGrad};
  if (stride == 1)
    nn::conv3d_s1(x.fm.data.data(), ic, in_dims, p.ptr(wt),
                  out.fm.data.data(), oc);
  else
    nn::conv3d_s2(x.fm.data.data(), ic, in_dims, p.ptr(wt),
                  out.fm.data.data(), oc);

  const TensorDesc* bt = bias_name.empty() ? nullptr : &p.tensor(bias_name);
  if (bt) {
    const double* b = p.ptr(*bt);
    const std::size_t vol = out_dims.voxels();
    for (int o = 0; o < oc; ++o)
      for (std::size_t i = 0; i < vol; ++i) out.fm.data[o * vol + i] += b[o];
  }

  if (!tape) return out;
  const bool w_train = tensor_trainable(p, wt, params_id);
  const bool b_train = bt && tensor_trainable(p, *bt, params_id);
  if (x.id == Tape::kNoGrad && !w_train && !b_train) return out;

  out.id = tape->alloc(out.fm.data.size());
  auto in_fm = std::make_shared<const FeatureMap>(x.fm);
  auto weights = std::make_shared<const std::vector<double>>(
      p.flat.begin() + wt.offset, p.flat.begin() + wt.offset + wt.size);
  const int xid = x.id, oid = out.id;
  const std::size_t w_off = wt.offset;
  const std::size_t b_off = bt ? bt->offset : 0;
  tape->record([in_fm, weights, xid, oid, params_id, w_off, b_off, w_train,
                b_train, oc, ic, stride, in_dims,
                out_dims](Tape& tp) {
    const auto& gout = tp.grad(oid);
    if (xid != Tape::kNoGrad) {
      auto& gin = tp.grad(xid);
      if (stride == 1)
        nn::conv3d_s1_grad_in(gout.data(), oc, in_dims, weights->data(),
                              gin.data(), ic);
      else
        nn::conv3d_s2_grad_in(gout.data(), oc, in_dims, weights->data(),
                              gin.data(), ic);
    }
    if (w_train) {
      auto& gp = tp.grad(params_id);
      if (stride == 1)
        nn::conv3d_s1_grad_w(in_fm->data.data(), ic, in_dims, gout.data(), oc,
                             gp.data() + w_off);
      else
        nn::conv3d_s2_grad_w(in_fm->data.data(), ic, in_dims, gout.data(), oc,
                             gp.data() + w_off);
    }
    if (b_train) {
      auto& gp = tp.grad(params_id);
      const std::size_t vol = out_dims.voxels();
      for (int o = 0; o < oc; ++o) {
        double acc = 0.0;
        for (std::size_t i = 0; i < vol; ++i) acc += gout[o * vol + i];
        gp[b_off + o] += acc;
      }
    }
  });
  return out;
}

inline constexpr double kInstanceNormEps = 1e-5;

inline FeatVar net_instance_norm(Tape* tape, const NetworkParams& p,
                                 int params_id, const std::string& prefix,
                                 const FeatVar& x) {
  const TensorDesc& gt = p.tensor(prefix + ".gamma");
  const TensorDesc& bt = p.tensor(prefix + ".beta");
  const int ch = x.fm.channels;
  const std::size_t vol = x.fm.voxels();
  const double* gamma = p.ptr(gt);
  const double* beta = p.ptr(bt);

  FeatVar out{FeatureMap(ch, x.fm.dims), Tape::kNoGrad};
  auto xhat = std::make_shared<std::vector<double>>(x.fm.data.size());
  std::vector<double> istd(ch);
  for (int c = 0; c < ch; ++c) {
    const double* xc = x.fm.data.data() + c * vol;
    double mu = 0.0;
    for (std::size_t i = 0; i < vol; ++i) mu += xc[i];
    mu /= static_cast<double>(vol);
    double var = 0.0;
    for (std::size_t i = 0; i < vol; ++i)
      var += (xc[i] - mu) * (xc[i] - mu);
    var /= static_cast<double>(vol);
    istd[c] = 1.0 / std::sqrt(var + kInstanceNormEps);
    double* hc = xhat->data() + c * vol;
    double* oc = out.fm.data.data() + c * vol;
    for (std::size_t i = 0; i < vol; ++i) {
      hc[i] = (xc[i] - mu) * istd[c];
      oc[i] = gamma[c] * hc[i] + beta[c];
    }
  }

  if (!tape) return out;
  const bool g_train = tensor_trainable(p, gt, params_id);
  const bool b_train = tensor_trainable(p, bt, params_id);
  if (x.id == Tape::kNoGrad && !g_train && !b_train) return out;

  out.id = tape->alloc(out.fm.data.size());
  auto gamma_copy = std::make_shared<const std::vector<double>>(
      p.flat.begin() + gt.offset, p.flat.begin() + gt.offset + gt.size);
  auto istd_copy = std::make_shared<const std::vector<double>>(std::move(istd));
  const int xid = x.id, oid = out.id;
  const std::size_t g_off = gt.offset, b_off = bt.offset;
  tape->record([xhat, gamma_copy, istd_copy, xid, oid, params_id, g_off,
                b_off, g_train, b_train, ch, vol](Tape& tp) {
    const auto& gout = tp.grad(oid);
    for (int c = 0; c < ch; ++c) {
      const double* go = gout.data() + c * vol;
      const double* hc = xhat->data() + c * vol;
      double sum_g = 0.0, sum_gh = 0.0;
      for (std::size_t i = 0; i < vol; ++i) {
        sum_g += go[i];
        sum_gh += go[i] * hc[i];
      }
      if (g_train) tp.grad(params_id)[g_off + c] += sum_gh;
      if (b_train) tp.grad(params_id)[b_off + c] += sum_g;
      if (xid != Tape::kNoGrad) {
        double* gi = tp.grad(xid).data() + c * vol;
        const double scale = (*gamma_copy)[c] * (*istd_copy)[c];
        const double mean_g = sum_g / static_cast<double>(vol);
        const double mean_gh = sum_gh / static_cast<double>(vol);
        for (std::size_t i = 0; i < vol; ++i)
          gi[i] += scale * (go[i] - mean_g - hc[i] * mean_gh);
      }
    }
  });
  return out;
}

inline FeatVar net_prelu(Tape* tape, const NetworkParams& p, int params_id,
                         const std::string& prefix, const FeatVar& x,
                         std::uint64_t* sign_sig = nullptr) {
  const TensorDesc& at = p.tensor(prefix + ".prelu");
  const int ch = x.fm.channels;
  const std::size_t vol = x.fm.voxels();
  const double* slope = p.ptr(at);

  FeatVar out{FeatureMap(ch, x.fm.dims), Tape::kNoGrad};
  std::uint64_t sig = sign_sig ? *sign_sig : 0;
  for (int c = 0; c < ch; ++c) {
    const double* xc = x.fm.data.data() + c * vol;
    double* oc = out.fm.data.data() + c * vol;
    for (std::size_t i = 0; i < vol; ++i) {
      const bool pos = xc[i] > 0.0;
      oc[i] = pos ? xc[i] : slope[c] * xc[i];
      sig = sig * 1099511628211ull + (pos ? 0x9e3779b9u : 0x7f4a7c15u);
    }
  }
  if (sign_sig) *sign_sig = sig;

  if (!tape) return out;
  const bool a_train = tensor_trainable(p, at, params_id);
  if (x.id == Tape::kNoGrad && !a_train) return out;

  out.id = tape->alloc(out.fm.data.size());
  auto in_fm = std::make_shared<const std::vector<double>>(x.fm.data);
  auto slope_copy = std::make_shared<const std::vector<double>>(
      p.flat.begin() + at.offset, p.flat.begin() + at.offset + at.size);
  const int xid = x.id, oid = out.id;
  const std::size_t a_off = at.offset;
  tape->record(
      [in_fm, slope_copy, xid, oid, params_id, a_off, a_train, ch, vol](Tape& tp) {
        const auto& gout = tp.grad(oid);
        for (int c = 0; c < ch; ++c) {
          const double* go = gout.data() + c * vol;
          const double* xc = in_fm->data() + c * vol;
          if (a_train) {
            double acc = 0.0;
            for (std::size_t i = 0; i < vol; ++i)
              if (xc[i] <= 0.0) acc += go[i] * xc[i];
            tp.grad(params_id)[a_off + c] += acc;
          }
          if (xid != Tape::kNoGrad) {
            double* gi = tp.grad(xid).data() + c * vol;
            const double a = (*slope_copy)[c];
            for (std::size_t i = 0; i < vol; ++i)
              gi[i] += xc[i] > 0.0 ? go[i] : a * go[i];
          }
        }
      });
  return out;
}

// conv -> instance norm -> PReLU.
inline FeatVar net_block(Tape* tape, const NetworkParams& p, int params_id,
                         const std::string& prefix, const FeatVar& x,
                         int stride, std::uint64_t* sign_sig = nullptr) {
  FeatVar y = net_conv(tape, p, params_id, prefix + ".w", x, stride);
  y = net_instance_norm(tape, p, params_id, prefix, y);
  return net_prelu(tape, p, params_id, prefix, y, sign_sig);
}

inline FeatVar net_add(Tape* tape, const FeatVar& a, const FeatVar& b) {
  require(a.fm.channels == b.fm.channels && a.fm.dims == b.fm.dims,
          "net_add: shape mismatch");
  FeatVar out{FeatureMap(a.fm.channels, a.fm.dims), Tape::kNoGrad};
  for (std::size_t i = 0; i < out.fm.data.size(); ++i)
    out.fm.data[i] = a.fm.data[i] + b.fm.data[i];
  if (!tape || (a.id == Tape::kNoGrad && b.id == Tape::kNoGrad)) return out;
  out.id = tape->alloc(out.fm.data.size());
  const int aid = a.id, bid = b.id, oid = out.id;
  tape->record([aid, bid, oid](Tape& tp) {
    const auto& g = tp.grad(oid);
    if (aid != Tape::kNoGrad) {
      auto& ga = tp.grad(aid);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (bid != Tape::kNoGrad) {
      auto& gb = tp.grad(bid);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
  return out;
}

// Nearest-neighbour 2x upsampling: out(c, x) = in(c, x/2).
inline FeatVar net_nn_up2(Tape* tape, const FeatVar& x) {
  const Dims in_dims = x.fm.dims;
  const Dims out_dims{2 * in_dims.nu, 2 * in_dims.nv, 2 * in_dims.nw};
  const int ch = x.fm.channels;
  FeatVar out{FeatureMap(ch, out_dims), Tape::kNoGrad};
  const std::size_t ivol = in_dims.voxels();
  const std::size_t ovol = out_dims.voxels();
  for (int c = 0; c < ch; ++c) {
    const double* xc = x.fm.data.data() + c * ivol;
    double* oc = out.fm.data.data() + c * ovol;
    std::size_t oi = 0;
    for (int w = 0; w < out_dims.nw; ++w)
      for (int v = 0; v < out_dims.nv; ++v)
        for (int u = 0; u < out_dims.nu; ++u, ++oi)
          oc[oi] = xc[(static_cast<std::size_t>(w / 2) * in_dims.nv + v / 2) *
                          in_dims.nu +
                      u / 2];
  }
  if (!tape || x.id == Tape::kNoGrad) return out;
  out.id = tape->alloc(out.fm.data.size());
  const int xid = x.id, oid = out.id;
  tape->record([xid, oid, ch, in_dims, out_dims, ivol, ovol](Tape& tp) {
    const auto& g = tp.grad(oid);
    auto& gi = tp.grad(xid);
    for (int c = 0; c < ch; ++c) {
      const double* gc = g.data() + c * ovol;
      double* gic = gi.data() + c * ivol;
      std::size_t oi = 0;
      for (int w = 0; w < out_dims.nw; ++w)
        for (int v = 0; v < out_dims.nv; ++v)
          for (int u = 0; u < out_dims.nu; ++u, ++oi)
            gic[(static_cast<std::size_t>(w / 2) * in_dims.nv + v / 2) *
                    in_dims.nu +
                u / 2] += gc[oi];
    }
  });
  return out;
}

}  // namespace detail

struct NamedActivation {
  std::string name;
  int channels = 0;
  Dims dims;
};

struct NetForward {
  DisplacementField d_hr;
  DisplacementField d_lr;
  int id_hr = Tape::kNoGrad;  // tape slots (3 components, component-major)
  int id_lr = Tape::kNoGrad;
  std::vector<NamedActivation> activations;
  // Hash of every PReLU input sign; finite-difference checks use it to
  // detect probes that straddle an activation kink.
  std::uint64_t prelu_signature = 0;
};

namespace detail {

// Expose a 3-channel feature map as a displacement field on the tape: the
// slot layouts coincide (component-major == channel-major).
inline void head_to_field(const FeatVar& head, DisplacementField& d, int& id) {
  const std::size_t vol = head.fm.voxels();
  d = DisplacementField(head.fm.dims);
  for (int c = 0; c < 3; ++c)
    std::copy(head.fm.data.begin() + c * vol,
              head.fm.data.begin() + (c + 1) * vol, d.comp[c].begin());
  id = head.id;
}

}  // namespace detail

// Forward pass. Pass tape = nullptr for inference; params_id is the tape
// slot holding the flat parameter vector (kNoGrad for frozen inference with
// a live tape).
inline NetForward net_forward(Tape* tape, const NetworkParams& p,
                              int params_id, const Volume& f,
                              const Volume& m) {
  p.arch.validate();
  require(f.dims == m.dims, "net_forward: fixed dims " + f.dims.str() +
                                " != moving dims " + m.dims.str());
  require(f.kind == VoxelKind::intensity && m.kind == VoxelKind::intensity,
          "net_forward: intensity volumes only");
  require(f.dims.divisible_by(1 << p.arch.depth),
          "net_forward: dims " + f.dims.str() + " not divisible by 2^depth");
  require(f.dims.min_extent() >> p.arch.depth >= 2,
          "net_forward: bottom-stage dims would drop below 2 voxels");

  const ArchConfig& a = p.arch;
  NetForward result;

  FeatVar x{FeatureMap(2, f.dims), Tape::kNoGrad};
  std::copy(f.data.begin(), f.data.end(), x.fm.data.begin());
  std::copy(m.data.begin(), m.data.end(),
            x.fm.data.begin() + f.dims.voxels());

  x = detail::net_block(tape, p, params_id, "stem", x, 1,
                        &result.prelu_signature);

  std::vector<FeatVar> enc_out;
  for (int s = 0; s <= a.depth; ++s) {
    if (s > 0)
      x = detail::net_block(tape, p, params_id,
                            "enc" + std::to_string(s) + ".down", x, 2,
                            &result.prelu_signature);
    FeatVar y = x;
    for (int j = 0; j < a.k; ++j)
      y = detail::net_block(
          tape, p, params_id,
          "enc" + std::to_string(s) + ".conv" + std::to_string(j), y, 1,
          &result.prelu_signature);
    if (a.residual_learning) y = detail::net_add(tape, y, x);
    x = y;
    result.activations.push_back(
        {"enc" + std::to_string(s), x.fm.channels, x.fm.dims});
    enc_out.push_back(x);
  }

  const FeatVar lr_head = detail::net_conv(tape, p, params_id, "lr_head.w",
                                           enc_out.back(), 1, "lr_head.b");
  detail::head_to_field(lr_head, result.d_lr, result.id_lr);

  for (int s = a.depth; s >= 1; --s) {
    const std::string stage = "dec" + std::to_string(s - 1);
    x = detail::net_nn_up2(tape, x);
    x = detail::net_block(tape, p, params_id, stage + ".up", x, 1,
                          &result.prelu_signature);
    if (a.additive_forwarding) x = detail::net_add(tape, x, enc_out[s - 1]);
    FeatVar y = x;
    for (int j = 0; j < a.k; ++j)
      y = detail::net_block(tape, p, params_id,
                            stage + ".conv" + std::to_string(j), y, 1,
                            &result.prelu_signature);
    if (a.residual_learning) y = detail::net_add(tape, y, x);
    x = y;
    result.activations.push_back({stage, x.fm.channels, x.fm.dims});
  }

  const FeatVar hr_head =
      detail::net_conv(tape, p, params_id, "hr_head.w", x, 1, "hr_head.b");
  detail::head_to_field(hr_head, result.d_hr, result.id_hr);
  return result;
}

// Convenience wrapper: run the recorded graph backward from a scalar root
// and return the parameter gradient.
inline std::vector<double> backward_params(Tape& tape, int root_id,
                                           int params_id) {
  tape.backward(root_id);
  return tape.grad(params_id);
}

}  // namespace fdr
