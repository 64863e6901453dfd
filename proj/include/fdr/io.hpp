#pragma once

// File formats. Volumes and displacement fields use a minimal binary
// container (magic "DWV1"): kind byte, little-endian u32 dims, u32 scalar
// width (4 = float32), float32 payload in row-major order with u fastest
// (displacement fields interleave the 3 components per voxel), and a
// trailing CRC32 of the payload. Checkpoints ("DWC1") store the arch header
// plus named float64 tensors with a whole-body checksum. All writes go
// through a temp file and an atomic rename.

#include <charconv>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "fdr/core.hpp"
#include "fdr/network.hpp"
#include "fdr/optim.hpp"

namespace fdr {

enum class IoErrorCode {
  open_failed,
  bad_magic,
  bad_header,
  dim_overflow,
  truncated,
  crc_mismatch,
};

class IoError : public std::runtime_error {
 public:
  IoError(IoErrorCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  IoErrorCode code() const { return code_; }

 private:
  IoErrorCode code_;
};

namespace detail {

inline std::uint32_t crc32(const unsigned char* data, std::size_t n,
                           std::uint32_t crc = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k)
        c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc ^= 0xFFFFFFFFu;
  for (std::size_t i = 0; i < n; ++i)
    crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

struct ByteWriter {
  std::vector<unsigned char> bytes;

  void u8(std::uint8_t v) { bytes.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) bytes.push_back((v >> (8 * i)) & 0xFFu);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back((v >> (8 * i)) & 0xFFu);
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back((v >> (8 * i)) & 0xFFu);
  }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void raw(const char* s, std::size_t n) {
    bytes.insert(bytes.end(), s, s + n);
  }
};

struct ByteReader {
  const unsigned char* p;
  std::size_t remaining;

  void need(std::size_t n) const {
    if (remaining < n)
      throw IoError(IoErrorCode::truncated, "file truncated");
  }
  std::uint8_t u8() {
    need(1);
    --remaining;
    return *p++;
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(*p++) << (8 * i);
    remaining -= 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(*p++) << (8 * i);
    remaining -= 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(*p++) << (8 * i);
    remaining -= 8;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p), n);
    p += n;
    remaining -= n;
    return s;
  }
};

inline void atomic_write(const std::string& path,
                         const std::vector<unsigned char>& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw IoError(IoErrorCode::open_failed, "cannot open " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out)
      throw IoError(IoErrorCode::open_failed, "write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError(IoErrorCode::open_failed, "cannot open " + path);
  const auto size = in.tellg();
  in.seekg(0);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(size));
  in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) throw IoError(IoErrorCode::open_failed, "read failed: " + path);
  return bytes;
}

// Volumes above this payload size are rejected as corrupt headers rather
// than attempted.
inline constexpr std::uint64_t kMaxPayloadBytes = 1ull << 31;

inline constexpr std::uint8_t kKindIntensity = 0;
inline constexpr std::uint8_t kKindLabel = 1;
inline constexpr std::uint8_t kKindDvf = 2;

inline std::vector<unsigned char> encode_dwv(Dims dims, std::uint8_t kind,
                                             const double* interleaved,
                                             std::size_t count) {
  ByteWriter w;
  w.raw("DWV1", 4);
  w.u8(kind);
  w.u32(static_cast<std::uint32_t>(dims.nu));
  w.u32(static_cast<std::uint32_t>(dims.nv));
  w.u32(static_cast<std::uint32_t>(dims.nw));
  w.u32(4);  // scalar width: float32
  const std::size_t payload_start = w.bytes.size();
  for (std::size_t i = 0; i < count; ++i)
    w.f32(static_cast<float>(interleaved[i]));
  const std::uint32_t crc =
      crc32(w.bytes.data() + payload_start, w.bytes.size() - payload_start);
  w.u32(crc);
  return w.bytes;
}

struct DwvContent {
  Dims dims;
  std::uint8_t kind;
  std::vector<double> values;  // interleaved for dvf
};

inline DwvContent decode_dwv(const std::vector<unsigned char>& bytes,
                             const std::string& path) {
  ByteReader r{bytes.data(), bytes.size()};
  if (r.str(4) != "DWV1")
    throw IoError(IoErrorCode::bad_magic, path + ": bad magic");
  const std::uint8_t kind = r.u8();
  if (kind > kKindDvf)
    throw IoError(IoErrorCode::bad_header,
                  path + ": unknown kind byte " + std::to_string(kind));
  const std::uint64_t nu = r.u32(), nv = r.u32(), nw = r.u32();
  const std::uint32_t width = r.u32();
  if (width != 4)
    throw IoError(IoErrorCode::bad_header,
                  path + ": unsupported scalar width " + std::to_string(width));
  const std::uint64_t comps = kind == kKindDvf ? 3 : 1;
  const std::uint64_t count = nu * nv * nw * comps;
  if (nu == 0 || nv == 0 || nw == 0 || count * 4 > kMaxPayloadBytes)
    throw IoError(IoErrorCode::dim_overflow,
                  path + ": dims (" + std::to_string(nu) + "," +
                      std::to_string(nv) + "," + std::to_string(nw) +
                      ") overflow the payload limit");
  r.need(count * 4 + 4);
  const unsigned char* payload = r.p;
  DwvContent content;
  content.dims = {static_cast<int>(nu), static_cast<int>(nv),
                  static_cast<int>(nw)};
  content.kind = kind;
  content.values.resize(count);
  for (std::uint64_t i = 0; i < count; ++i)
    content.values[i] = static_cast<double>(r.f32());
  const std::uint32_t stored_crc = r.u32();
  const std::uint32_t actual_crc = crc32(payload, count * 4);
  if (stored_crc != actual_crc)
    throw IoError(IoErrorCode::crc_mismatch, path + ": payload CRC mismatch");
  return content;
}

}  // namespace detail

inline void write_volume(const std::string& path, const Volume& v) {
  const std::uint8_t kind = v.kind == VoxelKind::label
                                ? detail::kKindLabel
                                : detail::kKindIntensity;
  detail::atomic_write(
      path, detail::encode_dwv(v.dims, kind, v.data.data(), v.data.size()));
}

inline Volume read_volume(const std::string& path) {
  const auto content = detail::decode_dwv(detail::read_file(path), path);
  if (content.kind == detail::kKindDvf)
    throw IoError(IoErrorCode::bad_header,
                  path + ": expected a volume, found a displacement field");
  Volume v(content.dims,
           content.kind == detail::kKindLabel ? VoxelKind::label
                                              : VoxelKind::intensity);
  v.data = content.values;
  if (v.kind == VoxelKind::label) check_label_volume(v);
  return v;
}

inline void write_field(const std::string& path, const DisplacementField& d) {
  std::vector<double> interleaved(3 * d.voxels());
  for (std::size_t i = 0; i < d.voxels(); ++i)
    for (int c = 0; c < 3; ++c)
      interleaved[3 * i + c] = d.comp[c][i];
  detail::atomic_write(path,
                       detail::encode_dwv(d.dims, detail::kKindDvf,
                                          interleaved.data(),
                                          interleaved.size()));
}

inline DisplacementField read_field(const std::string& path) {
  const auto content = detail::decode_dwv(detail::read_file(path), path);
  if (content.kind != detail::kKindDvf)
    throw IoError(IoErrorCode::bad_header,
                  path + ": expected a displacement field, found kind " +
                      std::to_string(content.kind));
  DisplacementField d(content.dims);
  for (std::size_t i = 0; i < d.voxels(); ++i)
    for (int c = 0; c < 3; ++c)
      d.comp[c][i] = content.values[3 * i + c];
  return d;
}

// ---- checkpoints -----------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path,
                            const NetworkParams& params) {
  detail::ByteWriter w;
  w.raw("DWC1", 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(params.arch.c));
  w.u32(static_cast<std::uint32_t>(params.arch.k));
  w.u32(static_cast<std::uint32_t>(params.arch.depth));
  w.u8(params.arch.additive_forwarding ? 1 : 0);
  w.u8(params.arch.residual_learning ? 1 : 0);
  w.u8(params.arch.deep_supervision ? 1 : 0);
  w.u8(0);
  w.u32(static_cast<std::uint32_t>(params.layout.size()));
  for (const auto& t : params.layout) {
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.raw(t.name.data(), t.name.size());
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (int s : t.shape) w.u32(static_cast<std::uint32_t>(s));
    for (std::size_t i = 0; i < t.size; ++i)
      w.f64(params.flat[t.offset + i]);
  }
  const std::uint32_t crc = detail::crc32(w.bytes.data() + 4,
                                          w.bytes.size() - 4);
  w.u32(crc);
  detail::atomic_write(path, w.bytes);
}

inline NetworkParams load_checkpoint(const std::string& path) {
  const auto bytes = detail::read_file(path);
  if (bytes.size() < 12)
    throw IoError(IoErrorCode::truncated, path + ": truncated checkpoint");
  detail::ByteReader r{bytes.data(), bytes.size()};
  if (r.str(4) != "DWC1")
    throw IoError(IoErrorCode::bad_magic, path + ": bad checkpoint magic");
  const std::uint32_t computed_crc =
      detail::crc32(bytes.data() + 4, bytes.size() - 8);
  detail::ByteReader trailer{bytes.data() + bytes.size() - 4, 4};
  if (trailer.u32() != computed_crc)
    throw IoError(IoErrorCode::crc_mismatch,
                  path + ": checkpoint CRC mismatch");

  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw IoError(IoErrorCode::bad_header,
                  path + ": unsupported checkpoint version " +
                      std::to_string(version));
  ArchConfig arch;
  arch.c = static_cast<int>(r.u32());
  arch.k = static_cast<int>(r.u32());
  arch.depth = static_cast<int>(r.u32());
  arch.additive_forwarding = r.u8() != 0;
  arch.residual_learning = r.u8() != 0;
  arch.deep_supervision = r.u8() != 0;
  r.u8();
  arch.validate();

  NetworkParams params = init_params(arch, 0);
  std::fill(params.flat.begin(), params.flat.end(), 0.0);
  const std::uint32_t tensor_count = r.u32();
  if (tensor_count != params.layout.size())
    throw IoError(IoErrorCode::bad_header,
                  path + ": tensor count does not match the arch header");
  for (std::uint32_t i = 0; i < tensor_count; ++i) {
    const std::uint16_t name_len = r.u16();
    const std::string name = r.str(name_len);
    const TensorDesc& t = params.tensor(name);
    const std::uint32_t ndims = r.u32();
    if (ndims != t.shape.size())
      throw IoError(IoErrorCode::bad_header,
                    path + ": tensor " + name + " rank mismatch");
    for (std::uint32_t j = 0; j < ndims; ++j)
      if (static_cast<int>(r.u32()) != t.shape[j])
        throw IoError(IoErrorCode::bad_header,
                      path + ": tensor " + name + " shape mismatch");
    for (std::size_t j = 0; j < t.size; ++j)
      params.flat[t.offset + j] = r.f64();
  }
  return params;
}

// ---- CSV reports -----------------------------------------------------

namespace detail {

// Shortest decimal form that round-trips the exact double.
inline std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

// One row per iteration; validation cells are empty when not computed.
// '.' decimal, no locale dependence.
inline void write_history_csv(const std::string& path,
                              const History& history) {
  std::string out =
      "iteration,lambda,lr,loss_overall,loss_hr,loss_lr,val_dice,val_ncc\n";
  for (const auto& r : history.rows) {
    out += std::to_string(r.iteration);
    out += ',';
    out += detail::fmt_double(r.lambda);
    out += ',';
    out += detail::fmt_double(r.lr);
    out += ',';
    out += detail::fmt_double(r.loss_overall);
    out += ',';
    out += detail::fmt_double(r.loss_hr);
    out += ',';
    out += detail::fmt_double(r.loss_lr);
    out += ',';
    if (std::isfinite(r.val_dice)) out += detail::fmt_double(r.val_dice);
    out += ',';
    if (std::isfinite(r.val_ncc)) out += detail::fmt_double(r.val_ncc);
    out += '\n';
  }
  detail::atomic_write(path, std::vector<unsigned char>(out.begin(), out.end()));
}

struct MetricRow {
  std::string pair_id;
  std::string label_id;  // label number or "GLOBAL"
  std::string metric;
  double value = 0.0;
};

inline void write_metric_csv(const std::string& path,
                             const std::vector<MetricRow>& rows) {
  std::string out = "pair_id,label_id,metric,value\n";
  for (const auto& r : rows) {
    out += r.pair_id + ',' + r.label_id + ',' + r.metric + ',' +
           detail::fmt_double(r.value) + '\n';
  }
  detail::atomic_write(path, std::vector<unsigned char>(out.begin(), out.end()));
}

}  // namespace fdr
