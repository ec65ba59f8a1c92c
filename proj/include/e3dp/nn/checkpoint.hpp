#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "e3dp/error.hpp"
#include "e3dp/nn/model.hpp"

namespace e3dp::nn {

enum class DType : std::uint32_t { kFloat32 = 0, kFloat64 = 1 };

struct Array {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<double> data;  // row-major
  bool operator==(const Array&) const = default;
};

/// Self-describing parameter container.
///
/// Layout (little-endian): "E3DP", u32 version, u32 dtype, backbone config
/// (4 x u32, 3 x f64), head config (u32 classes, u8 semantic, u8 offset,
/// f64 offset_scale), u64 iteration, u64 seed, u32 n_meta + (str, str)*,
/// u32 n_arrays + (str name, u32 rows, u32 cols, values)*. Strings are u32
/// length + bytes. Values are f32 by default; f64 when dtype says so.
struct Checkpoint {
  static constexpr char kMagic[4] = {'E', '3', 'D', 'P'};
  static constexpr std::uint32_t kVersion = 1;

  DType dtype = DType::kFloat32;
  BackboneConfig backbone;
  HeadConfig heads;
  std::uint64_t iteration = 0;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> meta;
  std::map<std::string, Array> arrays;

  bool operator==(const Checkpoint&) const = default;
};

template <typename S>
Array to_array(const Matrix<S>& m) {
  Array a{static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols()), {}};
  a.data.assign(m.data(), m.data() + m.size());
  return a;
}

template <typename S>
Matrix<S> from_array(const Array& a) {
  Matrix<S> m(a.rows, a.cols);
  for (std::size_t i = 0; i < a.data.size(); ++i) m.data()[i] = static_cast<S>(a.data[i]);
  return m;
}

/// Parameters go under their own names, optimizer buffers under "optim/".
template <typename S>
Checkpoint make_checkpoint(const Model<S>& model, const ParamSet<S>* velocity, std::uint64_t iteration,
                           std::uint64_t seed) {
  Checkpoint ck;
  ck.dtype = sizeof(S) == 4 ? DType::kFloat32 : DType::kFloat64;
  ck.backbone = model.backbone;
  ck.heads = model.heads;
  ck.iteration = iteration;
  ck.seed = seed;
  for (const auto& [name, m] : model.params) ck.arrays[name] = to_array(m);
  if (velocity)
    for (const auto& [name, m] : *velocity) ck.arrays["optim/" + name] = to_array(m);
  return ck;
}

template <typename S>
Model<S> model_from_checkpoint(const Checkpoint& ck) {
  Model<S> m{ck.backbone, ck.heads, {}};
  for (const auto& [name, a] : ck.arrays)
    if (name.rfind("optim/", 0) != 0) m.params[name] = from_array<S>(a);
  return m;
}

template <typename S>
ParamSet<S> velocity_from_checkpoint(const Checkpoint& ck) {
  ParamSet<S> v;
  for (const auto& [name, a] : ck.arrays)
    if (name.rfind("optim/", 0) == 0) v[name.substr(6)] = from_array<S>(a);
  return v;
}

namespace detail {

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  template <typename T>
  T pod() {
    need(sizeof(T));
    char buf[sizeof(T)];
    std::memcpy(buf, in_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  void raw(char* p, std::size_t n) {
    need(n);
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw DataError("checkpoint truncated");
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  detail::Writer w;
  w.raw(Checkpoint::kMagic, 4);
  w.pod(Checkpoint::kVersion);
  w.pod(static_cast<std::uint32_t>(ck.dtype));
  const auto& b = ck.backbone;
  w.pod(static_cast<std::uint32_t>(b.input_dim));
  w.pod(static_cast<std::uint32_t>(b.hidden_dim));
  w.pod(static_cast<std::uint32_t>(b.blocks));
  w.pod(static_cast<std::uint32_t>(b.output_dim));
  w.pod(b.aggregation_radius);
  w.pod(b.voxel_size);
  w.pod(b.coord_scale);
  w.pod(static_cast<std::uint32_t>(ck.heads.num_classes));
  w.pod(static_cast<std::uint8_t>(ck.heads.semantic));
  w.pod(static_cast<std::uint8_t>(ck.heads.offset));
  w.pod(ck.heads.offset_scale);
  w.pod(ck.iteration);
  w.pod(ck.seed);
  w.pod(static_cast<std::uint32_t>(ck.meta.size()));
  for (const auto& [k, v] : ck.meta) {
    w.str(k);
    w.str(v);
  }
  w.pod(static_cast<std::uint32_t>(ck.arrays.size()));
  for (const auto& [name, a] : ck.arrays) {
    if (a.data.size() != static_cast<std::size_t>(a.rows) * a.cols)
      throw DataError("checkpoint array '" + name + "' has inconsistent shape");
    w.str(name);
    w.pod(a.rows);
    w.pod(a.cols);
    for (double v : a.data) {
      if (ck.dtype == DType::kFloat32) w.pod(static_cast<float>(v));
      else w.pod(v);
    }
  }
  return w.take();
}

inline Checkpoint deserialize_checkpoint(std::string_view bytes) {
  detail::Reader r(bytes);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, Checkpoint::kMagic, 4) != 0) throw DataError("not a checkpoint (bad magic)");
  if (r.pod<std::uint32_t>() != Checkpoint::kVersion) throw DataError("unsupported checkpoint version");
  Checkpoint ck;
  const auto dt = r.pod<std::uint32_t>();
  if (dt > 1) throw DataError("unknown checkpoint dtype");
  ck.dtype = static_cast<DType>(dt);
  auto& b = ck.backbone;
  b.input_dim = static_cast<int>(r.pod<std::uint32_t>());
  b.hidden_dim = static_cast<int>(r.pod<std::uint32_t>());
  b.blocks = static_cast<int>(r.pod<std::uint32_t>());
  b.output_dim = static_cast<int>(r.pod<std::uint32_t>());
  b.aggregation_radius = r.pod<double>();
  b.voxel_size = r.pod<double>();
  b.coord_scale = r.pod<double>();
  ck.heads.num_classes = static_cast<int>(r.pod<std::uint32_t>());
  ck.heads.semantic = r.pod<std::uint8_t>() != 0;
  ck.heads.offset = r.pod<std::uint8_t>() != 0;
  ck.heads.offset_scale = r.pod<double>();
  ck.iteration = r.pod<std::uint64_t>();
  ck.seed = r.pod<std::uint64_t>();
  const auto n_meta = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = r.str();
    ck.meta[k] = r.str();
  }
  const auto n_arrays = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_arrays; ++i) {
    auto name = r.str();
    Array a;
    a.rows = r.pod<std::uint32_t>();
    a.cols = r.pod<std::uint32_t>();
    const std::size_t n = static_cast<std::size_t>(a.rows) * a.cols;
    a.data.resize(n);
    for (std::size_t j = 0; j < n; ++j)
      a.data[j] = ck.dtype == DType::kFloat32 ? static_cast<double>(r.pod<float>()) : r.pod<double>();
    ck.arrays.emplace(std::move(name), std::move(a));
  }
  if (!r.done()) throw DataError("trailing bytes after checkpoint");
  b.validate();
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

/// Human-readable summary used by `describe-checkpoint`.
inline std::string describe(const Checkpoint& ck) {
  std::ostringstream os;
  const auto& b = ck.backbone;
  os << "format: E3DP v" << Checkpoint::kVersion << " (" << (ck.dtype == DType::kFloat32 ? "float32" : "float64")
     << ")\n";
  os << "backbone: input_dim=" << b.input_dim << " hidden_dim=" << b.hidden_dim << " blocks=" << b.blocks
     << " output_dim=" << b.output_dim << " aggregation_radius=" << b.aggregation_radius
     << " voxel_size=" << b.voxel_size << " coord_scale=" << b.coord_scale << '\n';
  os << "heads: semantic=" << (ck.heads.semantic ? "yes" : "no") << " offset=" << (ck.heads.offset ? "yes" : "no")
     << " num_classes=" << ck.heads.num_classes << " offset_scale=" << ck.heads.offset_scale << '\n';
  os << "iteration: " << ck.iteration << "\nseed: " << ck.seed << '\n';
  for (const auto& [k, v] : ck.meta) os << "meta." << k << ": " << v << '\n';
  std::size_t total = 0;
  for (const auto& [name, a] : ck.arrays) {
    os << "array " << name << " [" << a.rows << " x " << a.cols << "]\n";
    if (name.rfind("optim/", 0) != 0) total += a.data.size();
  }
  os << "parameters: " << total << '\n';
  return os.str();
}

}  // namespace e3dp::nn
