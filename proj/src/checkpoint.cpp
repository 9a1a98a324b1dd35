#include "gcvamd/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>

#include "gcvamd/errors.hpp"

namespace gcvamd {

namespace {

constexpr char kMagic[4] = {'G', 'C', 'V', 'D'};
// Guards against absurd sizes in corrupted headers.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 34;

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  template <typename T>
  void uint(T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
  }
  void f64(double value) { uint(std::bit_cast<std::uint64_t>(value)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}

  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw CheckpointFormatError("checkpoint is truncated");
  }
  template <typename T>
  T uint() {
    need(sizeof(T));
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(static_cast<T>(in_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return value;
  }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  std::string text(std::size_t n) {
    need(n);
    std::string s(in_.begin() + static_cast<std::ptrdiff_t>(pos_), in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t ArrayRecord::element_count() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

nn::Matrix ArrayRecord::to_matrix() const {
  if (dims.size() > 2) throw CheckpointFormatError("array " + name + " has rank above 2");
  const auto rows = static_cast<Eigen::Index>(dims.empty() ? 1 : dims[0]);
  const auto cols = static_cast<Eigen::Index>(dims.size() == 2 ? dims[1] : 1);
  nn::Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = values[static_cast<std::size_t>(r * cols + c)];
  return m;
}

ArrayRecord ArrayRecord::from_matrix(std::string name, const nn::Matrix& m, DType dtype) {
  ArrayRecord record;
  record.name = std::move(name);
  record.dtype = dtype;
  record.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  record.values.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) record.values.push_back(m(r, c));
  return record;
}

const ArrayRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

const ArrayRecord& Checkpoint::require(const std::string& name) const {
  const ArrayRecord* a = find(name);
  if (!a) throw CheckpointFormatError("checkpoint has no array named " + name);
  return *a;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint) {
  Writer w;
  w.bytes(kMagic, 4);
  w.uint<std::uint32_t>(kCheckpointVersion);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(checkpoint.arrays.size()));
  for (const auto& a : checkpoint.arrays) {
    if (a.values.size() != a.element_count())
      throw std::invalid_argument("array " + a.name + " payload does not match its dims");
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(a.name.size()));
    w.bytes(a.name.data(), a.name.size());
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(a.dtype));
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(a.dims.size()));
    for (auto d : a.dims) w.uint<std::uint64_t>(d);
    if (a.dtype == DType::kUInt8) {
      for (double v : a.values) {
        if (!(v >= 0.0 && v <= 255.0) || v != std::floor(v))
          throw std::invalid_argument("array " + a.name + " holds a value outside 0..255");
        w.uint<std::uint8_t>(static_cast<std::uint8_t>(v));
      }
    } else {
      for (double v : a.values) w.f64(v);
    }
  }
  const auto& f = checkpoint.footer;
  w.uint<std::uint64_t>(f.seed);
  w.uint<std::uint32_t>(f.phase);
  w.uint<std::uint32_t>(f.epoch);
  w.f64(f.dual.alpha);
  w.f64(f.dual.rho);
  w.f64(f.dual.beta);
  w.f64(f.dual.gamma);
  w.f64(f.dual.h_prev);
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.text(4) != std::string(kMagic, 4)) throw CheckpointFormatError("bad magic header");
  const auto version = r.uint<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointFormatError("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.uint<std::uint32_t>();
  Checkpoint checkpoint;
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    ArrayRecord a;
    a.name = r.text(r.uint<std::uint32_t>());
    if (!names.insert(a.name).second) throw CheckpointFormatError("duplicate array " + a.name);
    const auto dtype = r.uint<std::uint8_t>();
    if (dtype != static_cast<std::uint8_t>(DType::kFloat64) && dtype != static_cast<std::uint8_t>(DType::kUInt8))
      throw CheckpointFormatError("unknown dtype code " + std::to_string(dtype) + " for " + a.name);
    a.dtype = static_cast<DType>(dtype);
    const auto rank = r.uint<std::uint32_t>();
    if (rank > 8) throw CheckpointFormatError("implausible rank for " + a.name);
    for (std::uint32_t k = 0; k < rank; ++k) a.dims.push_back(r.uint<std::uint64_t>());
    const std::uint64_t n = a.element_count();
    if (n > kMaxElements) throw CheckpointFormatError("implausible size for " + a.name);
    const std::size_t width = a.dtype == DType::kUInt8 ? 1 : 8;
    r.need(static_cast<std::size_t>(n) * width);
    a.values.resize(static_cast<std::size_t>(n));
    for (auto& v : a.values) v = a.dtype == DType::kUInt8 ? r.uint<std::uint8_t>() : r.f64();
    checkpoint.arrays.push_back(std::move(a));
  }
  auto& f = checkpoint.footer;
  f.seed = r.uint<std::uint64_t>();
  f.phase = r.uint<std::uint32_t>();
  f.epoch = r.uint<std::uint32_t>();
  f.dual.alpha = r.f64();
  f.dual.rho = r.f64();
  f.dual.beta = r.f64();
  f.dual.gamma = r.f64();
  f.dual.h_prev = r.f64();
  if (!r.done()) throw CheckpointFormatError("trailing bytes after footer");
  return checkpoint;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  const auto bytes = serialize_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointFormatError("cannot open checkpoint " + path);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

void append_params(Checkpoint& checkpoint, const std::vector<nn::ParamView>& params) {
  for (const auto& p : params) checkpoint.arrays.push_back(ArrayRecord::from_matrix(p.name, p.map()));
}

void restore_params(const Checkpoint& checkpoint, const std::vector<nn::ParamView>& params,
                    const std::vector<std::string>& extra_names) {
  std::set<std::string> known(extra_names.begin(), extra_names.end());
  for (const auto& p : params) {
    known.insert(p.name);
    const ArrayRecord& a = checkpoint.require(p.name);
    if (a.dtype != DType::kFloat64 || a.dims.size() != 2 || a.dims[0] != static_cast<std::uint64_t>(p.rows) ||
        a.dims[1] != static_cast<std::uint64_t>(p.cols))
      throw CheckpointFormatError("array " + p.name + " has the wrong type or shape");
    p.map() = a.to_matrix();
  }
  for (const auto& a : checkpoint.arrays)
    if (!known.count(a.name)) throw CheckpointFormatError("unknown array name " + a.name);
}

}  // namespace gcvamd
