#pragma once

// Checkpoint container (all integers and floats little-endian):
//
//   "ADKN"                      4-byte magic
//   u32 version                 currently 1
//   model config                u32 scale, features, kernel_size, backbone_blocks, trunk_blocks,
//                               branch_blocks, variant, norm_mode, channels; u64 seed
//   u32 flags                   bit 0: trainer state block follows
//   [trainer state]             f64 lr, f64 best_val, u32 epochs_since_improvement,
//                               u64 step, u64 epoch, u64 seed, f64 epoch_loss_sum,
//                               u64 epoch_batches, u64 adam_t
//   u32 record count
//   records                     u32 name length, name bytes, u32 rank, rank x u32 extents,
//                               f32 payload in row-major order
//
// Parameter records come first in model order, then "adam.m/<name>" and
// "adam.v/<name>" moment records when the trainer block is present.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "adk/error.hpp"
#include "adk/model.hpp"
#include "adk/optim.hpp"
#include "adk/tensor.hpp"

namespace adk {

inline constexpr char kCheckpointMagic[4] = {'A', 'D', 'K', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Parameters plus everything needed to resume training bit-exactly.
struct TrainState {
  model::ModelParams<float> params;
  bool has_optimizer = false;
  optim::AdamState<float> adam;
  double lr = 0.0;
  double best_val = std::numeric_limits<double>::infinity();
  std::uint32_t epochs_since_improvement = 0;
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  std::uint64_t seed = 0;
  double epoch_loss_sum = 0.0;
  std::uint64_t epoch_batches = 0;
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  template <class U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::vector<char> buf_;
};

class ByteReader {
 public:
  ByteReader(std::vector<char> data, std::string source) : data_(std::move(data)), source_(std::move(source)) {}

  std::uint32_t u32() { return le<std::uint32_t>(); }
  std::uint64_t u64() { return le<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
  void bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == data_.size(); }
  const std::string& source() const { return source_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw FormatError("truncated checkpoint " + source_);
  }
  template <class U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  std::vector<char> data_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline void write_record(ByteWriter& w, const std::string& name, const Tensor<float>& t) {
  w.str(name);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) w.u32(static_cast<std::uint32_t>(e));
  for (float v : t.values()) w.f32(v);
}

struct Record {
  std::string name;
  Tensor<float> value;
};

inline Record read_record(ByteReader& r) {
  Record rec;
  rec.name = r.str();
  const std::uint32_t rank = r.u32();
  if (rank == 0 || rank > 8) throw FormatError("checkpoint " + r.source() + ": record '" + rec.name + "' has rank " +
                                               std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) {
    e = r.u32();
    if (e == 0) throw FormatError("checkpoint " + r.source() + ": zero extent in record '" + rec.name + "'");
  }
  std::vector<float> data(element_count(shape));
  for (auto& v : data) v = r.f32();
  rec.value = Tensor<float>(std::move(shape), std::move(data));
  return rec;
}

}  // namespace detail

inline std::vector<char> encode_checkpoint(const TrainState& s) {
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  const auto& c = s.params.config;
  for (std::uint32_t v : {c.scale, c.features, c.kernel_size, c.backbone_blocks, c.trunk_blocks, c.branch_blocks,
                          static_cast<std::uint32_t>(c.variant), static_cast<std::uint32_t>(c.norm_mode), c.channels})
    w.u32(v);
  w.u64(c.seed);
  w.u32(s.has_optimizer ? 1u : 0u);
  const auto& ps = s.params.params;
  if (s.has_optimizer) {
    if (s.adam.m.size() != ps.size() || s.adam.v.size() != ps.size())
      throw UsageError("checkpoint: optimizer moments do not match the parameter list");
    w.f64(s.lr);
    w.f64(s.best_val);
    w.u32(s.epochs_since_improvement);
    w.u64(s.step);
    w.u64(s.epoch);
    w.u64(s.seed);
    w.f64(s.epoch_loss_sum);
    w.u64(s.epoch_batches);
    w.u64(s.adam.t);
  }
  const std::size_t count = ps.size() * (s.has_optimizer ? 3 : 1);
  w.u32(static_cast<std::uint32_t>(count));
  for (const auto& p : ps) detail::write_record(w, p.name, p.value);
  if (s.has_optimizer) {
    for (std::size_t i = 0; i < ps.size(); ++i) detail::write_record(w, "adam.m/" + ps[i].name, s.adam.m[i]);
    for (std::size_t i = 0; i < ps.size(); ++i) detail::write_record(w, "adam.v/" + ps[i].name, s.adam.v[i]);
  }
  return w.buffer();
}

inline TrainState decode_checkpoint(std::vector<char> bytes, const std::string& source = "<memory>") {
  detail::ByteReader r(std::move(bytes), source);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError(source + " is not an ADKN checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(source + ": unsupported checkpoint version " + std::to_string(version));
  }
  model::ModelConfig c;
  c.scale = r.u32();
  c.features = r.u32();
  c.kernel_size = r.u32();
  c.backbone_blocks = r.u32();
  c.trunk_blocks = r.u32();
  c.branch_blocks = r.u32();
  c.variant = static_cast<model::Variant>(r.u32());
  c.norm_mode = static_cast<model::NormMode>(r.u32());
  c.channels = r.u32();
  c.seed = r.u64();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(source + ": invalid model config: " + e.what());
  }

  TrainState s;
  s.params = model::build<float>(c);
  const std::uint32_t flags = r.u32();
  if (flags & ~1u) throw FormatError(source + ": unknown flags " + std::to_string(flags));
  s.has_optimizer = flags & 1u;
  if (s.has_optimizer) {
    s.lr = r.f64();
    s.best_val = r.f64();
    s.epochs_since_improvement = r.u32();
    s.step = r.u64();
    s.epoch = r.u64();
    s.seed = r.u64();
    s.epoch_loss_sum = r.f64();
    s.epoch_batches = r.u64();
    s.adam.t = r.u64();
  }
  auto& ps = s.params.params;
  const std::uint32_t count = r.u32();
  const std::size_t expected = ps.size() * (s.has_optimizer ? 3 : 1);
  if (count != expected) {
    throw FormatError(source + ": expected " + std::to_string(expected) + " records, found " + std::to_string(count));
  }
  auto read_into = [&](const std::string& name, Tensor<float>& dst) {
    auto rec = detail::read_record(r);
    if (rec.name != name) throw FormatError(source + ": expected record '" + name + "', found '" + rec.name + "'");
    if (rec.value.shape() != dst.shape()) {
      throw FormatError(source + ": record '" + name + "' has shape " + to_string(rec.value.shape()) + ", model needs " +
                        to_string(dst.shape()));
    }
    dst = std::move(rec.value);
  };
  for (auto& p : ps) read_into(p.name, p.value);
  if (s.has_optimizer) {
    s.adam.m.clear();
    s.adam.v.clear();
    for (const auto& p : ps) s.adam.m.emplace_back(p.value.shape());
    for (const auto& p : ps) s.adam.v.emplace_back(p.value.shape());
    for (std::size_t i = 0; i < ps.size(); ++i) read_into("adam.m/" + ps[i].name, s.adam.m[i]);
    for (std::size_t i = 0; i < ps.size(); ++i) read_into("adam.v/" + ps[i].name, s.adam.v[i]);
  }
  if (!r.at_end()) throw FormatError(source + ": trailing bytes after last record");
  return s;
}

inline void save_checkpoint(const TrainState& s, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(s);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write on checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void save_checkpoint(const model::ModelParams<float>& params, const std::filesystem::path& path) {
  TrainState s;
  s.params = params;
  save_checkpoint(s, path);
}

inline TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(std::move(bytes), path.string());
}

}  // namespace adk
