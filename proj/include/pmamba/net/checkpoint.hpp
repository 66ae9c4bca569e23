// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "pmamba/core/nn.hpp"

// Checkpoint file layout (all integers little-endian):
//
//   "PYMB"                      magic
//   u32 version                 kCheckpointVersion
//   u64 n, n bytes              config text; ends with a [checkpoint] section
//   u32 record count
//   per record:
//     u32 n, n bytes            name
//     u32 rank, rank x u64      dims
//     numel x scalar            values
//   u32 crc32                   of every byte after the magic and before this
//
// Values are 32-bit floats for float models. Double-precision models write
// 64-bit values and say so with scalar_bytes=8 in the [checkpoint] section;
// a reader of the other precision rejects the file with FormatError.
//
// Optimizer moments are stored as ordinary records named opt.m.<param> and
// opt.v.<param>.

namespace pmamba::net {

inline constexpr char kCheckpointMagic[4] = {'P', 'Y', 'M', 'B'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct CheckpointMeta {
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  double best_metric = -1.0;
  std::uint64_t best_epoch = 0;
  std::uint64_t rng_seed = 0;
  std::uint64_t rng_stream = 0;
  std::uint64_t rng_counter = 0;
  std::uint32_t scalar_bytes = 4;  // filled in by the writer
};

template <class T>
struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<T> values;
};

template <class T>
struct Checkpoint {
  std::string config_text;  // run configuration, without the [checkpoint] section
  CheckpointMeta meta;
  std::vector<NamedTensor<T>> records;

  const NamedTensor<T>* find(const std::string& name) const {
    for (const auto& r : records)
      if (r.name == name) return &r;
    return nullptr;
  }
};

namespace detail {

inline std::string exact_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::string meta_section(const CheckpointMeta& m) {
  std::ostringstream os;
  os << "[checkpoint]\n"
     << "epoch=" << m.epoch << "\n"
     << "step=" << m.step << "\n"
     << "best_metric=" << exact_double(m.best_metric) << "\n"
     << "best_epoch=" << m.best_epoch << "\n"
     << "rng_seed=" << m.rng_seed << "\n"
     << "rng_stream=" << m.rng_stream << "\n"
     << "rng_counter=" << m.rng_counter << "\n"
     << "scalar_bytes=" << m.scalar_bytes << "\n";
  return os.str();
}

inline constexpr std::string_view kMetaHeader = "[checkpoint]\n";

inline void split_meta(const std::string& text, std::string& config, CheckpointMeta& meta) {
  const auto pos = text.rfind(kMetaHeader);
  if (pos == std::string::npos || (pos > 0 && text[pos - 1] != '\n'))
    throw IntegrityError("checkpoint: missing [checkpoint] section");
  config = text.substr(0, pos);
  std::istringstream is(text.substr(pos));
  boost::property_tree::ptree pt;
  try {
    boost::property_tree::ini_parser::read_ini(is, pt);
    const auto& s = pt.get_child("checkpoint");
    meta.epoch = s.get<std::uint64_t>("epoch");
    meta.step = s.get<std::uint64_t>("step");
    meta.best_metric = s.get<double>("best_metric");
    meta.best_epoch = s.get<std::uint64_t>("best_epoch");
    meta.rng_seed = s.get<std::uint64_t>("rng_seed");
    meta.rng_stream = s.get<std::uint64_t>("rng_stream");
    meta.rng_counter = s.get<std::uint64_t>("rng_counter");
    meta.scalar_bytes = s.get<std::uint32_t>("scalar_bytes");
  } catch (const boost::property_tree::ptree_error& e) {
    throw IntegrityError(std::string("checkpoint: bad [checkpoint] section: ") + e.what());
  }
}

class ByteWriter {
 public:
  template <class U>
  void put(U v) {
    static_assert(std::is_trivially_copyable_v<U>);
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(U));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  std::vector<char>& buffer() { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  ByteReader(const char* data, std::size_t size) : data_(data), size_(size) {}
  template <class U>
  U get() {
    U v;
    need(sizeof(U));
    std::memcpy(&v, data_ + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  void get_bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
  }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > size_ - pos_) throw IntegrityError("checkpoint: truncated file");
  }
  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in pieces.
  while (n > 0) {
    const auto piece = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), piece);
    data += piece;
    n -= piece;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

/// Serializes a checkpoint to bytes.
template <class T>
std::vector<char> checkpoint_bytes(const Checkpoint<T>& ck) {
  detail::ByteWriter w;
  w.put_bytes(kCheckpointMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  std::string text = ck.config_text;
  if (!text.empty() && text.back() != '\n') text += '\n';
  auto meta = ck.meta;
  meta.scalar_bytes = sizeof(T);
  text += detail::meta_section(meta);
  w.put<std::uint64_t>(text.size());
  w.put_bytes(text.data(), text.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.records.size()));
  for (const auto& r : ck.records) {
    if (static_cast<Index>(r.values.size()) != numel_of(r.shape))
      throw ShapeError("checkpoint: record '" + r.name + "' size does not match its shape");
    w.put<std::uint32_t>(static_cast<std::uint32_t>(r.name.size()));
    w.put_bytes(r.name.data(), r.name.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(r.shape.size()));
    for (Index d : r.shape) w.put<std::uint64_t>(static_cast<std::uint64_t>(d));
    w.put_bytes(r.values.data(), r.values.size() * sizeof(T));
  }
  auto& buf = w.buffer();
  const std::uint32_t crc = detail::crc32_of(buf.data() + 4, buf.size() - 4);
  w.put<std::uint32_t>(crc);
  return std::move(buf);
}

/// Parses checkpoint bytes. Either returns a complete checkpoint or throws;
/// nothing partial escapes.
template <class T>
Checkpoint<T> checkpoint_parse(const std::vector<char>& bytes) {
  if (bytes.size() < 4 + 4 + 8 + 4 + 4) throw IntegrityError("checkpoint: file too short");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw IntegrityError("checkpoint: bad magic");
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
  if (detail::crc32_of(bytes.data() + 4, bytes.size() - 8) != stored_crc) throw IntegrityError("checkpoint: CRC mismatch");

  detail::ByteReader r(bytes.data() + 4, bytes.size() - 8);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw VersionError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  Checkpoint<T> ck;
  const auto text_len = r.get<std::uint64_t>();
  if (text_len > r.remaining()) throw IntegrityError("checkpoint: truncated config text");
  std::string text(static_cast<std::size_t>(text_len), '\0');
  r.get_bytes(text.data(), text.size());
  detail::split_meta(text, ck.config_text, ck.meta);
  if (ck.meta.scalar_bytes != sizeof(T))
    throw FormatError("checkpoint: stored scalars are " + std::to_string(ck.meta.scalar_bytes) +
                      " bytes, reader expects " + std::to_string(sizeof(T)));
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor<T> rec;
    const auto name_len = r.get<std::uint32_t>();
    if (name_len > r.remaining()) throw IntegrityError("checkpoint: truncated record name");
    rec.name.resize(name_len);
    r.get_bytes(rec.name.data(), name_len);
    const auto rank = r.get<std::uint32_t>();
    if (rank == 0 || rank > 8) throw IntegrityError("checkpoint: bad rank for '" + rec.name + "'");
    std::uint64_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.get<std::uint64_t>();
      if (d == 0 || d > (std::uint64_t{1} << 40)) throw IntegrityError("checkpoint: bad dim for '" + rec.name + "'");
      rec.shape.push_back(static_cast<Index>(d));
      n *= d;
    }
    if (n * sizeof(T) > r.remaining()) throw IntegrityError("checkpoint: truncated data for '" + rec.name + "'");
    rec.values.resize(static_cast<std::size_t>(n));
    r.get_bytes(rec.values.data(), rec.values.size() * sizeof(T));
    ck.records.push_back(std::move(rec));
  }
  if (r.remaining() != 0) throw IntegrityError("checkpoint: trailing bytes");
  return ck;
}

/// Writes via a temporary file and rename so readers never see a partial file.
template <class T>
void checkpoint_save(const std::filesystem::path& path, const Checkpoint<T>& ck) {
  const auto bytes = checkpoint_bytes(ck);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("checkpoint: cannot write " + tmp.string());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw DataError("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <class T>
Checkpoint<T> checkpoint_load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return checkpoint_parse<T>(bytes);
}

/// Records for every parameter and buffer in `ps`, in collection order.
template <class T>
std::vector<NamedTensor<T>> snapshot(const ParamSet<T>& ps) {
  std::vector<NamedTensor<T>> out;
  for (const auto* list : {&ps.params(), &ps.buffers()})
    for (const auto& p : *list)
      out.push_back({p.name, p.value.shape(), std::vector<T>(p.value.data().begin(), p.value.data().end())});
  return out;
}

/// Copies matching records into `ps`. Every parameter and buffer must be
/// present with the right shape; the check runs before anything is written.
template <class T>
void restore(ParamSet<T>& ps, const Checkpoint<T>& ck) {
  std::vector<std::pair<Tensor<T>, const NamedTensor<T>*>> plan;
  const ParamSet<T>& view = ps;
  for (const auto* list : {&view.params(), &view.buffers()})
    for (const auto& p : *list) {
      const auto* rec = ck.find(p.name);
      if (rec == nullptr) throw IntegrityError("checkpoint: missing record '" + p.name + "'");
      if (rec->shape != p.value.shape())
        throw ShapeError("checkpoint: record '" + p.name + "' has shape " + to_string(rec->shape) + ", model expects " +
                         to_string(p.value.shape()));
      plan.emplace_back(p.value, rec);
    }
  for (auto& [t, rec] : plan) std::copy(rec->values.begin(), rec->values.end(), t.data().begin());
}

}  // namespace pmamba::net
