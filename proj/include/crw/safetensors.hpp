#pragma once

// Reader/writer for the single-file named-tensor layout:
//   u64 little-endian header length | JSON header | raw little-endian data
// Header: {name: {"dtype", "shape", "data_offsets": [begin, end]}, "__metadata__": {...}}.
// Floating dtypes only; values are widened to double on read.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include "crw/error.hpp"
#include "crw/jsonio.hpp"

namespace crw {

enum class Dtype { F64, F32, F16, BF16 };

inline std::string_view to_string(Dtype d) {
  switch (d) {
    case Dtype::F64: return "F64";
    case Dtype::F32: return "F32";
    case Dtype::F16: return "F16";
    case Dtype::BF16: return "BF16";
  }
  return "?";
}

inline Dtype parse_dtype(std::string_view s) {
  if (s == "F64") return Dtype::F64;
  if (s == "F32") return Dtype::F32;
  if (s == "F16") return Dtype::F16;
  if (s == "BF16") return Dtype::BF16;
  fail(ErrorCode::UnsupportedDtype, std::string(s));
}

inline std::size_t dtype_size(Dtype d) {
  switch (d) {
    case Dtype::F64: return 8;
    case Dtype::F32: return 4;
    case Dtype::F16:
    case Dtype::BF16: return 2;
  }
  return 0;
}

// Half-precision conversions (round to nearest even on narrowing).

inline float bf16_to_float(std::uint16_t h) {
  const std::uint32_t bits = static_cast<std::uint32_t>(h) << 16;
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

inline std::uint16_t float_to_bf16(float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  if ((bits & 0x7fffffffu) > 0x7f800000u) return static_cast<std::uint16_t>((bits >> 16) | 0x40u);  // quiet NaN
  const std::uint32_t lsb = (bits >> 16) & 1u;
  bits += 0x7fffu + lsb;
  return static_cast<std::uint16_t>(bits >> 16);
}

inline float f16_to_float(std::uint16_t h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  std::uint32_t exp = (h >> 10) & 0x1fu;
  std::uint32_t man = h & 0x3ffu;
  std::uint32_t bits;
  if (exp == 0) {
    if (man == 0) {
      bits = sign;
    } else {  // subnormal
      exp = 127 - 15 + 1;
      while ((man & 0x400u) == 0) {
        man <<= 1;
        --exp;
      }
      man &= 0x3ffu;
      bits = sign | (exp << 23) | (man << 13);
    }
  } else if (exp == 0x1f) {
    bits = sign | 0x7f800000u | (man << 13);
  } else {
    bits = sign | ((exp + 127 - 15) << 23) | (man << 13);
  }
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

inline std::uint16_t float_to_f16(float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  const std::uint16_t sign = static_cast<std::uint16_t>((bits >> 16) & 0x8000u);
  const std::uint32_t abs = bits & 0x7fffffffu;
  if (abs > 0x7f800000u) return sign | 0x7e00u;
  if (abs >= 0x477ff000u) return sign | 0x7c00u;  // rounds to infinity
  if (abs < 0x33000001u) return sign;            // below half the smallest subnormal
  const int exp = static_cast<int>(abs >> 23) - 127;
  std::uint32_t man = (abs & 0x7fffffu) | 0x800000u;
  int shift;
  std::uint16_t hexp;
  if (exp < -14) {
    shift = 13 + (-14 - exp);
    hexp = 0;
  } else {
    shift = 13;
    hexp = static_cast<std::uint16_t>(exp + 15);
    man &= 0x7fffffu;
  }
  std::uint32_t half_man = man >> shift;
  const std::uint32_t rem = man & ((1u << shift) - 1);
  const std::uint32_t halfway = 1u << (shift - 1);
  std::uint32_t out = (static_cast<std::uint32_t>(hexp) << 10) + half_man;
  if (rem > halfway || (rem == halfway && (half_man & 1u))) ++out;  // carries into the exponent correctly
  return static_cast<std::uint16_t>(sign | out);
}

inline double load_value(const unsigned char* p, Dtype d) {
  switch (d) {
    case Dtype::F64: {
      double v;
      std::memcpy(&v, p, 8);
      return v;
    }
    case Dtype::F32: {
      float v;
      std::memcpy(&v, p, 4);
      return v;
    }
    case Dtype::F16: return f16_to_float(static_cast<std::uint16_t>(p[0] | (p[1] << 8)));
    case Dtype::BF16: return bf16_to_float(static_cast<std::uint16_t>(p[0] | (p[1] << 8)));
  }
  return 0;
}

inline void store_value(unsigned char* p, Dtype d, double v) {
  switch (d) {
    case Dtype::F64: std::memcpy(p, &v, 8); return;
    case Dtype::F32: {
      const float f = static_cast<float>(v);
      std::memcpy(p, &f, 4);
      return;
    }
    case Dtype::F16:
    case Dtype::BF16: {
      const std::uint16_t h = d == Dtype::F16 ? float_to_f16(static_cast<float>(v)) : float_to_bf16(static_cast<float>(v));
      p[0] = static_cast<unsigned char>(h & 0xff);
      p[1] = static_cast<unsigned char>(h >> 8);
      return;
    }
  }
}

struct Tensor {
  Dtype dtype = Dtype::F32;
  std::vector<std::int64_t> shape;
  std::vector<double> data;  // widened values, row-major

  std::size_t numel() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, std::int64_t b) { return a * static_cast<std::size_t>(b); });
  }
};

using TensorArchive = std::map<std::string, Tensor>;

struct TensorInfo {
  Dtype dtype = Dtype::F32;
  std::vector<std::int64_t> shape;
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// Memory-mapped read-only archive.
class ArchiveReader {
 public:
  explicit ArchiveReader(const std::filesystem::path& path) {
    fd_ = ::open(path.c_str(), O_RDONLY);
    if (fd_ < 0) fail(ErrorCode::IoError, "cannot open " + path.string());
    struct stat st {};
    if (::fstat(fd_, &st) != 0) {
      ::close(fd_);
      fail(ErrorCode::IoError, "cannot stat " + path.string());
    }
    size_ = static_cast<std::size_t>(st.st_size);
    if (size_ > 0) {
      void* m = ::mmap(nullptr, size_, PROT_READ, MAP_PRIVATE, fd_, 0);
      if (m == MAP_FAILED) {
        ::close(fd_);
        fail(ErrorCode::IoError, "cannot map " + path.string());
      }
      base_ = static_cast<const unsigned char*>(m);
    }
    try {
      parse_header(path.string());
    } catch (...) {
      release();
      throw;
    }
  }
  ~ArchiveReader() { release(); }
  ArchiveReader(const ArchiveReader&) = delete;
  ArchiveReader& operator=(const ArchiveReader&) = delete;

  const std::map<std::string, TensorInfo>& tensors() const { return infos_; }
  const json& metadata() const { return metadata_; }

  const TensorInfo& info(const std::string& name) const {
    auto it = infos_.find(name);
    if (it == infos_.end()) fail(ErrorCode::NameSetMismatch, "no tensor named " + name);
    return it->second;
  }

  Tensor read(const std::string& name) const {
    const auto& inf = info(name);
    Tensor t;
    t.dtype = inf.dtype;
    t.shape = inf.shape;
    const std::size_t n = t.numel();
    const std::size_t w = dtype_size(inf.dtype);
    t.data.resize(n);
    const unsigned char* p = base_ + data_start_ + inf.begin;
    for (std::size_t i = 0; i < n; ++i) t.data[i] = load_value(p + i * w, inf.dtype);
    return t;
  }

  TensorArchive read_all() const {
    TensorArchive out;
    for (const auto& [name, _] : infos_) out.emplace(name, read(name));
    return out;
  }

 private:
  void release() {
    if (base_) ::munmap(const_cast<unsigned char*>(base_), size_);
    if (fd_ >= 0) ::close(fd_);
    base_ = nullptr;
    fd_ = -1;
  }

  void parse_header(const std::string& what) {
    if (size_ < 8) fail(ErrorCode::MalformedArchive, what + ": too short");
    std::uint64_t hlen = 0;
    for (int i = 7; i >= 0; --i) hlen = (hlen << 8) | base_[i];
    if (hlen > size_ - 8) fail(ErrorCode::MalformedArchive, what + ": header length exceeds file");
    data_start_ = 8 + static_cast<std::size_t>(hlen);
    json header;
    try {
      header = json::parse(std::string_view(reinterpret_cast<const char*>(base_ + 8), hlen));
    } catch (const json::parse_error& e) {
      fail(ErrorCode::MalformedArchive, what + ": bad header JSON: " + e.what());
    }
    if (!header.is_object()) fail(ErrorCode::MalformedArchive, what + ": header is not an object");
    const std::size_t data_len = size_ - data_start_;
    for (const auto& [name, entry] : header.items()) {
      if (name == "__metadata__") {
        metadata_ = entry;
        continue;
      }
      try {
        TensorInfo inf;
        inf.dtype = parse_dtype(entry.at("dtype").get<std::string>());
        inf.shape = entry.at("shape").get<std::vector<std::int64_t>>();
        const auto offs = entry.at("data_offsets").get<std::vector<std::size_t>>();
        if (offs.size() != 2 || offs[0] > offs[1] || offs[1] > data_len) {
          fail(ErrorCode::MalformedArchive, what + ": bad offsets for " + name);
        }
        inf.begin = offs[0];
        inf.end = offs[1];
        std::size_t n = 1;
        for (auto d : inf.shape) {
          if (d < 0) fail(ErrorCode::MalformedArchive, what + ": negative dimension in " + name);
          n *= static_cast<std::size_t>(d);
        }
        if (n * dtype_size(inf.dtype) != inf.end - inf.begin) {
          fail(ErrorCode::MalformedArchive, what + ": byte length does not match shape for " + name);
        }
        infos_.emplace(name, std::move(inf));
      } catch (const json::exception& e) {
        fail(ErrorCode::MalformedArchive, what + ": bad entry " + name + ": " + e.what());
      }
    }
  }

  int fd_ = -1;
  const unsigned char* base_ = nullptr;
  std::size_t size_ = 0;
  std::size_t data_start_ = 0;
  std::map<std::string, TensorInfo> infos_;
  json metadata_ = json::object();
};

struct ArchiveLayout {
  std::string header;  // padded JSON, without the length prefix
  std::map<std::string, TensorInfo> infos;
  std::size_t data_bytes = 0;
};

/// Offsets in name order; the header is space-padded to 8-byte alignment.
inline ArchiveLayout plan_layout(const std::map<std::string, std::pair<Dtype, std::vector<std::int64_t>>>& entries,
                                 const json& metadata = json::object()) {
  ArchiveLayout lay;
  json header = json::object();
  if (!metadata.empty()) header["__metadata__"] = metadata;
  std::size_t off = 0;
  for (const auto& [name, spec] : entries) {
    TensorInfo inf;
    inf.dtype = spec.first;
    inf.shape = spec.second;
    std::size_t n = 1;
    for (auto d : inf.shape) n *= static_cast<std::size_t>(d);
    inf.begin = off;
    inf.end = off + n * dtype_size(inf.dtype);
    off = inf.end;
    header[name] = {{"dtype", to_string(inf.dtype)}, {"shape", inf.shape}, {"data_offsets", {inf.begin, inf.end}}};
    lay.infos.emplace(name, std::move(inf));
  }
  lay.header = header.dump();
  while ((8 + lay.header.size()) % 8 != 0) lay.header.push_back(' ');
  lay.data_bytes = off;
  return lay;
}

/// Output file with a fixed layout; tensors may be written in any order
/// (and from several threads) with positioned writes.
class ArchiveWriter {
 public:
  ArchiveWriter(const std::filesystem::path& path, ArchiveLayout layout) : path_(path), layout_(std::move(layout)) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    tmp_ = path;
    tmp_ += ".tmp";
    fd_ = ::open(tmp_.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd_ < 0) fail(ErrorCode::IoError, "cannot create " + tmp_.string());
    unsigned char len[8];
    std::uint64_t h = layout_.header.size();
    for (int i = 0; i < 8; ++i) len[i] = static_cast<unsigned char>(h >> (8 * i));
    write_at(len, 8, 0);
    write_at(layout_.header.data(), layout_.header.size(), 8);
    if (::ftruncate(fd_, static_cast<off_t>(8 + layout_.header.size() + layout_.data_bytes)) != 0) {
      fail(ErrorCode::IoError, "cannot size " + tmp_.string());
    }
  }
  ~ArchiveWriter() {
    if (fd_ >= 0) {
      ::close(fd_);
      std::error_code ec;
      std::filesystem::remove(tmp_, ec);
    }
  }
  ArchiveWriter(const ArchiveWriter&) = delete;
  ArchiveWriter& operator=(const ArchiveWriter&) = delete;

  void write(const std::string& name, const std::vector<double>& values) {
    auto it = layout_.infos.find(name);
    if (it == layout_.infos.end()) fail(ErrorCode::NameSetMismatch, "tensor not in layout: " + name);
    const auto& inf = it->second;
    const std::size_t w = dtype_size(inf.dtype);
    if (values.size() * w != inf.end - inf.begin) fail(ErrorCode::ShapeMismatch, "value count mismatch for " + name);
    std::vector<unsigned char> buf(values.size() * w);
    for (std::size_t i = 0; i < values.size(); ++i) store_value(buf.data() + i * w, inf.dtype, values[i]);
    write_at(buf.data(), buf.size(), 8 + layout_.header.size() + inf.begin);
  }

  /// fsync + rename into place.
  void commit() {
    if (::fsync(fd_) != 0) fail(ErrorCode::IoError, "fsync failed for " + tmp_.string());
    ::close(fd_);
    fd_ = -1;
    std::filesystem::rename(tmp_, path_);
  }

 private:
  void write_at(const void* data, std::size_t n, std::size_t off) {
    const auto* p = static_cast<const unsigned char*>(data);
    while (n > 0) {
      const auto w = ::pwrite(fd_, p, n, static_cast<off_t>(off));
      if (w <= 0) fail(ErrorCode::IoError, "write failed for " + tmp_.string());
      p += w;
      n -= static_cast<std::size_t>(w);
      off += static_cast<std::size_t>(w);
    }
  }

  std::filesystem::path path_;
  std::filesystem::path tmp_;
  ArchiveLayout layout_;
  int fd_ = -1;
};

inline void write_archive(const std::filesystem::path& path, const TensorArchive& archive,
                          const json& metadata = json::object()) {
  std::map<std::string, std::pair<Dtype, std::vector<std::int64_t>>> entries;
  for (const auto& [name, t] : archive) {
    if (t.data.size() != t.numel()) fail(ErrorCode::ShapeMismatch, "data size does not match shape for " + name);
    entries[name] = {t.dtype, t.shape};
  }
  ArchiveWriter w(path, plan_layout(entries, metadata));
  for (const auto& [name, t] : archive) w.write(name, t.data);
  w.commit();
}

inline TensorArchive read_archive(const std::filesystem::path& path) { return ArchiveReader(path).read_all(); }

}  // namespace crw
