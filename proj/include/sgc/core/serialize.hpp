#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "sgc/core/rng.hpp"
#include "sgc/core/types.hpp"

namespace sgc {

// Single-file binary container: a fixed header followed by named blobs in
// write order. Layout (little-endian):
//   magic     8 bytes  "SGCBIN01"
//   version   u32
//   kind      u32      caller-defined (checkpoint, feature cache, ...)
//   count     u64      number of blobs
// then per blob:
//   name_len  u32, name bytes
//   dtype     u8       0=bytes 1=i64 4=f32 8=f64
//   rows,cols u64 u64
//   payload   rows*cols*size(dtype) bytes (bytes: rows=1, cols=byte count)
// Identical logical content always produces identical bytes.

namespace blob {

constexpr char kMagic[8] = {'S', 'G', 'C', 'B', 'I', 'N', '0', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kBytes = 0, kI64 = 1, kF32 = 4, kF64 = 8;

template <typename S>
constexpr std::uint8_t dtype_of() {
  if constexpr (std::is_same_v<S, float>) return kF32;
  else if constexpr (std::is_same_v<S, double>) return kF64;
  else return kI64;
}

}  // namespace blob

class BlobWriter {
 public:
  explicit BlobWriter(std::uint32_t kind) : kind_(kind) {}

  void add_bytes(const std::string& name, const std::string& data) {
    items_.push_back({name, blob::kBytes, 1, std::uint64_t(data.size()),
                      std::vector<char>(data.begin(), data.end())});
  }

  void add_i64(const std::string& name, std::int64_t v) {
    std::vector<char> raw(sizeof v);
    std::memcpy(raw.data(), &v, sizeof v);
    items_.push_back({name, blob::kI64, 1, 1, std::move(raw)});
  }

  template <typename S>
  void add_mat(const std::string& name, const Mat<S>& m) {
    std::vector<char> raw(sizeof(S) * std::size_t(m.size()));
    std::memcpy(raw.data(), m.data(), raw.size());
    items_.push_back({name, blob::dtype_of<S>(), std::uint64_t(m.rows()),
                      std::uint64_t(m.cols()), std::move(raw)});
  }

  void write(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os.write(blob::kMagic, 8);
    put(os, blob::kVersion);
    put(os, kind_);
    put(os, std::uint64_t(items_.size()));
    for (const auto& it : items_) {
      put(os, std::uint32_t(it.name.size()));
      os.write(it.name.data(), std::streamsize(it.name.size()));
      os.put(char(it.dtype));
      put(os, it.rows);
      put(os, it.cols);
      os.write(it.data.data(), std::streamsize(it.data.size()));
    }
    if (!os) throw std::runtime_error("write failed: " + path);
  }

 private:
  struct Item {
    std::string name;
    std::uint8_t dtype;
    std::uint64_t rows, cols;
    std::vector<char> data;
  };

  template <typename T>
  static void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
  }

  std::uint32_t kind_;
  std::vector<Item> items_;
};

class BlobReader {
 public:
  explicit BlobReader(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, blob::kMagic, 8) != 0)
      throw std::runtime_error("not a recognized binary container: " + path);
    const auto version = get<std::uint32_t>(is);
    if (version != blob::kVersion)
      throw std::runtime_error("unsupported container version in " + path);
    kind_ = get<std::uint32_t>(is);
    const auto count = get<std::uint64_t>(is);
    for (std::uint64_t i = 0; i < count; ++i) {
      const auto name_len = get<std::uint32_t>(is);
      std::string name(name_len, '\0');
      is.read(name.data(), name_len);
      Item it;
      it.dtype = std::uint8_t(is.get());
      it.rows = get<std::uint64_t>(is);
      it.cols = get<std::uint64_t>(is);
      std::size_t elem;
      switch (it.dtype) {
        case blob::kBytes: elem = 1; break;
        case blob::kI64: elem = 8; break;
        case blob::kF32: elem = 4; break;
        case blob::kF64: elem = 8; break;
        default: throw std::runtime_error("unknown blob dtype in " + path);
      }
      it.data.resize(std::size_t(it.rows) * std::size_t(it.cols) * elem);
      is.read(it.data.data(), std::streamsize(it.data.size()));
      if (!is) throw std::runtime_error("truncated container: " + path);
      items_[name] = std::move(it);
    }
  }

  std::uint32_t kind() const { return kind_; }
  bool has(const std::string& name) const { return items_.count(name) > 0; }

  std::string get_bytes(const std::string& name) const {
    const Item& it = find(name, blob::kBytes);
    return std::string(it.data.begin(), it.data.end());
  }

  std::int64_t get_i64(const std::string& name) const {
    const Item& it = find(name, blob::kI64);
    std::int64_t v;
    std::memcpy(&v, it.data.data(), sizeof v);
    return v;
  }

  template <typename S>
  Mat<S> get_mat(const std::string& name) const {
    const Item& it = find(name, blob::dtype_of<S>());
    Mat<S> m(Index(it.rows), Index(it.cols));
    std::memcpy(m.data(), it.data.data(), it.data.size());
    return m;
  }

  template <typename S>
  void load_into(const std::string& name, Mat<S>& m) const {
    const Item& it = find(name, blob::dtype_of<S>());
    check(Index(it.rows) == m.rows() && Index(it.cols) == m.cols(),
          "checkpoint blob shape mismatch for " + name);
    std::memcpy(m.data(), it.data.data(), it.data.size());
  }

 private:
  struct Item {
    std::uint8_t dtype;
    std::uint64_t rows, cols;
    std::vector<char> data;
  };

  template <typename T>
  static T get(std::istream& is) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
  }

  const Item& find(const std::string& name, std::uint8_t dtype) const {
    auto it = items_.find(name);
    if (it == items_.end())
      throw std::runtime_error("missing blob: " + name);
    if (it->second.dtype != dtype)
      throw std::runtime_error("blob dtype mismatch for " + name);
    return it->second;
  }

  std::uint32_t kind_;
  std::map<std::string, Item> items_;
};

constexpr std::uint32_t kKindCheckpoint = 1;
constexpr std::uint32_t kKindFeatureCache = 2;

inline std::uint64_t file_digest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[65536];
  while (is.read(buf, sizeof buf) || is.gcount() > 0)
    h = fnv1a64(buf, std::size_t(is.gcount()), h);
  return h;
}

}  // namespace sgc
