// SPDX-License-Identifier: Apache-2.0
//
// Flat binary tensor files. Layout: 16-byte header (magic "BMDS",
// format version u32, rank u32, reserved u32) followed by `rank` u64
// dimension sizes, then the row-major payload, little-endian.

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace beamdapt {

struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr char kTensorMagic[4] = {'B', 'M', 'D', 'S'};
inline constexpr std::uint32_t kTensorFormatVersion = 1;

// FNV-1a over raw bytes, used as the file digest in manifests.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename Scalar>
void write_tensor(std::ostream& os, const std::vector<std::uint64_t>& dims,
                  const std::vector<Scalar>& data) {
  std::uint64_t count = 1;
  for (auto d : dims) count *= d;
  if (count != data.size())
    throw std::invalid_argument("write_tensor: dims do not match data size");
  os.write(kTensorMagic, 4);
  std::uint32_t version = kTensorFormatVersion;
  std::uint32_t rank = static_cast<std::uint32_t>(dims.size());
  std::uint32_t reserved = 0;
  os.write(reinterpret_cast<const char*>(&version), 4);
  os.write(reinterpret_cast<const char*>(&rank), 4);
  os.write(reinterpret_cast<const char*>(&reserved), 4);
  for (std::uint64_t d : dims) os.write(reinterpret_cast<const char*>(&d), 8);
  os.write(reinterpret_cast<const char*>(data.data()),
           static_cast<std::streamsize>(sizeof(Scalar) * data.size()));
  if (!os) throw IntegrityError("write_tensor: stream write failed");
}

template <typename Scalar>
void read_tensor(std::istream& is, std::vector<std::uint64_t>& dims,
                 std::vector<Scalar>& data) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kTensorMagic, 4) != 0)
    throw IntegrityError("read_tensor: bad magic");
  std::uint32_t version = 0, rank = 0, reserved = 0;
  is.read(reinterpret_cast<char*>(&version), 4);
  is.read(reinterpret_cast<char*>(&rank), 4);
  is.read(reinterpret_cast<char*>(&reserved), 4);
  if (!is || version != kTensorFormatVersion)
    throw IntegrityError("read_tensor: unsupported format version");
  if (rank > 8) throw IntegrityError("read_tensor: implausible rank");
  dims.resize(rank);
  std::uint64_t count = 1;
  for (auto& d : dims) {
    is.read(reinterpret_cast<char*>(&d), 8);
    count *= d;
  }
  if (!is) throw IntegrityError("read_tensor: truncated header");
  data.resize(count);
  is.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(sizeof(Scalar) * count));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(Scalar) * count))
    throw IntegrityError("read_tensor: truncated payload");
}

template <typename Scalar>
void save_tensor_file(const std::string& path,
                      const std::vector<std::uint64_t>& dims,
                      const std::vector<Scalar>& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IntegrityError("cannot open for write: " + path);
  write_tensor(os, dims, data);
}

template <typename Scalar>
void load_tensor_file(const std::string& path,
                      std::vector<std::uint64_t>& dims,
                      std::vector<Scalar>& data) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IntegrityError("cannot open for read: " + path);
  read_tensor(is, dims, data);
  // Trailing garbage counts as corruption.
  char extra;
  if (is.read(&extra, 1))
    throw IntegrityError("load_tensor_file: trailing bytes in " + path);
}

inline std::uint64_t file_digest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IntegrityError("cannot open for digest: " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    h = fnv1a(buf, static_cast<std::size_t>(is.gcount()), h);
    if (!is) break;
  }
  return h;
}

}  // namespace beamdapt
