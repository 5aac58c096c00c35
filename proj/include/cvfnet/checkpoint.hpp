// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "cvfnet/error.hpp"
#include "cvfnet/nn.hpp"
#include "cvfnet/tensor.hpp"

namespace cvf {

// Weight checkpoint container. Layout (all integers little-endian):
//   magic "CVFW" | version u32 | records...
// Each record: name_len u32 | name bytes | rank u64 | dims u64[rank] |
// float32 payload. Records run until end of file.
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename U>
void write_le(std::ostream& os, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  os.write(buf, sizeof(U));
}

template <typename U>
U read_le(std::istream& is) {
  char buf[sizeof(U)];
  is.read(buf, sizeof(U));
  U v;
  std::memcpy(&v, buf, sizeof(U));
  return v;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const ParamList<T>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  os.write("CVFW", 4);
  detail::write_le<std::uint32_t>(os, kCheckpointVersion);
  for (const auto& [name, tensor] : params) {
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(tensor.rank()));
    for (std::size_t i = 0; i < tensor.rank(); ++i)
      detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(tensor.dim(i)));
    for (const T v : tensor.value())
      detail::write_le<float>(os, static_cast<float>(v));
  }
  if (!os) throw DataError("checkpoint write failed: " + path);
}

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

inline std::vector<CheckpointRecord> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "CVFW", 4) != 0)
    throw CheckpointError("bad checkpoint magic in " + path);
  const auto version = detail::read_le<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  std::vector<CheckpointRecord> records;
  while (true) {
    const auto name_len = detail::read_le<std::uint32_t>(is);
    if (is.eof()) break;
    if (!is) throw CheckpointError("truncated checkpoint: " + path);
    CheckpointRecord rec;
    rec.name.resize(name_len);
    is.read(rec.name.data(), name_len);
    const auto rank = detail::read_le<std::uint64_t>(is);
    if (rank > 8) throw CheckpointError("implausible tensor rank in " + path);
    std::size_t numel = 1;
    for (std::uint64_t i = 0; i < rank; ++i) {
      const auto d = detail::read_le<std::uint64_t>(is);
      rec.shape.push_back(static_cast<std::size_t>(d));
      numel *= static_cast<std::size_t>(d);
    }
    rec.data.resize(numel);
    is.read(reinterpret_cast<char*>(rec.data.data()),
            static_cast<std::streamsize>(numel * sizeof(float)));
    if (!is) throw CheckpointError("truncated checkpoint record '" + rec.name + "'");
    records.push_back(std::move(rec));
  }
  return records;
}

// Loads records into matching named parameters; every parameter must be
// covered with identical shape and no record may be left over.
template <typename T>
void load_checkpoint(const std::string& path, ParamList<T>& params) {
  auto records = read_checkpoint(path);
  std::vector<bool> used(records.size(), false);
  for (auto& [name, tensor] : params) {
    bool found = false;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (used[i] || records[i].name != name) continue;
      if (records[i].shape != tensor.shape())
        throw CheckpointError("parameter '" + name + "' has shape " +
                              shape_str(tensor.shape()) + " but checkpoint stores " +
                              shape_str(records[i].shape));
      auto dst = tensor.value();
      for (std::size_t q = 0; q < dst.size(); ++q)
        dst[q] = static_cast<T>(records[i].data[q]);
      used[i] = true;
      found = true;
      break;
    }
    if (!found) throw CheckpointError("checkpoint is missing parameter '" + name + "'");
  }
  for (std::size_t i = 0; i < records.size(); ++i)
    if (!used[i])
      throw CheckpointError("checkpoint has unexpected parameter '" + records[i].name +
                            "'");
}

}  // namespace cvf
