#pragma once

// Flat binary container of named float tensors plus string attributes.
//
// Layout (all integers little-endian):
//   "TEBT" | u32 version | u32 n_attrs | n_attrs x (str key, str value)
//   | u32 n_tensors | n_tensors x (str name, u32 rank, rank x u64 dim, f32 data...)
// where str = u32 length + bytes.

#include <map>
#include <string>

#include "teb/tensor.hpp"

namespace teb {

struct Archive {
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, std::string> attrs;
  std::map<std::string, Tensor<float>> tensors;

  const Tensor<float>& at(const std::string& name) const;
  const std::string& attr(const std::string& key) const;

  std::string to_bytes() const;
  static Archive from_bytes(const std::string& bytes);

  void save(const std::string& path) const;
  static Archive load(const std::string& path);
};

/// CRC-32 of a file's bytes, as 8 lowercase hex digits.
std::string file_crc32(const std::string& path);

}  // namespace teb
