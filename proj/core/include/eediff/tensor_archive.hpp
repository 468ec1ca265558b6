#pragma once

#include "eediff/common.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace eediff {

// Binary container used for checkpoints and sample dumps.
//
//   magic      8 bytes  "EEDARCH1"
//   u64        header length, then that many bytes of JSON text
//   u64        tensor count
//   per tensor:
//     u32      name length, then the name bytes
//     u8       element type (1 = float64)
//     u32      rank, then rank x u64 dimensions
//     raw      little-endian values, row-major
//   trailer    8 bytes "EEDEND\0\0" followed by u64 FNV-1a hash of every
//              preceding byte
//
// All integers are little-endian.
inline constexpr int kArchiveFormatVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> values;

  static NamedTensor from_matrix(std::string name, const Matrix& m);
  Matrix to_matrix() const;
};

struct TensorArchive {
  nlohmann::json header = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
  const NamedTensor& at(const std::string& name) const;
};

// Writes to a sibling temporary file and renames it into place.
void write_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive read_archive(const std::filesystem::path& path);

}  // namespace eediff
