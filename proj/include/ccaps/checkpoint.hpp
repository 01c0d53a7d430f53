#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ccaps/tensor.hpp"

namespace ccaps {

/// One named tensor in a checkpoint container.
struct TensorRecord {
  std::string name;
  ad::Shape shape;
  std::vector<double> data;
};

/// Versioned binary container:
///   "CCAP" | u32 version | u32 meta count | (u32 len, key, u32 len, value)*
///   | u64 tensor count | (u32 len, name, u32 rank, u64 dims[rank], f64 data[])*
///   | u32 CRC32 of every preceding byte.
/// Integers and floats are little-endian.
struct CheckpointData {
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, std::string> meta;
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const;
};

std::string encode_checkpoint(const CheckpointData& data);
/// Throws ParseError on a bad magic, version, truncation or CRC mismatch.
CheckpointData decode_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::filesystem::path& path);

}  // namespace ccaps
