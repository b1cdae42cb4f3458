#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sma/backbone.hpp"

namespace sma {

/// Binary layout, little-endian:
///   "SMACKPT\0", u32 version, u64 config digest, u32 record count,
///   then per record: u32 name length, name bytes, u8 trainable, u32 rank,
///   rank x u64 dims, numel x f64 values.
struct CheckpointRecord {
  std::string name;
  bool trainable = true;
  Shape shape;
  std::vector<double> values;
  bool operator==(const CheckpointRecord&) const = default;
};

struct Checkpoint {
  std::uint64_t digest = 0;
  std::vector<CheckpointRecord> records;
  bool operator==(const Checkpoint&) const = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const Checkpoint& ckpt);
/// Throws DataError on bad magic, unknown version or truncation.
Checkpoint decode_checkpoint(const std::string& bytes);

Checkpoint snapshot(const ParamStore& store, std::uint64_t digest);
/// Copies values into the store by name. Every store entry must be present
/// with the same shape and the digest must match.
void restore(ParamStore& store, const Checkpoint& ckpt, std::uint64_t expected_digest);

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store, std::uint64_t digest);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sma
