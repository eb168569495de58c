#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hmap/numerics/tensor.hpp"
#include "hmap/rng.hpp"

namespace hmap::train {

// Layout (little-endian):
//   "MAPCKPT1" | version u32 = 1 | config JSON length u32 + bytes |
//   tensor_count u32 | per tensor: name_len u16, name, ndim u8, dims u64 x ndim,
//   dtype u8 (0 = f32, 1 = f64), raw data |
//   optimizer section with the same tensor encoding |
//   step u64 | RNG state 32 bytes
inline constexpr char kCheckpointMagic[8] = {'M', 'A', 'P', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<real> data;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string config_json;
  std::vector<NamedTensor> params;
  std::vector<NamedTensor> optimizer;
  std::uint64_t step = 0;
  Rng::State rng{};
  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// Throws IoError on any write failure.
void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
/// Throws IoError on a missing file, bad magic, unknown version or truncation.
Checkpoint load_checkpoint(const std::string& path);

std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::string& bytes);

}  // namespace hmap::train
