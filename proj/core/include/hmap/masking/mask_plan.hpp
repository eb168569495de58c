#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hmap/backbone/scan_order.hpp"
#include "hmap/rng.hpp"

namespace hmap::masking {

/// How masked positions are chosen.
///  - random:     uniform sample without replacement over all M*N positions
///  - sequential: raster suffix of every row
///  - diagonal:   wrapped diagonals (i, (i + d) mod N), even offsets d first
///  - suffix:     the last k tokens of a scan order (AR pilot objective)
enum class MaskStrategy { random, sequential, diagonal, suffix };

std::string_view to_string(MaskStrategy strategy);
MaskStrategy parse_mask_strategy(std::string_view text);

/// Positions hidden from the encoder, organised per grid row.
struct MaskPlan {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::vector<std::size_t>> masked;  // per row, sorted column indices
  double ratio = 0.0;
  MaskStrategy strategy = MaskStrategy::random;
  std::uint64_t seed = 0;

  std::size_t length() const { return rows * cols; }
  std::size_t total() const;
  bool is_masked(std::size_t token) const;
  /// One flag per token in row-major order.
  std::vector<std::uint8_t> flags() const;
};

/// round-half-up of ratio * cells.
std::size_t masked_count(std::size_t cells, double ratio);

/// Throws ContractError unless 0 <= ratio <= 1.
MaskPlan build_mask_plan(std::size_t rows, std::size_t cols, double ratio, MaskStrategy strategy,
                         std::uint64_t seed);

/// Masks the last `count` tokens visited by `order` (AR-style suffix prediction).
MaskPlan build_suffix_plan(std::size_t rows, std::size_t cols, std::size_t count,
                           const backbone::ScanOrder& order);

/// Plan from explicit per-token flags; ratio is the realised fraction.
MaskPlan plan_from_flags(std::size_t rows, std::size_t cols, std::span<const std::uint8_t> flags);

}  // namespace hmap::masking
