#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hmap/data/image.hpp"
#include "hmap/numerics/tensor.hpp"

namespace hmap::data {

struct PatchSize {
  std::size_t height = 4;
  std::size_t width = 4;
};

/// An image cut into an M x N grid of patches. Token (i, j) sits at row
/// i * N + j of `tokens` and holds the patch pixels channel-major, then
/// row-major within the patch.
struct TokenGrid {
  std::size_t rows = 0;      // M
  std::size_t cols = 0;      // N
  std::size_t channels = 0;
  PatchSize patch;
  std::size_t image_height = 0;
  std::size_t image_width = 0;
  Tensor tokens;             // [M*N, D]

  std::size_t length() const { return rows * cols; }
  std::size_t patch_dim() const { return channels * patch.height * patch.width; }
};

/// Throws TilingError when the image is not an exact multiple of the patch.
TokenGrid patchify(const Image& image, PatchSize patch);
Image unpatchify(const TokenGrid& grid);

/// Stacks the token rows of several equally sized images: [B, M*N, D].
Tensor patchify_batch(std::span<const Image> images, PatchSize patch);

/// Per-token standardized pixels used as the regression target.
struct ReconstructionTarget {
  Tensor normalized;         // [M*N, D]
  std::vector<real> mean;    // per token
  std::vector<real> std;     // per token, sqrt(var + eps)
};

inline constexpr double kTargetEps = 1e-6;

/// (x - mean) / sqrt(var + eps) per token, population variance. Requires D >= 2.
ReconstructionTarget make_targets(const TokenGrid& grid);
/// Same normalization applied to every token row of a [..., D] tensor.
Tensor normalize_tokens(const Tensor& tokens);
/// Inverse of make_targets using the stored statistics.
Tensor denormalize(const ReconstructionTarget& target);

}  // namespace hmap::data
