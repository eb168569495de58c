#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "hmap/backbone/blocks.hpp"
#include "hmap/backbone/pattern.hpp"
#include "hmap/backbone/scan_order.hpp"
#include "hmap/masking/mask_plan.hpp"

namespace hmap::backbone {

struct EncoderConfig {
  std::size_t grid_rows = 8;
  std::size_t grid_cols = 8;
  std::size_t patch_dim = 16;
  std::size_t dim = 64;
  std::size_t d_state = 8;
  std::size_t expand = 1;
  std::size_t conv_kernel = 0;
  std::size_t heads = 2;
  std::size_t mlp_ratio = 2;
  BackbonePattern pattern = parse_pattern("MMMTMMMT");
  ScanKind scan = ScanKind::row_first;

  std::size_t length() const { return grid_rows * grid_cols; }
};

using Block = std::variant<SsmBlock, AttnBlock>;

/// Hybrid encoder over a masked token grid.
///
/// Patch tokens are embedded, masked positions are overwritten with a shared
/// learned mask token (the sequence keeps all L positions), learned absolute
/// positional embeddings are added once, and the blocks run in pattern order.
/// M blocks scan in the configured order; T blocks see every token.
struct Encoder {
  EncoderConfig config;
  ScanOrder order;
  Tensor patch_w, patch_b;  // [P, D], [D]
  Tensor mask_token;        // [D]
  Tensor pos_embed;         // [L, D]
  std::vector<Block> blocks;
  Tensor norm_gamma, norm_beta;

  static Encoder init(const EncoderConfig& config, Rng& rng);

  /// tokens: [B, L, P]. masked: one flag per (batch item, token); empty means
  /// nothing is masked. Returns [B, L, D].
  Tensor forward(const Tensor& tokens, std::span<const std::uint8_t> masked) const;
  /// Single plan applied to every batch item.
  Tensor forward(const Tensor& tokens, const masking::MaskPlan& plan) const;

  void visit(const std::string& prefix, const ParamVisitor& visitor);
};

}  // namespace hmap::backbone
