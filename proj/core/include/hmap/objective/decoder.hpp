#pragma once

#include <span>
#include <string>
#include <vector>

#include "hmap/backbone/blocks.hpp"
#include "hmap/masking/mask_plan.hpp"
#include "hmap/masking/visibility.hpp"

namespace hmap::objective {

struct DecoderConfig {
  std::size_t length = 64;     // L
  std::size_t enc_dim = 64;
  std::size_t dim = 64;
  std::size_t depth = 2;
  std::size_t heads = 2;
  std::size_t mlp_ratio = 2;
  std::size_t patch_dim = 16;  // prediction width
};

/// Transformer decoder whose self-attention is restricted by a visibility
/// matrix at every layer. Encoder features at all L positions are projected,
/// fresh positional embeddings are added, and a linear head predicts the
/// normalized pixels of every token.
struct Decoder {
  DecoderConfig config;
  Tensor embed_w, embed_b;  // [De, Dd], [Dd]
  Tensor pos_embed;         // [L, Dd]
  std::vector<backbone::AttnBlock> blocks;
  Tensor norm_gamma, norm_beta;
  Tensor head_w, head_b;    // [Dd, P], [P]

  static Decoder init(const DecoderConfig& config, Rng& rng);

  /// enc: [B, Lp, De] with Lp <= L (a prefix uses the first Lp positional
  /// embeddings). vis rows/cols must equal Lp. Returns [B, Lp, P].
  Tensor forward(const Tensor& enc, const BoolMask& vis) const;

  void visit(const std::string& prefix, const ParamVisitor& visitor);
};

/// Decodes one visibility matrix per batch item. Throws ContractError when a
/// plan or matrix does not match the encoder output.
Tensor decode(const Decoder& decoder, const Tensor& enc, std::span<const masking::MaskPlan> plans,
              std::span<const masking::VisibilityMatrix> vis);

/// Single plan/matrix shared across the batch.
Tensor decode(const Decoder& decoder, const Tensor& enc, const masking::MaskPlan& plan,
              const masking::VisibilityMatrix& vis);

}  // namespace hmap::objective
