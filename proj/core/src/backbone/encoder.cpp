#include "hmap/backbone/encoder.hpp"

#include <algorithm>

#include "hmap/errors.hpp"

namespace hmap::backbone {

Encoder Encoder::init(const EncoderConfig& config, Rng& rng) {
  if (config.pattern.blocks.empty()) throw ContractError("encoder pattern is empty");
  Encoder enc;
  enc.config = config;
  enc.order = ScanOrder::make(config.scan, config.grid_rows, config.grid_cols);
  enc.patch_w = init::xavier(config.patch_dim, config.dim, rng);
  enc.patch_b = init::constant({config.dim}, real(0));
  enc.mask_token = init::normal({config.dim}, 0.02, rng);
  enc.pos_embed = init::normal({config.length(), config.dim}, 0.02, rng);
  const SsmConfig ssm{config.dim, config.d_state, config.expand, 0, config.conv_kernel};
  const AttnConfig attn{config.dim, config.heads, config.mlp_ratio};
  for (auto kind : config.pattern.blocks) {
    if (kind == BlockKind::mamba) {
      enc.blocks.emplace_back(SsmBlock::init(ssm, rng));
    } else {
      enc.blocks.emplace_back(AttnBlock::init(attn, rng));
    }
  }
  enc.norm_gamma = init::constant({config.dim}, real(1));
  enc.norm_beta = init::constant({config.dim}, real(0));
  return enc;
}

Tensor Encoder::forward(const Tensor& tokens, std::span<const std::uint8_t> masked) const {
  if (tokens.ndim() != 3 || tokens.dim(1) != config.length() || tokens.dim(2) != config.patch_dim) {
    throw ContractError("encoder expects tokens [B," + std::to_string(config.length()) + "," +
                        std::to_string(config.patch_dim) + "], got " + shape_str(tokens.shape()));
  }
  if (!masked.empty() && masked.size() != tokens.dim(0) * tokens.dim(1)) {
    throw ContractError("encoder mask has " + std::to_string(masked.size()) + " flags for " +
                        std::to_string(tokens.dim(0) * tokens.dim(1)) + " tokens");
  }
  Tensor x = linear(tokens, patch_w, patch_b);
  const bool any = std::any_of(masked.begin(), masked.end(), [](std::uint8_t f) { return f != 0; });
  if (any) x = replace_tokens(x, masked, mask_token);
  x = add_batch_broadcast(x, pos_embed);
  for (const auto& block : blocks) {
    if (const auto* ssm = std::get_if<SsmBlock>(&block)) {
      x = ssm->forward(x, order);
    } else {
      x = std::get<AttnBlock>(block).forward(x);
    }
  }
  return layer_norm(x, norm_gamma, norm_beta);
}

Tensor Encoder::forward(const Tensor& tokens, const masking::MaskPlan& plan) const {
  if (plan.rows != config.grid_rows || plan.cols != config.grid_cols) {
    throw ContractError("mask plan grid " + std::to_string(plan.rows) + "x" +
                        std::to_string(plan.cols) + " does not match encoder grid " +
                        std::to_string(config.grid_rows) + "x" + std::to_string(config.grid_cols));
  }
  if (tokens.ndim() != 3) throw ContractError("encoder expects [B,L,P] tokens");
  const auto one = plan.flags();
  std::vector<std::uint8_t> flags;
  flags.reserve(one.size() * tokens.dim(0));
  for (std::size_t n = 0; n < tokens.dim(0); ++n) flags.insert(flags.end(), one.begin(), one.end());
  return forward(tokens, flags);
}

void Encoder::visit(const std::string& prefix, const ParamVisitor& visitor) {
  visitor(prefix + "patch_embed.weight", patch_w, true);
  visitor(prefix + "patch_embed.bias", patch_b, false);
  visitor(prefix + "mask_token", mask_token, false);
  visitor(prefix + "pos_embed", pos_embed, false);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = prefix + "blocks." + std::to_string(i) + ".";
    std::visit([&](auto& b) { b.visit(p, visitor); }, blocks[i]);
  }
  visitor(prefix + "norm.gamma", norm_gamma, false);
  visitor(prefix + "norm.beta", norm_beta, false);
}

}  // namespace hmap::backbone
