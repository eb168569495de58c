#include "hmap/objective/decoder.hpp"

#include "hmap/errors.hpp"

namespace hmap::objective {

Decoder Decoder::init(const DecoderConfig& config, Rng& rng) {
  if (config.depth == 0) throw ContractError("decoder depth must be at least 1");
  Decoder d;
  d.config = config;
  d.embed_w = init::xavier(config.enc_dim, config.dim, rng);
  d.embed_b = init::constant({config.dim}, real(0));
  d.pos_embed = init::normal({config.length, config.dim}, 0.02, rng);
  const backbone::AttnConfig attn{config.dim, config.heads, config.mlp_ratio};
  for (std::size_t i = 0; i < config.depth; ++i) d.blocks.push_back(backbone::AttnBlock::init(attn, rng));
  d.norm_gamma = init::constant({config.dim}, real(1));
  d.norm_beta = init::constant({config.dim}, real(0));
  d.head_w = init::xavier(config.dim, config.patch_dim, rng);
  d.head_b = init::constant({config.patch_dim}, real(0));
  return d;
}

Tensor Decoder::forward(const Tensor& enc, const BoolMask& vis) const {
  if (enc.ndim() != 3 || enc.dim(2) != config.enc_dim || enc.dim(1) > config.length) {
    throw ContractError("decoder expects [B,<=" + std::to_string(config.length) + "," +
                        std::to_string(config.enc_dim) + "], got " + shape_str(enc.shape()));
  }
  const std::size_t len = enc.dim(1);
  if (!vis.empty() && (vis.rows != len || vis.cols != len)) {
    throw ContractError("visibility matrix is " + std::to_string(vis.rows) + "x" +
                        std::to_string(vis.cols) + " but the sequence has " + std::to_string(len) +
                        " tokens");
  }
  const Tensor pos = len == config.length ? pos_embed : slice_rows(pos_embed, 0, len);
  Tensor x = add_batch_broadcast(linear(enc, embed_w, embed_b), pos);
  for (const auto& block : blocks) x = block.forward(x, vis);
  x = layer_norm(x, norm_gamma, norm_beta);
  return linear(x, head_w, head_b);
}

void Decoder::visit(const std::string& prefix, const ParamVisitor& visitor) {
  visitor(prefix + "embed.weight", embed_w, true);
  visitor(prefix + "embed.bias", embed_b, false);
  visitor(prefix + "pos_embed", pos_embed, false);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    blocks[i].visit(prefix + "blocks." + std::to_string(i) + ".", visitor);
  }
  visitor(prefix + "norm.gamma", norm_gamma, false);
  visitor(prefix + "norm.beta", norm_beta, false);
  visitor(prefix + "head.weight", head_w, true);
  visitor(prefix + "head.bias", head_b, false);
}

Tensor decode(const Decoder& decoder, const Tensor& enc, std::span<const masking::MaskPlan> plans,
              std::span<const masking::VisibilityMatrix> vis) {
  if (enc.ndim() != 3) throw ContractError("decode expects [B,L,D] encoder features");
  const std::size_t batch = enc.dim(0), len = enc.dim(1);
  if (vis.size() != batch && vis.size() != 1) {
    throw ContractError("decode: " + std::to_string(vis.size()) + " visibility matrices for batch " +
                        std::to_string(batch));
  }
  if (plans.size() != vis.size()) throw ContractError("decode: plans and matrices differ in count");
  for (std::size_t i = 0; i < vis.size(); ++i) {
    if (vis[i].length != len || plans[i].length() != len) {
      throw ContractError("decode: plan/visibility length " + std::to_string(plans[i].length()) +
                          "/" + std::to_string(vis[i].length) + " does not match " +
                          std::to_string(len) + " encoder tokens");
    }
  }
  return decoder.forward(enc, masking::to_bool_mask(vis));
}

Tensor decode(const Decoder& decoder, const Tensor& enc, const masking::MaskPlan& plan,
              const masking::VisibilityMatrix& vis) {
  return decode(decoder, enc, std::span<const masking::MaskPlan>(&plan, 1),
                std::span<const masking::VisibilityMatrix>(&vis, 1));
}

}  // namespace hmap::objective
