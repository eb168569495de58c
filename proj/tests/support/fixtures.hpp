#pragma once

#include <string>
#include <utility>
#include <vector>

#include "gradcheck.hpp"
#include "hmap/backbone/encoder.hpp"
#include "hmap/masking/mask_plan.hpp"
#include "hmap/numerics/init.hpp"
#include "hmap/objective/decoder.hpp"
#include "hmap/rng.hpp"
#include "hmap/train/config.hpp"

namespace hmap::testing {

inline backbone::EncoderConfig tiny_encoder_config(std::size_t rows, std::size_t cols,
                                                   const std::string& pattern = "MT",
                                                   std::size_t patch_dim = 4, std::size_t dim = 8) {
  backbone::EncoderConfig c;
  c.grid_rows = rows;
  c.grid_cols = cols;
  c.patch_dim = patch_dim;
  c.dim = dim;
  c.d_state = 4;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.pattern = backbone::parse_pattern(pattern);
  return c;
}

inline objective::DecoderConfig tiny_decoder_config(const backbone::EncoderConfig& enc,
                                                    std::size_t dim = 8, std::size_t depth = 1) {
  objective::DecoderConfig c;
  c.length = enc.length();
  c.enc_dim = enc.dim;
  c.dim = dim;
  c.depth = depth;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.patch_dim = enc.patch_dim;
  return c;
}

struct TinyModel {
  backbone::Encoder encoder;
  objective::Decoder decoder;
};

// The mask token and positional embeddings start near zero in training, which
// feeds nearly constant vectors into the first layer norm; redraw them at unit
// scale so finite differences probe a well-conditioned point.
inline void spread_embeddings(backbone::Encoder& enc, Rng& rng) {
  for (Tensor* t : {&enc.mask_token, &enc.pos_embed}) {
    for (auto& x : t->mutable_data()) x = static_cast<real>(0.5 * rng.normal());
  }
}

inline TinyModel tiny_model(std::uint64_t seed, std::size_t rows, std::size_t cols,
                            const std::string& pattern = "MT", std::size_t decoder_depth = 1) {
  Rng rng(seed);
  const auto ec = tiny_encoder_config(rows, cols, pattern);
  TinyModel m{backbone::Encoder::init(ec, rng),
              objective::Decoder::init(tiny_decoder_config(ec, 8, decoder_depth), rng)};
  spread_embeddings(m.encoder, rng);
  return m;
}

inline NamedLeaves leaves_of(backbone::Encoder* enc, objective::Decoder* dec) {
  NamedLeaves out;
  ParamVisitor v = [&](const std::string& name, Tensor& t, bool) { out.emplace_back(name, t); };
  if (enc) enc->visit("encoder.", v);
  if (dec) dec->visit("decoder.", v);
  return out;
}

// Pixels in [0, 1].
inline Tensor random_pixels(Shape shape, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& x : t.mutable_data()) x = static_cast<real>(rng.uniform());
  return t;
}

inline Tensor random_normal(Shape shape, Rng& rng, bool requires_grad = false) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (auto& x : t.mutable_data()) x = static_cast<real>(rng.normal());
  return t;
}

// Every token masked independently with probability p.
inline masking::MaskPlan bernoulli_plan(std::size_t rows, std::size_t cols, double p, Rng& rng) {
  std::vector<std::uint8_t> flags(rows * cols);
  for (auto& f : flags) f = rng.uniform() < p ? 1 : 0;
  return masking::plan_from_flags(rows, cols, flags);
}

// 16x16 images, 4x4 grid, a few blocks: fast enough for multi-run contracts.
inline train::TrainConfig tiny_train_config() {
  train::TrainConfig c;
  c.pattern = "MTM";
  c.image_size = 16;
  c.patch_size = 4;
  c.dim = 16;
  c.d_state = 4;
  c.heads = 2;
  c.decoder_depth = 1;
  c.decoder_dim = 16;
  c.decoder_heads = 2;
  c.epochs = 2;
  c.batch_size = 16;
  c.num_samples = 48;
  c.threads = 1;
  return c;
}

}  // namespace hmap::testing
