#include "hmap/train/model.hpp"

#include "hmap/errors.hpp"
#include "hmap/numerics/init.hpp"
#include "hmap/numerics/ops.hpp"

namespace hmap::train {

Model Model::for_pretrain(const TrainConfig& config, Rng& rng) {
  validate(config);
  Model m;
  m.encoder = backbone::Encoder::init(encoder_config(config), rng);
  m.decoder = objective::Decoder::init(decoder_config(config), rng);
  return m;
}

Model Model::for_finetune(const TrainConfig& config, Rng& rng) {
  validate(config);
  Model m;
  m.encoder = backbone::Encoder::init(encoder_config(config), rng);
  m.head_w = init::normal({config.dim, config.num_classes}, 0.02, rng);
  m.head_b = init::constant({config.num_classes}, 0);
  return m;
}

void Model::visit(const ParamVisitor& visitor) {
  encoder.visit("encoder.", visitor);
  if (decoder) decoder->visit("decoder.", visitor);
  if (head_w.defined()) {
    visitor("head.weight", head_w, true);
    visitor("head.bias", head_b, false);
  }
}

std::vector<NamedParam> Model::parameters() {
  std::vector<NamedParam> out;
  visit([&](const std::string& name, Tensor& t, bool decay) { out.push_back({name, t, decay}); });
  return out;
}

Tensor Model::classify(const Tensor& tokens) const {
  if (!head_w.defined()) throw ContractError("classify: model has no classifier head");
  const Tensor features = encoder.forward(tokens, std::span<const std::uint8_t>{});
  return linear(mean_tokens(features), head_w, head_b);
}

}  // namespace hmap::train
