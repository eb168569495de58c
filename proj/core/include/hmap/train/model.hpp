#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hmap/backbone/encoder.hpp"
#include "hmap/objective/decoder.hpp"
#include "hmap/train/config.hpp"

namespace hmap::train {

struct NamedParam {
  std::string name;
  Tensor tensor;
  bool decay = true;
};

/// Encoder plus whichever head the mode needs: the reconstruction decoder
/// for pretraining, or mean-pool + linear classifier for fine-tuning.
struct Model {
  backbone::Encoder encoder;
  std::optional<objective::Decoder> decoder;
  Tensor head_w, head_b;  // [D, K], [K]; undefined when pretraining

  static Model for_pretrain(const TrainConfig& config, Rng& rng);
  static Model for_finetune(const TrainConfig& config, Rng& rng);

  bool has_classifier() const { return head_w.defined(); }
  /// Names: "encoder.*", "decoder.*", "head.weight", "head.bias".
  void visit(const ParamVisitor& visitor);
  std::vector<NamedParam> parameters();

  /// tokens [B, L, P] -> logits [B, K]. Nothing is masked.
  Tensor classify(const Tensor& tokens) const;
};

}  // namespace hmap::train
