#include "hmap/objective/pilot.hpp"

#include "hmap/errors.hpp"

namespace hmap::objective {

masking::MaskPlan pilot_plan(std::size_t rows, std::size_t cols, const PilotSetup& setup) {
  const auto order = backbone::ScanOrder::make(setup.ar_order, rows, cols);
  return masking::build_suffix_plan(rows, cols, setup.masked_tokens, order);
}

masking::VisibilityMatrix pilot_visibility(const masking::MaskPlan& plan, const PilotSetup& setup) {
  masking::VisibilityOptions options;
  options.ar_order = setup.ar_order;
  return masking::build_visibility(plan, masking::DecoderMask::ar, options);
}

std::vector<std::size_t> conditioning_set(const masking::VisibilityMatrix& vis, std::size_t q) {
  if (q >= vis.length) throw ContractError("conditioning_set: query out of range");
  std::vector<std::size_t> keys;
  for (std::size_t k = 0; k < vis.length; ++k) {
    if (k != q && vis.allowed(q, k)) keys.push_back(k);
  }
  return keys;
}

MapLoss pilot_ar_objective(const backbone::Encoder& encoder, const Decoder& decoder,
                           const Tensor& tokens, const Tensor& targets, const PilotSetup& setup) {
  ObjectiveBatch batch;
  batch.tokens = tokens;
  batch.targets = targets;
  batch.plans = {pilot_plan(encoder.config.grid_rows, encoder.config.grid_cols, setup)};
  batch.vis = {pilot_visibility(batch.plans[0], setup)};
  return objective_loss(encoder, decoder, batch);
}

}  // namespace hmap::objective
