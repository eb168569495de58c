#pragma once

#include <cstddef>
#include <vector>

#include "hmap/backbone/scan_order.hpp"
#include "hmap/objective/loss.hpp"

namespace hmap::objective {

/// AR pretraining as a special case of the reconstruction pipeline: the last
/// `masked_tokens` tokens in `ar_order` are hidden and predicted under a
/// token-causal decoder mask in the same order.
struct PilotSetup {
  backbone::ScanKind ar_order = backbone::ScanKind::row_first;
  std::size_t masked_tokens = 1;
};

masking::MaskPlan pilot_plan(std::size_t rows, std::size_t cols, const PilotSetup& setup);
masking::VisibilityMatrix pilot_visibility(const masking::MaskPlan& plan, const PilotSetup& setup);

/// Keys query q is conditioned on (allowed keys other than q itself), ascending.
std::vector<std::size_t> conditioning_set(const masking::VisibilityMatrix& vis, std::size_t q);

/// tokens/targets: [B, L, P].
MapLoss pilot_ar_objective(const backbone::Encoder& encoder, const Decoder& decoder,
                           const Tensor& tokens, const Tensor& targets, const PilotSetup& setup);

}  // namespace hmap::objective
