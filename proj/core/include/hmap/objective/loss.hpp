#pragma once

#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "hmap/backbone/encoder.hpp"
#include "hmap/data/token_grid.hpp"
#include "hmap/masking/mask_plan.hpp"
#include "hmap/masking/visibility.hpp"
#include "hmap/objective/decoder.hpp"

namespace hmap::objective {

/// Masked-token reconstruction error with a per-grid-row breakdown.
/// total_mse is the count-weighted mean of row_mse.
struct LossReport {
  double total_mse = 0.0;
  std::vector<double> row_mse;            // length M; 0 for rows without masked tokens
  std::vector<std::size_t> row_tokens;    // masked tokens per row
  std::size_t token_count = 0;
  bool empty_plan = false;                // no masked tokens: loss defined as 0

  /// Token-weighted merge of another report over the same grid.
  void accumulate(const LossReport& other);
};

struct MapLoss {
  Tensor loss;  // scalar, differentiable
  LossReport report;
};

/// Squared error over masked tokens only, averaged over masked tokens and
/// pixel dims. pred/target are [B, L, P] (or [L, P] with a single plan);
/// plans has one entry per batch item or a single shared plan.
MapLoss map_loss(const Tensor& pred, const Tensor& target, std::span<const masking::MaskPlan> plans);
MapLoss map_loss(const Tensor& pred, const data::ReconstructionTarget& target,
                 const masking::MaskPlan& plan);

/// A batch ready for the reconstruction objective.
struct ObjectiveBatch {
  Tensor tokens;   // [B, L, P] raw patch pixels (encoder input)
  Tensor targets;  // [B, L, P] normalized pixels
  std::vector<masking::MaskPlan> plans;
  std::vector<masking::VisibilityMatrix> vis;
};

/// encoder(masked tokens) -> decode(vis) -> map_loss.
MapLoss objective_loss(const backbone::Encoder& encoder, const Decoder& decoder,
                       const ObjectiveBatch& batch);

/// "step,total_mse,row_0,...,row_{M-1}"
std::string metrics_csv_header(std::size_t rows);
std::string metrics_csv_row(std::size_t step, const LossReport& report);

}  // namespace hmap::objective
