#include "hmap/objective/loss.hpp"

#include <cstdio>

#include "hmap/errors.hpp"

namespace hmap::objective {

void LossReport::accumulate(const LossReport& other) {
  if (row_mse.empty()) {
    row_mse.assign(other.row_mse.size(), 0.0);
    row_tokens.assign(other.row_tokens.size(), 0);
  }
  if (other.row_mse.size() != row_mse.size()) throw ContractError("LossReport: grid rows differ");
  for (std::size_t r = 0; r < row_mse.size(); ++r) {
    const std::size_t n = row_tokens[r] + other.row_tokens[r];
    if (n) {
      row_mse[r] = (row_mse[r] * static_cast<double>(row_tokens[r]) +
                    other.row_mse[r] * static_cast<double>(other.row_tokens[r])) /
                   static_cast<double>(n);
    }
    row_tokens[r] = n;
  }
  const std::size_t total = token_count + other.token_count;
  if (total) {
    total_mse = (total_mse * static_cast<double>(token_count) +
                 other.total_mse * static_cast<double>(other.token_count)) /
                static_cast<double>(total);
  }
  token_count = total;
  empty_plan = token_count == 0;
}

MapLoss map_loss(const Tensor& pred, const Tensor& target, std::span<const masking::MaskPlan> plans) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("map_loss: prediction " + shape_str(pred.shape()) + " vs target " +
                         shape_str(target.shape()));
  }
  if (plans.empty()) throw ContractError("map_loss: no mask plan");
  const bool batched = pred.ndim() == 3;
  const std::size_t batch = batched ? pred.dim(0) : 1;
  const std::size_t len = pred.dim(batched ? 1 : 0);
  const std::size_t dim = pred.shape().back();
  if (plans.size() != batch && plans.size() != 1) {
    throw ContractError("map_loss: " + std::to_string(plans.size()) + " plans for batch " +
                        std::to_string(batch));
  }
  const std::size_t rows = plans[0].rows;
  std::vector<std::uint8_t> select;
  select.reserve(batch * len);
  for (std::size_t n = 0; n < batch; ++n) {
    const auto& plan = plans[plans.size() == 1 ? 0 : n];
    if (plan.length() != len || plan.rows != rows) {
      throw ContractError("map_loss: plan grid does not match predictions");
    }
    const auto f = plan.flags();
    select.insert(select.end(), f.begin(), f.end());
  }

  MapLoss out;
  out.loss = masked_mse(pred, target, select);

  // Per-row breakdown straight from the values.
  LossReport& rep = out.report;
  rep.row_mse.assign(rows, 0.0);
  rep.row_tokens.assign(rows, 0);
  const std::size_t cols = len / rows;
  const auto p = pred.data();
  const auto t = target.data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t k = 0; k < len; ++k) {
      if (!select[n * len + k]) continue;
      const std::size_t r = k / cols;
      double acc = 0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double e = static_cast<double>(p[(n * len + k) * dim + j]) -
                         static_cast<double>(t[(n * len + k) * dim + j]);
        acc += e * e;
      }
      rep.row_mse[r] += acc / static_cast<double>(dim);
      rep.row_tokens[r] += 1;
    }
  }
  double sum = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    sum += rep.row_mse[r];
    rep.token_count += rep.row_tokens[r];
    if (rep.row_tokens[r]) rep.row_mse[r] /= static_cast<double>(rep.row_tokens[r]);
  }
  rep.empty_plan = rep.token_count == 0;
  rep.total_mse = rep.token_count ? sum / static_cast<double>(rep.token_count) : 0.0;
  return out;
}

MapLoss map_loss(const Tensor& pred, const data::ReconstructionTarget& target,
                 const masking::MaskPlan& plan) {
  return map_loss(pred, target.normalized, std::span<const masking::MaskPlan>(&plan, 1));
}

MapLoss objective_loss(const backbone::Encoder& encoder, const Decoder& decoder,
                       const ObjectiveBatch& batch) {
  const std::size_t b = batch.tokens.dim(0);
  const std::size_t len = batch.tokens.dim(1);
  std::vector<std::uint8_t> flags;
  flags.reserve(b * len);
  for (std::size_t n = 0; n < b; ++n) {
    const auto f = batch.plans[batch.plans.size() == 1 ? 0 : n].flags();
    flags.insert(flags.end(), f.begin(), f.end());
  }
  const Tensor enc = encoder.forward(batch.tokens, flags);
  const Tensor pred = decode(decoder, enc, batch.plans, batch.vis);
  return map_loss(pred, batch.targets, batch.plans);
}

std::string metrics_csv_header(std::size_t rows) {
  std::string out = "step,total_mse";
  for (std::size_t r = 0; r < rows; ++r) out += ",row_" + std::to_string(r);
  return out;
}

std::string metrics_csv_row(std::size_t step, const LossReport& report) {
  char buf[64];
  std::string out = std::to_string(step);
  std::snprintf(buf, sizeof(buf), ",%.9g", report.total_mse);
  out += buf;
  for (double v : report.row_mse) {
    std::snprintf(buf, sizeof(buf), ",%.9g", v);
    out += buf;
  }
  return out;
}

}  // namespace hmap::objective
