#include "hmap/masking/mask_plan.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hmap/errors.hpp"

namespace hmap::masking {

std::string_view to_string(MaskStrategy strategy) {
  switch (strategy) {
    case MaskStrategy::random: return "random";
    case MaskStrategy::sequential: return "sequential";
    case MaskStrategy::diagonal: return "diagonal";
    case MaskStrategy::suffix: return "suffix";
  }
  return "random";
}

MaskStrategy parse_mask_strategy(std::string_view text) {
  if (text == "random") return MaskStrategy::random;
  if (text == "sequential") return MaskStrategy::sequential;
  if (text == "diagonal") return MaskStrategy::diagonal;
  if (text == "suffix") return MaskStrategy::suffix;
  throw ParseError("unknown mask strategy '" + std::string(text) +
                   "' (expected random, sequential, diagonal or suffix)");
}

std::size_t MaskPlan::total() const {
  std::size_t n = 0;
  for (const auto& row : masked) n += row.size();
  return n;
}

bool MaskPlan::is_masked(std::size_t token) const {
  const auto& row = masked[token / cols];
  return std::binary_search(row.begin(), row.end(), token % cols);
}

std::vector<std::uint8_t> MaskPlan::flags() const {
  std::vector<std::uint8_t> out(length(), 0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (auto j : masked[i]) out[i * cols + j] = 1;
  }
  return out;
}

std::size_t masked_count(std::size_t cells, double ratio) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(cells) + 0.5));
}

namespace {

MaskPlan empty_plan(std::size_t rows, std::size_t cols) {
  MaskPlan plan;
  plan.rows = rows;
  plan.cols = cols;
  plan.masked.assign(rows, {});
  return plan;
}

void mark(MaskPlan& plan, std::size_t token) { plan.masked[token / plan.cols].push_back(token % plan.cols); }

void sort_rows(MaskPlan& plan) {
  for (auto& row : plan.masked) std::sort(row.begin(), row.end());
}

}  // namespace

MaskPlan build_mask_plan(std::size_t rows, std::size_t cols, double ratio, MaskStrategy strategy,
                         std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) {
    throw ContractError("mask ratio must lie in [0, 1], got " + std::to_string(ratio));
  }
  if (rows == 0 || cols == 0) throw ContractError("mask plan needs a non-empty grid");
  MaskPlan plan = empty_plan(rows, cols);
  plan.ratio = ratio;
  plan.strategy = strategy;
  plan.seed = seed;
  const std::size_t cells = rows * cols;
  const std::size_t quota = masked_count(cells, ratio);

  switch (strategy) {
    case MaskStrategy::random: {
      // Partial Fisher-Yates: the first `quota` slots form the sample.
      std::vector<std::size_t> pool(cells);
      std::iota(pool.begin(), pool.end(), std::size_t{0});
      Rng rng(seed);
      for (std::size_t k = 0; k < quota; ++k) {
        const std::size_t pick = k + static_cast<std::size_t>(rng.below(cells - k));
        std::swap(pool[k], pool[pick]);
        mark(plan, pool[k]);
      }
      break;
    }
    case MaskStrategy::sequential: {
      // quota / M suffix columns per row; the remainder goes one extra to the top rows.
      const std::size_t base = quota / rows;
      const std::size_t extra = quota % rows;
      for (std::size_t i = 0; i < rows; ++i) {
        const std::size_t take = base + (i < extra ? 1 : 0);
        for (std::size_t j = cols - take; j < cols; ++j) plan.masked[i].push_back(j);
      }
      break;
    }
    case MaskStrategy::diagonal: {
      // Offsets 0, 2, 4, ... then 1, 3, 5, ... so half-coverage gives alternating stripes.
      std::vector<std::size_t> offsets;
      for (std::size_t d = 0; d < cols; d += 2) offsets.push_back(d);
      for (std::size_t d = 1; d < cols; d += 2) offsets.push_back(d);
      std::size_t left = quota;
      for (std::size_t d : offsets) {
        for (std::size_t i = 0; i < rows && left > 0; ++i, --left) {
          mark(plan, i * cols + (i + d) % cols);
        }
        if (left == 0) break;
      }
      break;
    }
    case MaskStrategy::suffix: {
      const auto order = backbone::ScanOrder::make(backbone::ScanKind::row_first, rows, cols);
      plan = build_suffix_plan(rows, cols, quota, order);
      plan.ratio = ratio;
      plan.seed = seed;
      return plan;
    }
  }
  sort_rows(plan);
  return plan;
}

MaskPlan build_suffix_plan(std::size_t rows, std::size_t cols, std::size_t count,
                           const backbone::ScanOrder& order) {
  if (order.rows != rows || order.cols != cols) {
    throw DimensionError("suffix plan: scan order grid does not match");
  }
  const std::size_t cells = rows * cols;
  if (count > cells) throw ContractError("suffix plan: more masked tokens than cells");
  MaskPlan plan = empty_plan(rows, cols);
  plan.strategy = MaskStrategy::suffix;
  plan.ratio = static_cast<double>(count) / static_cast<double>(cells);
  for (std::size_t t = cells - count; t < cells; ++t) mark(plan, order.perm[t]);
  sort_rows(plan);
  return plan;
}

MaskPlan plan_from_flags(std::size_t rows, std::size_t cols, std::span<const std::uint8_t> flags) {
  if (flags.size() != rows * cols) throw DimensionError("plan_from_flags: wrong flag count");
  MaskPlan plan = empty_plan(rows, cols);
  for (std::size_t t = 0; t < flags.size(); ++t) {
    if (flags[t]) mark(plan, t);
  }
  plan.ratio = static_cast<double>(plan.total()) / static_cast<double>(flags.size());
  return plan;
}

}  // namespace hmap::masking
