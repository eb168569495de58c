#include "hmap/masking/visibility.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>
#include <utility>

#include "hmap/errors.hpp"

namespace hmap::masking {

std::string_view to_string(DecoderMask mask) {
  switch (mask) {
    case DecoderMask::ar: return "ar";
    case DecoderMask::mae: return "mae";
    case DecoderMask::local_mae: return "local_mae";
    case DecoderMask::map: return "map";
  }
  return "map";
}

DecoderMask parse_decoder_mask(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "ar") return DecoderMask::ar;
  if (lower == "mae") return DecoderMask::mae;
  if (lower == "local_mae" || lower == "localmae") return DecoderMask::local_mae;
  if (lower == "map") return DecoderMask::map;
  throw ParseError("unknown decoder mask '" + std::string(text) +
                   "' (expected ar, mae, local_mae or map)");
}

VisibilityMatrix build_visibility(const MaskPlan& plan, DecoderMask strategy,
                                  const VisibilityOptions& options) {
  const std::size_t L = plan.length();
  const std::size_t N = plan.cols;
  VisibilityMatrix vis{L, strategy, std::vector<std::uint8_t>(L * L, 0)};
  switch (strategy) {
    case DecoderMask::mae:
      std::fill(vis.bits.begin(), vis.bits.end(), 1);
      break;
    case DecoderMask::local_mae:
      for (std::size_t q = 0; q < L; ++q) {
        const std::size_t row_start = (q / N) * N;
        std::fill_n(vis.bits.begin() + static_cast<std::ptrdiff_t>(q * L + row_start), N, 1);
      }
      break;
    case DecoderMask::ar: {
      const auto order = backbone::ScanOrder::make(options.ar_order, plan.rows, plan.cols);
      for (std::size_t q = 0; q < L; ++q) {
        for (std::size_t k = 0; k < L; ++k) {
          if (order.inverse[k] <= order.inverse[q]) vis.bits[q * L + k] = 1;
        }
      }
      break;
    }
    case DecoderMask::map: {
      const auto masked = plan.flags();
      for (std::size_t q = 0; q < L; ++q) {
        const std::size_t row_start = (q / N) * N;
        std::fill_n(vis.bits.begin() + static_cast<std::ptrdiff_t>(q * L), row_start, 1);
        for (std::size_t k = row_start; k < row_start + N; ++k) {
          if (!masked[k] || (k == q && options.self_visible)) vis.bits[q * L + k] = 1;
        }
      }
      break;
    }
  }
  return vis;
}

VisibilityMatrix oracle_visibility(const MaskPlan& plan, DecoderMask strategy,
                                   const VisibilityOptions& options) {
  using Cell = std::pair<std::size_t, std::size_t>;  // (grid row, grid column)
  const std::size_t M = plan.rows;
  const std::size_t N = plan.cols;
  const std::size_t L = M * N;

  // AR visiting sequence, enumerated directly from the order's definition.
  std::vector<Cell> sequence;
  if (options.ar_order == backbone::ScanKind::row_first) {
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < N; ++j) sequence.emplace_back(i, j);
  } else {
    for (std::size_t j = 0; j < N; ++j)
      for (std::size_t i = 0; i < M; ++i) sequence.emplace_back(i, j);
  }

  VisibilityMatrix vis{L, strategy, std::vector<std::uint8_t>(L * L, 0)};
  for (std::size_t qi = 0; qi < M; ++qi) {
    for (std::size_t qj = 0; qj < N; ++qj) {
      // Conditioning set of query (qi, qj) under each strategy.
      std::set<Cell> context;
      switch (strategy) {
        case DecoderMask::mae:
          for (std::size_t i = 0; i < M; ++i)
            for (std::size_t j = 0; j < N; ++j) context.emplace(i, j);
          break;
        case DecoderMask::local_mae:
          for (std::size_t j = 0; j < N; ++j) context.emplace(qi, j);
          break;
        case DecoderMask::ar:
          for (const Cell& c : sequence) {
            context.insert(c);
            if (c == Cell{qi, qj}) break;
          }
          break;
        case DecoderMask::map: {
          // r_{<i}
          for (std::size_t i = 0; i < qi; ++i)
            for (std::size_t j = 0; j < N; ++j) context.emplace(i, j);
          // x_{i, j not in M_i}
          const auto& hidden = plan.masked[qi];
          for (std::size_t j = 0; j < N; ++j) {
            if (std::find(hidden.begin(), hidden.end(), j) == hidden.end()) context.emplace(qi, j);
          }
          if (options.self_visible) context.emplace(qi, qj);
          break;
        }
      }
      const std::size_t q = qi * N + qj;
      for (std::size_t ki = 0; ki < M; ++ki) {
        for (std::size_t kj = 0; kj < N; ++kj) {
          vis.bits[q * L + ki * N + kj] = context.count(Cell{ki, kj}) ? 1 : 0;
        }
      }
    }
  }
  return vis;
}

BoolMask to_bool_mask(std::span<const VisibilityMatrix> matrices) {
  BoolMask mask;
  if (matrices.empty()) return mask;
  const std::size_t L = matrices.front().length;
  mask.count = matrices.size();
  mask.rows = L;
  mask.cols = L;
  mask.bits.reserve(matrices.size() * L * L);
  for (const auto& m : matrices) {
    if (m.length != L) throw DimensionError("to_bool_mask: matrices differ in length");
    mask.bits.insert(mask.bits.end(), m.bits.begin(), m.bits.end());
  }
  return mask;
}

VisibilityMatrix leading_block(const VisibilityMatrix& vis, std::size_t length) {
  if (length > vis.length) throw DimensionError("leading_block: larger than the matrix");
  VisibilityMatrix out{length, vis.strategy, std::vector<std::uint8_t>(length * length)};
  for (std::size_t q = 0; q < length; ++q) {
    std::copy_n(vis.bits.begin() + static_cast<std::ptrdiff_t>(q * vis.length), length,
                out.bits.begin() + static_cast<std::ptrdiff_t>(q * length));
  }
  return out;
}

std::string to_csv(const VisibilityMatrix& vis) {
  std::string out;
  out.reserve(vis.length * vis.length * 2);
  for (std::size_t q = 0; q < vis.length; ++q) {
    for (std::size_t k = 0; k < vis.length; ++k) {
      if (k) out += ',';
      out += vis.allowed(q, k) ? '1' : '0';
    }
    out += '\n';
  }
  return out;
}

std::string to_pbm(const VisibilityMatrix& vis) {
  std::ostringstream os;
  os << "P1\n# decoder mask " << to_string(vis.strategy) << "\n"
     << vis.length << ' ' << vis.length << '\n';
  for (std::size_t q = 0; q < vis.length; ++q) {
    for (std::size_t k = 0; k < vis.length; ++k) os << (k ? " " : "") << (vis.allowed(q, k) ? 1 : 0);
    os << '\n';
  }
  return os.str();
}

}  // namespace hmap::masking
