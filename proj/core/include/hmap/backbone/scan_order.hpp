#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "hmap/numerics/tensor.hpp"

namespace hmap::backbone {

enum class ScanKind { row_first, column_first };

std::string_view to_string(ScanKind kind);
/// Accepts "row_first"/"row" and "column_first"/"col"/"column"; throws ParseError otherwise.
ScanKind parse_scan_kind(std::string_view text);

/// The order in which an M x N token grid is fed to a recurrence.
/// `perm[t]` is the grid token visited at scan step t; `inverse[token]` is
/// its scan step.
struct ScanOrder {
  ScanKind kind = ScanKind::row_first;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> perm;
  std::vector<std::size_t> inverse;

  static ScanOrder make(ScanKind kind, std::size_t rows, std::size_t cols);
  std::size_t length() const { return rows * cols; }
  bool is_identity() const;
};

/// Reorders token rows into scan order: out[t] = x[perm[t]]. x is [L,D] or [B,L,D].
Tensor apply_scan_order(const Tensor& x, const ScanOrder& order);
/// Inverse of apply_scan_order.
Tensor undo_scan_order(const Tensor& x, const ScanOrder& order);

}  // namespace hmap::backbone
