#include "hmap/backbone/scan_order.hpp"

#include "hmap/errors.hpp"
#include "hmap/numerics/ops.hpp"

namespace hmap::backbone {

std::string_view to_string(ScanKind kind) {
  return kind == ScanKind::row_first ? "row_first" : "column_first";
}

ScanKind parse_scan_kind(std::string_view text) {
  if (text == "row_first" || text == "row") return ScanKind::row_first;
  if (text == "column_first" || text == "col" || text == "column") return ScanKind::column_first;
  throw ParseError("unknown scan order '" + std::string(text) +
                   "' (expected row_first or column_first)");
}

ScanOrder ScanOrder::make(ScanKind kind, std::size_t rows, std::size_t cols) {
  ScanOrder order;
  order.kind = kind;
  order.rows = rows;
  order.cols = cols;
  const std::size_t len = rows * cols;
  order.perm.resize(len);
  order.inverse.resize(len);
  for (std::size_t t = 0; t < len; ++t) {
    // column_first walks down each column: t = j * rows + i visits token i * cols + j.
    order.perm[t] = kind == ScanKind::row_first ? t : (t % rows) * cols + t / rows;
  }
  for (std::size_t t = 0; t < len; ++t) order.inverse[order.perm[t]] = t;
  return order;
}

bool ScanOrder::is_identity() const {
  for (std::size_t t = 0; t < perm.size(); ++t) {
    if (perm[t] != t) return false;
  }
  return true;
}

namespace {

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm, std::size_t len) {
  if (x.ndim() == 2) {
    if (x.dim(0) != len) throw DimensionError("scan order length does not match tokens");
    return permute_tokens(x.reshape({1, x.dim(0), x.dim(1)}), perm).reshape(x.shape());
  }
  if (x.ndim() != 3 || x.dim(1) != len) {
    throw DimensionError("scan order of length " + std::to_string(len) + " applied to " +
                         shape_str(x.shape()));
  }
  return permute_tokens(x, perm);
}

}  // namespace

Tensor apply_scan_order(const Tensor& x, const ScanOrder& order) {
  return permute(x, order.perm, order.length());
}

Tensor undo_scan_order(const Tensor& x, const ScanOrder& order) {
  return permute(x, order.inverse, order.length());
}

}  // namespace hmap::backbone
