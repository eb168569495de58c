#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hmap/backbone/scan_order.hpp"
#include "hmap/masking/mask_plan.hpp"
#include "hmap/numerics/ops.hpp"

namespace hmap::masking {

/// Decoder attention pattern.
///  - ar:        token-causal in the AR order (key position <= query position)
///  - mae:       everything visible
///  - local_mae: keys in the query's own grid row
///  - map:       all earlier rows, plus the unmasked keys of the query's row,
///               plus the query itself
enum class DecoderMask { ar, mae, local_mae, map };

std::string_view to_string(DecoderMask mask);
/// Accepts ar, mae, local_mae (or localmae), map; case-insensitive.
DecoderMask parse_decoder_mask(std::string_view text);

struct VisibilityOptions {
  /// Masked MAP queries may attend to their own slot.
  bool self_visible = true;
  /// Token order used by the AR pattern.
  backbone::ScanKind ar_order = backbone::ScanKind::row_first;
};

/// L x L query/key matrix; entry (q, k) is true iff query q may attend to key k.
struct VisibilityMatrix {
  std::size_t length = 0;
  DecoderMask strategy = DecoderMask::map;
  std::vector<std::uint8_t> bits;

  bool allowed(std::size_t q, std::size_t k) const { return bits[q * length + k] != 0; }
  void set(std::size_t q, std::size_t k, bool on) { bits[q * length + k] = on ? 1 : 0; }
  friend bool operator==(const VisibilityMatrix&, const VisibilityMatrix&) = default;
};

VisibilityMatrix build_visibility(const MaskPlan& plan, DecoderMask strategy,
                                  const VisibilityOptions& options = {});

/// Independent recomputation from the conditioning-set definitions, pair by
/// pair. Used to certify build_visibility.
VisibilityMatrix oracle_visibility(const MaskPlan& plan, DecoderMask strategy,
                                   const VisibilityOptions& options = {});

/// Packs one matrix per batch item (or a single shared one) for softmax_masked.
BoolMask to_bool_mask(std::span<const VisibilityMatrix> matrices);
/// Leading `length` x `length` block of a matrix.
VisibilityMatrix leading_block(const VisibilityMatrix& vis, std::size_t length);

/// One line per query, comma-separated 0/1.
std::string to_csv(const VisibilityMatrix& vis);
/// Plain PBM (P1); 1 (black) marks an allowed pair.
std::string to_pbm(const VisibilityMatrix& vis);

}  // namespace hmap::masking
