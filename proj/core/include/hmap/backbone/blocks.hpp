#pragma once

#include <cstddef>
#include <string>

#include "hmap/backbone/scan_order.hpp"
#include "hmap/numerics/init.hpp"
#include "hmap/numerics/ops.hpp"
#include "hmap/rng.hpp"

namespace hmap::backbone {

struct SsmConfig {
  std::size_t dim = 64;
  std::size_t d_state = 8;
  std::size_t expand = 1;       // inner width = dim * expand
  std::size_t dt_rank = 0;      // 0 -> ceil(dim / 16)
  std::size_t conv_kernel = 0;  // 0 disables the depthwise causal conv

  std::size_t inner() const { return dim * expand; }
  std::size_t rank() const { return dt_rank ? dt_rank : (dim + 15) / 16; }
};

/// Simplified Vim-style gated selective-state-space block, unidirectional.
///
///   x -> LN -> in-proj -> (u, z)
///   u -> [causal conv] -> SiLU -> selective scan with diagonal A = -exp(a_log)
///   y = (scan(u) + d_skip * u) * SiLU(z) -> out-proj -> * res_scale -> + x
///
/// The whole block runs in scan order: tokens are permuted before the
/// recurrence and restored afterwards.
struct SsmBlock {
  SsmConfig config;
  Tensor norm_gamma, norm_beta;  // [D]
  Tensor w_in;                   // [D, 2E]
  Tensor conv_w, conv_b;         // [E, K], [E]; undefined when conv_kernel == 0
  Tensor w_dt_down;              // [E, R]
  Tensor w_dt_up, dt_bias;       // [R, E], [E]
  Tensor w_b, w_c;               // [E, S]
  Tensor a_log;                  // [E, S]
  Tensor d_skip;                 // [E]
  Tensor w_out;                  // [E, D]
  Tensor res_scale;              // [D]

  static SsmBlock init(const SsmConfig& config, Rng& rng);
  /// x is [B, L, D] in grid order; the result is in grid order too.
  Tensor forward(const Tensor& x, const ScanOrder& order) const;
  void visit(const std::string& prefix, const ParamVisitor& visitor);
};

struct AttnConfig {
  std::size_t dim = 64;
  std::size_t heads = 2;
  std::size_t mlp_ratio = 2;
};

/// Pre-norm transformer block: x + MHSA(LN(x)), then + MLP(LN(.)) with GELU.
struct AttnBlock {
  AttnConfig config;
  Tensor norm1_gamma, norm1_beta;
  Tensor w_qkv, b_qkv;  // [D, 3D], [3D]
  Tensor w_o, b_o;      // [D, D], [D]
  Tensor norm2_gamma, norm2_beta;
  Tensor w_fc1, b_fc1;  // [D, H], [H]
  Tensor w_fc2, b_fc2;  // [H, D], [D]

  static AttnBlock init(const AttnConfig& config, Rng& rng);
  /// x is [B, L, D]. An empty mask means full visibility.
  Tensor forward(const Tensor& x, const BoolMask& mask = {}) const;
  void visit(const std::string& prefix, const ParamVisitor& visitor);
};

}  // namespace hmap::backbone
