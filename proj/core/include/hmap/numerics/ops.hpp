#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "hmap/numerics/tensor.hpp"

namespace hmap {

// Shapes: "[B,]L,D" means an optional leading batch dimension. No other
// broadcasting exists anywhere in the library.

/// [P,Q]x[Q,R], [B,P,Q]x[B,Q,R], or [B,P,Q]x[Q,R] (shared right operand).
Tensor matmul(const Tensor& a, const Tensor& b);
/// a * b^T with the same batching rules; b is [R,Q] or [B,R,Q].
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// x[..., in] * w[in, out] + bias[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, real factor);
/// x[B,L,D] + y[L,D], the one permitted broadcast (over the leading batch dim).
Tensor add_batch_broadcast(const Tensor& x, const Tensor& y);
/// x[..., D] * v[D] per channel.
Tensor mul_channels(const Tensor& x, const Tensor& v);

Tensor exp(const Tensor& x);
Tensor square(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor softplus(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Normalizes over the last dimension, then gamma * xhat + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps = real(1e-5));

/// Boolean masks for softmax_masked: `count` matrices of rows x cols, row-major.
/// count == 1 broadcasts over the batch.
struct BoolMask {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> bits;

  bool empty() const { return bits.empty(); }
  bool allowed(std::size_t m, std::size_t r, std::size_t c) const {
    return bits[(m * rows + r) * cols + c] != 0;
  }
};

/// Row softmax restricted to allowed entries. Disallowed entries are exactly 0.
/// `mask` empty means every entry is allowed. Throws DegenerateMaskError for a
/// row with no allowed entry.
Tensor softmax_masked(const Tensor& logits, const BoolMask& mask);

/// Columns [start, start+count) of the last dimension.
Tensor slice_last(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_last(std::span<const Tensor> parts);
/// Rows [start, start+count) of the first dimension of a 2-D tensor.
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);

/// out[b, t, :] = x[b, perm[t], :] for x of shape [B,L,D].
Tensor permute_tokens(const Tensor& x, std::span<const std::size_t> perm);
/// out[b, t, :] = token[:] where replace[b*L + t], else x[b, t, :].
Tensor replace_tokens(const Tensor& x, std::span<const std::uint8_t> replace, const Tensor& token);
/// Mean over the token axis: [B,L,D] -> [B,D].
Tensor mean_tokens(const Tensor& x);

/// Mean softmax cross-entropy of logits[B,C] against integer labels.
Tensor cross_entropy(const Tensor& logits, std::span<const std::uint32_t> labels);

/// Mean squared error over the selected token rows only, averaged over
/// selected tokens and feature dims. pred/target are [B,L,D] (or [L,D]),
/// select has one flag per token. No selected tokens gives 0.
Tensor masked_mse(const Tensor& pred, const Tensor& target, std::span<const std::uint8_t> select);

/// Selective scan over [B,L,E] sequences with diagonal state matrices:
///   h_t = exp(delta_t * A) * h_{t-1} + delta_t * B_t * u_t,   y_t = C_t . h_t
/// per channel. A is [E,S]; B and C are [B,L,S]. Throws NumericError with the
/// offending step on a non-finite state.
Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& a, const Tensor& b,
                      const Tensor& c);

/// Depthwise causal convolution along the sequence axis of [B,L,E] with
/// weight [E,K] and bias [E]; position t sees inputs t-K+1 .. t.
Tensor causal_conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias);

}  // namespace hmap
