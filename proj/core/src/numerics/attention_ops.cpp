#include <algorithm>
#include <cmath>
#include <limits>

#include "hmap/errors.hpp"
#include "hmap/numerics/ops.hpp"

namespace hmap {

Tensor softmax_masked(const Tensor& logits, const BoolMask& mask) {
  if (logits.ndim() != 2 && logits.ndim() != 3) {
    throw DimensionError("softmax_masked: expected [L,L] or [B,L,L], got " +
                         shape_str(logits.shape()));
  }
  const bool batched = logits.ndim() == 3;
  const std::size_t batch = batched ? logits.dim(0) : 1;
  const std::size_t rows = logits.dim(batched ? 1 : 0);
  const std::size_t cols = logits.dim(batched ? 2 : 1);
  const bool masked = !mask.empty();
  if (masked) {
    if (mask.rows != rows || mask.cols != cols || (mask.count != 1 && mask.count != batch) ||
        mask.bits.size() != mask.count * rows * cols) {
      throw DimensionError("softmax_masked: mask " + std::to_string(mask.count) + "x" +
                           std::to_string(mask.rows) + "x" + std::to_string(mask.cols) +
                           " does not fit logits " + shape_str(logits.shape()));
    }
  }

  const auto in = logits.data();
  Buffer out(in.size(), real(0));
  for (std::size_t n = 0; n < batch; ++n) {
    const std::size_t m = masked && mask.count > 1 ? n : 0;
    for (std::size_t r = 0; r < rows; ++r) {
      const real* x = in.data() + (n * rows + r) * cols;
      real* y = out.data() + (n * rows + r) * cols;
      const std::uint8_t* allow = masked ? mask.bits.data() + (m * rows + r) * cols : nullptr;
      real mx = -std::numeric_limits<real>::infinity();
      bool any = false;
      for (std::size_t c = 0; c < cols; ++c) {
        if (allow && !allow[c]) continue;
        any = true;
        mx = std::max(mx, x[c]);
      }
      if (!any) {
        throw DegenerateMaskError("softmax_masked: row " + std::to_string(r) +
                                      " has no allowed entries",
                                  r);
      }
      real z = 0;
      for (std::size_t c = 0; c < cols; ++c) {
        if (allow && !allow[c]) continue;
        y[c] = std::exp(x[c] - mx);
        z += y[c];
      }
      const real inv = real(1) / z;
      for (std::size_t c = 0; c < cols; ++c) y[c] *= inv;
    }
  }

  return Tensor::make_result(logits.shape(), std::move(out), "softmax_masked", {logits},
                             [cols](detail::Node& self) {
                               auto g = self.parents[0]->ensure_grad();
                               const auto& y = *self.data;
                               const std::size_t total_rows = y.size() / cols;
                               for (std::size_t r = 0; r < total_rows; ++r) {
                                 const real* yr = y.data() + r * cols;
                                 const real* dy = self.grad.data() + r * cols;
                                 real dot = 0;
                                 for (std::size_t c = 0; c < cols; ++c) dot += yr[c] * dy[c];
                                 real* gr = g.data() + r * cols;
                                 for (std::size_t c = 0; c < cols; ++c) gr[c] += yr[c] * (dy[c] - dot);
                               }
                             });
}

}  // namespace hmap
