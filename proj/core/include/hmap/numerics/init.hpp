#pragma once

#include <functional>
#include <string>

#include "hmap/numerics/tensor.hpp"
#include "hmap/rng.hpp"

namespace hmap {

/// Callback used to enumerate learnable parameters: (qualified name, tensor, apply weight decay).
using ParamVisitor = std::function<void(const std::string& name, Tensor& param, bool decay)>;

namespace init {

/// Glorot-uniform [in, out] weight.
Tensor xavier(std::size_t in, std::size_t out, Rng& rng);
Tensor normal(Shape shape, double stddev, Rng& rng);
Tensor uniform(Shape shape, double bound, Rng& rng);
Tensor constant(Shape shape, real value);

}  // namespace init
}  // namespace hmap
