#include "hmap/numerics/init.hpp"

#include <cmath>

namespace hmap::init {

Tensor xavier(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  return uniform({in, out}, bound, rng);
}

Tensor normal(Shape shape, double stddev, Rng& rng) {
  Buffer v(shape_numel(shape));
  for (auto& x : v) x = static_cast<real>(stddev * rng.normal());
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor uniform(Shape shape, double bound, Rng& rng) {
  Buffer v(shape_numel(shape));
  for (auto& x : v) x = static_cast<real>(rng.uniform(-bound, bound));
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor constant(Shape shape, real value) { return Tensor::full(std::move(shape), value, true); }

}  // namespace hmap::init
