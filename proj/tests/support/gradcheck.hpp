#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "hmap/numerics/tensor.hpp"
#include "hmap/rng.hpp"

namespace hmap::testing {

// Finite-difference step for the active precision.
inline constexpr double kFdStep = kDoublePrecision ? 1e-5 : 1e-3;

struct GradCheck {
  double rel_error = 0.0;  // |analytic - numeric|_2 / max(|analytic|_2, |numeric|_2)
  double max_abs_error = 0.0;
  std::string worst;       // entry with the largest absolute error
  std::size_t probed = 0;
};

using NamedLeaves = std::vector<std::pair<std::string, Tensor>>;

// backward() against central differences over every entry of every leaf,
// pooled into one vector. max_per_tensor > 0 probes that many random entries
// per leaf instead.
inline GradCheck gradcheck(const std::function<Tensor()>& loss_fn, NamedLeaves params,
                           double h = kFdStep, std::size_t max_per_tensor = 0,
                           std::uint64_t seed = 0) {
  for (auto& [name, p] : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  backward(loss_fn());

  GradCheck out;
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  Rng rng(seed);
  for (auto& [name, p] : params) {
    std::vector<double> analytic(p.numel(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    std::vector<std::size_t> idx;
    if (max_per_tensor == 0 || max_per_tensor >= p.numel()) {
      for (std::size_t i = 0; i < p.numel(); ++i) idx.push_back(i);
    } else {
      for (std::size_t k = 0; k < max_per_tensor; ++k) idx.push_back(rng.below(p.numel()));
    }
    auto data = p.mutable_data();
    for (std::size_t i : idx) {
      const real saved = data[i];
      const real hi = static_cast<real>(saved + h);
      const real lo = static_cast<real>(saved - h);
      data[i] = hi;
      const double up = loss_fn().item();
      data[i] = lo;
      const double down = loss_fn().item();
      data[i] = saved;
      const double numeric = (up - down) / (static_cast<double>(hi) - static_cast<double>(lo));
      const double err = std::abs(analytic[i] - numeric);
      if (err > out.max_abs_error) {
        out.max_abs_error = err;
        out.worst = name + "[" + std::to_string(i) + "]";
      }
      diff2 += err * err;
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
      ++out.probed;
    }
  }
  const double denom = std::sqrt(std::max(a2, n2));
  out.rel_error = denom > 0.0 ? std::sqrt(diff2) / denom : 0.0;
  return out;
}

}  // namespace hmap::testing
