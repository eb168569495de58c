#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hmap/train/model.hpp"

namespace hmap::train {

struct AdamWParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// One AdamW update in place. t is the 1-based step used for bias correction.
/// Decay is decoupled: param *= 1 - lr * wd before the adaptive step.
void adamw_step(std::span<real> param, std::span<const real> grad, std::span<real> m,
                std::span<real> v, std::uint64_t t, double lr, const AdamWParams& hp);

/// Linear warmup from 0 to base over `warmup` steps, then half-cosine to 0 at `total`.
double cosine_lr(std::uint64_t step, std::uint64_t warmup, std::uint64_t total, double base);

/// Global L2 norm of all gradients, accumulated in double.
double global_grad_norm(std::span<const NamedParam> params);

/// Scales every gradient by max_norm / norm when norm > max_norm. Returns the
/// pre-clip norm. max_norm <= 0 disables clipping.
double clip_grad_norm(std::span<NamedParam> params, double max_norm);

bool grads_finite(std::span<const NamedParam> params);

/// AdamW over a fixed parameter list. Parameters flagged decay=false are
/// not weight-decayed.
class AdamW {
 public:
  AdamW() = default;
  AdamW(std::vector<NamedParam> params, AdamWParams hp);

  /// Applies one update with learning rate lr using the current gradients.
  void step(double lr);
  std::uint64_t steps_taken() const { return t_; }

  const std::vector<NamedParam>& params() const { return params_; }
  std::vector<NamedParam>& params() { return params_; }

  /// Moments as named tensors: "<param>.m", "<param>.v" and a 1-element "adam.t".
  std::vector<std::pair<std::string, std::vector<real>>> export_state() const;
  /// Throws IncompatibleCheckpointError on a missing or mis-sized entry.
  void import_state(const std::vector<std::pair<std::string, std::vector<real>>>& state);

 private:
  std::vector<NamedParam> params_;
  AdamWParams hp_;
  std::vector<std::vector<real>> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace hmap::train
