#include "hmap/train/optimizer.hpp"

#include <cmath>
#include <numbers>
#include <unordered_map>

#include "hmap/errors.hpp"

namespace hmap::train {

void adamw_step(std::span<real> param, std::span<const real> grad, std::span<real> m,
                std::span<real> v, std::uint64_t t, double lr, const AdamWParams& hp) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
    throw DimensionError("adamw_step: parameter, gradient and moment sizes differ");
  }
  if (t == 0) throw ContractError("adamw_step: step counter is 1-based");
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(t));
  const double shrink = 1.0 - lr * hp.weight_decay;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double mi = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
    const double vi = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
    m[i] = static_cast<real>(mi);
    v[i] = static_cast<real>(vi);
    const double mhat = mi / c1;
    const double vhat = vi / c2;
    const double p = static_cast<double>(param[i]) * shrink;
    param[i] = static_cast<real>(p - lr * mhat / (std::sqrt(vhat) + hp.eps));
  }
}

double cosine_lr(std::uint64_t step, std::uint64_t warmup, std::uint64_t total, double base) {
  if (step > total) throw ContractError("cosine_lr: step beyond total");
  if (warmup > 0 && step < warmup) {
    return base * static_cast<double>(step) / static_cast<double>(warmup);
  }
  if (total <= warmup) return base;
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * progress));
}

double global_grad_norm(std::span<const NamedParam> params) {
  double acc = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (real g : p.tensor.grad()) acc += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(acc);
}

double clip_grad_norm(std::span<NamedParam> params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const auto factor = static_cast<real>(max_norm / norm);
    for (auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      for (real& g : p.tensor.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

bool grads_finite(std::span<const NamedParam> params) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (real g : p.tensor.grad()) {
      if (!std::isfinite(g)) return false;
    }
  }
  return true;
}

AdamW::AdamW(std::vector<NamedParam> params, AdamWParams hp) : params_(std::move(params)), hp_(hp) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), real(0));
    v_.emplace_back(p.tensor.numel(), real(0));
  }
}

void AdamW::step(double lr) {
  ++t_;
  std::vector<real> zeros;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_[i].tensor;
    std::span<const real> g;
    if (t.has_grad()) {
      g = t.grad();
    } else {
      zeros.assign(t.numel(), real(0));
      g = zeros;
    }
    AdamWParams hp = hp_;
    if (!params_[i].decay) hp.weight_decay = 0.0;
    adamw_step(t.mutable_data(), g, m_[i], v_[i], t_, lr, hp);
  }
}

std::vector<std::pair<std::string, std::vector<real>>> AdamW::export_state() const {
  std::vector<std::pair<std::string, std::vector<real>>> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.emplace_back(params_[i].name + ".m", m_[i]);
    out.emplace_back(params_[i].name + ".v", v_[i]);
  }
  out.emplace_back("adam.t", std::vector<real>{static_cast<real>(t_)});
  return out;
}

void AdamW::import_state(const std::vector<std::pair<std::string, std::vector<real>>>& state) {
  std::unordered_map<std::string, const std::vector<real>*> by_name;
  for (const auto& [name, values] : state) by_name[name] = &values;
  auto fetch = [&](const std::string& name, std::size_t size) -> const std::vector<real>& {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw IncompatibleCheckpointError(name, "missing optimizer entry");
    if (it->second->size() != size) {
      throw IncompatibleCheckpointError(name, "expected " + std::to_string(size) + " values, found " +
                                                  std::to_string(it->second->size()));
    }
    return *it->second;
  };
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i] = fetch(params_[i].name + ".m", m_[i].size());
    v_[i] = fetch(params_[i].name + ".v", v_[i].size());
  }
  t_ = static_cast<std::uint64_t>(fetch("adam.t", 1)[0]);
}

}  // namespace hmap::train
