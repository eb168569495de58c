#include "hmap/backbone/blocks.hpp"

#include <cmath>
#include <vector>

#include "hmap/errors.hpp"

namespace hmap::backbone {

namespace {

// softplus^-1
double inverse_softplus(double y) { return y + std::log(-std::expm1(-y)); }

}  // namespace

SsmBlock SsmBlock::init(const SsmConfig& config, Rng& rng) {
  if (config.dim == 0 || config.d_state == 0 || config.expand == 0) {
    throw ContractError("SSM block dimensions must be positive");
  }
  const std::size_t D = config.dim, E = config.inner(), S = config.d_state, R = config.rank();
  SsmBlock b;
  b.config = config;
  b.norm_gamma = init::constant({D}, real(1));
  b.norm_beta = init::constant({D}, real(0));
  b.w_in = init::xavier(D, 2 * E, rng);
  if (config.conv_kernel > 0) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(config.conv_kernel));
    b.conv_w = init::uniform({E, config.conv_kernel}, bound, rng);
    b.conv_b = init::constant({E}, real(0));
  }
  b.w_dt_down = init::xavier(E, R, rng);
  b.w_dt_up = init::uniform({R, E}, 1.0 / std::sqrt(static_cast<double>(R)), rng);
  // Step sizes start log-uniform in [1e-3, 1e-1].
  std::vector<real> dt(E);
  for (auto& v : dt) {
    const double step = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
    v = static_cast<real>(inverse_softplus(step));
  }
  b.dt_bias = Tensor::from({E}, std::move(dt), true);
  b.w_b = init::xavier(E, S, rng);
  b.w_c = init::xavier(E, S, rng);
  // A = -exp(a_log) = -(1, 2, ..., S) per channel.
  std::vector<real> a(E * S);
  for (std::size_t e = 0; e < E; ++e) {
    for (std::size_t s = 0; s < S; ++s) a[e * S + s] = static_cast<real>(std::log(double(s + 1)));
  }
  b.a_log = Tensor::from({E, S}, std::move(a), true);
  b.d_skip = init::constant({E}, real(1));
  b.w_out = init::xavier(E, D, rng);
  b.res_scale = init::constant({D}, real(1));
  return b;
}

Tensor SsmBlock::forward(const Tensor& x, const ScanOrder& order) const {
  const std::size_t E = config.inner();
  const bool reorder = !order.is_identity();
  const Tensor xs = reorder ? apply_scan_order(x, order) : x;

  const Tensor h = layer_norm(xs, norm_gamma, norm_beta);
  const Tensor zu = linear(h, w_in, {});
  Tensor u = slice_last(zu, 0, E);
  const Tensor z = slice_last(zu, E, E);
  if (conv_w.defined()) u = causal_conv1d(u, conv_w, conv_b);
  u = silu(u);

  const Tensor dt = softplus(linear(linear(u, w_dt_down, {}), w_dt_up, dt_bias));
  const Tensor bm = linear(u, w_b, {});
  const Tensor cm = linear(u, w_c, {});
  const Tensor a = scale(exp(a_log), real(-1));

  Tensor y = selective_scan(u, dt, a, bm, cm);
  y = add(y, mul_channels(u, d_skip));
  y = mul(y, silu(z));
  const Tensor out = mul_channels(linear(y, w_out, {}), res_scale);
  const Tensor res = add(xs, out);
  return reorder ? undo_scan_order(res, order) : res;
}

void SsmBlock::visit(const std::string& prefix, const ParamVisitor& visitor) {
  visitor(prefix + "norm.gamma", norm_gamma, false);
  visitor(prefix + "norm.beta", norm_beta, false);
  visitor(prefix + "in_proj.weight", w_in, true);
  if (conv_w.defined()) {
    visitor(prefix + "conv.weight", conv_w, true);
    visitor(prefix + "conv.bias", conv_b, false);
  }
  visitor(prefix + "dt_down.weight", w_dt_down, true);
  visitor(prefix + "dt_up.weight", w_dt_up, true);
  visitor(prefix + "dt_up.bias", dt_bias, false);
  visitor(prefix + "b_proj.weight", w_b, true);
  visitor(prefix + "c_proj.weight", w_c, true);
  visitor(prefix + "a_log", a_log, false);
  visitor(prefix + "d_skip", d_skip, false);
  visitor(prefix + "out_proj.weight", w_out, true);
  visitor(prefix + "res_scale", res_scale, false);
}

AttnBlock AttnBlock::init(const AttnConfig& config, Rng& rng) {
  if (config.heads == 0 || config.dim % config.heads != 0) {
    throw ContractError("model dim " + std::to_string(config.dim) +
                        " is not divisible by head count " + std::to_string(config.heads));
  }
  const std::size_t D = config.dim, H = config.dim * config.mlp_ratio;
  AttnBlock b;
  b.config = config;
  b.norm1_gamma = init::constant({D}, real(1));
  b.norm1_beta = init::constant({D}, real(0));
  b.w_qkv = init::xavier(D, 3 * D, rng);
  b.b_qkv = init::constant({3 * D}, real(0));
  b.w_o = init::xavier(D, D, rng);
  b.b_o = init::constant({D}, real(0));
  b.norm2_gamma = init::constant({D}, real(1));
  b.norm2_beta = init::constant({D}, real(0));
  b.w_fc1 = init::xavier(D, H, rng);
  b.b_fc1 = init::constant({H}, real(0));
  b.w_fc2 = init::xavier(H, D, rng);
  b.b_fc2 = init::constant({D}, real(0));
  return b;
}

Tensor AttnBlock::forward(const Tensor& x, const BoolMask& mask) const {
  if (x.ndim() != 3 || x.dim(2) != config.dim) {
    throw DimensionError("attention block expects [B,L," + std::to_string(config.dim) + "], got " +
                         shape_str(x.shape()));
  }
  const std::size_t D = config.dim;
  const std::size_t head_dim = D / config.heads;
  const real inv_sqrt = real(1) / std::sqrt(static_cast<real>(head_dim));

  const Tensor h = layer_norm(x, norm1_gamma, norm1_beta);
  const Tensor qkv = linear(h, w_qkv, b_qkv);
  std::vector<Tensor> heads;
  heads.reserve(config.heads);
  for (std::size_t k = 0; k < config.heads; ++k) {
    const Tensor q = slice_last(qkv, k * head_dim, head_dim);
    const Tensor kk = slice_last(qkv, D + k * head_dim, head_dim);
    const Tensor v = slice_last(qkv, 2 * D + k * head_dim, head_dim);
    const Tensor p = softmax_masked(scale(matmul_nt(q, kk), inv_sqrt), mask);
    heads.push_back(matmul(p, v));
  }
  const Tensor attn = linear(config.heads == 1 ? heads[0] : concat_last(heads), w_o, b_o);
  const Tensor x1 = add(x, attn);
  const Tensor h2 = layer_norm(x1, norm2_gamma, norm2_beta);
  const Tensor mlp = linear(gelu(linear(h2, w_fc1, b_fc1)), w_fc2, b_fc2);
  return add(x1, mlp);
}

void AttnBlock::visit(const std::string& prefix, const ParamVisitor& visitor) {
  visitor(prefix + "norm1.gamma", norm1_gamma, false);
  visitor(prefix + "norm1.beta", norm1_beta, false);
  visitor(prefix + "qkv.weight", w_qkv, true);
  visitor(prefix + "qkv.bias", b_qkv, false);
  visitor(prefix + "proj.weight", w_o, true);
  visitor(prefix + "proj.bias", b_o, false);
  visitor(prefix + "norm2.gamma", norm2_gamma, false);
  visitor(prefix + "norm2.beta", norm2_beta, false);
  visitor(prefix + "fc1.weight", w_fc1, true);
  visitor(prefix + "fc1.bias", b_fc1, false);
  visitor(prefix + "fc2.weight", w_fc2, true);
  visitor(prefix + "fc2.bias", b_fc2, false);
}

}  // namespace hmap::backbone
