#include <Eigen/Core>
#include <cmath>

#include "hmap/errors.hpp"
#include "hmap/numerics/ops.hpp"

namespace hmap {

namespace {

struct ScanDims {
  std::size_t batch, len, channels, state;
};

ScanDims check_scan_shapes(const Tensor& u, const Tensor& delta, const Tensor& a, const Tensor& b,
                           const Tensor& c) {
  if (u.ndim() != 2 && u.ndim() != 3) {
    throw DimensionError("selective_scan: u must be [L,E] or [B,L,E], got " + shape_str(u.shape()));
  }
  const bool batched = u.ndim() == 3;
  ScanDims d{};
  d.batch = batched ? u.dim(0) : 1;
  d.len = u.dim(batched ? 1 : 0);
  d.channels = u.dim(batched ? 2 : 1);
  if (a.ndim() != 2 || a.dim(0) != d.channels) {
    throw DimensionError("selective_scan: A must be [E,S], got " + shape_str(a.shape()));
  }
  d.state = a.dim(1);
  Shape bc = batched ? Shape{d.batch, d.len, d.state} : Shape{d.len, d.state};
  if (delta.shape() != u.shape() || b.shape() != bc || c.shape() != bc) {
    throw DimensionError("selective_scan: inconsistent shapes u" + shape_str(u.shape()) + " delta" +
                         shape_str(delta.shape()) + " B" + shape_str(b.shape()) + " C" +
                         shape_str(c.shape()));
  }
  return d;
}

using Arr = Eigen::Array<real, Eigen::Dynamic, 1>;

// decay[e*S + s] = exp(dt[e] * a[e*S + s]) for one time step.
void step_decay(const real* dt, const real* a, std::size_t E, std::size_t S, Arr& decay) {
  for (std::size_t e = 0; e < E; ++e) {
    for (std::size_t s = 0; s < S; ++s) decay[static_cast<Eigen::Index>(e * S + s)] = dt[e] * a[e * S + s];
  }
  decay = decay.exp();
}

}  // namespace

Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& a, const Tensor& b,
                      const Tensor& c) {
  const ScanDims d = check_scan_shapes(u, delta, a, b, c);
  const std::size_t E = d.channels, S = d.state, L = d.len;
  const auto pu = u.data();
  const auto pd = delta.data();
  const auto pa = a.data();
  const auto pb = b.data();
  const auto pc = c.data();

  // Every state is kept for the backward sweep: [B, L, E, S].
  Buffer states(d.batch * L * E * S);
  Buffer out(d.batch * L * E, real(0));
  Arr decay(static_cast<Eigen::Index>(E * S));
  for (std::size_t n = 0; n < d.batch; ++n) {
    for (std::size_t t = 0; t < L; ++t) {
      const std::size_t row = n * L + t;
      real* h = states.data() + row * E * S;
      const real* h_prev = t ? h - E * S : nullptr;
      const real* bt = pb.data() + row * S;
      const real* ct = pc.data() + row * S;
      step_decay(pd.data() + row * E, pa.data(), E, S, decay);
      const real* dk = decay.data();
      for (std::size_t e = 0; e < E; ++e) {
        const real drive = pd[row * E + e] * pu[row * E + e];
        real y = 0;
        for (std::size_t s = 0; s < S; ++s) {
          const real prev = h_prev ? h_prev[e * S + s] : real(0);
          const real hs = dk[e * S + s] * prev + drive * bt[s];
          h[e * S + s] = hs;
          y += ct[s] * hs;
        }
        out[row * E + e] = y;
      }
      for (std::size_t e = 0; e < E; ++e) {
        if (!std::isfinite(out[row * E + e])) {
          throw NumericError("selective_scan: non-finite state at step " + std::to_string(t) +
                                 " (channel " + std::to_string(e) + ")",
                             t);
        }
      }
    }
  }

  return Tensor::make_result(
      u.shape(), std::move(out), "selective_scan", {u, delta, a, b, c},
      [d, states = std::move(states)](detail::Node& self) {
        const std::size_t E = d.channels, S = d.state, L = d.len;
        detail::Node& nu = *self.parents[0];
        detail::Node& nd = *self.parents[1];
        detail::Node& na = *self.parents[2];
        detail::Node& nb = *self.parents[3];
        detail::Node& nc = *self.parents[4];
        const auto& uv = *nu.data;
        const auto& dv = *nd.data;
        const auto& av = *na.data;
        const auto& bv = *nb.data;
        const auto& cv = *nc.data;
        const real* dy = self.grad.data();

        // Scratch gradients; copied into parents that need them.
        Buffer gu(uv.size(), real(0)), gd(dv.size(), real(0)), ga(av.size(), real(0)),
            gb(bv.size(), real(0)), gc(cv.size(), real(0));
        using Mat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        using Col = Eigen::Matrix<real, Eigen::Dynamic, 1>;
        using Row = Eigen::Matrix<real, 1, Eigen::Dynamic>;
        using CMat = Eigen::Map<const Mat>;
        using CCol = Eigen::Map<const Col>;
        using CRow = Eigen::Map<const Row>;
        const auto Ei = static_cast<Eigen::Index>(E);
        const auto Si = static_cast<Eigen::Index>(S);
        const CMat A(av.data(), Ei, Si);
        Eigen::Map<Mat> GA(ga.data(), Ei, Si);
        Mat carry(Ei, Si), dh(Ei, Si), gdecay(Ei, Si);
        Col dh_b(Ei);
        Arr decay(static_cast<Eigen::Index>(E * S));
        for (std::size_t n = 0; n < d.batch; ++n) {
          carry.setZero();
          for (std::size_t t = L; t-- > 0;) {
            const std::size_t row = n * L + t;
            step_decay(dv.data() + row * E, av.data(), E, S, decay);
            const CMat Dk(decay.data(), Ei, Si);
            const CMat H(states.data() + row * E * S, Ei, Si);
            const CCol g(dy + row * E, Ei);
            const CCol dt(dv.data() + row * E, Ei);
            const CCol u(uv.data() + row * E, Ei);
            const CRow b(bv.data() + row * S, Si);
            const CRow c(cv.data() + row * S, Si);

            dh.noalias() = g * c;
            dh += carry;
            Eigen::Map<Row>(gc.data() + row * S, Si).noalias() += g.transpose() * H;
            dh_b.noalias() = dh * b.transpose();
            Eigen::Map<Col> gd_row(gd.data() + row * E, Ei);
            gd_row.array() += u.array() * dh_b.array();
            if (t > 0) {
              const CMat prev(states.data() + (row - 1) * E * S, Ei, Si);
              gdecay.array() = dh.array() * prev.array() * Dk.array();
              gd_row += (gdecay.array() * A.array()).matrix().rowwise().sum();
              GA.array() += gdecay.array().colwise() * dt.array();
            }
            const Col w = dt.cwiseProduct(u);
            Eigen::Map<Row>(gb.data() + row * S, Si).noalias() += w.transpose() * dh;
            Eigen::Map<Col>(gu.data() + row * E, Ei).array() += dt.array() * dh_b.array();
            carry.array() = Dk.array() * dh.array();
          }
        }
        auto flush = [](detail::Node& node, const Buffer& g) {
          if (!node.requires_grad) return;
          auto dst = node.ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
        };
        flush(nu, gu);
        flush(nd, gd);
        flush(na, ga);
        flush(nb, gb);
        flush(nc, gc);
      });
}

Tensor causal_conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.ndim() != 3 || weight.ndim() != 2 || weight.dim(0) != x.dim(2) || bias.ndim() != 1 ||
      bias.dim(0) != x.dim(2)) {
    throw DimensionError("causal_conv1d: x" + shape_str(x.shape()) + " weight" +
                         shape_str(weight.shape()) + " bias" + shape_str(bias.shape()));
  }
  const std::size_t B = x.dim(0), L = x.dim(1), E = x.dim(2), K = weight.dim(1);
  const auto px = x.data();
  const auto pw = weight.data();
  const auto pb = bias.data();
  Buffer out(px.size());
  for (std::size_t n = 0; n < B; ++n) {
    for (std::size_t t = 0; t < L; ++t) {
      for (std::size_t e = 0; e < E; ++e) {
        real acc = pb[e];
        for (std::size_t k = 0; k < K; ++k) {
          const std::size_t back = K - 1 - k;
          if (back > t) continue;
          acc += pw[e * K + k] * px[(n * L + t - back) * E + e];
        }
        out[(n * L + t) * E + e] = acc;
      }
    }
  }
  return Tensor::make_result(x.shape(), std::move(out), "causal_conv1d", {x, weight, bias},
                             [B, L, E, K](detail::Node& self) {
                               detail::Node& nx = *self.parents[0];
                               detail::Node& nw = *self.parents[1];
                               detail::Node& nb = *self.parents[2];
                               const auto& xv = *nx.data;
                               const auto& wv = *nw.data;
                               const real* dy = self.grad.data();
                               std::span<real> gx, gw, gb;
                               if (nx.requires_grad) gx = nx.ensure_grad();
                               if (nw.requires_grad) gw = nw.ensure_grad();
                               if (nb.requires_grad) gb = nb.ensure_grad();
                               for (std::size_t n = 0; n < B; ++n) {
                                 for (std::size_t t = 0; t < L; ++t) {
                                   for (std::size_t e = 0; e < E; ++e) {
                                     const real g = dy[(n * L + t) * E + e];
                                     if (!gb.empty()) gb[e] += g;
                                     for (std::size_t k = 0; k < K; ++k) {
                                       const std::size_t back = K - 1 - k;
                                       if (back > t) continue;
                                       const std::size_t src = (n * L + t - back) * E + e;
                                       if (!gw.empty()) gw[e * K + k] += g * xv[src];
                                       if (!gx.empty()) gx[src] += g * wv[e * K + k];
                                     }
                                   }
                                 }
                               }
                             });
}

}  // namespace hmap
