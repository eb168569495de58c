#include "hmap/numerics/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "hmap/errors.hpp"

namespace hmap {

namespace {

using RowMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using Eigen::Index;

ConstMatMap cmat(const real* p, std::size_t r, std::size_t c) {
  return ConstMatMap(p, static_cast<Index>(r), static_cast<Index>(c));
}
MatMap mmat(real* p, std::size_t r, std::size_t c) {
  return MatMap(p, static_cast<Index>(r), static_cast<Index>(c));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

detail::Node& parent(detail::Node& self, std::size_t i) { return *self.parents[i]; }

// Layout of a (possibly batched) matrix product.
struct GemmPlan {
  std::size_t batch = 1;
  std::size_t p = 0, q = 0, r = 0;
  bool shared_rhs = false;  // rhs is a plain matrix used for every batch item
  Shape out;
};

GemmPlan plan_gemm(const Tensor& a, const Tensor& b, bool transpose_b, const char* op) {
  GemmPlan g;
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  auto fail = [&] {
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(sa) + " and " +
                         shape_str(sb));
  };
  if (sa.size() == 2 && sb.size() == 2) {
    g.p = sa[0];
    g.q = sa[1];
  } else if (sa.size() == 3 && (sb.size() == 3 || sb.size() == 2)) {
    g.batch = sa[0];
    g.p = sa[1];
    g.q = sa[2];
    if (sb.size() == 3 && sb[0] != g.batch) fail();
  } else {
    fail();
  }
  g.shared_rhs = sb.size() == 2;
  const std::size_t bq = transpose_b ? sb[sb.size() - 1] : sb[sb.size() - 2];
  g.r = transpose_b ? sb[sb.size() - 2] : sb[sb.size() - 1];
  if (bq != g.q) fail();
  if (sa.size() == 3) {
    g.out = {g.batch, g.p, g.r};
  } else {
    g.out = {g.p, g.r};
  }
  return g;
}

Tensor gemm(const Tensor& a, const Tensor& b, bool transpose_b, const char* op) {
  const GemmPlan g = plan_gemm(a, b, transpose_b, op);
  Buffer out(g.batch * g.p * g.r);
  const real* pa = a.data().data();
  const real* pb = b.data().data();
  const std::size_t b_stride = g.shared_rhs ? 0 : g.q * g.r;

  if (g.shared_rhs && !transpose_b) {
    mmat(out.data(), g.batch * g.p, g.r).noalias() = cmat(pa, g.batch * g.p, g.q) * cmat(pb, g.q, g.r);
  } else {
    for (std::size_t n = 0; n < g.batch; ++n) {
      auto an = cmat(pa + n * g.p * g.q, g.p, g.q);
      auto cn = mmat(out.data() + n * g.p * g.r, g.p, g.r);
      if (transpose_b) {
        cn.noalias() = an * cmat(pb + n * b_stride, g.r, g.q).transpose();
      } else {
        cn.noalias() = an * cmat(pb + n * b_stride, g.q, g.r);
      }
    }
  }

  return Tensor::make_result(g.out, std::move(out), op, {a, b}, [g, transpose_b](detail::Node& self) {
    detail::Node& na = parent(self, 0);
    detail::Node& nb = parent(self, 1);
    const real* pa = na.data->data();
    const real* pb = nb.data->data();
    const real* dc = self.grad.data();
    const std::size_t b_stride = g.shared_rhs ? 0 : g.q * g.r;
    if (na.requires_grad) {
      real* da = na.ensure_grad().data();
      if (g.shared_rhs && !transpose_b) {
        mmat(da, g.batch * g.p, g.q).noalias() +=
            cmat(dc, g.batch * g.p, g.r) * cmat(pb, g.q, g.r).transpose();
      } else {
        for (std::size_t n = 0; n < g.batch; ++n) {
        auto dan = mmat(da + n * g.p * g.q, g.p, g.q);
        auto dcn = cmat(dc + n * g.p * g.r, g.p, g.r);
        if (transpose_b) {
          dan.noalias() += dcn * cmat(pb + n * b_stride, g.r, g.q);
        } else {
          dan.noalias() += dcn * cmat(pb + n * b_stride, g.q, g.r).transpose();
        }
      }
      }
    }
    if (nb.requires_grad) {
      real* db = nb.ensure_grad().data();
      if (g.shared_rhs) {
        auto af = cmat(pa, g.batch * g.p, g.q);
        auto dcf = cmat(dc, g.batch * g.p, g.r);
        if (transpose_b) {
          mmat(db, g.r, g.q).noalias() += dcf.transpose() * af;
        } else {
          mmat(db, g.q, g.r).noalias() += af.transpose() * dcf;
        }
      } else {
        for (std::size_t n = 0; n < g.batch; ++n) {
          auto an = cmat(pa + n * g.p * g.q, g.p, g.q);
          auto dcn = cmat(dc + n * g.p * g.r, g.p, g.r);
          if (transpose_b) {
            mmat(db + n * b_stride, g.r, g.q).noalias() += dcn.transpose() * an;
          } else {
            mmat(db + n * b_stride, g.q, g.r).noalias() += an.transpose() * dcn;
          }
        }
      }
    }
  });
}

using Arr = Eigen::Array<real, Eigen::Dynamic, 1>;
using ArrMap = Eigen::Map<Arr>;
using ConstArrMap = Eigen::Map<const Arr>;

ConstArrMap carr(const Buffer& v) { return ConstArrMap(v.data(), static_cast<Index>(v.size())); }
ConstArrMap carr(const Tensor& t) { return ConstArrMap(t.data().data(), static_cast<Index>(t.numel())); }
ArrMap marr(Buffer& v) { return ArrMap(v.data(), static_cast<Index>(v.size())); }

using RowVec = Eigen::Matrix<real, 1, Eigen::Dynamic>;
Eigen::Map<const RowVec> crow(const real* p, std::size_t n) {
  return Eigen::Map<const RowVec>(p, static_cast<Index>(n));
}
Eigen::Map<RowVec> mrow(real* p, std::size_t n) { return Eigen::Map<RowVec>(p, static_cast<Index>(n)); }
ArrMap marr(std::span<real> v) { return ArrMap(v.data(), static_cast<Index>(v.size())); }

// Elementwise op on whole arrays so Eigen can vectorize the math functions.
// fwd(x, out) fills out; bwd(x, y, dy, dx) accumulates into dx.
template <class Fwd, class Bwd>
Tensor unary(const Tensor& x, const char* op, Fwd fwd, Bwd bwd) {
  const auto in = x.data();
  Buffer out(in.size());
  fwd(ConstArrMap(in.data(), static_cast<Index>(in.size())), ArrMap(out.data(), static_cast<Index>(out.size())));
  return Tensor::make_result(x.shape(), std::move(out), op, {x}, [bwd](detail::Node& self) {
    detail::Node& nx = parent(self, 0);
    bwd(carr(*nx.data), carr(*self.data), carr(self.grad), marr(nx.ensure_grad()));
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) { return gemm(a, b, false, "matmul"); }

Tensor matmul_nt(const Tensor& a, const Tensor& b) { return gemm(a, b, true, "matmul_nt"); }

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (w.ndim() != 2 || x.ndim() < 1 || x.shape().back() != w.dim(0)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(w.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.ndim() != 1 || bias.dim(0) != w.dim(1))) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " vs weight " +
                         shape_str(w.shape()));
  }
  const std::size_t in = w.dim(0);
  const std::size_t out_dim = w.dim(1);
  const std::size_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_dim;

  Buffer out(rows * out_dim);
  auto y = mmat(out.data(), rows, out_dim);
  y.noalias() = cmat(x.data().data(), rows, in) * cmat(w.data().data(), in, out_dim);
  if (has_bias) {
    y.rowwise() += Eigen::Map<const Eigen::Matrix<real, 1, Eigen::Dynamic>>(bias.data().data(),
                                                                           static_cast<Index>(out_dim));
  }
  std::vector<Tensor> parents = {x, w};
  if (has_bias) parents.push_back(bias);
  return Tensor::make_result(
      std::move(out_shape), std::move(out), "linear", std::move(parents),
      [rows, in, out_dim, has_bias](detail::Node& self) {
        detail::Node& nx = parent(self, 0);
        detail::Node& nw = parent(self, 1);
        const auto dy = cmat(self.grad.data(), rows, out_dim);
        if (nx.requires_grad) {
          mmat(nx.ensure_grad().data(), rows, in).noalias() += dy * cmat(nw.data->data(), in, out_dim).transpose();
        }
        if (nw.requires_grad) {
          mmat(nw.ensure_grad().data(), in, out_dim).noalias() += cmat(nx.data->data(), rows, in).transpose() * dy;
        }
        if (has_bias) {
          detail::Node& nb = parent(self, 2);
          if (nb.requires_grad) {
            Eigen::Map<Eigen::Matrix<real, 1, Eigen::Dynamic>>(nb.ensure_grad().data(),
                                                               static_cast<Index>(out_dim)) +=
                dy.colwise().sum();
          }
        }
      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Buffer out(a.numel());
  marr(out) = carr(a) + carr(b);
  return Tensor::make_result(a.shape(), std::move(out), "add", {a, b}, [](detail::Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      detail::Node& n = parent(self, k);
      if (n.requires_grad) marr(n.ensure_grad()) += carr(self.grad);
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto pa = a.data();
  const auto pb = b.data();
  Buffer out(pa.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] - pb[i];
  return Tensor::make_result(a.shape(), std::move(out), "sub", {a, b}, [](detail::Node& self) {
    detail::Node& na = parent(self, 0);
    detail::Node& nb = parent(self, 1);
    if (na.requires_grad) {
      auto g = na.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (nb.requires_grad) {
      auto g = nb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Buffer out(a.numel());
  marr(out) = carr(a) * carr(b);
  return Tensor::make_result(a.shape(), std::move(out), "mul", {a, b}, [](detail::Node& self) {
    detail::Node& na = parent(self, 0);
    detail::Node& nb = parent(self, 1);
    if (na.requires_grad) marr(na.ensure_grad()) += carr(self.grad) * carr(*nb.data);
    if (nb.requires_grad) marr(nb.ensure_grad()) += carr(self.grad) * carr(*na.data);
  });
}

Tensor scale(const Tensor& x, real factor) {
  return unary(
      x, "scale", [factor](ConstArrMap v, ArrMap out) { out = v * factor; },
      [factor](ConstArrMap, ConstArrMap, ConstArrMap g, ArrMap dx) { dx += g * factor; });
}

Tensor add_batch_broadcast(const Tensor& x, const Tensor& y) {
  if (x.ndim() != 3 || y.ndim() != 2 || x.dim(1) != y.dim(0) || x.dim(2) != y.dim(1)) {
    throw DimensionError("add_batch_broadcast: " + shape_str(x.shape()) + " + " +
                         shape_str(y.shape()));
  }
  const std::size_t block = y.numel();
  const std::size_t batch = x.dim(0);
  const auto px = x.data();
  const auto py = y.data();
  Buffer out(px.size());
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t i = 0; i < block; ++i) out[n * block + i] = px[n * block + i] + py[i];
  }
  return Tensor::make_result(x.shape(), std::move(out), "add_batch_broadcast", {x, y},
                             [batch, block](detail::Node& self) {
                               detail::Node& nx = parent(self, 0);
                               detail::Node& ny = parent(self, 1);
                               if (nx.requires_grad) {
                                 auto g = nx.ensure_grad();
                                 for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                               }
                               if (ny.requires_grad) {
                                 auto g = ny.ensure_grad();
                                 for (std::size_t n = 0; n < batch; ++n) {
                                   for (std::size_t i = 0; i < block; ++i) {
                                     g[i] += self.grad[n * block + i];
                                   }
                                 }
                               }
                             });
}

Tensor mul_channels(const Tensor& x, const Tensor& v) {
  if (v.ndim() != 1 || x.ndim() < 1 || x.shape().back() != v.dim(0)) {
    throw DimensionError("mul_channels: " + shape_str(x.shape()) + " * " + shape_str(v.shape()));
  }
  const std::size_t d = v.dim(0);
  const std::size_t rows = x.numel() / d;
  Buffer out(x.numel());
  mmat(out.data(), rows, d).array() =
      cmat(x.data().data(), rows, d).array().rowwise() * crow(v.data().data(), d).array();
  return Tensor::make_result(x.shape(), std::move(out), "mul_channels", {x, v},
                             [rows, d](detail::Node& self) {
                               detail::Node& nx = parent(self, 0);
                               detail::Node& nv = parent(self, 1);
                               const auto dy = cmat(self.grad.data(), rows, d).array();
                               if (nx.requires_grad) {
                                 mmat(nx.ensure_grad().data(), rows, d).array() +=
                                     dy.rowwise() * crow(nv.data->data(), d).array();
                               }
                               if (nv.requires_grad) {
                                 mrow(nv.ensure_grad().data(), d).array() +=
                                     (dy * cmat(nx.data->data(), rows, d).array()).colwise().sum();
                               }
                             });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, "exp", [](ConstArrMap v, ArrMap out) { out = v.exp(); },
      [](ConstArrMap, ConstArrMap y, ConstArrMap g, ArrMap dx) { dx += g * y; });
}

Tensor square(const Tensor& x) {
  return unary(
      x, "square", [](ConstArrMap v, ArrMap out) { out = v.square(); },
      [](ConstArrMap v, ConstArrMap, ConstArrMap g, ArrMap dx) { dx += g * real(2) * v; });
}

Tensor silu(const Tensor& x) {
  return unary(
      x, "silu", [](ConstArrMap v, ArrMap out) { out = v * v.logistic(); },
      [](ConstArrMap v, ConstArrMap, ConstArrMap g, ArrMap dx) {
        const Arr s = v.logistic();
        dx += g * s * (real(1) + v * (real(1) - s));
      });
}

Tensor gelu(const Tensor& x) {
  // tanh approximation
  static constexpr real k = static_cast<real>(0.7978845608028654);  // sqrt(2/pi)
  static constexpr real c = static_cast<real>(0.044715);
  return unary(
      x, "gelu",
      [](ConstArrMap v, ArrMap out) { out = real(0.5) * v * (real(1) + (k * (v + c * v.cube())).tanh()); },
      [](ConstArrMap v, ConstArrMap, ConstArrMap g, ArrMap dx) {
        const Arr t = (k * (v + c * v.cube())).tanh();
        dx += g * (real(0.5) * (real(1) + t) +
                   real(0.5) * v * (real(1) - t.square()) * k * (real(1) + real(3) * c * v.square()));
      });
}

Tensor softplus(const Tensor& x) {
  return unary(
      x, "softplus",
      [](ConstArrMap v, ArrMap out) { out = (v > real(20)).select(v, v.min(real(20)).exp().log1p()); },
      [](ConstArrMap v, ConstArrMap, ConstArrMap g, ArrMap dx) { dx += g * v.logistic(); });
}

Tensor sum(const Tensor& x) {
  double acc = 0;
  for (real v : x.data()) acc += v;
  return Tensor::make_result({}, {static_cast<real>(acc)}, "sum", {x}, [](detail::Node& self) {
    auto g = parent(self, 0).ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  const auto n = static_cast<real>(x.numel());
  return scale(sum(x), real(1) / n);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps) {
  if (x.ndim() < 1 || gamma.ndim() != 1 || beta.ndim() != 1 ||
      gamma.dim(0) != x.shape().back() || beta.dim(0) != x.shape().back()) {
    throw DimensionError("layer_norm: " + shape_str(x.shape()) + " with gamma " +
                         shape_str(gamma.shape()));
  }
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  const auto px = x.data();
  const auto pg = gamma.data();
  const auto pb = beta.data();
  Buffer out(px.size());
  Buffer xhat(px.size());
  Buffer inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const real* row = px.data() + r * d;
    real mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<real>(d);
    real var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<real>(d);
    const real is = real(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const real h = (row[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = pg[j] * h + pb[j];
    }
  }
  return Tensor::make_result(
      x.shape(), std::move(out), "layer_norm", {x, gamma, beta},
      [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        detail::Node& nx = parent(self, 0);
        detail::Node& ng = parent(self, 1);
        detail::Node& nb = parent(self, 2);
        const auto& gv = *ng.data;
        const real* dy = self.grad.data();
        if (ng.requires_grad) {
          auto g = ng.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) g[j] += dy[r * d + j] * xhat[r * d + j];
          }
        }
        if (nb.requires_grad) {
          auto g = nb.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) g[j] += dy[r * d + j];
          }
        }
        if (nx.requires_grad) {
          auto g = nx.ensure_grad();
          const real inv_d = real(1) / static_cast<real>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            real mean_dh = 0;
            real mean_dh_h = 0;
            for (std::size_t j = 0; j < d; ++j) {
              const real dh = dy[r * d + j] * gv[j];
              mean_dh += dh;
              mean_dh_h += dh * xhat[r * d + j];
            }
            mean_dh *= inv_d;
            mean_dh_h *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const real dh = dy[r * d + j] * gv[j];
              g[r * d + j] += inv_std[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
            }
          }
        }
      });
}

Tensor slice_last(const Tensor& x, std::size_t start, std::size_t count) {
  if (x.ndim() < 1 || start + count > x.shape().back()) {
    throw DimensionError("slice_last: [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of " + shape_str(x.shape()));
  }
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  Shape out_shape = x.shape();
  out_shape.back() = count;
  const auto px = x.data();
  Buffer out(rows * count);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(px.data() + r * d + start, count, out.data() + r * count);
  }
  return Tensor::make_result(out_shape, std::move(out), "slice_last", {x},
                             [d, rows, start, count](detail::Node& self) {
                               auto g = parent(self, 0).ensure_grad();
                               for (std::size_t r = 0; r < rows; ++r) {
                                 for (std::size_t j = 0; j < count; ++j) {
                                   g[r * d + start + j] += self.grad[r * count + j];
                                 }
                               }
                             });
}

Tensor concat_last(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_last: no inputs");
  Shape lead = parts[0].shape();
  lead.pop_back();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    Shape s = p.shape();
    const std::size_t w = s.back();
    s.pop_back();
    if (s != lead) throw DimensionError("concat_last: leading dims differ");
    widths.push_back(w);
    total += w;
  }
  const std::size_t rows = shape_numel(lead);
  Buffer out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pk = parts[k].data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(pk.data() + r * widths[k], widths[k], out.data() + r * total + offset);
    }
    offset += widths[k];
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  return Tensor::make_result(out_shape, std::move(out), "concat_last",
                             std::vector<Tensor>(parts.begin(), parts.end()),
                             [rows, total, widths](detail::Node& self) {
                               std::size_t off = 0;
                               for (std::size_t k = 0; k < widths.size(); ++k) {
                                 detail::Node& nk = parent(self, k);
                                 if (nk.requires_grad) {
                                   auto g = nk.ensure_grad();
                                   for (std::size_t r = 0; r < rows; ++r) {
                                     for (std::size_t j = 0; j < widths[k]; ++j) {
                                       g[r * widths[k] + j] += self.grad[r * total + off + j];
                                     }
                                   }
                                 }
                                 off += widths[k];
                               }
                             });
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  if (x.ndim() != 2 || start + count > x.dim(0)) {
    throw DimensionError("slice_rows: out of range for " + shape_str(x.shape()));
  }
  const std::size_t d = x.dim(1);
  const auto px = x.data();
  Buffer out(px.begin() + static_cast<std::ptrdiff_t>(start * d),
                        px.begin() + static_cast<std::ptrdiff_t>((start + count) * d));
  return Tensor::make_result({count, d}, std::move(out), "slice_rows", {x},
                             [start, d](detail::Node& self) {
                               auto g = parent(self, 0).ensure_grad();
                               for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                 g[start * d + i] += self.grad[i];
                               }
                             });
}

Tensor permute_tokens(const Tensor& x, std::span<const std::size_t> perm) {
  if (x.ndim() != 3 || perm.size() != x.dim(1)) {
    throw DimensionError("permute_tokens: permutation of length " + std::to_string(perm.size()) +
                         " for " + shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0), len = x.dim(1), d = x.dim(2);
  std::vector<std::size_t> p(perm.begin(), perm.end());
  for (auto v : p) {
    if (v >= len) throw DimensionError("permute_tokens: index out of range");
  }
  const auto px = x.data();
  Buffer out(px.size());
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t t = 0; t < len; ++t) {
      std::copy_n(px.data() + (n * len + p[t]) * d, d, out.data() + (n * len + t) * d);
    }
  }
  return Tensor::make_result(x.shape(), std::move(out), "permute_tokens", {x},
                             [batch, len, d, p = std::move(p)](detail::Node& self) {
                               auto g = parent(self, 0).ensure_grad();
                               for (std::size_t n = 0; n < batch; ++n) {
                                 for (std::size_t t = 0; t < len; ++t) {
                                   const real* src = self.grad.data() + (n * len + t) * d;
                                   real* dst = g.data() + (n * len + p[t]) * d;
                                   for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                                 }
                               }
                             });
}

Tensor replace_tokens(const Tensor& x, std::span<const std::uint8_t> replace, const Tensor& token) {
  if (x.ndim() != 3 || replace.size() != x.dim(0) * x.dim(1) || token.ndim() != 1 ||
      token.dim(0) != x.dim(2)) {
    throw DimensionError("replace_tokens: " + shape_str(x.shape()) + " with token " +
                         shape_str(token.shape()));
  }
  const std::size_t rows = replace.size(), d = x.dim(2);
  std::vector<std::uint8_t> sel(replace.begin(), replace.end());
  const auto px = x.data();
  const auto pt = token.data();
  Buffer out(px.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const real* src = sel[r] ? pt.data() : px.data() + r * d;
    std::copy_n(src, d, out.data() + r * d);
  }
  return Tensor::make_result(x.shape(), std::move(out), "replace_tokens", {x, token},
                             [rows, d, sel = std::move(sel)](detail::Node& self) {
                               detail::Node& nx = parent(self, 0);
                               detail::Node& nt = parent(self, 1);
                               if (nx.requires_grad) {
                                 auto g = nx.ensure_grad();
                                 for (std::size_t r = 0; r < rows; ++r) {
                                   if (sel[r]) continue;
                                   for (std::size_t j = 0; j < d; ++j) {
                                     g[r * d + j] += self.grad[r * d + j];
                                   }
                                 }
                               }
                               if (nt.requires_grad) {
                                 auto g = nt.ensure_grad();
                                 for (std::size_t r = 0; r < rows; ++r) {
                                   if (!sel[r]) continue;
                                   for (std::size_t j = 0; j < d; ++j) {
                                     g[j] += self.grad[r * d + j];
                                   }
                                 }
                               }
                             });
}

Tensor mean_tokens(const Tensor& x) {
  if (x.ndim() != 3) throw DimensionError("mean_tokens: expected [B,L,D], got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0), len = x.dim(1), d = x.dim(2);
  const auto px = x.data();
  Buffer out(batch * d, real(0));
  const real inv = real(1) / static_cast<real>(len);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t j = 0; j < d; ++j) out[n * d + j] += px[(n * len + t) * d + j];
    }
    for (std::size_t j = 0; j < d; ++j) out[n * d + j] *= inv;
  }
  return Tensor::make_result({batch, d}, std::move(out), "mean_tokens", {x},
                             [batch, len, d, inv](detail::Node& self) {
                               auto g = parent(self, 0).ensure_grad();
                               for (std::size_t n = 0; n < batch; ++n) {
                                 for (std::size_t t = 0; t < len; ++t) {
                                   for (std::size_t j = 0; j < d; ++j) {
                                     g[(n * len + t) * d + j] += self.grad[n * d + j] * inv;
                                   }
                                 }
                               }
                             });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::uint32_t> labels) {
  if (logits.ndim() != 2 || labels.size() != logits.dim(0)) {
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " with " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  const auto pl = logits.data();
  Buffer probs(pl.size());
  std::vector<std::uint32_t> lab(labels.begin(), labels.end());
  double total = 0;
  for (std::size_t n = 0; n < batch; ++n) {
    if (lab[n] >= classes) throw DimensionError("cross_entropy: label out of range");
    const real* row = pl.data() + n * classes;
    const real mx = *std::max_element(row, row + classes);
    real z = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      probs[n * classes + c] = std::exp(row[c] - mx);
      z += probs[n * classes + c];
    }
    for (std::size_t c = 0; c < classes; ++c) probs[n * classes + c] /= z;
    total += static_cast<double>(std::log(z) + mx - row[lab[n]]);
  }
  const real loss = static_cast<real>(total / static_cast<double>(batch));
  return Tensor::make_result({}, {loss}, "cross_entropy", {logits},
                             [batch, classes, probs = std::move(probs),
                              lab = std::move(lab)](detail::Node& self) {
                               auto g = parent(self, 0).ensure_grad();
                               const real s = self.grad[0] / static_cast<real>(batch);
                               for (std::size_t n = 0; n < batch; ++n) {
                                 for (std::size_t c = 0; c < classes; ++c) {
                                   const real onehot = c == lab[n] ? real(1) : real(0);
                                   g[n * classes + c] += s * (probs[n * classes + c] - onehot);
                                 }
                               }
                             });
}

Tensor masked_mse(const Tensor& pred, const Tensor& target, std::span<const std::uint8_t> select) {
  require_same_shape(pred, target, "masked_mse");
  if (pred.ndim() < 2) throw DimensionError("masked_mse: expected [..., L, D]");
  const std::size_t d = pred.shape().back();
  const std::size_t tokens = pred.numel() / d;
  if (select.size() != tokens) {
    throw DimensionError("masked_mse: " + std::to_string(select.size()) + " flags for " +
                         std::to_string(tokens) + " tokens");
  }
  std::vector<std::uint8_t> sel(select.begin(), select.end());
  std::size_t count = 0;
  double acc = 0;
  const auto pp = pred.data();
  const auto pt = target.data();
  for (std::size_t t = 0; t < tokens; ++t) {
    if (!sel[t]) continue;
    ++count;
    for (std::size_t j = 0; j < d; ++j) {
      const double e = static_cast<double>(pp[t * d + j]) - static_cast<double>(pt[t * d + j]);
      acc += e * e;
    }
  }
  const double denom = static_cast<double>(count * d);
  const real loss = count ? static_cast<real>(acc / denom) : real(0);
  return Tensor::make_result(
      {}, {loss}, "masked_mse", {pred, target},
      [d, tokens, count, sel = std::move(sel)](detail::Node& self) {
        if (count == 0) return;
        detail::Node& np = parent(self, 0);
        detail::Node& nt = parent(self, 1);
        const auto& pv = *np.data;
        const auto& tv = *nt.data;
        const real s = real(2) * self.grad[0] / static_cast<real>(count * d);
        if (np.requires_grad) {
          auto g = np.ensure_grad();
          for (std::size_t t = 0; t < tokens; ++t) {
            if (!sel[t]) continue;
            for (std::size_t j = 0; j < d; ++j) g[t * d + j] += s * (pv[t * d + j] - tv[t * d + j]);
          }
        }
        if (nt.requires_grad) {
          auto g = nt.ensure_grad();
          for (std::size_t t = 0; t < tokens; ++t) {
            if (!sel[t]) continue;
            for (std::size_t j = 0; j < d; ++j) g[t * d + j] -= s * (pv[t * d + j] - tv[t * d + j]);
          }
        }
      });
}

}  // namespace hmap
