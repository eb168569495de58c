#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "hmap/errors.hpp"
#include "hmap/numerics/ops.hpp"

using namespace hmap;
using testing::gradcheck;
using testing::random_normal;

namespace {

// 32-bit checks use h = 1e-3; 64-bit ones h = 1e-5.
constexpr double kGradTol = kDoublePrecision ? 1e-5 : 1e-3;

// Reduces any output to a scalar with fixed random weights so every output
// entry carries a distinct gradient.
Tensor weighted_sum(const Tensor& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  return sum(mul(y, random_normal(y.shape(), rng)));
}

void check_grad(const std::function<Tensor()>& f, testing::NamedLeaves leaves, double tol = kGradTol) {
  const auto r = gradcheck(f, std::move(leaves));
  INFO("worst entry " << r.worst << ", max abs err " << r.max_abs_error);
  CHECK(r.rel_error < tol);
}

BoolMask full_mask(std::size_t L, std::vector<std::uint8_t> bits) {
  BoolMask m;
  m.count = 1;
  m.rows = L;
  m.cols = L;
  m.bits = std::move(bits);
  return m;
}

}  // namespace

TEST_SUITE("numerics") {
  TEST_CASE("matmul: identity and hand arithmetic") {
    Rng rng(1);
    const Tensor x = random_normal({3, 4}, rng);
    const Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    const Tensor y = matmul(eye, x);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);

    const Tensor z = matmul(Tensor::from({2, 2}, {1, 2, 3, 4}), Tensor::from({2, 1}, {1, 1}));
    CHECK(z.shape() == Shape{2, 1});
    CHECK(z.data()[0] == 3);
    CHECK(z.data()[1] == 7);
  }

  TEST_CASE("matmul: inner dimension mismatch is a dimension error") {
    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
    CHECK_THROWS_AS(matmul_nt(Tensor::zeros({2, 3}), Tensor::zeros({2, 4})), DimensionError);
  }

  TEST_CASE("matmul: d sum(AB)/dA = ones * B^T, and finite differences agree") {
    Rng rng(2);
    Tensor a = random_normal({3, 4}, rng, true);
    const Tensor b = random_normal({4, 2}, rng);
    backward(sum(matmul(a, b)));
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t k = 0; k < 4; ++k) {
        const real expect = b.data()[k * 2] + b.data()[k * 2 + 1];
        CHECK(a.grad()[i * 4 + k] == doctest::Approx(expect).epsilon(1e-6));
      }
    const auto r = gradcheck([&] { return sum(matmul(a, b)); }, {{"a", a}});
    // linear in a: the only error left is rounding of the loss
    CHECK(r.rel_error < kGradTol);
  }

  TEST_CASE("softmax_masked: uniform, diagonal and closed form") {
    const Tensor uni = softmax_masked(Tensor::zeros({4, 4}), {});
    for (real p : uni.data()) CHECK(p == doctest::Approx(0.25));

    std::vector<std::uint8_t> diag(16, 0);
    for (int i = 0; i < 4; ++i) diag[i * 5] = 1;
    Rng rng(3);
    const Tensor d = softmax_masked(random_normal({4, 4}, rng), full_mask(4, diag));
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) CHECK(d.at({i, j}) == (i == j ? real(1) : real(0)));

    const Tensor two = softmax_masked(Tensor::from({1, 2}, {0, static_cast<real>(std::log(2.0))}),
                                      BoolMask{1, 1, 2, {1, 1}});
    CHECK(two.data()[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
    CHECK(two.data()[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-6));
  }

  TEST_CASE("softmax_masked: disallowed entries are exactly zero and rows sum to one") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t L = 1 + rng.below(7);
      std::vector<std::uint8_t> bits(L * L);
      for (std::size_t r = 0; r < L; ++r) {
        for (std::size_t c = 0; c < L; ++c) bits[r * L + c] = rng.uniform() < 0.5;
        bits[r * L + rng.below(L)] = 1;
      }
      const Tensor logits = scale(random_normal({L, L}, rng), 10);
      const Tensor p = softmax_masked(logits, full_mask(L, bits));
      for (std::size_t r = 0; r < L; ++r) {
        double row = 0.0;
        for (std::size_t c = 0; c < L; ++c) {
          if (!bits[r * L + c]) CHECK(p.data()[r * L + c] == real(0));
          row += p.data()[r * L + c];
        }
        CHECK(std::abs(row - 1.0) <= 1e-6);
      }
    }
  }

  TEST_CASE("softmax_masked: a row with no allowed key is a degenerate-mask error") {
    std::vector<std::uint8_t> bits = {1, 0, 0, 0};
    try {
      softmax_masked(Tensor::zeros({2, 2}), full_mask(2, bits));
      FAIL("expected DegenerateMaskError");
    } catch (const DegenerateMaskError& e) {
      CHECK(e.row() == 1);
    }
  }

  TEST_CASE("backward: x^2 at 3, constant softmax sum, non-scalar loss") {
    Tensor x = Tensor::scalar(3, true);
    backward(square(x));
    CHECK(x.grad()[0] == doctest::Approx(6));

    Rng rng(5);
    Tensor v = random_normal({1, 5}, rng, true);
    backward(sum(softmax_masked(v, {})));
    for (real g : v.grad()) CHECK(std::abs(g) < 1e-6);

    CHECK_THROWS_AS(backward(Tensor::zeros({2}, true)), ContractError);
  }

  TEST_CASE("backward: gradients accumulate across shared uses") {
    Tensor x = Tensor::scalar(2, true);
    backward(add(mul(x, x), x));  // 2x + 1
    CHECK(x.grad()[0] == doctest::Approx(5));
  }

  TEST_CASE("gradients of every differentiable op match central differences") {
    Rng rng(6);
    Tensor a = random_normal({2, 3, 4}, rng);
    Tensor b = random_normal({2, 4, 3}, rng);
    Tensor w = random_normal({4, 3}, rng);
    Tensor bias = random_normal({3}, rng);
    Tensor c = random_normal({2, 3, 4}, rng);
    Tensor v = random_normal({4}, rng);
    Tensor y = random_normal({3, 4}, rng);

    SUBCASE("matmul batched and shared") {
      check_grad([&] { return weighted_sum(matmul(a, b)); }, {{"a", a}, {"b", b}});
      check_grad([&] { return weighted_sum(matmul(a, w)); }, {{"a", a}, {"w", w}});
    }
    SUBCASE("matmul_nt") { check_grad([&] { return weighted_sum(matmul_nt(a, c)); }, {{"a", a}, {"c", c}}); }
    SUBCASE("linear") {
      check_grad([&] { return weighted_sum(linear(a, w, bias)); }, {{"a", a}, {"w", w}, {"bias", bias}});
    }
    SUBCASE("add sub mul scale") {
      check_grad([&] { return weighted_sum(mul(add(a, c), sub(a, scale(c, 0.5)))); }, {{"a", a}, {"c", c}});
    }
    SUBCASE("broadcasts") {
      check_grad([&] { return weighted_sum(mul_channels(add_batch_broadcast(a, y), v)); },
                 {{"a", a}, {"y", y}, {"v", v}});
    }
    SUBCASE("pointwise") {
      check_grad([&] { return weighted_sum(exp(scale(a, 0.5))); }, {{"a", a}});
      check_grad([&] { return weighted_sum(square(a)); }, {{"a", a}});
      check_grad([&] { return weighted_sum(silu(a)); }, {{"a", a}});
      check_grad([&] { return weighted_sum(gelu(a)); }, {{"a", a}});
      check_grad([&] { return weighted_sum(softplus(a)); }, {{"a", a}});
    }
    SUBCASE("reductions") {
      check_grad([&] { return mul(sum(a), mean(c)); }, {{"a", a}, {"c", c}});
      check_grad([&] { return weighted_sum(mean_tokens(a)); }, {{"a", a}});
    }
    SUBCASE("layer_norm") {
      Tensor g = random_normal({4}, rng);
      check_grad([&] { return weighted_sum(layer_norm(a, g, v)); }, {{"a", a}, {"g", g}, {"v", v}});
    }
    SUBCASE("softmax_masked") {
      Tensor logits = random_normal({2, 3, 3}, rng);
      const BoolMask m{1, 3, 3, {1, 0, 0, 1, 1, 0, 0, 1, 1}};
      check_grad([&] { return weighted_sum(softmax_masked(logits, m)); }, {{"logits", logits}});
    }
    SUBCASE("slicing and token shuffles") {
      check_grad([&] { return weighted_sum(concat_last(std::vector<Tensor>{slice_last(a, 1, 2), c})); },
                 {{"a", a}, {"c", c}});
      check_grad([&] { return weighted_sum(slice_rows(y, 1, 2)); }, {{"y", y}});
      const std::vector<std::size_t> perm = {2, 0, 1};
      check_grad([&] { return weighted_sum(permute_tokens(a, perm)); }, {{"a", a}});
      const std::vector<std::uint8_t> rep = {0, 1, 0, 1, 1, 0};
      check_grad([&] { return weighted_sum(replace_tokens(a, rep, v)); }, {{"a", a}, {"v", v}});
    }
    SUBCASE("losses") {
      Tensor logits = random_normal({4, 3}, rng);
      const std::vector<std::uint32_t> labels = {0, 2, 1, 2};
      check_grad([&] { return cross_entropy(logits, labels); }, {{"logits", logits}});
      const std::vector<std::uint8_t> sel = {1, 0, 1, 1, 0, 0};
      check_grad([&] { return masked_mse(a, c, sel); }, {{"a", a}, {"c", c}});
    }
    SUBCASE("selective_scan") {
      Tensor u = random_normal({2, 5, 3}, rng);
      Tensor d = softplus(random_normal({2, 5, 3}, rng)).detach();
      Tensor A = scale(exp(random_normal({3, 2}, rng)), -1).detach();
      Tensor B = random_normal({2, 5, 2}, rng);
      Tensor C = random_normal({2, 5, 2}, rng);
      check_grad([&] { return weighted_sum(selective_scan(u, d, A, B, C)); },
                 {{"u", u}, {"delta", d}, {"A", A}, {"B", B}, {"C", C}});
    }
    SUBCASE("causal_conv1d") {
      Tensor x = random_normal({2, 5, 3}, rng);
      Tensor k = random_normal({3, 2}, rng);
      Tensor kb = random_normal({3}, rng);
      check_grad([&] { return weighted_sum(causal_conv1d(x, k, kb)); }, {{"x", x}, {"k", k}, {"kb", kb}});
    }
  }

  TEST_CASE("selective_scan: hand recurrence and memoryless limit") {
    // one channel, one state, A = ln 0.5 so exp(delta * A) = 0.5
    const Tensor u = Tensor::from({1, 2, 1}, {1, 1});
    const Tensor d = Tensor::from({1, 2, 1}, {1, 1});
    const Tensor A = Tensor::from({1, 1}, {static_cast<real>(std::log(0.5))});
    const Tensor ones = Tensor::from({1, 2, 1}, {1, 1});
    const Tensor y = selective_scan(u, d, A, ones, ones);
    CHECK(y.data()[0] == doctest::Approx(1.0));
    CHECK(y.data()[1] == doctest::Approx(1.5));

    Rng rng(7);
    const Tensor uu = random_normal({1, 6, 2}, rng);
    const Tensor dd = Tensor::full({1, 6, 2}, 1);
    const Tensor AA = Tensor::full({2, 3}, -1e30f);
    const Tensor BB = random_normal({1, 6, 3}, rng);
    const Tensor CC = random_normal({1, 6, 3}, rng);
    const Tensor yy = selective_scan(uu, dd, AA, BB, CC);
    for (std::size_t t = 0; t < 6; ++t)
      for (std::size_t e = 0; e < 2; ++e) {
        double bc = 0.0;
        for (std::size_t s = 0; s < 3; ++s) bc += BB.data()[t * 3 + s] * CC.data()[t * 3 + s];
        CHECK(yy.data()[t * 2 + e] == doctest::Approx(bc * uu.data()[t * 2 + e]).epsilon(1e-5));
      }
  }

  TEST_CASE("selective_scan: an exploding state is a numeric error naming the step") {
    const Tensor u = Tensor::full({1, 200, 1}, 1);
    const Tensor d = Tensor::full({1, 200, 1}, 1);
    const Tensor A = Tensor::from({1, 1}, {50});
    const Tensor one = Tensor::full({1, 200, 1}, 1);
    try {
      selective_scan(u, d, A, one, one);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(e.step() > 0);
      CHECK(e.step() < 200);
    }
  }

  TEST_CASE("tensors: shape invariants and deterministic forwards") {
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
    const Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK(t.at({1, 2}) == 6);

    Rng r1(8), r2(8);
    const Tensor x1 = random_normal({4, 8}, r1), x2 = random_normal({4, 8}, r2);
    Rng rw(9);
    const Tensor w = random_normal({8, 8}, rw);
    const Tensor y1 = gelu(linear(layer_norm(x1, Tensor::full({8}, 1), Tensor::zeros({8})), w, {}));
    const Tensor y2 = gelu(linear(layer_norm(x2, Tensor::full({8}, 1), Tensor::zeros({8})), w, {}));
    for (std::size_t i = 0; i < y1.numel(); ++i) CHECK(y1.data()[i] == y2.data()[i]);
  }
}
