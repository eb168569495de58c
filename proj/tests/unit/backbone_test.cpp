#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "hmap/backbone/blocks.hpp"
#include "hmap/backbone/encoder.hpp"
#include "hmap/backbone/pattern.hpp"
#include "hmap/backbone/scan_order.hpp"
#include "hmap/errors.hpp"
#include "hmap/numerics/ops.hpp"

using namespace hmap;
using namespace hmap::backbone;

namespace {

constexpr double kGradTol = kDoublePrecision ? 1e-5 : 1e-3;

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, static_cast<double>(std::abs(a.data()[i] - b.data()[i])));
  return m;
}

void zero(Tensor& t) {
  for (auto& v : t.mutable_data()) v = 0;
}

}  // namespace

TEST_SUITE("backbone") {
  TEST_CASE("parse_pattern") {
    const auto p = parse_pattern("MMMTMMMT");
    const std::vector<BlockKind> expect = {BlockKind::mamba, BlockKind::mamba, BlockKind::mamba, BlockKind::transformer,
                                           BlockKind::mamba, BlockKind::mamba, BlockKind::mamba, BlockKind::transformer};
    CHECK(p.blocks == expect);
    CHECK(p.str() == "MMMTMMMT");
    CHECK(parse_pattern("T").blocks == std::vector<BlockKind>{BlockKind::transformer});
    CHECK_THROWS_AS(parse_pattern("MX"), ParseError);
    CHECK_THROWS_AS(parse_pattern(""), ParseError);
    CHECK_THROWS_AS(parse_pattern("mt"), ParseError);
  }

  TEST_CASE("scan orders") {
    const auto row = ScanOrder::make(ScanKind::row_first, 3, 4);
    CHECK(row.is_identity());
    const auto col = ScanOrder::make(ScanKind::column_first, 2, 2);
    CHECK(col.perm == std::vector<std::size_t>{0, 2, 1, 3});
    const auto c34 = ScanOrder::make(ScanKind::column_first, 3, 4);
    for (std::size_t t = 0; t < 12; ++t) {
      CHECK(c34.inverse[c34.perm[t]] == t);
      // step t visits column t / 3, row t % 3
      CHECK(c34.perm[t] == (t % 3) * 4 + t / 3);
    }
    CHECK(parse_scan_kind("col") == ScanKind::column_first);
    CHECK_THROWS_AS(parse_scan_kind("diagonal"), ParseError);
  }

  TEST_CASE("apply_scan_order permutes and undo restores exactly") {
    Rng rng(1);
    const Tensor x = testing::random_normal({2, 12, 3}, rng);
    const auto col = ScanOrder::make(ScanKind::column_first, 3, 4);
    const Tensor y = apply_scan_order(x, col);
    for (std::size_t t = 0; t < 12; ++t)
      for (std::size_t c = 0; c < 3; ++c) CHECK(y.data()[t * 3 + c] == x.data()[col.perm[t] * 3 + c]);
    const Tensor back = undo_scan_order(y, col);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(back.data()[i] == x.data()[i]);
    const Tensor same = apply_scan_order(x, ScanOrder::make(ScanKind::row_first, 3, 4));
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(same.data()[i] == x.data()[i]);
  }

  TEST_CASE("SSM block: discretized decay lies in (0, 1)") {
    Rng rng(2);
    SsmConfig c;
    c.dim = 8;
    const SsmBlock b = SsmBlock::init(c, rng);
    for (real a : b.a_log.data()) {
      const double A = -std::exp(static_cast<double>(a));
      CHECK(A < 0);
      CHECK(std::exp(0.5 * A) > 0);
      CHECK(std::exp(0.5 * A) < 1);
    }
  }

  TEST_CASE("SSM block: later tokens never change earlier outputs") {
    for (auto kind : {ScanKind::row_first, ScanKind::column_first}) {
      for (std::size_t conv : {0u, 3u}) {
        Rng rng(3 + conv);
        SsmConfig c;
        c.dim = 8;
        c.d_state = 4;
        c.conv_kernel = conv;
        const SsmBlock b = SsmBlock::init(c, rng);
        const auto order = ScanOrder::make(kind, 3, 3);
        const Tensor x = testing::random_normal({1, 9, 8}, rng);
        const Tensor base = b.forward(x, order);
        for (std::size_t s = 1; s < 9; ++s) {
          Tensor xp = x.detach();
          for (std::size_t k = 0; k < 8; ++k) xp.mutable_data()[order.perm[s] * 8 + k] -= 3;
          const Tensor y = b.forward(xp, order);
          for (std::size_t t = 0; t < s; ++t)
            for (std::size_t k = 0; k < 8; ++k)
              CHECK(y.data()[order.perm[t] * 8 + k] == base.data()[order.perm[t] * 8 + k]);
        }
      }
    }
  }

  TEST_CASE("SSM block: column-first equals row-first on the transposed grid") {
    Rng rng(4);
    SsmConfig c;
    c.dim = 8;
    c.d_state = 4;
    const SsmBlock b = SsmBlock::init(c, rng);
    const std::size_t M = 3, N = 5;
    const Tensor x = testing::random_normal({1, M * N, 8}, rng);
    Tensor xt = Tensor::zeros({1, M * N, 8});
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < N; ++j)
        for (std::size_t k = 0; k < 8; ++k) xt.mutable_data()[(j * M + i) * 8 + k] = x.data()[(i * N + j) * 8 + k];
    const Tensor y = b.forward(x, ScanOrder::make(ScanKind::column_first, M, N));
    const Tensor yt = b.forward(xt, ScanOrder::make(ScanKind::row_first, N, M));
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < N; ++j)
        for (std::size_t k = 0; k < 8; ++k)
          CHECK(std::abs(y.data()[(i * N + j) * 8 + k] - yt.data()[(j * M + i) * 8 + k]) <= 1e-6);
  }

  TEST_CASE("attention block: zero weights are a pure residual") {
    Rng rng(5);
    AttnBlock b = AttnBlock::init({8, 2, 2}, rng);
    for (Tensor* t : {&b.w_qkv, &b.b_qkv, &b.w_o, &b.b_o, &b.w_fc1, &b.b_fc1, &b.w_fc2, &b.b_fc2}) zero(*t);
    const Tensor x = testing::random_normal({2, 5, 8}, rng);
    const Tensor y = b.forward(x);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
  }

  TEST_CASE("attention block: permutation equivariant") {
    Rng rng(6);
    const AttnBlock b = AttnBlock::init({8, 2, 2}, rng);
    const Tensor x = testing::random_normal({1, 5, 8}, rng);
    const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
    const Tensor a = permute_tokens(b.forward(x), perm);
    const Tensor c = b.forward(permute_tokens(x, perm));
    CHECK(max_abs_diff(a, c) <= 1e-5);
  }

  TEST_CASE("blocks: gradients match finite differences") {
    Rng rng(7);
    SUBCASE("attention on 4 tokens") {
      AttnBlock b = AttnBlock::init({8, 2, 2}, rng);
      Tensor x = testing::random_normal({1, 4, 8}, rng);
      testing::NamedLeaves leaves = {{"x", x}};
      b.visit("attn.", [&](const std::string& n, Tensor& t, bool) { leaves.emplace_back(n, t); });
      Rng wr(70);
      const Tensor w = testing::random_normal({1, 4, 8}, wr);
      const auto r = testing::gradcheck([&] { return sum(mul(b.forward(x), w)); }, leaves);
      INFO(r.worst);
      CHECK(r.rel_error < kGradTol);
    }
    SUBCASE("SSM with conv") {
      SsmConfig c;
      c.dim = 8;
      c.d_state = 4;
      c.conv_kernel = 2;
      SsmBlock b = SsmBlock::init(c, rng);
      Tensor x = testing::random_normal({1, 6, 8}, rng);
      testing::NamedLeaves leaves = {{"x", x}};
      b.visit("ssm.", [&](const std::string& n, Tensor& t, bool) { leaves.emplace_back(n, t); });
      Rng wr(71);
      const Tensor w = testing::random_normal({1, 6, 8}, wr);
      const auto order = ScanOrder::make(ScanKind::column_first, 2, 3);
      const auto r = testing::gradcheck([&] { return sum(mul(b.forward(x, order), w)); }, leaves);
      INFO(r.worst);
      CHECK(r.rel_error < kGradTol);
    }
  }

  TEST_CASE("encoder: masked contents never reach the output") {
    auto m = testing::tiny_model(8, 3, 3, "MTM");
    Rng rng(80);
    const auto plan = masking::build_mask_plan(3, 3, 0.5, masking::MaskStrategy::random, 4);
    Tensor tokens = testing::random_pixels({1, 9, 4}, rng);
    const Tensor base = m.encoder.forward(tokens, plan);
    // swap and scramble masked tokens' pixels
    for (std::size_t t = 0; t < 9; ++t)
      if (plan.is_masked(t))
        for (std::size_t k = 0; k < 4; ++k) tokens.mutable_data()[t * 4 + k] = static_cast<real>(rng.uniform());
    const Tensor after = m.encoder.forward(tokens, plan);
    for (std::size_t i = 0; i < base.numel(); ++i) CHECK(after.data()[i] == base.data()[i]);
  }

  TEST_CASE("encoder: empty plan equals the unmasked forward; plans compare by positions") {
    auto m = testing::tiny_model(9, 2, 4, "MT");
    Rng rng(90);
    const Tensor tokens = testing::random_pixels({2, 8, 4}, rng);
    const Tensor plain = m.encoder.forward(tokens, std::span<const std::uint8_t>{});
    const Tensor zero_plan = m.encoder.forward(tokens, masking::build_mask_plan(2, 4, 0.0, masking::MaskStrategy::random, 1));
    for (std::size_t i = 0; i < plain.numel(); ++i) CHECK(plain.data()[i] == zero_plan.data()[i]);

    // sequential plans ignore the seed: same positions, same output
    const auto p1 = masking::build_mask_plan(2, 4, 0.5, masking::MaskStrategy::sequential, 1);
    const auto p2 = masking::build_mask_plan(2, 4, 0.5, masking::MaskStrategy::sequential, 2);
    const Tensor a = m.encoder.forward(tokens, p1);
    const Tensor b = m.encoder.forward(tokens, p2);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);
  }

  TEST_CASE("encoder: dimension mismatches are contract errors") {
    auto m = testing::tiny_model(10, 2, 2, "MT");
    CHECK_THROWS_AS(m.encoder.forward(Tensor::zeros({1, 5, 4}), std::span<const std::uint8_t>{}), Error);
    CHECK_THROWS_AS(m.encoder.forward(Tensor::zeros({1, 4, 4}),
                                      masking::build_mask_plan(3, 3, 0.5, masking::MaskStrategy::random, 0)),
                    ContractError);
  }

  TEST_CASE("encoder: parameter names are unique and dotted") {
    auto m = testing::tiny_model(11, 2, 2, "MMT");
    std::vector<std::string> names;
    m.encoder.visit("encoder.", [&](const std::string& n, Tensor&, bool) { names.push_back(n); });
    std::sort(names.begin(), names.end());
    CHECK(std::adjacent_find(names.begin(), names.end()) == names.end());
    CHECK(std::find(names.begin(), names.end(), "encoder.mask_token") != names.end());
    CHECK(std::find(names.begin(), names.end(), "encoder.blocks.2.qkv.weight") != names.end());
  }
}
