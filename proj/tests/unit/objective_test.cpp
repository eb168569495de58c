#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "hmap/errors.hpp"
#include "hmap/masking/visibility.hpp"
#include "hmap/numerics/ops.hpp"
#include "hmap/objective/decoder.hpp"
#include "hmap/objective/loss.hpp"
#include "hmap/objective/pilot.hpp"
#include "hmap/objective/teacher_forcing.hpp"

using namespace hmap;
using namespace hmap::objective;
using masking::DecoderMask;

namespace {

masking::MaskPlan plan_of(std::size_t rows, std::size_t cols, std::vector<std::uint8_t> flags) {
  return masking::plan_from_flags(rows, cols, flags);
}

}  // namespace

TEST_SUITE("objective") {
  TEST_CASE("map_loss: exact prediction, hand arithmetic, index set") {
    const auto plan = plan_of(1, 3, {1, 0, 1});
    const Tensor target = Tensor::from({3, 1}, {0, 0, 0});
    CHECK(map_loss(target, std::vector<Tensor>{target}.front(), std::vector<masking::MaskPlan>{plan}).report.total_mse == 0);

    const Tensor pred = Tensor::from({3, 1}, {1, 100, 3});
    const auto r = map_loss(pred, target, std::vector<masking::MaskPlan>{plan});
    CHECK(r.report.total_mse == doctest::Approx(5));
    CHECK(r.loss.item() == doctest::Approx(5));
    CHECK(r.report.token_count == 2);

    const Tensor other = Tensor::from({3, 1}, {1, -7, 3});
    CHECK(map_loss(other, target, std::vector<masking::MaskPlan>{plan}).report.total_mse == r.report.total_mse);
  }

  TEST_CASE("map_loss: empty plan is zero with a flag") {
    const auto plan = plan_of(2, 2, {0, 0, 0, 0});
    Rng rng(1);
    const auto r = map_loss(testing::random_normal({4, 3}, rng), testing::random_normal({4, 3}, rng),
                            std::vector<masking::MaskPlan>{plan});
    CHECK(r.report.empty_plan);
    CHECK(r.report.total_mse == 0);
    CHECK(r.loss.item() == 0);
  }

  TEST_CASE("map_loss: per-row breakdown is consistent with the total") {
    Rng rng(2);
    for (int i = 0; i < 20; ++i) {
      const std::size_t M = 1 + rng.below(5), N = 1 + rng.below(5);
      std::vector<masking::MaskPlan> plans = {testing::bernoulli_plan(M, N, 0.6, rng),
                                              testing::bernoulli_plan(M, N, 0.6, rng)};
      const Tensor pred = testing::random_normal({2, M * N, 3}, rng);
      const Tensor target = testing::random_normal({2, M * N, 3}, rng);
      const auto r = map_loss(pred, target, plans).report;
      CHECK(r.row_mse.size() == M);
      double weighted = 0.0;
      std::size_t n = 0;
      for (std::size_t row = 0; row < M; ++row) {
        weighted += r.row_mse[row] * static_cast<double>(r.row_tokens[row]);
        n += r.row_tokens[row];
        CHECK(r.row_mse[row] >= 0);
      }
      CHECK(n == r.token_count);
      if (n) CHECK(weighted / static_cast<double>(n) == doctest::Approx(r.total_mse).epsilon(1e-6));
    }
  }

  TEST_CASE("map_loss: targets from make_targets") {
    Rng rng(3);
    data::Image img{1, 4, 4, std::vector<float>(16)};
    for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
    const auto target = data::make_targets(data::patchify(img, {2, 2}));
    const auto plan = plan_of(2, 2, {1, 0, 0, 1});
    CHECK(map_loss(target.normalized, target, plan).report.total_mse == 0);
  }

  TEST_CASE("decode: MAP predictions ignore later encoder rows") {
    auto m = testing::tiny_model(4, 3, 3, "MT", 2);
    Rng rng(40);
    const auto plan = testing::bernoulli_plan(3, 3, 0.5, rng);
    const auto vis = masking::build_visibility(plan, DecoderMask::map);
    const Tensor enc = testing::random_normal({1, 9, 8}, rng);
    const Tensor pred = decode(m.decoder, enc, plan, vis);
    CHECK(pred.shape() == Shape{1, 9, 4});
    Tensor cut = enc.detach();
    for (std::size_t i = 6 * 8; i < 9 * 8; ++i) cut.mutable_data()[i] = 0;
    const Tensor p2 = decode(m.decoder, cut, plan, vis);
    for (std::size_t i = 0; i < 6 * 4; ++i) CHECK(p2.data()[i] == pred.data()[i]);
  }

  TEST_CASE("decode: single-row grid, MAP and local MAE agree on unmasked queries") {
    auto m = testing::tiny_model(5, 1, 4, "MT", 1);
    Rng rng(50);
    const auto plan = plan_of(1, 4, {0, 0, 0, 0});
    const Tensor enc = testing::random_normal({1, 4, 8}, rng);
    const Tensor a = decode(m.decoder, enc, plan, masking::build_visibility(plan, DecoderMask::map));
    const Tensor b = decode(m.decoder, enc, plan, masking::build_visibility(plan, DecoderMask::local_mae));
    const Tensor c = decode(m.decoder, enc, plan, masking::build_visibility(plan, DecoderMask::mae));
    for (std::size_t i = 0; i < a.numel(); ++i) {
      CHECK(a.data()[i] == b.data()[i]);
      CHECK(b.data()[i] == c.data()[i]);
    }
  }

  TEST_CASE("decode: mismatched plan or matrix is a contract error") {
    auto m = testing::tiny_model(6, 2, 2, "MT", 1);
    const auto plan = plan_of(2, 2, {1, 0, 0, 0});
    const auto other = plan_of(3, 3, std::vector<std::uint8_t>(9, 0));
    const Tensor enc = Tensor::zeros({1, 4, 8});
    CHECK_THROWS_AS(decode(m.decoder, enc, plan, masking::build_visibility(other, DecoderMask::map)), ContractError);
    CHECK_THROWS_AS(decode(m.decoder, enc, other, masking::build_visibility(other, DecoderMask::map)), ContractError);
  }

  TEST_CASE("teacher forcing: parallel equals row-by-row; corrupted mask diverges") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto m = testing::tiny_model(seed, 4, 4, "MT", 2);
      Rng rng(seed + 60);
      const Tensor tokens = testing::random_pixels({1, 16, 4}, rng);
      auto plan = testing::bernoulli_plan(4, 4, 0.5, rng);
      std::vector<std::uint8_t> flags = plan.flags();
      flags[1] = 1;
      plan = masking::plan_from_flags(4, 4, flags);
      const auto vis = masking::build_visibility(plan, DecoderMask::map);
      const auto ok = teacher_forcing_equivalence(m.encoder, m.decoder, tokens, plan, vis);
      CHECK(ok.max_abs_deviation <= 1e-5);
      CHECK(ok.compared == plan.total());

      auto bad = vis;
      bad.set(1, 12, true);
      CHECK(teacher_forcing_equivalence(m.encoder, m.decoder, tokens, plan, bad).max_abs_deviation > 1e-4);
    }
  }

  TEST_CASE("teacher forcing: a single row is exact") {
    auto m = testing::tiny_model(7, 1, 5, "TM", 2);
    Rng rng(70);
    const Tensor tokens = testing::random_pixels({1, 5, 4}, rng);
    const auto plan = plan_of(1, 5, {1, 0, 1, 1, 0});
    const auto r = teacher_forcing_equivalence(m.encoder, m.decoder, tokens, plan,
                                               masking::build_visibility(plan, DecoderMask::map));
    CHECK(r.max_abs_deviation == 0.0);
  }

  TEST_CASE("objective_loss: all four decoder masks run through one path") {
    auto m = testing::tiny_model(8, 2, 2, "MT", 1);
    Rng rng(80);
    ObjectiveBatch b;
    b.tokens = testing::random_pixels({1, 4, 4}, rng);
    b.targets = data::normalize_tokens(b.tokens);
    b.plans = {plan_of(2, 2, {0, 1, 1, 0})};
    std::vector<double> losses;
    for (auto s : {DecoderMask::ar, DecoderMask::mae, DecoderMask::local_mae, DecoderMask::map}) {
      b.vis = {masking::build_visibility(b.plans[0], s)};
      const auto r = objective_loss(m.encoder, m.decoder, b);
      CHECK(std::isfinite(r.report.total_mse));
      CHECK(r.report.token_count == 2);
      losses.push_back(r.report.total_mse);
    }
    CHECK(losses[1] != losses[3]);
  }

  TEST_CASE("metrics CSV row format") {
    LossReport r;
    r.total_mse = 0.5;
    r.row_mse = {0.25, 0.75};
    CHECK(metrics_csv_header(2) == "step,total_mse,row_0,row_1");
    CHECK(metrics_csv_row(7, r) == "7,0.5,0.25,0.75");
  }

  TEST_CASE("pilot AR: conditioning sets") {
    PilotSetup s;
    s.masked_tokens = 1;
    const auto plan = pilot_plan(2, 2, s);
    CHECK(plan.total() == 1);
    CHECK(plan.is_masked(3));
    const auto vis = pilot_visibility(plan, s);
    CHECK(conditioning_set(vis, 3) == std::vector<std::size_t>{0, 1, 2});
    CHECK(conditioning_set(vis, 0).empty());
    CHECK_THROWS_AS(conditioning_set(vis, 4), ContractError);
  }

  TEST_CASE("pilot AR: column order equals row order on the transposed grid") {
    const std::size_t M = 3, N = 4;
    PilotSetup col;
    col.ar_order = backbone::ScanKind::column_first;
    col.masked_tokens = 2;
    PilotSetup row;
    row.masked_tokens = 2;
    const auto vc = pilot_visibility(pilot_plan(M, N, col), col);
    const auto vr = pilot_visibility(pilot_plan(N, M, row), row);
    auto tr = [&](std::size_t t) { return (t % N) * M + t / N; };  // (i, j) -> (j, i)
    for (std::size_t q = 0; q < M * N; ++q) {
      std::vector<std::size_t> mapped;
      for (std::size_t k : conditioning_set(vc, q)) mapped.push_back(tr(k));
      std::sort(mapped.begin(), mapped.end());
      CHECK(mapped == conditioning_set(vr, tr(q)));
    }
  }

  TEST_CASE("pilot AR: one masked token means the loss covers exactly one token") {
    auto m = testing::tiny_model(9, 4, 4, "MT", 1);
    Rng rng(90);
    const Tensor tokens = testing::random_pixels({2, 16, 4}, rng);
    PilotSetup s;
    s.masked_tokens = 1;
    const auto r = pilot_ar_objective(m.encoder, m.decoder, tokens, data::normalize_tokens(tokens), s);
    CHECK(r.report.token_count == 2);  // one per batch item
    CHECK(r.report.row_tokens.back() == 2);
  }
}
