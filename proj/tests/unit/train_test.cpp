#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "fixtures.hpp"
#include "hmap/errors.hpp"
#include "hmap/train/ablation.hpp"
#include "hmap/train/checkpoint.hpp"
#include "hmap/train/config.hpp"
#include "hmap/train/session.hpp"
#include "hmap/train/trainer.hpp"

using namespace hmap;
using namespace hmap::train;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("hmap_train_" + name)).string();
}

std::size_t config_error_line(std::string_view text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.line();
  }
  FAIL("config parsed unexpectedly");
  return 0;
}

std::string error_text(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.config_json = config_to_json(TrainConfig{});
  c.params = {{"encoder.a", {2, 3}, {1, 2, 3, 4, 5, 6}}, {"encoder.b", {1}, {-0.5f}}};
  c.optimizer = {{"encoder.a.m", {6}, std::vector<real>(6, 0.25f)}, {"adam.t", {1}, {3}}};
  c.step = 42;
  Rng rng(9);
  rng.next_u64();
  c.rng = rng.state();
  return c;
}

}  // namespace

TEST_SUITE("train") {
  TEST_CASE("config: empty text gives defaults") {
    CHECK(parse_config("") == TrainConfig{});
    CHECK(parse_config("\n# comment\n; another\n\n") == TrainConfig{});
  }

  TEST_CASE("config: sections, comments and values") {
    const auto c = parse_config(
        "[model]\npattern = MMTT\ndim = 32\n\n[objective]\n# ratio\nmask_ratio = 0.25\n"
        "decoder_mask = local_mae\nself_visible = false\n[train]\nseed = 17\nmode = finetune\n");
    CHECK(c.pattern == "MMTT");
    CHECK(c.dim == 32);
    CHECK(c.mask_ratio == 0.25);
    CHECK(c.decoder_mask == masking::DecoderMask::local_mae);
    CHECK_FALSE(c.self_visible);
    CHECK(c.seed == 17);
    CHECK(c.mode == Mode::finetune);
  }

  TEST_CASE("config: errors carry line numbers and valid keys") {
    CHECK(config_error_line("dim = 8\nmask_ratio = 1.5\n") == 2);
    CHECK(config_error_line("dim = 8\n\nno equals sign\n") == 3);
    CHECK(config_error_line("[bad\n") == 1);
    CHECK(config_error_line("dim = -4\n") == 1);
    const std::string msg = error_text([] { parse_config("colour = red\n"); });
    CHECK(msg.find("unknown key 'colour'") != std::string::npos);
    CHECK(msg.find("mask_ratio") != std::string::npos);
    CHECK(msg.find("decoder_mask") != std::string::npos);
  }

  TEST_CASE("config: validation rejects inconsistent values") {
    TrainConfig c;
    c.mask_ratio = 1.5;
    CHECK_THROWS_AS(validate(c), ConfigError);
    c = {};
    c.patch_size = 5;
    CHECK_THROWS_AS(validate(c), ConfigError);
    c = {};
    c.num_classes = 9;
    CHECK_THROWS_AS(validate(c), ConfigError);
    c = {};
    c.pattern = "MQ";
    CHECK_THROWS_AS(validate(c), ConfigError);
    CHECK_NOTHROW(validate(TrainConfig{}));
  }

  TEST_CASE("config: dump and JSON round-trip") {
    TrainConfig c = testing::tiny_train_config();
    c.mask_ratio = 0.3;
    c.scan_order = backbone::ScanKind::column_first;
    c.mask_strategy = masking::MaskStrategy::diagonal;
    c.lr = 3.25e-4;
    c.dataset = "some/path.bin";
    CHECK(parse_config(dump_config(c)) == c);
    CHECK(config_from_json(config_to_json(c)) == c);
    for (const auto& key : config_keys()) {
      TrainConfig d;
      set_key(d, key, get_key(c, key));
      CHECK(get_key(d, key) == get_key(c, key));
    }
    CHECK(config_help().find("mask_ratio") != std::string::npos);
  }

  TEST_CASE("checkpoint: encode/decode round-trip and layout") {
    const Checkpoint c = sample_checkpoint();
    const std::string bytes = encode_checkpoint(c);
    CHECK(bytes.substr(0, 8) == "MAPCKPT1");
    CHECK(static_cast<unsigned char>(bytes[8]) == 1);
    CHECK(decode_checkpoint(bytes) == c);

    const std::string path = temp_path("roundtrip.ckpt");
    save_checkpoint(path, c);
    CHECK(load_checkpoint(path) == c);
    std::remove(path.c_str());
  }

  TEST_CASE("checkpoint: damage is an IO error") {
    const std::string bytes = encode_checkpoint(sample_checkpoint());
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad), IoError);
    bad = bytes;
    bad[8] = 7;
    CHECK_THROWS_AS(decode_checkpoint(bad), IoError);
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), IoError);
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, 20)), IoError);
    CHECK_THROWS_AS(load_checkpoint(temp_path("does_not_exist.ckpt")), IoError);
  }

  TEST_CASE("trainer: one pretraining epoch on 64 images") {
    TrainConfig c = testing::tiny_train_config();
    c.num_samples = 64;
    c.epochs = 1;
    std::vector<std::string> lines;
    Trainer t(c, load_dataset(c), [&](const std::string& l) { lines.push_back(l); });
    CHECK(t.steps_per_epoch() == 4);
    CHECK(t.total_steps() == 4);
    std::ostringstream csv;
    const auto summary = t.run(&csv);
    CHECK(summary.epochs.size() == 1);
    CHECK(std::isfinite(summary.epochs[0].loss));
    CHECK(summary.epochs[0].loss > 0);
    CHECK(summary.epochs[0].report.row_mse.size() == 4);
    CHECK(t.step() == 4);
    CHECK(csv.str().rfind(t.metrics_header(), 0) == 0);
    CHECK_FALSE(lines.empty());
  }

  TEST_CASE("trainer: restored checkpoint continues identically") {
    TrainConfig c = testing::tiny_train_config();
    Trainer a(c, load_dataset(c));
    a.train_step();
    a.train_step();
    Trainer b(c, load_dataset(c));
    b.restore(decode_checkpoint(encode_checkpoint(a.checkpoint())));
    CHECK(b.step() == 2);
    for (int i = 0; i < 2; ++i) CHECK(a.train_step().loss == b.train_step().loss);
    CHECK(encode_checkpoint(a.checkpoint()) == encode_checkpoint(b.checkpoint()));
  }

  TEST_CASE("finetune: an incompatible checkpoint names the field") {
    TrainConfig pre = testing::tiny_train_config();
    pre.epochs = 1;
    const auto p = pretrain(pre);
    TrainConfig ft = pre;
    ft.mode = Mode::finetune;
    ft.dim = 24;
    try {
      finetune(ft, &p.checkpoint);
      FAIL("finetune accepted a mismatched checkpoint");
    } catch (const IncompatibleCheckpointError& e) {
      CHECK(e.field() == "dim");
    }
    ft.dim = pre.dim;
    const auto r = finetune(ft, &p.checkpoint);
    CHECK_FALSE(r.from_scratch);
    CHECK(r.eval_records > 0);
  }

  TEST_CASE("finetune: frozen random backbone still beats chance") {
    TrainConfig c = testing::tiny_train_config();
    c.mode = Mode::finetune;
    c.freeze_backbone = true;
    c.num_samples = 400;
    c.epochs = 4;
    c.finetune_lr = 5e-3;
    const auto r = finetune(c);
    CHECK(r.from_scratch);
    CHECK(r.eval_records == 80);
    CHECK(r.accuracy > 0.4);
  }

  TEST_CASE("ablation: grids") {
    CHECK(named_grid("decoder_mask").axes[0].values.size() == 4);
    CHECK_THROWS_AS(named_grid("nope"), ConfigError);
    for (const auto& name : named_grids()) CHECK_NOTHROW(named_grid(name));

    const auto g = parse_grid("# c\nmask_ratio = 0.25, 0.5\nset decoder_mask = mae\nfinetune = false\n");
    CHECK(g.axes.size() == 1);
    CHECK(g.axes[0].values == std::vector<std::string>{"0.25", "0.5"});
    CHECK(g.fixed.size() == 1);
    CHECK_FALSE(g.finetune);

    std::ostringstream csv;
    const auto rows = run_ablation(parse_grid(""), testing::tiny_train_config(), {}, &csv);
    CHECK(rows.empty());
    CHECK(csv.str() == ablation_csv_header(parse_grid("")) + "\n");
  }

  TEST_CASE("ablation: a failing cell is recorded and the grid continues") {
    TrainConfig base = testing::tiny_train_config();
    base.epochs = 1;
    base.num_samples = 32;
    const auto g = parse_grid("mask_ratio = 1.5, 0.5\nfinetune = false\n");
    std::ostringstream csv;
    const auto rows = run_ablation(g, base, {}, &csv);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].status != "ok");
    CHECK_FALSE(rows[0].pretrain_mse);
    CHECK(rows[1].status == "ok");
    CHECK(rows[1].pretrain_mse);
    CHECK_FALSE(rows[1].accuracy);
  }
}
