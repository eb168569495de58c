#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "map_cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "map");
  std::ostringstream out, err;
  const int code = hmap::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "hmap_cli_test";
  fs::create_directories(dir);
  return dir / name;
}

// 16x16 images on a 4x4 grid; a couple of epochs run in well under a second.
fs::path tiny_config() {
  const fs::path p = scratch("tiny.cfg");
  std::ofstream(p) << "[model]\npattern = MTM\nimage_size = 16\npatch_size = 4\ndim = 16\nd_state = 4\n"
                      "[objective]\ndecoder_depth = 1\ndecoder_dim = 16\n"
                      "[train]\nepochs = 2\nbatch_size = 16\nnum_samples = 48\nseed = 3\n";
  return p;
}

std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::string value_of(const std::string& out, const std::string& key) {
  for (const auto& line : split_lines(out))
    if (line.rfind(key + "=", 0) == 0) return line.substr(key.size() + 1);
  return {};
}

}  // namespace

TEST_CASE("help text matches the golden copy") {
  const Run r = run({"--help"});
  CHECK(r.code == 0);
  const std::string golden = slurp(fs::path(HMAP_GOLDEN_DIR) / "help.txt");
  REQUIRE_FALSE(golden.empty());
  CHECK(r.out == golden);
}

TEST_CASE("usage errors exit 1") {
  CHECK(run({}).code == 1);
  CHECK(run({"mask-dump", "--bogus"}).code == 1);
  CHECK(run({"mask-dump", "--ratio", "1.5"}).code == 1);
  CHECK(run({"mask-dump", "--strategy", "sideways"}).code == 1);
  CHECK(run({"pretrain", "--set", "dim"}).code == 1);

  const Run r = run({"pretrain", "--set", "colour=red"});
  CHECK(r.code == 1);
  CHECK(r.err.find("unknown key 'colour'") != std::string::npos);
  CHECK(r.err.find("mask_ratio") != std::string::npos);
}

TEST_CASE("mask-dump writes an LxL matrix") {
  const Run r = run({"mask-dump", "--grid", "8x8", "--ratio", "0.5", "--strategy", "map", "--seed", "7"});
  REQUIRE(r.code == 0);
  const auto lines = split_lines(r.out);
  CHECK(lines.size() == 64);
  for (const auto& l : lines) CHECK(std::count(l.begin(), l.end(), ',') == 63);

  const Run again = run({"mask-dump", "--grid", "8x8", "--ratio", "0.5", "--strategy", "map", "--seed", "7"});
  CHECK(again.out == r.out);

  const Run ar = run({"mask-dump", "--grid", "2x2", "--ratio", "0", "--strategy", "ar"});
  CHECK(ar.out == "1,0,0,0\n1,1,0,0\n1,1,1,0\n1,1,1,1\n");

  const Run pbm = run({"mask-dump", "--grid", "2x3", "--format", "pbm"});
  CHECK(pbm.out.rfind("P1\n", 0) == 0);
  CHECK(pbm.out.find("\n6 6\n") != std::string::npos);

  const Run plan = run({"mask-dump", "--grid", "3x8", "--ratio", "0.5", "--mask-strategy", "sequential",
                        "--show", "plan"});
  CHECK(split_lines(plan.out).size() == 3);
}

TEST_CASE("missing files exit 2") {
  CHECK(run({"pretrain", "--config", scratch("absent.cfg").string()}).code == 2);
  CHECK(run({"eval", "--checkpoint", scratch("absent.ckpt").string()}).code == 2);
}

TEST_CASE("pretrain, finetune and eval") {
  const std::string cfg = tiny_config().string();
  const std::string ckpt = scratch("pre.ckpt").string();
  const std::string metrics = scratch("pre.csv").string();

  const Run pre = run({"pretrain", "--config", cfg, "--out", ckpt, "--metrics", metrics});
  REQUIRE(pre.code == 0);
  CHECK(value_of(pre.out, "checkpoint") == ckpt);
  CHECK(fs::exists(ckpt));
  const std::string first_metrics = slurp(metrics);
  CHECK(split_lines(first_metrics).size() == 3);  // header + 2 epochs

  // same seed, same bytes
  const std::string ckpt2 = scratch("pre2.ckpt").string();
  const std::string metrics2 = scratch("pre2.csv").string();
  REQUIRE(run({"pretrain", "--config", cfg, "--out", ckpt2, "--metrics", metrics2}).code == 0);
  CHECK(slurp(metrics2) == first_metrics);
  CHECK(slurp(ckpt2) == slurp(ckpt));

  const Run ev = run({"eval", "--checkpoint", ckpt});
  REQUIRE(ev.code == 0);
  CHECK_FALSE(value_of(ev.out, "masked_mse").empty());

  const std::string fck = scratch("ft.ckpt").string();
  const Run ft = run({"finetune", "--config", cfg, "--init", ckpt, "--out", fck, "--metrics",
                      scratch("ft.csv").string()});
  REQUIRE(ft.code == 0);
  CHECK(value_of(ft.out, "from_scratch") == "false");
  const double acc = std::stod(value_of(ft.out, "accuracy"));
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);

  const Run fev = run({"eval", "--checkpoint", fck});
  REQUIRE(fev.code == 0);
  CHECK(value_of(fev.out, "accuracy") == value_of(ft.out, "accuracy"));

  const Run bad = run({"finetune", "--config", cfg, "--init", ckpt, "--set", "dim=24", "--out", fck});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("'dim'") != std::string::npos);
}

TEST_CASE("make-data writes an archive the trainer accepts") {
  const std::string arc = scratch("data.bin").string();
  const Run mk = run({"make-data", "--out", arc, "--count", "48", "--size", "16"});
  REQUIRE(mk.code == 0);
  CHECK(fs::exists(arc));
  const Run pre = run({"pretrain", "--config", tiny_config().string(), "--set", "dataset=" + arc, "--set",
                       "epochs=1", "--out", scratch("arc.ckpt").string(), "--metrics",
                       scratch("arc.csv").string()});
  CHECK(pre.code == 0);

  const Run wrong = run({"pretrain", "--config", tiny_config().string(), "--set", "dataset=" + arc, "--set",
                         "image_size=32", "--out", scratch("arc.ckpt").string()});
  CHECK(wrong.code == 2);
}

TEST_CASE("ablate runs a named grid") {
  const std::string out = scratch("ablate.csv").string();
  const Run r = run({"ablate", "--grid", "decoder_mask", "--config", tiny_config().string(), "--set", "epochs=1",
                     "--out", out});
  REQUIRE(r.code == 0);
  const auto lines = split_lines(slurp(out));
  CHECK(lines.size() == 5);
  CHECK(run({"ablate", "--grid", "no_such_grid"}).code == 1);
}
