#include "map_cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "hmap/data/archive.hpp"
#include "hmap/data/synth.hpp"
#include "hmap/errors.hpp"
#include "hmap/masking/visibility.hpp"
#include "hmap/train/ablation.hpp"
#include "hmap/train/checkpoint.hpp"
#include "hmap/train/session.hpp"

namespace hmap::cli {
namespace {

using train::TrainConfig;

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "key = value config file (see keys below)");
  cmd->add_option("--seed", c.seed, "overrides the seed key");
  cmd->add_option("--set", c.sets, "key=value override, repeatable");
}

TrainConfig resolve(const Common& c, train::Mode mode, TrainConfig base = {}) {
  TrainConfig config = base;
  if (!c.config_path.empty()) config = train::load_config(c.config_path, config);
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'", 0);
    train::set_key(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) config.seed = *c.seed;
  config.mode = mode;
  if (train::deterministic_env()) config.threads = 1;
  train::validate(config);
  return config;
}

std::ofstream open_out(const std::string& path, bool append = false) {
  std::ofstream f(path, append ? std::ios::app : std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path + "'");
  return f;
}

std::pair<std::size_t, std::size_t> parse_grid_dims(const std::string& text) {
  const auto x = text.find_first_of("xX");
  std::size_t rows = 0, cols = 0;
  try {
    if (x == std::string::npos) throw std::invalid_argument(text);
    std::size_t used = 0;
    rows = std::stoul(text.substr(0, x), &used);
    if (used != x) throw std::invalid_argument(text);
    cols = std::stoul(text.substr(x + 1), &used);
    if (used != text.size() - x - 1) throw std::invalid_argument(text);
  } catch (const std::logic_error&) {
    throw ParseError("--grid expects MxN, e.g. 8x8, got '" + text + "'");
  }
  if (rows == 0 || cols == 0) throw ParseError("--grid dimensions must be positive");
  return {rows, cols};
}

std::string plan_csv(const masking::MaskPlan& plan) {
  std::string out;
  for (std::size_t i = 0; i < plan.rows; ++i) {
    for (std::size_t j = 0; j < plan.cols; ++j) {
      if (j) out += ',';
      out += plan.is_masked(i * plan.cols + j) ? '1' : '0';
    }
    out += '\n';
  }
  return out;
}

std::string plan_pbm(const masking::MaskPlan& plan) {
  std::string out = "P1\n# masked tokens are 1\n" + std::to_string(plan.cols) + " " +
                    std::to_string(plan.rows) + "\n";
  for (std::size_t i = 0; i < plan.rows; ++i) {
    for (std::size_t j = 0; j < plan.cols; ++j) {
      if (j) out += ' ';
      out += plan.is_masked(i * plan.cols + j) ? '1' : '0';
    }
    out += '\n';
  }
  return out;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return kUsage;
    case ErrorKind::data: return kData;
    case ErrorKind::numeric: return kNumeric;
    case ErrorKind::contract: return kUsage;
  }
  return kUsage;
}

const char* kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return "usage";
    case ErrorKind::data: return "data";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::contract: return "contract";
  }
  return "unknown";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Masked autoregressive pretraining for hybrid SSM/attention image backbones.", "map"};
  app.require_subcommand(1);
  app.footer("Config keys (key = default):\n" + train::config_help() +
             "\nEnvironment:\n  MAP_DETERMINISTIC=1  single-threaded, bitwise reproducible runs\n"
             "\nExit codes: 0 ok, 1 usage, 2 data/IO, 3 numeric failure.");

  std::string command;
  auto logger = [&](const std::string& line) {
    err << "level=info cmd=" << command << " " << line << std::endl;
  };

  // pretrain
  Common pre;
  std::string pre_out = "pretrain.ckpt", pre_metrics = "pretrain_metrics.csv", pre_resume;
  auto* c_pre = app.add_subcommand("pretrain", "run the masked reconstruction objective");
  add_common(c_pre, pre);
  c_pre->add_option("--out", pre_out, "checkpoint to write")->capture_default_str();
  c_pre->add_option("--metrics", pre_metrics, "per-epoch metrics CSV")->capture_default_str();
  c_pre->add_option("--resume", pre_resume, "continue from a pretraining checkpoint");

  // finetune
  Common fin;
  std::string fin_out = "finetune.ckpt", fin_metrics = "finetune_metrics.csv", fin_init;
  auto* c_fin = app.add_subcommand("finetune", "train a classifier head (and the backbone) on labels");
  add_common(c_fin, fin);
  c_fin->add_option("--init", fin_init, "checkpoint providing encoder weights (default: from scratch)");
  c_fin->add_option("--out", fin_out, "checkpoint to write")->capture_default_str();
  c_fin->add_option("--metrics", fin_metrics, "per-epoch metrics CSV")->capture_default_str();

  // eval
  Common ev;
  std::string ev_ckpt;
  auto* c_ev = app.add_subcommand("eval", "report held-out accuracy or masked reconstruction error");
  add_common(c_ev, ev);
  c_ev->add_option("--checkpoint", ev_ckpt, "checkpoint to evaluate")->required();

  // mask-dump
  Common md;
  std::string md_grid, md_strategy, md_mask_strategy, md_format = "csv", md_show = "visibility", md_out,
                       md_ar_order;
  std::optional<double> md_ratio;
  bool md_no_self = false;
  auto* c_md = app.add_subcommand("mask-dump", "print a decoder visibility matrix or a mask plan");
  add_common(c_md, md);
  c_md->add_option("--grid", md_grid, "token grid MxN (default from image_size / patch_size)");
  c_md->add_option("--ratio", md_ratio, "mask ratio (default mask_ratio)");
  c_md->add_option("--strategy", md_strategy, "decoder mask: ar, mae, local_mae, map (default decoder_mask)");
  c_md->add_option("--mask-strategy", md_mask_strategy,
                   "random, sequential, diagonal, suffix (default mask_strategy)");
  c_md->add_option("--ar-order", md_ar_order, "row_first or column_first (default ar_order)");
  c_md->add_flag("--no-self-visible", md_no_self, "masked map queries do not see their own slot");
  c_md->add_option("--show", md_show, "visibility or plan")
      ->check(CLI::IsMember({"visibility", "plan"}))
      ->capture_default_str();
  c_md->add_option("--format", md_format, "csv or pbm")->check(CLI::IsMember({"csv", "pbm"}))->capture_default_str();
  c_md->add_option("--out", md_out, "output file (default stdout)");

  // make-data
  Common mk;
  std::string mk_out;
  std::optional<std::size_t> mk_count, mk_classes, mk_size, mk_channels;
  auto* c_mk = app.add_subcommand("make-data", "write a synthetic labelled image archive");
  add_common(c_mk, mk);
  c_mk->add_option("--out", mk_out, "archive path")->required();
  c_mk->add_option("--count", mk_count, "records (default num_samples)");
  c_mk->add_option("--classes", mk_classes, "classes, 1..8 (default num_classes)");
  c_mk->add_option("--size", mk_size, "image side (default image_size)");
  c_mk->add_option("--channels", mk_channels, "channels (default channels)");

  // ablate
  Common ab;
  std::string ab_grid, ab_out;
  auto* c_ab = app.add_subcommand("ablate", "run an ablation grid and emit a results CSV");
  add_common(c_ab, ab);
  std::string grid_help = "named grid (";
  for (const auto& n : train::named_grids()) grid_help += (grid_help.back() == '(' ? "" : ", ") + n;
  grid_help += ") or a grid file";
  c_ab->add_option("--grid", ab_grid, grid_help)->required();
  c_ab->add_option("--out", ab_out, "results CSV (default stdout)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();  // program name
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (c_pre->parsed()) {
      command = "pretrain";
      const TrainConfig config = resolve(pre, train::Mode::pretrain);
      logger("event=config deterministic=" + std::string(train::deterministic_env() ? "true" : "false") +
             " seed=" + std::to_string(config.seed) + " pattern=" + config.pattern);
      train::Trainer trainer(config, train::load_dataset(config), logger);
      bool append = false;
      if (!pre_resume.empty()) {
        trainer.restore(train::load_checkpoint(pre_resume));
        append = trainer.step() > 0;
        logger("event=resume step=" + std::to_string(trainer.step()) + " from=" + quote(pre_resume));
      }
      std::ofstream metrics = open_out(pre_metrics, append);
      const auto summary = trainer.run(&metrics);
      train::save_checkpoint(pre_out, trainer.checkpoint());
      out << "steps=" << trainer.step() << "\n";
      out << "skipped_steps=" << summary.skipped_steps << "\n";
      if (!summary.epochs.empty()) {
        out << "first_epoch_mse=" << fmt(summary.epochs.front().loss) << "\n";
        out << "final_epoch_mse=" << fmt(summary.epochs.back().loss) << "\n";
      }
      out << "checkpoint=" << pre_out << "\n";
      out << "metrics=" << pre_metrics << "\n";
    } else if (c_fin->parsed()) {
      command = "finetune";
      const TrainConfig config = resolve(fin, train::Mode::finetune);
      std::optional<train::Checkpoint> init;
      if (!fin_init.empty()) init = train::load_checkpoint(fin_init);
      std::ofstream metrics = open_out(fin_metrics);
      const auto report = train::finetune(config, init ? &*init : nullptr, logger, &metrics);
      train::save_checkpoint(fin_out, report.checkpoint);
      out << "accuracy=" << fmt(report.accuracy) << "\n";
      out << "eval_records=" << report.eval_records << "\n";
      out << "steps=" << report.steps << "\n";
      out << "skipped_steps=" << report.summary.skipped_steps << "\n";
      out << "from_scratch=" << (report.from_scratch ? "true" : "false") << "\n";
      out << "checkpoint=" << fin_out << "\n";
      out << "metrics=" << fin_metrics << "\n";
    } else if (c_ev->parsed()) {
      command = "eval";
      const train::Checkpoint ckpt = train::load_checkpoint(ev_ckpt);
      TrainConfig echoed;
      try {
        echoed = train::config_from_json(ckpt.config_json);
      } catch (const ConfigError& e) {
        throw IoError(std::string("checkpoint config echo: ") + e.what());
      }
      const TrainConfig config = resolve(ev, echoed.mode, echoed);
      train::Trainer trainer(config, train::load_dataset(config), logger);
      trainer.restore(ckpt);
      if (config.mode == train::Mode::finetune) {
        const auto& eval = trainer.dataset().eval;
        if (eval.empty()) throw ConfigError("eval needs a held-out split (eval_fraction > 0)", 0);
        out << "accuracy=" << fmt(trainer.accuracy(eval)) << "\n";
        out << "eval_records=" << eval.size() << "\n";
      } else {
        const auto rep = trainer.reconstruction(trainer.dataset().train, config.seed);
        out << "masked_mse=" << fmt(rep.total_mse) << "\n";
        out << "masked_tokens=" << rep.token_count << "\n";
        for (std::size_t r = 0; r < rep.row_mse.size(); ++r) out << "row_" << r << "=" << fmt(rep.row_mse[r]) << "\n";
      }
    } else if (c_md->parsed()) {
      command = "mask-dump";
      TrainConfig config = resolve(md, train::Mode::pretrain);
      std::size_t rows = config.grid(), cols = config.grid();
      if (!md_grid.empty()) std::tie(rows, cols) = parse_grid_dims(md_grid);
      if (md_ratio) {
        if (!(*md_ratio >= 0.0 && *md_ratio <= 1.0)) throw ConfigError("--ratio must be in [0, 1]", 0);
        config.mask_ratio = *md_ratio;
      }
      if (!md_strategy.empty()) config.decoder_mask = masking::parse_decoder_mask(md_strategy);
      if (!md_mask_strategy.empty()) config.mask_strategy = masking::parse_mask_strategy(md_mask_strategy);
      if (!md_ar_order.empty()) config.ar_order = backbone::parse_scan_kind(md_ar_order);
      masking::MaskPlan plan;
      if (config.mask_strategy == masking::MaskStrategy::suffix) {
        const auto order = backbone::ScanOrder::make(config.ar_order, rows, cols);
        plan = masking::build_suffix_plan(rows, cols, masking::masked_count(rows * cols, config.mask_ratio), order);
      } else {
        plan = masking::build_mask_plan(rows, cols, config.mask_ratio, config.mask_strategy, config.seed);
      }
      std::string text;
      if (md_show == "plan") {
        text = md_format == "csv" ? plan_csv(plan) : plan_pbm(plan);
      } else {
        masking::VisibilityOptions options;
        options.self_visible = config.self_visible && !md_no_self;
        options.ar_order = config.ar_order;
        const auto vis = masking::build_visibility(plan, config.decoder_mask, options);
        text = md_format == "csv" ? masking::to_csv(vis) : masking::to_pbm(vis);
      }
      if (md_out.empty()) {
        out << text;
      } else {
        std::ofstream f = open_out(md_out);
        f << text;
      }
      logger("event=mask grid=" + std::to_string(rows) + "x" + std::to_string(cols) +
             " masked=" + std::to_string(plan.total()) + " decoder_mask=" +
             std::string(masking::to_string(config.decoder_mask)));
    } else if (c_mk->parsed()) {
      command = "make-data";
      const TrainConfig config = resolve(mk, train::Mode::pretrain);
      data::SynthOptions opts;
      opts.count = mk_count.value_or(config.num_samples);
      opts.num_classes = static_cast<std::uint32_t>(mk_classes.value_or(config.num_classes));
      opts.height = opts.width = static_cast<std::uint32_t>(mk_size.value_or(config.image_size));
      opts.channels = static_cast<std::uint32_t>(mk_channels.value_or(config.channels));
      if (opts.num_classes < 1 || opts.num_classes > 8) throw ConfigError("--classes must be in 1..8", 0);
      if (opts.height == 0 || opts.channels == 0) throw ConfigError("--size and --channels must be > 0", 0);
      data::ArchiveWriter writer(mk_out);
      data::SynthStream stream(config.seed, opts);
      while (!stream.done()) writer.add(stream.next());
      writer.finish();
      out << "records=" << opts.count << "\n";
      out << "archive=" << mk_out << "\n";
    } else if (c_ab->parsed()) {
      command = "ablate";
      const TrainConfig config = resolve(ab, train::Mode::pretrain);
      const bool is_file = std::filesystem::is_regular_file(ab_grid);
      const train::AblationGrid grid = is_file ? train::load_grid(ab_grid) : train::named_grid(ab_grid);
      if (ab_out.empty()) {
        train::run_ablation(grid, config, logger, &out);
      } else {
        std::ofstream f = open_out(ab_out);
        const auto rows = train::run_ablation(grid, config, logger, &f);
        out << "cells=" << rows.size() << "\n";
        out << "results=" << ab_out << "\n";
      }
    }
  } catch (const Error& e) {
    err << "level=error cmd=" << command << " kind=" << kind_name(e.kind()) << " msg=" << quote(e.what())
        << std::endl;
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "level=error cmd=" << command << " kind=internal msg=" << quote(e.what()) << std::endl;
    return kUsage;
  }
  return kOk;
}

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  return run(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace hmap::cli
