#include "hmap/train/ablation.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "hmap/errors.hpp"

namespace hmap::train {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split_values(std::string_view text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    const auto v = trim(text.substr(pos, comma - pos));
    if (!v.empty()) out.emplace_back(v);
    pos = comma + 1;
  }
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", *v);
  return buf;
}

}  // namespace

const std::vector<std::string>& named_grids() {
  static const std::vector<std::string> names = {"decoder_mask", "mask_strategy", "mask_ratio",
                                                 "scan_order",   "ar_ratio",      "pattern"};
  return names;
}

AblationGrid named_grid(std::string_view name) {
  AblationGrid g;
  g.name = std::string(name);
  if (name == "decoder_mask") {
    g.axes = {{"decoder_mask", {"ar", "mae", "local_mae", "map"}}};
  } else if (name == "mask_strategy") {
    g.axes = {{"mask_strategy", {"random", "sequential", "diagonal"}}, {"mask_ratio", {"0.25", "0.5", "0.75"}}};
  } else if (name == "mask_ratio") {
    g.axes = {{"mask_ratio", {"0.25", "0.5", "0.75"}}};
  } else if (name == "scan_order") {
    g.axes = {{"scan_order", {"row_first", "column_first"}}, {"ar_order", {"row_first", "column_first"}}};
    g.fixed = {{"mask_strategy", "suffix"}, {"decoder_mask", "ar"}, {"mask_ratio", "0.2"}};
  } else if (name == "ar_ratio") {
    g.axes = {{"mask_ratio", {"0.015625", "0.1", "0.2", "0.3", "0.5", "0.7"}}};
    g.fixed = {{"mask_strategy", "suffix"}, {"decoder_mask", "ar"}};
  } else if (name == "pattern") {
    g.axes = {{"pattern", {"MMMMMMMM", "TTTTTTTT", "MMMMMMTT", "TTMMMMMM", "TMMMTMMM", "MMMTMMMT"}}};
  } else {
    std::string valid;
    for (const auto& n : named_grids()) valid += (valid.empty() ? "" : ", ") + n;
    throw ConfigError("unknown grid '" + std::string(name) + "'; valid grids: " + valid, 0);
  }
  return g;
}

AblationGrid parse_grid(std::string_view text) {
  AblationGrid g;
  g.name = "custom";
  std::size_t pos = 0, line_no = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError("expected key = values", line_no);
    std::string_view key = trim(line.substr(0, eq));
    const std::string_view rest = trim(line.substr(eq + 1));
    bool fixed = false;
    if (key.substr(0, 4) == "set " || key.substr(0, 4) == "set\t") {
      fixed = true;
      key = trim(key.substr(4));
    }
    if (key == "finetune" && !fixed) {
      if (rest == "true") {
        g.finetune = true;
      } else if (rest == "false") {
        g.finetune = false;
      } else {
        throw ConfigError("finetune must be true or false", line_no);
      }
      continue;
    }
    const auto& keys = config_keys();
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw ConfigError("unknown config key '" + std::string(key) + "'", line_no);
    }
    if (fixed) {
      g.fixed.emplace_back(std::string(key), std::string(rest));
    } else {
      auto values = split_values(rest);
      if (values.empty()) throw ConfigError("axis '" + std::string(key) + "' has no values", line_no);
      g.axes.push_back({std::string(key), std::move(values)});
    }
  }
  return g;
}

AblationGrid load_grid(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open grid file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_grid(buf.str());
}

std::string ablation_csv_header(const AblationGrid& grid) {
  std::string out = "cell";
  for (const auto& axis : grid.axes) out += "," + axis.key;
  return out + ",pretrain_mse,finetune_accuracy,status";
}

std::string ablation_csv_row(const AblationRow& row) {
  std::string out = std::to_string(row.cell);
  for (const auto& v : row.values) out += "," + csv_field(v);
  return out + "," + fmt(row.pretrain_mse) + "," + fmt(row.accuracy) + "," + csv_field(row.status);
}

std::vector<AblationRow> run_ablation(const AblationGrid& grid, const TrainConfig& base,
                                      const LogFn& log, std::ostream* csv) {
  if (csv) *csv << ablation_csv_header(grid) << "\n";
  std::vector<AblationRow> rows;
  if (grid.axes.empty()) return rows;

  std::size_t cells = 1;
  for (const auto& axis : grid.axes) cells *= axis.values.size();
  for (std::size_t cell = 0; cell < cells; ++cell) {
    AblationRow row;
    row.cell = cell;
    std::size_t rem = cell;
    std::vector<std::size_t> pick(grid.axes.size());
    for (std::size_t a = grid.axes.size(); a-- > 0;) {
      pick[a] = rem % grid.axes[a].values.size();
      rem /= grid.axes[a].values.size();
    }
    for (std::size_t a = 0; a < grid.axes.size(); ++a) row.values.push_back(grid.axes[a].values[pick[a]]);

    std::string label;
    for (std::size_t a = 0; a < grid.axes.size(); ++a) {
      label += (a ? " " : "") + grid.axes[a].key + "=" + row.values[a];
    }
    if (log) log("event=cell grid=" + grid.name + " cell=" + std::to_string(cell) + " " + label);
    try {
      TrainConfig config = base;
      for (const auto& [key, value] : grid.fixed) set_key(config, key, value);
      for (std::size_t a = 0; a < grid.axes.size(); ++a) set_key(config, grid.axes[a].key, row.values[a]);
      config.mode = Mode::pretrain;
      validate(config);
      const PretrainResult pre = pretrain(config, log);
      row.pretrain_mse = pre.final_epoch_mse;
      if (grid.finetune) {
        config.mode = Mode::finetune;
        row.accuracy = finetune(config, &pre.checkpoint, log).accuracy;
      }
    } catch (const std::exception& e) {
      row.status = std::string("error: ") + e.what();
      if (log) log("event=cell_failed cell=" + std::to_string(cell) + " msg=\"" + e.what() + "\"");
    }
    if (csv) *csv << ablation_csv_row(row) << "\n" << std::flush;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace hmap::train
