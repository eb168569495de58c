#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hmap/train/session.hpp"

namespace hmap::train {

struct AblationAxis {
  std::string key;  // a config key
  std::vector<std::string> values;
};

/// Cartesian product of axes over a base config. `fixed` overrides apply to
/// every cell before the axis values.
struct AblationGrid {
  std::string name;
  std::vector<AblationAxis> axes;
  std::vector<std::pair<std::string, std::string>> fixed;
  bool finetune = true;  // fine-tune each pretrained cell and report accuracy
};

/// decoder_mask, mask_strategy, mask_ratio, scan_order, ar_ratio, pattern.
const std::vector<std::string>& named_grids();
/// Throws ConfigError for an unknown name.
AblationGrid named_grid(std::string_view name);

/// Grid file: "key = v1, v2, ..." adds an axis; "set key = value" adds a
/// fixed override; "finetune = false" skips the fine-tune stage. Blank lines
/// and '#' comments are ignored. No axes means no cells.
AblationGrid parse_grid(std::string_view text);
AblationGrid load_grid(const std::string& path);

struct AblationRow {
  std::size_t cell = 0;
  std::vector<std::string> values;  // one per axis
  std::optional<double> pretrain_mse;
  std::optional<double> accuracy;
  std::string status = "ok";  // or the error message of a failed cell
};

std::string ablation_csv_header(const AblationGrid& grid);
std::string ablation_csv_row(const AblationRow& row);

/// Runs every cell with the base seed, writing one CSV row per cell as it
/// finishes. A failing cell is recorded and the grid continues.
std::vector<AblationRow> run_ablation(const AblationGrid& grid, const TrainConfig& base,
                                      const LogFn& log = {}, std::ostream* csv = nullptr);

}  // namespace hmap::train
