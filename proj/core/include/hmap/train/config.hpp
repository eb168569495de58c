#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "hmap/backbone/encoder.hpp"
#include "hmap/masking/mask_plan.hpp"
#include "hmap/masking/visibility.hpp"
#include "hmap/objective/decoder.hpp"

namespace hmap::train {

enum class Mode { pretrain, finetune };

std::string_view to_string(Mode mode);
Mode parse_mode(std::string_view text);

struct TrainConfig {
  Mode mode = Mode::pretrain;

  // backbone
  std::string pattern = "MMMTMMMT";
  backbone::ScanKind scan_order = backbone::ScanKind::row_first;
  std::size_t image_size = 32;
  std::size_t channels = 1;
  std::size_t patch_size = 4;
  std::size_t dim = 64;
  std::size_t d_state = 8;
  std::size_t expand = 1;
  std::size_t conv_kernel = 0;
  std::size_t heads = 2;
  std::size_t mlp_ratio = 2;

  // objective
  masking::MaskStrategy mask_strategy = masking::MaskStrategy::random;
  double mask_ratio = 0.5;
  masking::DecoderMask decoder_mask = masking::DecoderMask::map;
  backbone::ScanKind ar_order = backbone::ScanKind::row_first;
  bool self_visible = true;
  std::size_t decoder_depth = 2;
  std::size_t decoder_dim = 64;
  std::size_t decoder_heads = 2;

  // optimisation
  double lr = 1e-3;
  double finetune_lr = 5e-4;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double warmup_frac = 0.05;
  double grad_clip = 1.0;
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  // data
  std::string dataset = "synthetic";
  std::size_t num_samples = 2000;
  std::size_t num_classes = 4;
  double eval_fraction = 0.2;
  std::size_t random_crop = 0;
  bool freeze_backbone = false;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }
  /// Learning rate of the active mode.
  double base_lr() const { return mode == Mode::pretrain ? lr : finetune_lr; }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Throws ConfigError when a value is out of range or the fields disagree.
void validate(const TrainConfig& config);

/// Sets one key from its text form. Throws ConfigError (line 0) on an unknown
/// key or a bad value.
void set_key(TrainConfig& config, std::string_view key, std::string_view value);
std::string get_key(const TrainConfig& config, std::string_view key);
const std::vector<std::string>& config_keys();

/// key = value lines. Blank lines and lines starting with '#' or ';' are
/// skipped; "[section]" headers are accepted and ignored (keys are unique
/// across sections). Errors carry the 1-based line number.
TrainConfig parse_config(std::string_view text, const TrainConfig& base = {});
TrainConfig load_config(const std::string& path, const TrainConfig& base = {});

/// Every key in the effective config; parse_config(dump_config(c)) == c.
std::string dump_config(const TrainConfig& config);
/// Key, default and description for every key.
std::string config_help();

/// JSON object of key -> text value; used as the checkpoint config echo.
std::string config_to_json(const TrainConfig& config);
TrainConfig config_from_json(const std::string& json);

backbone::EncoderConfig encoder_config(const TrainConfig& config);
objective::DecoderConfig decoder_config(const TrainConfig& config);

}  // namespace hmap::train
