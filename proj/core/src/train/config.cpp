#include "hmap/train/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hmap/errors.hpp"

namespace hmap::train {

std::string_view to_string(Mode mode) { return mode == Mode::pretrain ? "pretrain" : "finetune"; }

Mode parse_mode(std::string_view text) {
  if (text == "pretrain") return Mode::pretrain;
  if (text == "finetune") return Mode::finetune;
  throw ParseError("unknown mode '" + std::string(text) + "' (expected pretrain or finetune)");
}

namespace {

struct KeyDef {
  std::string name;
  std::string doc;
  std::function<void(TrainConfig&, std::string_view)> set;
  std::function<std::string(const TrainConfig&)> get;
};

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  // Shortest form that still round-trips.
  for (int prec = 1; prec <= 17; ++prec) {
    char tmp[40];
    std::snprintf(tmp, sizeof(tmp), "%.*g", prec, v);
    if (std::strtod(tmp, nullptr) == v) return tmp;
  }
  return buf;
}

std::uint64_t parse_u64(std::string_view text) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ParseError("expected a non-negative integer, got '" + std::string(text) + "'");
  }
  return v;
}

double parse_double(std::string_view text) {
  const std::string s(text);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
    throw ParseError("expected a finite number, got '" + s + "'");
  }
  return v;
}

bool parse_bool(std::string_view text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ParseError("expected true or false, got '" + std::string(text) + "'");
}

template <typename T>
KeyDef size_key(std::string name, T TrainConfig::*field, std::string doc) {
  return {std::move(name), std::move(doc),
          [field](TrainConfig& c, std::string_view v) { c.*field = static_cast<T>(parse_u64(v)); },
          [field](const TrainConfig& c) { return std::to_string(c.*field); }};
}

KeyDef real_key(std::string name, double TrainConfig::*field, std::string doc) {
  return {std::move(name), std::move(doc),
          [field](TrainConfig& c, std::string_view v) { c.*field = parse_double(v); },
          [field](const TrainConfig& c) { return fmt_double(c.*field); }};
}

KeyDef bool_key(std::string name, bool TrainConfig::*field, std::string doc) {
  return {std::move(name), std::move(doc),
          [field](TrainConfig& c, std::string_view v) { c.*field = parse_bool(v); },
          [field](const TrainConfig& c) { return std::string(c.*field ? "true" : "false"); }};
}

KeyDef scan_key(std::string name, backbone::ScanKind TrainConfig::*field, std::string doc) {
  return {std::move(name), std::move(doc),
          [field](TrainConfig& c, std::string_view v) { c.*field = backbone::parse_scan_kind(v); },
          [field](const TrainConfig& c) { return std::string(backbone::to_string(c.*field)); }};
}

const std::vector<KeyDef>& key_table() {
  static const std::vector<KeyDef> table = [] {
    std::vector<KeyDef> t;
    t.push_back({"mode", "pretrain or finetune",
                 [](TrainConfig& c, std::string_view v) { c.mode = parse_mode(v); },
                 [](const TrainConfig& c) { return std::string(to_string(c.mode)); }});
    t.push_back({"pattern", "block stack, M = SSM block, T = attention block",
                 [](TrainConfig& c, std::string_view v) {
                   c.pattern = backbone::parse_pattern(v).str();
                 },
                 [](const TrainConfig& c) { return c.pattern; }});
    t.push_back(scan_key("scan_order", &TrainConfig::scan_order, "SSM scan order: row_first or column_first"));
    t.push_back(size_key("image_size", &TrainConfig::image_size, "square image side in pixels"));
    t.push_back(size_key("channels", &TrainConfig::channels, "image channels"));
    t.push_back(size_key("patch_size", &TrainConfig::patch_size, "square patch side in pixels"));
    t.push_back(size_key("dim", &TrainConfig::dim, "encoder width"));
    t.push_back(size_key("d_state", &TrainConfig::d_state, "SSM state size"));
    t.push_back(size_key("expand", &TrainConfig::expand, "SSM inner width multiplier"));
    t.push_back(size_key("conv_kernel", &TrainConfig::conv_kernel, "SSM causal conv width, 0 = off"));
    t.push_back(size_key("heads", &TrainConfig::heads, "encoder attention heads"));
    t.push_back(size_key("mlp_ratio", &TrainConfig::mlp_ratio, "attention block MLP width multiplier"));
    t.push_back({"mask_strategy", "random, sequential, diagonal or suffix",
                 [](TrainConfig& c, std::string_view v) { c.mask_strategy = masking::parse_mask_strategy(v); },
                 [](const TrainConfig& c) { return std::string(masking::to_string(c.mask_strategy)); }});
    t.push_back(real_key("mask_ratio", &TrainConfig::mask_ratio, "fraction of tokens masked, in [0, 1]"));
    t.push_back({"decoder_mask", "decoder visibility: ar, mae, local_mae or map",
                 [](TrainConfig& c, std::string_view v) { c.decoder_mask = masking::parse_decoder_mask(v); },
                 [](const TrainConfig& c) { return std::string(masking::to_string(c.decoder_mask)); }});
    t.push_back(scan_key("ar_order", &TrainConfig::ar_order, "token order of the ar decoder mask and suffix masking"));
    t.push_back(bool_key("self_visible", &TrainConfig::self_visible, "masked map queries attend to their own slot"));
    t.push_back(size_key("decoder_depth", &TrainConfig::decoder_depth, "decoder attention blocks"));
    t.push_back(size_key("decoder_dim", &TrainConfig::decoder_dim, "decoder width"));
    t.push_back(size_key("decoder_heads", &TrainConfig::decoder_heads, "decoder attention heads"));
    t.push_back(real_key("lr", &TrainConfig::lr, "peak learning rate for pretraining"));
    t.push_back(real_key("finetune_lr", &TrainConfig::finetune_lr, "peak learning rate for fine-tuning"));
    t.push_back(real_key("weight_decay", &TrainConfig::weight_decay, "decoupled weight decay"));
    t.push_back(real_key("beta1", &TrainConfig::beta1, "AdamW first moment decay"));
    t.push_back(real_key("beta2", &TrainConfig::beta2, "AdamW second moment decay"));
    t.push_back(real_key("adam_eps", &TrainConfig::adam_eps, "AdamW denominator epsilon"));
    t.push_back(real_key("warmup_frac", &TrainConfig::warmup_frac, "fraction of steps spent in linear warmup"));
    t.push_back(real_key("grad_clip", &TrainConfig::grad_clip, "global gradient norm clip, 0 = off"));
    t.push_back(size_key("epochs", &TrainConfig::epochs, "passes over the training split"));
    t.push_back(size_key("batch_size", &TrainConfig::batch_size, "images per optimizer step"));
    t.push_back(size_key("seed", &TrainConfig::seed, "seed for init, data order, masks and synthetic data"));
    t.push_back(size_key("threads", &TrainConfig::threads, "1 = no background prefetch"));
    t.push_back({"dataset", "archive path, or synthetic",
                 [](TrainConfig& c, std::string_view v) { c.dataset = std::string(v); },
                 [](const TrainConfig& c) { return c.dataset; }});
    t.push_back(size_key("num_samples", &TrainConfig::num_samples, "synthetic dataset size"));
    t.push_back(size_key("num_classes", &TrainConfig::num_classes, "synthetic classes, 1..8"));
    t.push_back(real_key("eval_fraction", &TrainConfig::eval_fraction, "held-out fraction for fine-tune accuracy"));
    t.push_back(size_key("random_crop", &TrainConfig::random_crop, "pad-and-crop augmentation in pixels, 0 = off"));
    t.push_back(bool_key("freeze_backbone", &TrainConfig::freeze_backbone, "fine-tune only the classifier head"));
    return t;
  }();
  return table;
}

const KeyDef* find_key(std::string_view key) {
  for (const auto& def : key_table()) {
    if (def.name == key) return &def;
  }
  return nullptr;
}

std::string valid_keys_list() {
  std::string out;
  for (const auto& def : key_table()) {
    if (!out.empty()) out += ", ";
    out += def.name;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string_view unquote(std::string_view s) {
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) {
    return s.substr(1, s.size() - 2);
  }
  return s;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what, 0);
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& def : key_table()) k.push_back(def.name);
    return k;
  }();
  return keys;
}

void set_key(TrainConfig& config, std::string_view key, std::string_view value) {
  const KeyDef* def = find_key(key);
  if (!def) {
    throw ConfigError("unknown key '" + std::string(key) + "'; valid keys: " + valid_keys_list(), 0);
  }
  try {
    def->set(config, value);
  } catch (const ParseError& e) {
    throw ConfigError(std::string(key) + ": " + e.what(), 0);
  }
  if (key == "mask_ratio") {
    require(config.mask_ratio >= 0.0 && config.mask_ratio <= 1.0,
            "mask_ratio must be in [0, 1], got " + std::string(value));
  }
}

std::string get_key(const TrainConfig& config, std::string_view key) {
  const KeyDef* def = find_key(key);
  if (!def) throw ConfigError("unknown key '" + std::string(key) + "'", 0);
  return def->get(config);
}

void validate(const TrainConfig& c) {
  require(c.lr > 0.0, "lr must be > 0");
  require(c.finetune_lr > 0.0, "finetune_lr must be > 0");
  require(c.mask_ratio >= 0.0 && c.mask_ratio <= 1.0, "mask_ratio must be in [0, 1]");
  require(c.weight_decay >= 0.0, "weight_decay must be >= 0");
  require(c.beta1 >= 0.0 && c.beta1 < 1.0, "beta1 must be in [0, 1)");
  require(c.beta2 >= 0.0 && c.beta2 < 1.0, "beta2 must be in [0, 1)");
  require(c.adam_eps > 0.0, "adam_eps must be > 0");
  require(c.warmup_frac >= 0.0 && c.warmup_frac <= 1.0, "warmup_frac must be in [0, 1]");
  require(c.grad_clip >= 0.0, "grad_clip must be >= 0");
  require(c.eval_fraction >= 0.0 && c.eval_fraction < 1.0, "eval_fraction must be in [0, 1)");
  require(c.patch_size > 0 && c.image_size > 0, "image_size and patch_size must be > 0");
  require(c.image_size % c.patch_size == 0, "image_size must be a multiple of patch_size");
  require(c.channels > 0, "channels must be > 0");
  require(c.patch_size * c.patch_size * c.channels >= 2, "patches need at least 2 pixels");
  require(c.dim > 0 && c.d_state > 0 && c.expand > 0 && c.mlp_ratio > 0, "widths must be > 0");
  require(c.heads > 0 && c.dim % c.heads == 0, "dim must be divisible by heads");
  require(c.decoder_dim > 0 && c.decoder_heads > 0 && c.decoder_dim % c.decoder_heads == 0,
          "decoder_dim must be divisible by decoder_heads");
  require(c.batch_size > 0, "batch_size must be > 0");
  require(c.threads > 0, "threads must be > 0");
  require(c.num_classes >= 1 && c.num_classes <= 8, "num_classes must be in 1..8");
  require(!c.dataset.empty(), "dataset must not be empty");
  try {
    backbone::parse_pattern(c.pattern);
  } catch (const ParseError& e) {
    throw ConfigError(std::string("pattern: ") + e.what(), 0);
  }
}

TrainConfig parse_config(std::string_view text, const TrainConfig& base) {
  TrainConfig config = base;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("unterminated section header", line_no);
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError("expected key = value", line_no);
    const std::string_view key = trim(line.substr(0, eq));
    std::string_view value = trim(line.substr(eq + 1));
    if (const std::size_t hash = value.find(" #"); hash != std::string_view::npos) {
      value = trim(value.substr(0, hash));
    }
    value = unquote(value);
    if (key.empty()) throw ConfigError("missing key", line_no);
    try {
      set_key(config, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(e.what(), line_no);
    }
  }
  validate(config);
  return config;
}

TrainConfig load_config(const std::string& path, const TrainConfig& base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), base);
}

std::string dump_config(const TrainConfig& config) {
  std::string out;
  for (const auto& def : key_table()) out += def.name + " = " + def.get(config) + "\n";
  return out;
}

std::string config_help() {
  const TrainConfig defaults;
  std::size_t width = 0;
  for (const auto& def : key_table()) width = std::max(width, def.name.size() + def.get(defaults).size() + 3);
  std::string out;
  for (const auto& def : key_table()) {
    std::string head = "  " + def.name + " = " + def.get(defaults);
    head.resize(std::max(head.size(), width + 4), ' ');
    out += head + "  " + def.doc + "\n";
  }
  return out;
}

std::string config_to_json(const TrainConfig& config) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& def : key_table()) j[def.name] = def.get(config);
  return j.dump();
}

TrainConfig config_from_json(const std::string& json) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("config echo is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw IoError("config echo is not a JSON object");
  TrainConfig config;
  for (const auto& [key, value] : j.items()) {
    if (!value.is_string()) throw IoError("config echo value for '" + key + "' is not a string");
    set_key(config, key, value.get<std::string>());
  }
  return config;
}

backbone::EncoderConfig encoder_config(const TrainConfig& c) {
  backbone::EncoderConfig e;
  e.grid_rows = c.grid();
  e.grid_cols = c.grid();
  e.patch_dim = c.patch_dim();
  e.dim = c.dim;
  e.d_state = c.d_state;
  e.expand = c.expand;
  e.conv_kernel = c.conv_kernel;
  e.heads = c.heads;
  e.mlp_ratio = c.mlp_ratio;
  e.pattern = backbone::parse_pattern(c.pattern);
  e.scan = c.scan_order;
  return e;
}

objective::DecoderConfig decoder_config(const TrainConfig& c) {
  objective::DecoderConfig d;
  d.length = c.grid() * c.grid();
  d.enc_dim = c.dim;
  d.dim = c.decoder_dim;
  d.depth = c.decoder_depth;
  d.heads = c.decoder_heads;
  d.mlp_ratio = c.mlp_ratio;
  d.patch_dim = c.patch_dim();
  return d;
}

}  // namespace hmap::train
