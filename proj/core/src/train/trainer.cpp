#include "hmap/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <unordered_map>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "hmap/data/archive.hpp"
#include "hmap/data/synth.hpp"
#include "hmap/data/token_grid.hpp"
#include "hmap/errors.hpp"
#include "hmap/numerics/ops.hpp"

namespace hmap::train {
namespace {

// Fork streams of the seed generator.
constexpr std::uint64_t kMaskStream = 7;
constexpr std::uint64_t kOrderStream = 1'000'000;
constexpr std::uint64_t kCropStream = 4'000'000'000ULL;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::size_t argmax_row(std::span<const real> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

std::size_t count_correct(const Tensor& logits, std::span<const std::uint32_t> labels) {
  const std::size_t classes = logits.dim(1);
  const auto d = logits.data();
  std::size_t correct = 0;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (argmax_row(d.subspan(n * classes, classes)) == labels[n]) ++correct;
  }
  return correct;
}

struct MaskedBatch {
  std::vector<masking::MaskPlan> plans;
  std::vector<masking::VisibilityMatrix> vis;
};

MaskedBatch draw_masks(const TrainConfig& c, std::size_t batch, Rng& rng) {
  const std::size_t g = c.grid();
  MaskedBatch out;
  if (c.mask_strategy == masking::MaskStrategy::random) {
    for (std::size_t n = 0; n < batch; ++n) {
      out.plans.push_back(masking::build_mask_plan(g, g, c.mask_ratio, c.mask_strategy, rng.next_u64()));
    }
  } else if (c.mask_strategy == masking::MaskStrategy::suffix) {
    const auto order = backbone::ScanOrder::make(c.ar_order, g, g);
    auto plan = masking::build_suffix_plan(g, g, masking::masked_count(g * g, c.mask_ratio), order);
    plan.ratio = c.mask_ratio;
    out.plans.push_back(std::move(plan));
  } else {
    out.plans.push_back(masking::build_mask_plan(g, g, c.mask_ratio, c.mask_strategy, 0));
  }
  masking::VisibilityOptions options;
  options.self_visible = c.self_visible;
  options.ar_order = c.ar_order;
  for (const auto& plan : out.plans) out.vis.push_back(masking::build_visibility(plan, c.decoder_mask, options));
  return out;
}

Tensor tokens_of(std::span<const data::Image> images, const TrainConfig& c) {
  return data::patchify_batch(images, data::PatchSize{c.patch_size, c.patch_size});
}

// Activations and gradients are multi-megabyte buffers allocated afresh every
// step. Keeping them on the heap instead of fresh mmaps avoids paying page
// faults on every step.
void keep_large_buffers() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 32 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 1024 * 1024 * 1024);
    mallopt(M_TOP_PAD, 64 * 1024 * 1024);
    return true;
  }();
  (void)once;
#endif
}

std::vector<std::string> decoder_keys() { return {"decoder_depth", "decoder_dim", "decoder_heads"}; }

}  // namespace

const std::vector<std::string>& architecture_keys() {
  static const std::vector<std::string> keys = {"pattern", "scan_order", "image_size", "channels",
                                                "patch_size", "dim", "d_state", "expand",
                                                "conv_kernel", "heads", "mlp_ratio"};
  return keys;
}

bool deterministic_env() {
  const char* v = std::getenv("MAP_DETERMINISTIC");
  return v != nullptr && std::string(v) == "1";
}

Dataset load_dataset(const TrainConfig& c) {
  validate(c);
  std::vector<data::DatasetRecord> records;
  if (c.dataset == "synthetic") {
    data::SynthOptions opts;
    opts.count = c.num_samples;
    opts.num_classes = static_cast<std::uint32_t>(c.num_classes);
    opts.channels = static_cast<std::uint32_t>(c.channels);
    opts.height = static_cast<std::uint32_t>(c.image_size);
    opts.width = static_cast<std::uint32_t>(c.image_size);
    records = data::synth_dataset(c.seed, opts);
  } else {
    try {
      records = data::read_archive(c.dataset);
    } catch (const data::ArchiveError& e) {
      throw data::ArchiveError(e.code(), "dataset '" + c.dataset + "': " + e.what());
    }
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& img = records[i].image;
    if (img.channels != c.channels || img.height != c.image_size || img.width != c.image_size) {
      throw IoError("dataset '" + c.dataset + "' record " + std::to_string(i) + " is " +
                    std::to_string(img.channels) + "x" + std::to_string(img.height) + "x" +
                    std::to_string(img.width) + ", config expects " + std::to_string(c.channels) + "x" +
                    std::to_string(c.image_size) + "x" + std::to_string(c.image_size));
    }
    if (c.mode == Mode::finetune && records[i].label >= c.num_classes) {
      throw IoError("dataset '" + c.dataset + "' record " + std::to_string(i) + " has label " +
                    std::to_string(records[i].label) + " >= num_classes " + std::to_string(c.num_classes));
    }
  }
  Dataset out;
  if (c.mode == Mode::pretrain) {
    out.train = std::move(records);
  } else {
    const auto n_eval = static_cast<std::size_t>(std::floor(c.eval_fraction * static_cast<double>(records.size())));
    const std::size_t n_train = records.size() - n_eval;
    out.train.assign(records.begin(), records.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.eval.assign(records.begin() + static_cast<std::ptrdiff_t>(n_train), records.end());
  }
  if (out.train.empty()) throw IoError("dataset '" + c.dataset + "' has no training records");
  return out;
}

Trainer::Trainer(TrainConfig config, Dataset data, LogFn log)
    : config_(std::move(config)), data_(std::move(data)), log_(std::move(log)) {
  validate(config_);
  if (data_.train.empty()) throw IoError("no training records");
  keep_large_buffers();
  Rng init_rng(config_.seed);
  model_ = config_.mode == Mode::pretrain ? Model::for_pretrain(config_, init_rng)
                                          : Model::for_finetune(config_, init_rng);
  rng_ = Rng(config_.seed).fork(kMaskStream);
  prefetch_ = config_.threads > 1 && !deterministic_env();
  rebuild_optimizer();
}

Trainer::~Trainer() {
  if (pending_) pending_->wait();
}

void Trainer::rebuild_optimizer() {
  std::vector<NamedParam> trainable;
  for (auto& p : model_.parameters()) {
    const bool frozen = config_.mode == Mode::finetune && config_.freeze_backbone &&
                        p.name.rfind("encoder.", 0) == 0;
    p.tensor.set_requires_grad(!frozen);
    if (!frozen) trainable.push_back(p);
  }
  AdamWParams hp;
  hp.beta1 = config_.beta1;
  hp.beta2 = config_.beta2;
  hp.eps = config_.adam_eps;
  hp.weight_decay = config_.weight_decay;
  optimizer_ = AdamW(std::move(trainable), hp);
}

std::uint64_t Trainer::steps_per_epoch() const {
  return (data_.train.size() + config_.batch_size - 1) / config_.batch_size;
}

std::uint64_t Trainer::total_steps() const { return steps_per_epoch() * config_.epochs; }

std::uint64_t Trainer::warmup_steps() const {
  return static_cast<std::uint64_t>(std::llround(config_.warmup_frac * static_cast<double>(total_steps())));
}

void Trainer::log(const std::string& line) const {
  if (log_) log_(line);
}

Trainer::Prepared Trainer::prepare(std::uint64_t step) const {
  const std::uint64_t spe = steps_per_epoch();
  const std::uint64_t epoch = step / spe;
  const std::uint64_t b = step % spe;
  const std::size_t n = data_.train.size();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle = Rng(config_.seed).fork(kOrderStream + epoch);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

  const std::size_t begin = static_cast<std::size_t>(b) * config_.batch_size;
  const std::size_t end = std::min(n, begin + config_.batch_size);
  Rng crop = Rng(config_.seed).fork(kCropStream + step);
  std::vector<data::Image> images;
  Prepared out;
  out.step = step;
  for (std::size_t i = begin; i < end; ++i) {
    const auto& rec = data_.train[order[i]];
    images.push_back(config_.random_crop
                         ? data::random_crop(rec.image, static_cast<std::uint32_t>(config_.random_crop), crop)
                         : rec.image);
    out.labels.push_back(rec.label);
  }
  out.tokens = tokens_of(images, config_);
  if (config_.mode == Mode::pretrain) out.targets = data::normalize_tokens(out.tokens);
  return out;
}

Trainer::Prepared Trainer::take_batch() {
  Prepared batch;
  if (pending_) {
    batch = pending_->get();
    pending_.reset();
    if (batch.step != step_) batch = prepare(step_);
  } else {
    batch = prepare(step_);
  }
  if (prefetch_ && step_ + 1 < total_steps()) {
    pending_ = std::async(std::launch::async, [this, next = step_ + 1] { return prepare(next); });
  }
  return batch;
}

StepResult Trainer::train_step() {
  if (step_ >= total_steps()) throw ContractError("train_step: schedule already finished");
  Prepared batch = take_batch();
  StepResult result;
  result.count = batch.labels.size();
  result.lr = cosine_lr(step_ + 1, warmup_steps(), total_steps(), config_.base_lr());

  auto& params = optimizer_.params();
  for (auto& p : model_.parameters()) p.tensor.zero_grad();
  bool ok = true;
  try {
    Tensor loss;
    if (config_.mode == Mode::pretrain) {
      MaskedBatch masks = draw_masks(config_, batch.labels.size(), rng_);
      objective::ObjectiveBatch ob;
      ob.tokens = batch.tokens;
      ob.targets = batch.targets;
      ob.plans = std::move(masks.plans);
      ob.vis = std::move(masks.vis);
      auto out = objective::objective_loss(model_.encoder, *model_.decoder, ob);
      loss = out.loss;
      result.report = std::move(out.report);
    } else {
      const Tensor logits = model_.classify(batch.tokens);
      loss = cross_entropy(logits, batch.labels);
      result.correct = count_correct(logits, batch.labels);
    }
    result.loss = loss.item();
    backward(loss);
    ok = grads_finite(params);
  } catch (const NumericError& e) {
    log("event=nonfinite step=" + std::to_string(step_ + 1) + " msg=\"" + e.what() + "\"");
    ok = false;
  }

  ++step_;
  result.step = step_;
  if (!ok) {
    ++skipped_;
    result.skipped = true;
    log("event=skip step=" + std::to_string(step_) + " skipped=" + std::to_string(skipped_));
    return result;
  }
  result.grad_norm = clip_grad_norm(params, config_.grad_clip);
  optimizer_.step(result.lr);
  return result;
}

std::string Trainer::metrics_header() const {
  if (config_.mode == Mode::pretrain) {
    return "epoch," + objective::metrics_csv_header(config_.grid());
  }
  return "epoch,step,loss,train_accuracy";
}

RunSummary Trainer::run(std::ostream* metrics_csv) {
  RunSummary summary;
  if (metrics_csv && step_ == 0) *metrics_csv << metrics_header() << "\n";
  const std::uint64_t spe = steps_per_epoch();
  const std::uint64_t total = total_steps();
  const std::size_t max_skips = static_cast<std::size_t>(total / 100);
  log("event=start mode=" + std::string(to_string(config_.mode)) + " steps=" + std::to_string(total) +
      " from_step=" + std::to_string(step_) + " train=" + std::to_string(data_.train.size()) +
      " eval=" + std::to_string(data_.eval.size()));

  EpochMetrics acc;
  double loss_sum = 0.0;
  std::size_t seen = 0, correct = 0;
  while (step_ < total) {
    const StepResult r = train_step();
    if (skipped_ > max_skips) {
      throw NumericError("more than 1% of steps skipped (" + std::to_string(skipped_) + " of " +
                             std::to_string(total) + ")",
                         static_cast<std::size_t>(step_));
    }
    if (!r.skipped) {
      if (config_.mode == Mode::pretrain) {
        acc.report.accumulate(r.report);
      } else {
        loss_sum += r.loss * static_cast<double>(r.count);
        seen += r.count;
        correct += r.correct;
      }
    }
    if (step_ % spe != 0) continue;

    acc.epoch = static_cast<std::size_t>(step_ / spe);
    acc.step = step_;
    std::string line;
    if (config_.mode == Mode::pretrain) {
      acc.loss = acc.report.total_mse;
      line = std::to_string(acc.epoch) + "," + objective::metrics_csv_row(step_, acc.report);
      log("event=epoch epoch=" + std::to_string(acc.epoch) + " step=" + std::to_string(step_) +
          " masked_mse=" + fmt(acc.loss) + " lr=" + fmt(r.lr));
    } else {
      acc.loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
      acc.train_accuracy = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
      line = std::to_string(acc.epoch) + "," + std::to_string(step_) + "," + fmt(acc.loss) + "," +
             fmt(acc.train_accuracy);
      log("event=epoch epoch=" + std::to_string(acc.epoch) + " step=" + std::to_string(step_) +
          " loss=" + fmt(acc.loss) + " train_accuracy=" + fmt(acc.train_accuracy) + " lr=" + fmt(r.lr));
    }
    if (metrics_csv) *metrics_csv << line << "\n";
    summary.epochs.push_back(acc);
    acc = EpochMetrics{};
    loss_sum = 0.0;
    seen = correct = 0;
  }
  summary.skipped_steps = skipped_;
  if (config_.mode == Mode::finetune && !data_.eval.empty()) {
    summary.eval_accuracy = accuracy(data_.eval);
    log("event=eval accuracy=" + fmt(*summary.eval_accuracy) + " records=" + std::to_string(data_.eval.size()));
  }
  if (metrics_csv) metrics_csv->flush();
  return summary;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.config_json = config_to_json(config_);
  for (auto& p : const_cast<Model&>(model_).parameters()) {
    const auto d = p.tensor.data();
    c.params.push_back({p.name, p.tensor.shape(), std::vector<real>(d.begin(), d.end())});
  }
  for (auto& [name, values] : optimizer_.export_state()) {
    c.optimizer.push_back({name, {values.size()}, values});
  }
  c.optimizer.push_back({"trainer.skipped", {1}, {static_cast<real>(skipped_)}});
  c.step = step_;
  c.rng = rng_.state();
  return c;
}

void Trainer::check_architecture(const TrainConfig& other, bool full) const {
  std::vector<std::string> keys = architecture_keys();
  if (full) {
    if (config_.mode == Mode::pretrain) {
      const auto extra = decoder_keys();
      keys.insert(keys.end(), extra.begin(), extra.end());
    } else {
      keys.push_back("num_classes");
    }
  }
  for (const auto& key : keys) {
    const std::string mine = get_key(config_, key);
    const std::string theirs = get_key(other, key);
    if (mine != theirs) throw IncompatibleCheckpointError(key, "checkpoint has " + theirs + ", config has " + mine);
  }
}

namespace {

TrainConfig echoed_config(const Checkpoint& ckpt) {
  try {
    return config_from_json(ckpt.config_json);
  } catch (const ConfigError& e) {
    throw IoError(std::string("checkpoint config echo: ") + e.what());
  }
}

void copy_tensor(Tensor& dst, const NamedTensor& src) {
  if (src.shape != dst.shape()) {
    throw IncompatibleCheckpointError(src.name, "shape " + shape_str(src.shape) + " vs " + shape_str(dst.shape()));
  }
  std::copy(src.data.begin(), src.data.end(), dst.mutable_data().begin());
}

}  // namespace

void Trainer::restore(const Checkpoint& ckpt) {
  const TrainConfig other = echoed_config(ckpt);
  if (other.mode != config_.mode) {
    throw IncompatibleCheckpointError("mode", "checkpoint is " + std::string(to_string(other.mode)) +
                                                  ", config is " + std::string(to_string(config_.mode)));
  }
  check_architecture(other, true);
  std::unordered_map<std::string, const NamedTensor*> by_name;
  for (const auto& t : ckpt.params) by_name[t.name] = &t;
  for (auto& p : model_.parameters()) {
    const auto it = by_name.find(p.name);
    if (it == by_name.end()) throw IncompatibleCheckpointError(p.name, "missing parameter");
    copy_tensor(p.tensor, *it->second);
  }
  std::vector<std::pair<std::string, std::vector<real>>> state;
  std::size_t skipped = 0;
  for (const auto& t : ckpt.optimizer) {
    if (t.name == "trainer.skipped" && t.data.size() == 1) {
      skipped = static_cast<std::size_t>(t.data[0]);
    } else {
      state.emplace_back(t.name, t.data);
    }
  }
  if (pending_) {
    pending_->wait();
    pending_.reset();
  }
  rebuild_optimizer();
  optimizer_.import_state(state);
  if (ckpt.step > total_steps()) {
    throw IncompatibleCheckpointError("epochs", "checkpoint step " + std::to_string(ckpt.step) +
                                                    " is past the configured schedule");
  }
  step_ = ckpt.step;
  skipped_ = skipped;
  rng_.set_state(ckpt.rng);
}

void Trainer::init_encoder_from(const Checkpoint& ckpt) {
  const TrainConfig other = echoed_config(ckpt);
  check_architecture(other, false);
  std::unordered_map<std::string, const NamedTensor*> by_name;
  for (const auto& t : ckpt.params) by_name[t.name] = &t;
  std::size_t copied = 0;
  model_.encoder.visit("encoder.", [&](const std::string& name, Tensor& t, bool) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw IncompatibleCheckpointError(name, "missing parameter");
    copy_tensor(t, *it->second);
    ++copied;
  });
  log("event=init_encoder tensors=" + std::to_string(copied) + " from_mode=" + std::string(to_string(other.mode)));
}

double Trainer::accuracy(const std::vector<data::DatasetRecord>& records) {
  if (!model_.has_classifier()) throw ContractError("accuracy: model has no classifier head");
  if (records.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < records.size(); begin += config_.batch_size) {
    const std::size_t end = std::min(records.size(), begin + config_.batch_size);
    std::vector<data::Image> images;
    std::vector<std::uint32_t> labels;
    for (std::size_t i = begin; i < end; ++i) {
      images.push_back(records[i].image);
      labels.push_back(records[i].label);
    }
    const Tensor logits = model_.classify(tokens_of(images, config_).detach());
    correct += count_correct(logits, labels);
  }
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

objective::LossReport Trainer::reconstruction(const std::vector<data::DatasetRecord>& records,
                                              std::uint64_t seed) {
  if (!model_.decoder) throw ContractError("reconstruction: model has no decoder");
  objective::LossReport total;
  Rng rng(seed);
  for (std::size_t begin = 0; begin < records.size(); begin += config_.batch_size) {
    const std::size_t end = std::min(records.size(), begin + config_.batch_size);
    std::vector<data::Image> images;
    for (std::size_t i = begin; i < end; ++i) images.push_back(records[i].image);
    MaskedBatch masks = draw_masks(config_, images.size(), rng);
    objective::ObjectiveBatch ob;
    ob.tokens = tokens_of(images, config_);
    ob.targets = data::normalize_tokens(ob.tokens);
    ob.plans = std::move(masks.plans);
    ob.vis = std::move(masks.vis);
    total.accumulate(objective::objective_loss(model_.encoder, *model_.decoder, ob).report);
  }
  return total;
}

}  // namespace hmap::train
