#include "fata/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fata/error.hpp"
#include "fata/eval.hpp"
#include "fata/log.hpp"
#include "fata/nn/ops.hpp"
#include "fata/parallel.hpp"
#include "fata/rng.hpp"

namespace fata {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;
constexpr std::uint64_t kMaskStream = 0x4d41534bULL;
constexpr std::uint64_t kDropoutStream = 0x44524f50ULL;
constexpr std::uint64_t kDownsampleStream = 0x444f574eULL;

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  return order;
}

enum class Objective { Mlm, Bce };

// Forward + backward over `batch` in fixed micro-batches. Gradients land in
// `grads` (summed in micro-batch order); returns the batch loss.
double accumulate(const FataModel<float>& model, std::span<const TokenizedWindow> batch, Objective objective,
                  const TrainConfig& config, std::uint64_t step_seed, const std::vector<bool>* trainable,
                  nn::GradSet<float>& grads) {
  const auto micro = std::max<std::size_t>(1, config.micro_batch);
  const auto chunks = (batch.size() + micro - 1) / micro;
  const double scale = 1.0 / static_cast<double>(batch.size());
  std::vector<nn::GradSet<float>> chunk_grads(chunks);
  std::vector<double> chunk_loss(chunks, 0.0);

  parallel_for(chunks, config.threads, [&](std::size_t c) {
    const auto part = batch.subspan(c * micro, std::min(micro, batch.size() - c * micro));
    auto& g = chunk_grads[c];
    g = model.params().zeros_like();
    nn::Tape<float> tape;
    nn::Bound<float> b(tape, model.params(), &g, trainable);
    Rng drop_rng(derive_seed(step_seed, kDropoutStream, c));
    const nn::DropoutContext drop{model.config().dropout, &drop_rng};
    nn::Var se = model.encode(b, part, drop);
    nn::Var loss;
    if (objective == Objective::Mlm) {
      loss = model.mlm_loss(b, model.mlm_logits(b, se, part.size()), part, scale);
    } else {
      std::vector<float> labels;
      for (const auto& w : part) labels.push_back(static_cast<float>(*w.label));
      loss = nn::scale(tape, nn::bce_with_logits(tape, model.classify_logits(b, se, part.size()),
                                                 std::span<const float>(labels)),
                       static_cast<float>(scale));
    }
    chunk_loss[c] = static_cast<double>(tape.value(loss)[0]);
    tape.backward(loss);
  });

  grads = model.params().zeros_like();
  double total = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) {
    total += chunk_loss[c];
    for (std::size_t p = 0; p < grads.size(); ++p) {
      auto* dst = grads[p].data();
      const auto* src = chunk_grads[c][p].data();
      for (std::size_t k = 0; k < grads[p].size(); ++k) dst[k] += src[k];
    }
  }
  return total;
}

void emit(const MetricSink& sink, nlohmann::json record) {
  if (sink) sink(record);
}

}  // namespace

std::string_view to_string(LrSchedule schedule) {
  return schedule == LrSchedule::Constant ? "constant" : "linear";
}

LrSchedule lr_schedule_from_string(std::string_view text) {
  if (text == "constant") return LrSchedule::Constant;
  if (text == "linear") return LrSchedule::Linear;
  throw ConfigError("unknown learning-rate schedule '" + std::string(text) + "'");
}

double lr_factor(LrSchedule schedule, std::size_t step, std::size_t total, std::size_t warmup) {
  if (step < warmup) return static_cast<double>(step + 1) / static_cast<double>(warmup + 1);
  if (schedule == LrSchedule::Constant || total <= warmup) return 1.0;
  return static_cast<double>(total - std::min(step, total)) / static_cast<double>(total - warmup);
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (downsample_ratio != 0.0 && downsample_ratio < 1.0) throw ConfigError("downsample ratio must be >= 1 (or 0)");
  if (!(pretrain_lr > 0.0) || !(finetune_lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (!(mask_rate > 0.0 && mask_rate < 1.0)) throw ConfigError("mask_rate must be in (0, 1)");
  if (threads == 0) throw ConfigError("threads must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"pretrain_epochs", pretrain_epochs},
          {"finetune_epochs", finetune_epochs},
          {"batch_size", batch_size},
          {"pretrain_lr", pretrain_lr},
          {"finetune_lr", finetune_lr},
          {"mask_rate", mask_rate},
          {"patience", patience},
          {"downsample_ratio", downsample_ratio},
          {"clip_norm", clip_norm},
          {"schedule", to_string(schedule)},
          {"warmup_steps", warmup_steps},
          {"seed", seed},
          {"micro_batch", micro_batch},
          {"threads", threads},
          {"max_steps", max_steps},
          {"log_every", log_every},
          {"freeze_encoder", freeze_encoder}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
    c.finetune_epochs = j.value("finetune_epochs", c.finetune_epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.pretrain_lr = j.value("pretrain_lr", c.pretrain_lr);
    c.finetune_lr = j.value("finetune_lr", c.finetune_lr);
    c.mask_rate = j.value("mask_rate", c.mask_rate);
    c.patience = j.value("patience", c.patience);
    c.downsample_ratio = j.value("downsample_ratio", c.downsample_ratio);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.schedule = lr_schedule_from_string(j.value("schedule", std::string(to_string(c.schedule))));
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.seed = j.value("seed", c.seed);
    c.micro_batch = j.value("micro_batch", c.micro_batch);
    c.threads = j.value("threads", c.threads);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.log_every = j.value("log_every", c.log_every);
    c.freeze_encoder = j.value("freeze_encoder", c.freeze_encoder);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad training config: ") + e.what());
  }
  c.validate();
  return c;
}

PretrainResult pretrain(FataModel<float>& model, std::span<const TokenizedWindow> windows, const Vocabulary& vocab,
                        const TrainConfig& config, nn::Adam<float>* optimizer, const MetricSink& sink) {
  config.validate();
  if (vocab.digest() != model.vocab_digest()) throw StateError("vocabulary digest does not match the model");
  for (const auto& w : windows) model.check_window(w);
  PretrainResult result;
  if (config.pretrain_epochs == 0) return result;
  if (windows.empty()) throw ConfigError("no pretraining windows");

  nn::Adam<float> local;
  if (!optimizer) {
    local = nn::Adam<float>(model.params(), {.lr = config.pretrain_lr, .clip_norm = config.clip_norm});
    optimizer = &local;
  }
  const MaskOptions mask{.rate = config.mask_rate};
  const double base_lr = optimizer->config().lr;
  const auto per_epoch = (windows.size() + config.batch_size - 1) / config.batch_size;
  auto total_steps = per_epoch * config.pretrain_epochs;
  if (config.max_steps > 0) total_steps = std::min(total_steps, config.max_steps);
  nn::GradSet<float> grads;
  std::vector<TokenizedWindow> batch;

  for (std::size_t epoch = 0; epoch < config.pretrain_epochs && result.steps < total_steps; ++epoch) {
    const auto order = shuffled(windows.size(), derive_seed(config.seed, kShuffleStream, epoch));
    for (std::size_t begin = 0; begin < order.size() && result.steps < total_steps; begin += config.batch_size) {
      const auto step = result.steps;
      const auto step_seed = derive_seed(config.seed, kMaskStream, step);
      batch.clear();
      for (std::size_t k = begin; k < std::min(order.size(), begin + config.batch_size); ++k) {
        batch.push_back(random_mask(windows[order[k]], vocab, mask, derive_seed(step_seed, k - begin)));
      }
      optimizer->set_lr(base_lr * lr_factor(config.schedule, step, total_steps, config.warmup_steps));
      const double loss = accumulate(model, batch, Objective::Mlm, config, step_seed, nullptr, grads);
      if (!std::isfinite(loss)) {
        throw NumericError("non-finite MLM loss at step " + std::to_string(step) + " (epoch " +
                           std::to_string(epoch) + ")");
      }
      if (!optimizer->step(model.params(), grads)) {
        log_warn("non-finite gradients at step " + std::to_string(step) + "; update skipped");
        ++result.skipped_steps;
      }
      result.losses.push_back(loss);
      ++result.steps;
      if (config.log_every > 0 && (step % config.log_every == 0)) {
        emit(sink, {{"phase", "pretrain"}, {"epoch", epoch}, {"step", step}, {"loss", loss},
                    {"grad_norm", optimizer->last_grad_norm()}});
      }
    }
  }
  optimizer->set_lr(base_lr);
  return result;
}

std::vector<TokenizedWindow> downsample(std::span<const TokenizedWindow> windows, double ratio, std::uint64_t seed) {
  if (ratio < 1.0) throw ConfigError("downsample ratio must be >= 1");
  std::vector<std::size_t> negatives;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (!windows[i].label) throw ConfigError("downsampling needs labelled windows");
    if (*windows[i].label == 1) {
      ++positives;
    } else {
      negatives.push_back(i);
    }
  }
  if (positives == 0) throw ConfigError("no positive windows to downsample against");
  const auto keep = std::min(negatives.size(), static_cast<std::size_t>(std::floor(ratio * positives)));
  Rng rng(derive_seed(seed, kDownsampleStream));
  for (std::size_t i = 0; i < keep; ++i) {
    std::swap(negatives[i], negatives[i + uniform_index(rng, negatives.size() - i)]);
  }
  std::vector<std::uint8_t> chosen(windows.size(), 0);
  for (std::size_t i = 0; i < keep; ++i) chosen[negatives[i]] = 1;
  std::vector<TokenizedWindow> out;
  out.reserve(positives + keep);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (*windows[i].label == 1 || chosen[i]) out.push_back(windows[i]);
  }
  return out;
}

EarlyStopper::EarlyStopper(std::size_t patience) : patience_(patience) {
  if (patience < 1) throw ConfigError("patience must be at least 1");
}

bool EarlyStopper::update(double value) {
  ++count_;
  if (best_index_ == 0 || value > best_) {
    best_ = value;
    best_index_ = count_;
    bad_ = 0;
    return true;
  }
  ++bad_;
  return false;
}

double evaluate_auc(const FataModel<float>& model, std::span<const TokenizedWindow> windows) {
  std::vector<int> labels;
  labels.reserve(windows.size());
  for (const auto& w : windows) {
    if (!w.label) throw ConfigError("evaluation needs labelled windows");
    labels.push_back(*w.label);
  }
  const auto scores = model.scores(windows);
  return roc_auc(scores, labels).auc;
}

FinetuneResult finetune(FataModel<float>& model, std::span<const TokenizedWindow> train,
                        std::span<const TokenizedWindow> val, const TrainConfig& config, const MetricSink& sink) {
  config.validate();
  for (const auto* set : {&train, &val}) {
    for (const auto& w : *set) {
      model.check_window(w);
      if (!w.label) throw ConfigError("fine-tuning needs labelled windows");
    }
  }
  {
    bool pos = false, neg = false;
    for (const auto& w : val) (*w.label ? pos : neg) = true;
    if (!pos || !neg) throw ConfigError("validation set needs both classes for AUC");
  }
  std::vector<TokenizedWindow> data = config.downsample_ratio > 0.0
                                          ? downsample(train, config.downsample_ratio, config.seed)
                                          : std::vector<TokenizedWindow>(train.begin(), train.end());
  if (data.empty()) throw ConfigError("no fine-tuning windows");

  FinetuneResult result;
  result.train_windows = data.size();
  nn::Adam<float> optimizer(model.params(), {.lr = config.finetune_lr, .clip_norm = config.clip_norm});
  const auto mask = config.freeze_encoder ? model.head_only_mask() : std::vector<bool>{};
  const auto* trainable = config.freeze_encoder ? &mask : nullptr;
  EarlyStopper stopper(config.patience);
  auto best = model.params();
  nn::GradSet<float> grads;
  std::vector<TokenizedWindow> batch;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.finetune_epochs; ++epoch) {
    const auto order = shuffled(data.size(), derive_seed(config.seed, kShuffleStream, 1'000'000 + epoch));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      if (config.max_steps > 0 && step >= config.max_steps) break;
      batch.clear();
      for (std::size_t k = begin; k < std::min(order.size(), begin + config.batch_size); ++k) {
        batch.push_back(data[order[k]]);
      }
      const auto step_seed = derive_seed(config.seed, kMaskStream, 1'000'000'000ULL + step);
      const double loss = accumulate(model, batch, Objective::Bce, config, step_seed, trainable, grads);
      if (!std::isfinite(loss)) throw NumericError("non-finite fine-tuning loss at step " + std::to_string(step));
      if (!optimizer.step(model.params(), grads, trainable)) {
        log_warn("non-finite gradients at fine-tuning step " + std::to_string(step) + "; update skipped");
      }
      loss_sum += loss;
      ++batches;
      ++step;
    }
    const double epoch_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    const double auc = evaluate_auc(model, val);
    result.train_loss.push_back(epoch_loss);
    result.val_auc.push_back(auc);
    if (stopper.update(auc)) best = model.params();
    emit(sink, {{"phase", "finetune"}, {"epoch", epoch + 1}, {"step", step}, {"loss", epoch_loss}, {"val_auc", auc}});
    if (stopper.should_stop()) {
      result.stopped_early = true;
      break;
    }
    if (config.max_steps > 0 && step >= config.max_steps) break;
  }
  model.params() = best;
  result.best_epoch = stopper.best_index();
  result.best_auc = stopper.best();
  return result;
}

namespace {

template <typename T>
void write_le(std::ostream& os, std::span<const T> values) {
  static_assert(std::is_arithmetic_v<T>);
  for (T v : values) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
    os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
  }
}

template <typename T>
std::vector<T> read_le(const std::string& blob, std::size_t offset, std::size_t count) {
  std::vector<T> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, blob.data() + offset + i * sizeof(T), sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
    std::memcpy(&out[i], bytes, sizeof(T));
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StateError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json read_json_state(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw StateError("malformed " + path.filename().string() + ": " + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StateError("cannot write " + path.string());
  out << text;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const FataModel<float>& model, const Vocabulary& vocab,
                     const nn::Adam<float>* optimizer, const CheckpointExtras& extras) {
  if (vocab.digest() != model.vocab_digest()) throw StateError("vocabulary digest does not match the model");
  std::filesystem::create_directories(dir);
  const auto& params = model.params();

  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  {
    std::ofstream blob(dir / "weights.bin", std::ios::binary);
    if (!blob) throw StateError("cannot write " + (dir / "weights.bin").string());
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& v = params.value(i);
      const auto bytes = v.size() * sizeof(float);
      tensors.push_back({{"name", params.name(i)}, {"shape", {v.rows(), v.cols()}}, {"offset", offset},
                         {"bytes", bytes}});
      write_le(blob, v.values());
      offset += bytes;
    }
  }

  nlohmann::json manifest{{"format", "fata-checkpoint"},
                          {"version", kCheckpointVersion},
                          {"dtype", "float32"},
                          {"byte_order", "little"},
                          {"vocab_digest", vocab.digest()},
                          {"tensors", tensors},
                          {"total_bytes", offset},
                          {"seed", extras.seed},
                          {"step", extras.step},
                          {"info", extras.info}};
  if (optimizer) {
    const auto state = optimizer->state();
    std::ofstream os(dir / "optimizer.bin", std::ios::binary);
    write_le(os, std::span<const double>(state));
    const auto& c = optimizer->config();
    manifest["optimizer"] = {{"file", "optimizer.bin"}, {"steps", optimizer->steps()}, {"values", state.size()},
                             {"lr", c.lr}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps},
                             {"clip_norm", c.clip_norm}};
  } else {
    std::filesystem::remove(dir / "optimizer.bin");
  }
  write_text(dir / "config.json", nlohmann::json{{"model", model.config().to_json()}}.dump(2) + "\n");
  vocab.save(dir / "vocab.json");
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

namespace {

LoadedCheckpoint load_checkpoint_impl(const std::filesystem::path& dir, const Vocabulary* expected) {
  if (!std::filesystem::is_directory(dir)) throw StateError("checkpoint directory " + dir.string() + " not found");
  const auto manifest = read_json_state(dir / "manifest.json");
  if (manifest.value("format", std::string()) != "fata-checkpoint") throw StateError("not a checkpoint manifest");
  const int version = manifest.value("version", -1);
  if (version != kCheckpointVersion) {
    throw StateError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto digest = manifest.value("vocab_digest", std::string());
  if (expected && expected->digest() != digest) {
    throw StateError("vocabulary digest mismatch: checkpoint " + digest.substr(0, 12) + " vs data " +
                     expected->digest().substr(0, 12));
  }
  Vocabulary vocab = Vocabulary::load(dir / "vocab.json");
  if (vocab.digest() != digest) throw StateError("checkpoint vocab.json does not match its manifest digest");

  ModelConfig config;
  try {
    config = ModelConfig::from_json(read_json_state(dir / "config.json").at("model"));
  } catch (const std::exception& e) {
    throw StateError(std::string("bad checkpoint config: ") + e.what());
  }
  auto model = FataModel<float>::skeleton(config, vocab);
  auto& params = model.params();

  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != params.size()) throw StateError("checkpoint tensor count does not match the model");
  std::size_t expected_offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = tensors[i];
    const auto& v = params.value(i);
    const auto shape = t.at("shape").get<std::vector<std::size_t>>();
    if (t.at("name").get<std::string>() != params.name(i) || shape.size() != 2 || shape[0] != v.rows() ||
        shape[1] != v.cols()) {
      throw StateError("checkpoint tensor " + std::to_string(i) + " does not match parameter '" + params.name(i) + "'");
    }
    if (t.at("offset").get<std::size_t>() != expected_offset) throw StateError("checkpoint offsets are not contiguous");
    expected_offset += v.size() * sizeof(float);
  }
  if (manifest.value("total_bytes", std::size_t{0}) != expected_offset) {
    throw StateError("checkpoint manifest size disagrees with its tensors");
  }
  const auto blob = read_file(dir / "weights.bin");
  if (blob.size() != expected_offset) {
    throw StateError("weights.bin has " + std::to_string(blob.size()) + " bytes, expected " +
                     std::to_string(expected_offset));
  }
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& v = params.value(i);
    auto values = read_le<float>(blob, offset, v.size());
    std::copy(values.begin(), values.end(), v.data());
    offset += v.size() * sizeof(float);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params.value(i).all_finite()) throw StateError("checkpoint tensor '" + params.name(i) + "' is not finite");
  }

  std::optional<nn::Adam<float>> optimizer;
  if (manifest.contains("optimizer") && !manifest["optimizer"].is_null()) {
    const auto& o = manifest["optimizer"];
    nn::AdamConfig c;
    c.lr = o.value("lr", c.lr);
    c.beta1 = o.value("beta1", c.beta1);
    c.beta2 = o.value("beta2", c.beta2);
    c.eps = o.value("eps", c.eps);
    c.clip_norm = o.value("clip_norm", c.clip_norm);
    const auto count = o.at("values").get<std::size_t>();
    const auto data = read_file(dir / o.value("file", std::string("optimizer.bin")));
    if (data.size() != count * sizeof(double)) throw StateError("optimizer.bin is truncated");
    nn::Adam<float> adam(params, c);
    try {
      adam.load_state(o.at("steps").get<std::uint64_t>(), read_le<double>(data, 0, count));
    } catch (const std::invalid_argument& e) {
      throw StateError(std::string("optimizer state: ") + e.what());
    }
    optimizer = std::move(adam);
  }

  CheckpointExtras extras;
  extras.seed = manifest.value("seed", std::uint64_t{0});
  extras.step = manifest.value("step", std::uint64_t{0});
  extras.info = manifest.value("info", nlohmann::json::object());
  return LoadedCheckpoint{std::move(model), std::move(vocab), std::move(optimizer), std::move(extras)};
}

}  // namespace

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir, const Vocabulary* expected) {
  try {
    return load_checkpoint_impl(dir, expected);
  } catch (const nlohmann::json::exception& e) {
    throw StateError(std::string("malformed checkpoint manifest: ") + e.what());
  }
}

}  // namespace fata
