#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fata/model.hpp"
#include "fata/nn/adam.hpp"
#include "fata/vocab.hpp"

namespace fata {

enum class LrSchedule { Constant, Linear };

std::string_view to_string(LrSchedule schedule);
LrSchedule lr_schedule_from_string(std::string_view text);

/// Multiplier on the base learning rate at `step` (0-based) of `total`.
double lr_factor(LrSchedule schedule, std::size_t step, std::size_t total, std::size_t warmup);

struct TrainConfig {
  std::size_t pretrain_epochs = 3;
  std::size_t finetune_epochs = 20;
  std::size_t batch_size = 32;
  double pretrain_lr = 1e-4;
  double finetune_lr = 5e-5;
  double mask_rate = 0.15;
  std::size_t patience = 3;
  /// Negatives kept per positive when fine-tuning; 0 disables downsampling.
  double downsample_ratio = 20.0;
  double clip_norm = 1.0;
  /// Pretraining learning-rate schedule: linear warmup over `warmup_steps`,
  /// then constant or linear decay to zero at the last step.
  LrSchedule schedule = LrSchedule::Linear;
  std::size_t warmup_steps = 0;
  std::uint64_t seed = 0;
  /// Windows per tape. Gradients are summed over micro-batches in order, so
  /// results do not depend on `threads`.
  std::size_t micro_batch = 8;
  std::size_t threads = 1;
  /// Optional cap on optimizer steps per run (0 = none).
  std::size_t max_steps = 0;
  std::size_t log_every = 10;
  /// Fine-tune only the classification head.
  bool freeze_encoder = false;

  void validate() const;
  [[nodiscard]] nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// JSON-lines style progress records ({"phase", "step", "loss", ...}).
using MetricSink = std::function<void(const nlohmann::json&)>;

struct PretrainResult {
  std::vector<double> losses;  // one per optimizer step
  std::size_t steps = 0;
  std::size_t skipped_steps = 0;  // non-finite gradients
};

/// MLM pretraining over unmasked windows in the model's view. Each step
/// masks its batch with seeds derived from (seed, step, slot).
PretrainResult pretrain(FataModel<float>& model, std::span<const TokenizedWindow> windows, const Vocabulary& vocab,
                        const TrainConfig& config, nn::Adam<float>* optimizer = nullptr,
                        const MetricSink& sink = {});

/// Keeps every positive and `ratio` x positives negatives (all of them when
/// fewer), sampled without replacement; original order is preserved.
std::vector<TokenizedWindow> downsample(std::span<const TokenizedWindow> windows, double ratio, std::uint64_t seed);

/// Patience-based stopping on a metric that should increase.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience);

  /// Records one evaluation; returns true when it is a new best.
  bool update(double value);
  [[nodiscard]] bool should_stop() const { return bad_ >= patience_; }
  /// 1-based index of the best evaluation (0 before any update).
  [[nodiscard]] std::size_t best_index() const { return best_index_; }
  [[nodiscard]] double best() const { return best_; }
  [[nodiscard]] std::size_t evaluations() const { return count_; }

 private:
  std::size_t patience_;
  std::size_t bad_ = 0;
  std::size_t count_ = 0;
  std::size_t best_index_ = 0;
  double best_ = 0.0;
};

struct FinetuneResult {
  std::vector<double> train_loss;  // mean BCE per epoch
  std::vector<double> val_auc;
  std::size_t best_epoch = 0;  // 1-based
  double best_auc = 0.0;
  bool stopped_early = false;
  std::size_t train_windows = 0;
};

/// Binary fine-tuning with BCE on classify logits, validation AUC once per
/// epoch and early stopping. On return the model holds the best-AUC weights.
FinetuneResult finetune(FataModel<float>& model, std::span<const TokenizedWindow> train,
                        std::span<const TokenizedWindow> val, const TrainConfig& config,
                        const MetricSink& sink = {});

/// Scores and AUC of `model` on labelled windows.
double evaluate_auc(const FataModel<float>& model, std::span<const TokenizedWindow> windows);

inline constexpr int kCheckpointVersion = 1;

struct CheckpointExtras {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  nlohmann::json info = nlohmann::json::object();
};

/// Writes config.json, vocab.json, manifest.json, weights.bin and (when an
/// optimizer is given) optimizer.bin into `dir`.
void save_checkpoint(const std::filesystem::path& dir, const FataModel<float>& model, const Vocabulary& vocab,
                     const nn::Adam<float>* optimizer = nullptr, const CheckpointExtras& extras = {});

struct LoadedCheckpoint {
  FataModel<float> model;
  Vocabulary vocab;
  std::optional<nn::Adam<float>> optimizer;
  CheckpointExtras extras;
};

/// Loads and validates a checkpoint. With `expected`, the stored vocabulary
/// digest must equal expected->digest(). Throws StateError on any mismatch or
/// corruption; nothing is returned partially.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir, const Vocabulary* expected = nullptr);

}  // namespace fata
