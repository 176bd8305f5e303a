#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fata/nn/encoder.hpp"
#include "fata/nn/params.hpp"
#include "fata/tokenize.hpp"
#include "fata/vocab.hpp"

namespace fata {

/// Architecture variants. BothOff combines replicated static fields with
/// learned index-only positions and no time inputs at all.
enum class ModelMode { Fata, NoTimePos, ReplicatedStatic, BothOff };

std::string_view to_string(ModelMode mode);
ModelMode model_mode_from_string(std::string_view text);

struct ModelConfig {
  ModelMode mode = ModelMode::Fata;
  std::size_t length = 10;

  std::size_t dim = 64;
  std::size_t field_dim = 32;
  std::size_t field_layers = 1;  // per field transformer
  std::size_t field_heads = 2;
  std::size_t field_ff_dim = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ff_dim = 128;
  double dropout = 0.1;

  /// Window times are divided by this before entering the position embedding.
  double time_scale = 1.0;
  /// Whether the quantized inter-record gap is a dynamic field. Defaults to
  /// true only for NoTimePos.
  std::optional<bool> time_gap_field;
  LabelPolicy label_policy = LabelPolicy::Exclude;

  [[nodiscard]] bool replicate_static() const {
    return mode == ModelMode::ReplicatedStatic || mode == ModelMode::BothOff;
  }
  [[nodiscard]] bool time_aware() const { return mode == ModelMode::Fata || mode == ModelMode::ReplicatedStatic; }
  [[nodiscard]] bool uses_time_gap() const { return time_gap_field.value_or(mode == ModelMode::NoTimePos); }
  [[nodiscard]] ViewOptions view_options() const { return {replicate_static(), uses_time_gap()}; }

  void validate() const;
  [[nodiscard]] nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// One MLM term for the table form of the loss: a head's probabilities, the
/// original class and whether the position was masked.
struct MlmTerm {
  std::span<const double> probs;
  int target = 0;
  bool masked = false;
};

/// Mean negative log-likelihood over masked terms; 0 (with a warning) when
/// nothing is masked.
double mlm_loss(std::span<const MlmTerm> terms);

/// Two-level field- and time-aware transformer. Windows passed to any method
/// must already be in this model's view (see view()).
template <typename T>
class FataModel {
 public:
  struct MlmLogits {
    std::vector<nn::Var> static_heads;   // per static column, B x width
    std::vector<nn::Var> dynamic_heads;  // per dynamic column, (B*l) x width
  };

  static FataModel create(const ModelConfig& config, const Vocabulary& vocab, std::uint64_t seed);
  /// Same architecture with uninitialized (zero) parameters; used by loaders.
  static FataModel skeleton(const ModelConfig& config, const Vocabulary& vocab);

  [[nodiscard]] const ModelConfig& config() const { return config_; }
  [[nodiscard]] const std::string& vocab_digest() const { return vocab_digest_; }
  [[nodiscard]] nn::ParamSet<T>& params() { return params_; }
  [[nodiscard]] const nn::ParamSet<T>& params() const { return params_; }

  [[nodiscard]] std::size_t n_static() const { return static_fields_.size(); }
  [[nodiscard]] std::size_t n_dynamic() const { return dynamic_fields_.size(); }
  [[nodiscard]] std::size_t length() const { return config_.length; }
  [[nodiscard]] bool has_static_row() const { return n_static() > 0; }
  /// Second-level rows per window: 1 + l with a static row, l without.
  [[nodiscard]] std::size_t rows_per_window() const { return (has_static_row() ? 1 : 0) + length(); }
  /// Tokens processed by the first-level field transformers per window.
  [[nodiscard]] std::size_t level_one_tokens() const { return n_static() + length() * n_dynamic(); }
  [[nodiscard]] const std::vector<int>& static_fields() const { return static_fields_; }
  [[nodiscard]] const std::vector<int>& dynamic_fields() const { return dynamic_fields_; }
  [[nodiscard]] int head_width(bool is_static, std::size_t column) const;
  [[nodiscard]] int head_class(bool is_static, std::size_t column, TokenId id) const;

  /// Restricts/reshapes a tokenized window to this model's columns.
  [[nodiscard]] TokenizedWindow view(const TokenizedWindow& window, const ColumnLayout& layout) const;
  /// Throws ConfigError when a window does not fit this model.
  void check_window(const TokenizedWindow& window) const;

  /// Trainable flags selecting only the classification head.
  [[nodiscard]] std::vector<bool> head_only_mask() const;

  // Differentiable pieces, batched over windows.
  nn::Var static_field_encode(nn::Bound<T>& b, std::span<const TokenizedWindow> batch,
                              const nn::DropoutContext& drop) const;
  nn::Var dynamic_field_encode(nn::Bound<T>& b, std::span<const TokenizedWindow> batch,
                               const nn::DropoutContext& drop) const;
  /// Position rows in second-level order (time-aware or learned).
  nn::Var position_embedding(nn::Bound<T>& b, std::span<const TokenizedWindow> batch) const;
  /// IE: first-level outputs plus field-type and position rows.
  nn::Var compose_inputs(nn::Bound<T>& b, nn::Var te_static, nn::Var te_dynamic,
                         std::span<const TokenizedWindow> batch) const;
  nn::Var fata_bert_forward(nn::Bound<T>& b, nn::Var ie, std::span<const TokenizedWindow> batch,
                            const nn::DropoutContext& drop) const;
  /// Full forward: SE as (B * rows_per_window) x d.
  nn::Var encode(nn::Bound<T>& b, std::span<const TokenizedWindow> batch, const nn::DropoutContext& drop) const;

  MlmLogits mlm_logits(nn::Bound<T>& b, nn::Var se, std::size_t batch_size) const;
  /// Sum over windows of scale * (masked-position cross-entropy / masked count).
  /// With the default scale this is the batch mean of per-window losses.
  nn::Var mlm_loss(nn::Bound<T>& b, const MlmLogits& logits, std::span<const TokenizedWindow> batch,
                   std::optional<double> scale = std::nullopt) const;
  /// B x 1 classification logits over the concatenated SE rows of each window.
  nn::Var classify_logits(nn::Bound<T>& b, nn::Var se, std::size_t batch_size) const;

  // Inference helpers (dropout off, no gradients).
  [[nodiscard]] nn::Tensor<T> sequence_embeddings(std::span<const TokenizedWindow> batch) const;
  [[nodiscard]] std::vector<double> scores(std::span<const TokenizedWindow> windows, std::size_t chunk = 64) const;
  [[nodiscard]] double mlm_loss_value(std::span<const TokenizedWindow> batch) const;

  template <typename U>
  [[nodiscard]] FataModel<U> cast() const {
    FataModel<U> out;
    out.config_ = config_;
    out.vocab_digest_ = vocab_digest_;
    out.vocab_size_ = vocab_size_;
    out.static_fields_ = static_fields_;
    out.dynamic_fields_ = dynamic_fields_;
    out.static_heads_ = static_heads_;
    out.dynamic_heads_ = dynamic_heads_;
    out.p_ = p_;
    out.static_encoder_ = static_encoder_;
    out.dynamic_encoder_ = dynamic_encoder_;
    out.encoder_ = encoder_;
    out.params_ = params_.template cast<U>();
    return out;
  }

 private:
  template <typename>
  friend class FataModel;

  struct Head {
    int field = -1;
    TokenId offset = 0;
    int local_size = 0;
    std::size_t weight = 0;
    std::size_t bias = 0;
  };

  struct Index {
    std::size_t token = 0, static_slot = 0, dynamic_slot = 0;
    std::size_t static_proj_w = 0, static_proj_b = 0, dynamic_proj_w = 0, dynamic_proj_b = 0;
    std::size_t field_type = 0, time_position = 0, position = 0;
    std::size_t cls_w = 0, cls_b = 0;
  };

  FataModel() = default;
  static FataModel build(const ModelConfig& config, const Vocabulary& vocab);

  ModelConfig config_;
  std::string vocab_digest_;
  TokenId vocab_size_ = 0;
  std::vector<int> static_fields_;
  std::vector<int> dynamic_fields_;
  std::vector<Head> static_heads_;
  std::vector<Head> dynamic_heads_;
  Index p_;
  nn::Encoder static_encoder_;
  nn::Encoder dynamic_encoder_;
  nn::Encoder encoder_;
  nn::ParamSet<T> params_;
};

}  // namespace fata
