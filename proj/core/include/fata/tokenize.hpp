#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fata/schema.hpp"
#include "fata/vocab.hpp"
#include "fata/windows.hpp"

namespace fata {

enum class LabelPolicy {
  Exclude,          // label column dropped from features
  IncludeMaskLast,  // label kept as a dynamic field; the last record's label is always [MASK]
};

std::string_view to_string(LabelPolicy policy);
LabelPolicy label_policy_from_string(std::string_view text);

/// Token ids for one window, plus the masking state.
///
/// `keep` is the MLM indicator: 1 = not masked (no loss), 0 = masked (loss).
/// `candidate` marks positions random masking may select: padding and the
/// fixed-masked label position are never candidates.
struct TokenizedWindow {
  std::string seq_id;
  std::size_t length = 0;
  std::size_t n_static = 0;
  std::size_t n_dynamic = 0;

  std::vector<int> static_fields;   // vocab field per static column
  std::vector<int> dynamic_fields;  // vocab field per dynamic column

  std::vector<TokenId> static_ids;  // model input (after masking)
  std::vector<TokenId> static_orig;
  std::vector<std::uint8_t> static_keep;
  std::vector<std::uint8_t> static_candidate;

  std::vector<TokenId> dynamic_ids;  // length x n_dynamic
  std::vector<TokenId> dynamic_orig;
  std::vector<std::uint8_t> dynamic_keep;
  std::vector<std::uint8_t> dynamic_candidate;

  std::vector<double> times;  // rebased, unscaled
  std::optional<int> label;
  std::size_t pad_count = 0;

  [[nodiscard]] std::size_t masked_count() const;
  [[nodiscard]] std::size_t level_one_tokens() const { return n_static + length * n_dynamic; }
};

/// Vocab fields in model column order: static fields, then dynamic fields (the
/// label when present in the vocabulary, the time-gap field last).
struct ColumnLayout {
  std::vector<int> static_fields;
  std::vector<int> dynamic_fields;
  int label_column = -1;
  int gap_column = -1;

  static ColumnLayout from_vocab(const Vocabulary& vocab);
};

/// Maps every raw value to its field-local id. Padded rows become [PAD]. The
/// label column is dropped under LabelPolicy::Exclude.
TokenizedWindow tokenize_window(const RecordWindow& window, const Schema& schema, const Vocabulary& vocab,
                                LabelPolicy policy);

/// Rebuilds input ids, indicators and candidates from the original ids, padding
/// and label policy. Used after loading shards.
void reset_masking(TokenizedWindow& window, const ColumnLayout& layout, LabelPolicy policy);

struct ViewOptions {
  bool replicate_static = false;  // copy static tokens into every record
  bool include_time_gap = false;  // keep the quantized gap column
};

/// Column selection for a model variant. With `replicate_static` the result
/// has no static columns; each record carries copies of the static tokens
/// ahead of its dynamic tokens (padded rows get [PAD]).
TokenizedWindow make_view(const TokenizedWindow& window, const ColumnLayout& layout, const ViewOptions& options);

struct MaskOptions {
  double rate = 0.15;
  double p_mask = 0.8;
  double p_random = 0.1;  // the remainder keeps the original token
};

/// MLM corruption. Each candidate is selected independently with probability
/// `rate` (static and dynamic pools draw from separate streams). Selected
/// positions get keep = 0 and an input id that is [MASK], a uniform token from
/// the same field's local vocabulary, or the original.
TokenizedWindow random_mask(const TokenizedWindow& window, const Vocabulary& vocab, const MaskOptions& options,
                            std::uint64_t seed);

}  // namespace fata
