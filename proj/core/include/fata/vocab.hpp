#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "fata/csv.hpp"
#include "fata/quantizer.hpp"
#include "fata/schema.hpp"

namespace fata {

using TokenId = std::int32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kMaskId = 1;
inline constexpr TokenId kUnkId = 2;
inline constexpr TokenId kNumSpecials = 3;

/// Name of the auxiliary dynamic field carrying the quantized gap to the
/// previous record. Only models without time-aware positions read it.
inline constexpr std::string_view kTimeGapField = "__gap";

using QuantizerMap = std::map<std::string, Quantizer, std::less<>>;

/// Global token space. Ids 0..2 are the shared specials; each field then owns a
/// contiguous block of ids for its observed values (bin indices for numerical
/// fields). Immutable once built.
class Vocabulary {
 public:
  struct Field {
    std::string name;
    FieldKind kind = FieldKind::Dynamic;
    FieldType dtype = FieldType::Categorical;
    bool is_label = false;
    bool is_time_gap = false;
    std::optional<Quantizer> quantizer;
    std::vector<std::string> tokens;  // local id -> token text
    TokenId offset = 0;

    std::unordered_map<std::string, TokenId> index;  // token text -> local id
  };

  struct Decoded {
    int field = -1;  // -1 for specials
    std::string token;
  };

  Vocabulary() = default;

  [[nodiscard]] const std::vector<Field>& fields() const { return fields_; }
  [[nodiscard]] const Field& field(std::size_t f) const { return fields_.at(f); }
  [[nodiscard]] int field_index(std::string_view name) const;
  [[nodiscard]] std::size_t require_field(std::string_view name) const;

  [[nodiscard]] TokenId size() const { return size_; }
  [[nodiscard]] TokenId local_size(std::size_t f) const {
    return static_cast<TokenId>(fields_.at(f).tokens.size());
  }

  /// Id for an already-tokenized value (category text or bin index); [UNK] if unseen.
  [[nodiscard]] TokenId encode_token(std::size_t f, std::string_view token) const;
  /// Id for a raw cell value: quantized first for numerical fields. Empty or
  /// unparseable cells map to [UNK].
  [[nodiscard]] TokenId encode_value(std::size_t f, std::string_view raw) const;
  [[nodiscard]] TokenId encode_number(std::size_t f, double x) const;

  [[nodiscard]] Decoded decode(TokenId id) const;
  /// Field owning `id`, or -1 for specials / out of range.
  [[nodiscard]] int field_of(TokenId id) const;

  /// Width of the per-field prediction head: specials plus the local vocabulary.
  [[nodiscard]] int head_width(std::size_t f) const { return kNumSpecials + local_size(f); }
  /// Class index of `id` inside field f's head. Throws for other fields' ids.
  [[nodiscard]] int head_class(std::size_t f, TokenId id) const;

  /// SHA-256 (hex) of the canonical JSON content.
  [[nodiscard]] const std::string& digest() const { return digest_; }

  [[nodiscard]] nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  static constexpr std::string_view special_name(TokenId id) {
    return id == kPadId ? "[PAD]" : id == kMaskId ? "[MASK]" : "[UNK]";
  }

 private:
  friend class VocabularyBuilder;
  void finalize();
  [[nodiscard]] nlohmann::json content_json() const;

  std::vector<Field> fields_;
  TokenId size_ = kNumSpecials;
  std::string digest_;
};

/// Accumulates observed tokens per field in first-seen order.
class VocabularyBuilder {
 public:
  std::size_t add_field(std::string name, FieldKind kind, FieldType dtype,
                        std::optional<Quantizer> quantizer = std::nullopt, bool is_label = false,
                        bool is_time_gap = false);
  /// Records a raw cell for field f (quantized for numerical fields). Empty or
  /// unparseable cells are ignored.
  void observe(std::size_t f, std::string_view raw);
  void observe_number(std::size_t f, double x);
  Vocabulary build() &&;

 private:
  void observe_token(std::size_t f, std::string token);
  Vocabulary vocab_;
};

/// Builds the vocabulary over the schema's fields (schema order; the label
/// field only when `include_label`). Numerical fields need a fitted quantizer.
/// With `gap_quantizer`, a trailing kTimeGapField is added and fed `gaps`.
Vocabulary build_vocab(const Schema& schema, const QuantizerMap& quantizers, const CsvTable& rows,
                       bool include_label = false, const Quantizer* gap_quantizer = nullptr,
                       std::span<const double> gaps = {});

/// SHA-256 hex digest of a byte string.
std::string sha256_hex(std::string_view bytes);

}  // namespace fata
