#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fata/csv.hpp"

namespace fata {

enum class FieldKind { Static, Dynamic };
enum class FieldType { Categorical, Numerical };

std::string_view to_string(FieldKind kind);
std::string_view to_string(FieldType dtype);

/// Columns with a fixed meaning in record CSVs; never treated as fields.
inline constexpr std::string_view kSeqIdColumn = "seq_id";
inline constexpr std::string_view kTimeColumn = "time";
inline constexpr std::string_view kSplitColumn = "split";

inline constexpr int kDefaultBins = 32;

struct FieldSchema {
  std::string name;
  FieldKind kind = FieldKind::Dynamic;
  FieldType dtype = FieldType::Categorical;
  int n_bins = 0;  // numerical fields only

  bool operator==(const FieldSchema&) const = default;
};

struct Schema {
  std::vector<FieldSchema> fields;
  std::optional<std::string> label_field;

  /// Throws ConfigError when names repeat, no dynamic feature field exists,
  /// or a numerical field has fewer than two bins.
  void validate() const;

  [[nodiscard]] const FieldSchema* find(std::string_view name) const;
  [[nodiscard]] bool is_label(std::string_view name) const {
    return label_field && *label_field == name;
  }
  [[nodiscard]] std::size_t n_static() const;
  /// Dynamic fields, label included.
  [[nodiscard]] std::size_t n_dynamic() const;

  [[nodiscard]] nlohmann::json to_json() const;
  static Schema from_json(const nlohmann::json& j);

  bool operator==(const Schema&) const = default;
};

/// Assigns kind and dtype to every non-reserved column. A column is numerical
/// iff all of its non-empty cells parse as finite reals.
Schema infer_schema(const CsvTable& rows, const std::vector<std::string>& static_field_names,
                    const std::optional<std::string>& label_field, int n_bins = kDefaultBins);

/// Strict real parse: the whole cell must be consumed.
std::optional<double> parse_real(std::string_view cell);

}  // namespace fata
