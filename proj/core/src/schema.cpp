#include "fata/schema.hpp"

#include <charconv>
#include <cmath>
#include <set>

#include "fata/error.hpp"

namespace fata {

std::string_view to_string(FieldKind kind) {
  return kind == FieldKind::Static ? "static" : "dynamic";
}

std::string_view to_string(FieldType dtype) {
  return dtype == FieldType::Categorical ? "categorical" : "numerical";
}

std::optional<double> parse_real(std::string_view cell) {
  while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
  while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t')) cell.remove_suffix(1);
  if (cell.empty()) return std::nullopt;
  if (cell.front() == '+') cell.remove_prefix(1);
  double value = 0.0;
  const auto* end = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(cell.data(), end, value);
  if (ec != std::errc{} || ptr != end || !std::isfinite(value)) return std::nullopt;
  return value;
}

void Schema::validate() const {
  std::set<std::string, std::less<>> names;
  std::size_t dynamic_features = 0;
  for (const auto& f : fields) {
    if (f.name.empty()) throw ConfigError("schema field with empty name");
    if (!names.insert(f.name).second) throw ConfigError("duplicate schema field '" + f.name + "'");
    if (f.dtype == FieldType::Numerical && f.n_bins < 2) {
      throw ConfigError("numerical field '" + f.name + "' needs n_bins >= 2");
    }
    if (f.kind == FieldKind::Dynamic && !is_label(f.name)) ++dynamic_features;
  }
  if (dynamic_features == 0) throw ConfigError("schema needs at least one dynamic field");
  if (label_field && !find(*label_field)) {
    throw ConfigError("label field '" + *label_field + "' is not a schema field");
  }
  if (label_field && find(*label_field)->kind == FieldKind::Static) {
    throw ConfigError("label field '" + *label_field + "' must be dynamic");
  }
}

const FieldSchema* Schema::find(std::string_view name) const {
  for (const auto& f : fields) {
    if (f.name == name) return &f;
  }
  return nullptr;
}

std::size_t Schema::n_static() const {
  std::size_t n = 0;
  for (const auto& f : fields) n += f.kind == FieldKind::Static;
  return n;
}

std::size_t Schema::n_dynamic() const { return fields.size() - n_static(); }

nlohmann::json Schema::to_json() const {
  nlohmann::json j;
  j["fields"] = nlohmann::json::array();
  for (const auto& f : fields) {
    nlohmann::json jf{{"name", f.name}, {"kind", to_string(f.kind)}, {"dtype", to_string(f.dtype)}};
    if (f.dtype == FieldType::Numerical) jf["n_bins"] = f.n_bins;
    j["fields"].push_back(std::move(jf));
  }
  j["label"] = label_field ? nlohmann::json(*label_field) : nlohmann::json(nullptr);
  return j;
}

Schema Schema::from_json(const nlohmann::json& j) {
  Schema s;
  try {
    for (const auto& jf : j.at("fields")) {
      FieldSchema f;
      f.name = jf.at("name").get<std::string>();
      const auto kind = jf.at("kind").get<std::string>();
      const auto dtype = jf.at("dtype").get<std::string>();
      if (kind == "static") {
        f.kind = FieldKind::Static;
      } else if (kind == "dynamic") {
        f.kind = FieldKind::Dynamic;
      } else {
        throw ConfigError("field '" + f.name + "': unknown kind '" + kind + "'");
      }
      if (dtype == "categorical") {
        f.dtype = FieldType::Categorical;
      } else if (dtype == "numerical") {
        f.dtype = FieldType::Numerical;
        f.n_bins = jf.value("n_bins", kDefaultBins);
      } else {
        throw ConfigError("field '" + f.name + "': unknown dtype '" + dtype + "'");
      }
      s.fields.push_back(std::move(f));
    }
    if (j.contains("label") && !j["label"].is_null()) s.label_field = j["label"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed schema JSON: ") + e.what());
  }
  s.validate();
  return s;
}

Schema infer_schema(const CsvTable& rows, const std::vector<std::string>& static_field_names,
                    const std::optional<std::string>& label_field, int n_bins) {
  if (rows.rows.empty()) throw ConfigError("cannot infer a schema from zero rows");
  for (const auto& name : static_field_names) {
    if (rows.column(name) < 0) throw ConfigError("unknown static field '" + name + "'");
  }
  if (label_field && rows.column(*label_field) < 0) {
    throw ConfigError("unknown label field '" + *label_field + "'");
  }
  Schema schema;
  schema.label_field = label_field;
  for (std::size_t c = 0; c < rows.header.size(); ++c) {
    const auto& name = rows.header[c];
    if (name == kSeqIdColumn || name == kTimeColumn || name == kSplitColumn) continue;
    std::size_t present = 0;
    bool numeric = true;
    for (const auto& row : rows.rows) {
      if (row[c].empty()) continue;
      ++present;
      if (numeric && !parse_real(row[c])) numeric = false;
    }
    if (present == 0) throw ConfigError("column '" + name + "' has no non-missing values");
    FieldSchema f;
    f.name = name;
    f.kind = FieldKind::Dynamic;
    for (const auto& s : static_field_names) {
      if (s == name) f.kind = FieldKind::Static;
    }
    f.dtype = numeric ? FieldType::Numerical : FieldType::Categorical;
    f.n_bins = numeric ? n_bins : 0;
    schema.fields.push_back(std::move(f));
  }
  schema.validate();
  return schema;
}

}  // namespace fata
