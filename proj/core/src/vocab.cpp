#include "fata/vocab.hpp"

#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "fata/error.hpp"

namespace fata {

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xF]);
  }
  return out;
}

int Vocabulary::field_index(std::string_view name) const {
  for (std::size_t f = 0; f < fields_.size(); ++f) {
    if (fields_[f].name == name) return static_cast<int>(f);
  }
  return -1;
}

std::size_t Vocabulary::require_field(std::string_view name) const {
  const int f = field_index(name);
  if (f < 0) throw ConfigError("field '" + std::string(name) + "' is not in the vocabulary");
  return static_cast<std::size_t>(f);
}

TokenId Vocabulary::encode_token(std::size_t f, std::string_view token) const {
  const auto& field = fields_.at(f);
  const auto it = field.index.find(std::string(token));
  return it == field.index.end() ? kUnkId : field.offset + it->second;
}

TokenId Vocabulary::encode_number(std::size_t f, double x) const {
  const auto& field = fields_.at(f);
  if (!field.quantizer) throw ConfigError("field '" + field.name + "' is not numerical");
  return encode_token(f, std::to_string(field.quantizer->bin(x)));
}

TokenId Vocabulary::encode_value(std::size_t f, std::string_view raw) const {
  const auto& field = fields_.at(f);
  if (raw.empty()) return kUnkId;
  if (field.dtype == FieldType::Numerical) {
    const auto x = parse_real(raw);
    return x ? encode_number(f, *x) : kUnkId;
  }
  return encode_token(f, raw);
}

int Vocabulary::field_of(TokenId id) const {
  if (id < kNumSpecials || id >= size_) return -1;
  // Fields are laid out in increasing offset order.
  for (std::size_t f = fields_.size(); f-- > 0;) {
    if (id >= fields_[f].offset) return static_cast<int>(f);
  }
  return -1;
}

Vocabulary::Decoded Vocabulary::decode(TokenId id) const {
  if (id < 0 || id >= size_) throw ConfigError("token id " + std::to_string(id) + " out of range");
  if (id < kNumSpecials) return {-1, std::string(special_name(id))};
  const int f = field_of(id);
  return {f, fields_[static_cast<std::size_t>(f)].tokens[static_cast<std::size_t>(id - fields_[f].offset)]};
}

int Vocabulary::head_class(std::size_t f, TokenId id) const {
  if (id >= 0 && id < kNumSpecials) return id;
  const auto& field = fields_.at(f);
  const TokenId local = id - field.offset;
  if (local < 0 || local >= static_cast<TokenId>(field.tokens.size())) {
    throw ConfigError("token id " + std::to_string(id) + " does not belong to field '" + field.name + "'");
  }
  return kNumSpecials + local;
}

nlohmann::json Vocabulary::content_json() const {
  nlohmann::json j;
  j["specials"] = {"[PAD]", "[MASK]", "[UNK]"};
  j["fields"] = nlohmann::json::array();
  for (const auto& f : fields_) {
    nlohmann::json jf{{"name", f.name},
                      {"kind", to_string(f.kind)},
                      {"dtype", to_string(f.dtype)},
                      {"is_label", f.is_label},
                      {"is_time_gap", f.is_time_gap},
                      {"offset", f.offset},
                      {"tokens", f.tokens}};
    jf["quantizer"] = f.quantizer ? f.quantizer->to_json() : nlohmann::json(nullptr);
    j["fields"].push_back(std::move(jf));
  }
  j["size"] = size_;
  return j;
}

void Vocabulary::finalize() {
  TokenId next = kNumSpecials;
  for (auto& f : fields_) {
    f.offset = next;
    f.index.clear();
    for (std::size_t i = 0; i < f.tokens.size(); ++i) f.index.emplace(f.tokens[i], static_cast<TokenId>(i));
    next += static_cast<TokenId>(f.tokens.size());
  }
  size_ = next;
  digest_ = sha256_hex(content_json().dump());
}

nlohmann::json Vocabulary::to_json() const {
  auto j = content_json();
  j["digest"] = digest_;
  return j;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  Vocabulary v;
  try {
    for (const auto& jf : j.at("fields")) {
      Field f;
      f.name = jf.at("name").get<std::string>();
      f.kind = jf.at("kind").get<std::string>() == "static" ? FieldKind::Static : FieldKind::Dynamic;
      f.dtype = jf.at("dtype").get<std::string>() == "numerical" ? FieldType::Numerical : FieldType::Categorical;
      f.is_label = jf.at("is_label").get<bool>();
      f.is_time_gap = jf.at("is_time_gap").get<bool>();
      f.tokens = jf.at("tokens").get<std::vector<std::string>>();
      if (!jf.at("quantizer").is_null()) f.quantizer = Quantizer::from_json(jf["quantizer"]);
      v.fields_.push_back(std::move(f));
    }
  } catch (const nlohmann::json::exception& e) {
    throw StateError(std::string("malformed vocabulary JSON: ") + e.what());
  }
  v.finalize();
  if (j.contains("digest") && j["digest"].get<std::string>() != v.digest_) {
    throw StateError("vocabulary digest does not match its content");
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << to_json().dump(1) << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw StateError("cannot open vocabulary " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw StateError("vocabulary " + path.string() + " is not valid JSON: " + e.what());
  }
}

std::size_t VocabularyBuilder::add_field(std::string name, FieldKind kind, FieldType dtype,
                                         std::optional<Quantizer> quantizer, bool is_label,
                                         bool is_time_gap) {
  if (dtype == FieldType::Numerical && !quantizer) {
    throw ConfigError("numerical field '" + name + "' needs a fitted quantizer");
  }
  Vocabulary::Field f;
  f.name = std::move(name);
  f.kind = kind;
  f.dtype = dtype;
  f.quantizer = std::move(quantizer);
  f.is_label = is_label;
  f.is_time_gap = is_time_gap;
  vocab_.fields_.push_back(std::move(f));
  return vocab_.fields_.size() - 1;
}

void VocabularyBuilder::observe_token(std::size_t f, std::string token) {
  auto& field = vocab_.fields_.at(f);
  if (field.index.contains(token)) return;
  field.index.emplace(token, static_cast<TokenId>(field.tokens.size()));
  field.tokens.push_back(std::move(token));
}

void VocabularyBuilder::observe(std::size_t f, std::string_view raw) {
  if (raw.empty()) return;
  const auto& field = vocab_.fields_.at(f);
  if (field.dtype == FieldType::Numerical) {
    if (const auto x = parse_real(raw)) observe_number(f, *x);
    return;
  }
  observe_token(f, std::string(raw));
}

void VocabularyBuilder::observe_number(std::size_t f, double x) {
  observe_token(f, std::to_string(vocab_.fields_.at(f).quantizer->bin(x)));
}

Vocabulary VocabularyBuilder::build() && {
  vocab_.finalize();
  return std::move(vocab_);
}

Vocabulary build_vocab(const Schema& schema, const QuantizerMap& quantizers, const CsvTable& rows,
                       bool include_label, const Quantizer* gap_quantizer, std::span<const double> gaps) {
  VocabularyBuilder builder;
  std::vector<std::pair<std::size_t, std::size_t>> columns;  // (vocab field, csv column)
  for (const auto& fs : schema.fields) {
    const bool is_label = schema.is_label(fs.name);
    if (is_label && !include_label) continue;
    std::optional<Quantizer> q;
    if (fs.dtype == FieldType::Numerical) {
      const auto it = quantizers.find(fs.name);
      if (it == quantizers.end()) throw ConfigError("no quantizer fitted for '" + fs.name + "'");
      q = it->second;
    }
    const auto f = builder.add_field(fs.name, fs.kind, fs.dtype, std::move(q), is_label);
    columns.emplace_back(f, rows.require_column(fs.name));
  }
  for (const auto& row : rows.rows) {
    for (const auto& [f, c] : columns) builder.observe(f, row[c]);
  }
  if (gap_quantizer) {
    const auto f = builder.add_field(std::string(kTimeGapField), FieldKind::Dynamic, FieldType::Numerical,
                                     *gap_quantizer, false, true);
    for (double g : gaps) builder.observe_number(f, g);
  }
  return std::move(builder).build();
}

}  // namespace fata
