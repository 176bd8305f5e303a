#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fata/csv.hpp"
#include "fata/schema.hpp"
#include "fata/tokenize.hpp"
#include "fata/vocab.hpp"
#include "fata/windows.hpp"

namespace fata {

struct PrepareOptions {
  std::size_t length = 10;
  std::size_t train_stride = 5;
  std::size_t val_stride = 5;
  std::size_t test_stride = 1;
  bool pad = true;
  StaticPolicy static_policy = StaticPolicy::Strict;
  LabelPolicy label_policy = LabelPolicy::Exclude;
  int gap_bins = kDefaultBins;
  /// Used only when the table has no split column: sequences are shuffled
  /// with `seed` and cut into train / val / test by these fractions.
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  [[nodiscard]] nlohmann::json to_json() const;
  static PrepareOptions from_json(const nlohmann::json& j);
};

inline const std::vector<std::string> kSplitNames{"train", "val", "test"};

struct PreparedData {
  Schema schema;
  QuantizerMap quantizers;
  Vocabulary vocab;
  double time_scale = 1.0;
  std::map<std::string, std::vector<TokenizedWindow>> splits;

  [[nodiscard]] ColumnLayout layout() const { return ColumnLayout::from_vocab(vocab); }
  [[nodiscard]] const std::vector<TokenizedWindow>& split(const std::string& name) const;
};

/// Split assignment per sequence id: the `split` column when present, else a
/// seeded shuffle of sequences cut by the option fractions.
std::map<std::string, std::string> assign_splits(const CsvTable& table, const PrepareOptions& options);

/// Fits quantizers, the time scale and the vocabulary on the train split only,
/// then windows and tokenizes every split. The vocabulary always carries the
/// time-gap field.
PreparedData prepare_dataset(const CsvTable& table, const Schema& schema, const PrepareOptions& options);

/// schema.json, quantizers.json, vocab.json, meta.json and shards/<split>/.
void save_prepared(const std::filesystem::path& dir, const PreparedData& data, const PrepareOptions& options);
PreparedData load_prepared(const std::filesystem::path& dir);

}  // namespace fata
