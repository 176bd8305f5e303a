#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fata/csv.hpp"

namespace fata {

enum class AnomalyRule { ValueOnly, TimeOnly, Mixed };

std::string_view to_string(AnomalyRule rule);
AnomalyRule anomaly_rule_from_string(std::string_view text);

/// Synthetic transaction sequences: static (profile, region), dynamic
/// (amount, mcc, channel), exponential gaps, one planted anomaly kind at the
/// final record.
struct GenSpec {
  std::size_t sequences = 1000;
  std::size_t records = 10;
  std::size_t profiles = 4;
  std::size_t regions = 3;
  std::size_t merchant_categories = 8;
  std::size_t channels = 3;
  double base_amount = 50.0;   // mu_c = base_amount + c * amount_step
  double amount_step = 40.0;
  double amount_sigma = 8.0;
  double gap_mean = 60.0;
  double anomaly_rate = 0.1;
  AnomalyRule rule = AnomalyRule::Mixed;
  double burst_factor = 100.0;
  std::size_t burst_length = 3;
  /// Sequences are assigned to splits in order: the first train_fraction to
  /// "train", the next val_fraction to "val", the rest to "test". With both
  /// zero no split column is written.
  double train_fraction = 0.0;
  double val_fraction = 0.0;
  std::uint64_t seed = 0;

  /// Throws ConfigError on a degenerate spec.
  void validate() const;
  [[nodiscard]] double profile_mean(std::size_t c) const { return base_amount + amount_step * static_cast<double>(c); }
  [[nodiscard]] nlohmann::json to_json() const;
  /// Rejects unknown keys.
  static GenSpec from_json(const nlohmann::json& j);
};

enum class PlantedKind { None, Value, Time };

struct GeneratedSequence {
  std::string id;
  std::string split;
  std::size_t profile = 0;
  std::size_t region = 0;
  std::vector<double> times;
  std::vector<double> amounts;
  std::vector<std::size_t> mcc;
  std::vector<std::size_t> channel;
  PlantedKind planted = PlantedKind::None;

  [[nodiscard]] int label() const { return planted == PlantedKind::None ? 0 : 1; }
};

std::vector<GeneratedSequence> generate(const GenSpec& spec);

/// Record table with columns seq_id,time,[split,]profile,region,amount,mcc,
/// channel,is_anomaly (1 only on a planted final record).
CsvTable records_table(const std::vector<GeneratedSequence>& data, const GenSpec& spec);
/// seq_id,split,label,kind per sequence.
CsvTable labels_table(const std::vector<GeneratedSequence>& data);

/// Writes records.csv, labels.csv and spec.json under `dir`.
void write_dataset(const std::filesystem::path& dir, const GenSpec& spec,
                   const std::vector<GeneratedSequence>& data);

/// Log likelihood ratio anomalous : normal of a sequence's final records under
/// the generating process. Throws ConfigError when the sequence cannot come
/// from `spec` (length or profile mismatch).
double oracle_score(const GenSpec& spec, const GeneratedSequence& sequence);

/// Static/dynamic field names of the generated table.
inline constexpr std::string_view kSynthLabelField = "is_anomaly";
std::vector<std::string> synth_static_fields();

}  // namespace fata
