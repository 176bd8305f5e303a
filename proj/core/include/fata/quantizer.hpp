#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace fata {

/// Quantile binning for one numerical field. A value lands in the bin equal to
/// the number of thresholds strictly below it, so a value equal to a cut point
/// stays in the lower bin.
class Quantizer {
 public:
  Quantizer() = default;
  Quantizer(std::string field, std::vector<double> thresholds, int requested_bins);

  /// Nearest-rank quantiles at k / n_bins, k = 1..n_bins-1. Duplicate cut points
  /// collapse, and cut points at or above the sample maximum are dropped since
  /// they separate no observed value.
  static Quantizer fit(std::string field, std::span<const double> values, int n_bins);

  [[nodiscard]] int bin(double x) const;
  [[nodiscard]] int effective_bins() const { return static_cast<int>(thresholds_.size()) + 1; }
  [[nodiscard]] int requested_bins() const { return requested_bins_; }
  [[nodiscard]] const std::vector<double>& thresholds() const { return thresholds_; }
  [[nodiscard]] const std::string& field() const { return field_; }

  [[nodiscard]] nlohmann::json to_json() const;
  static Quantizer from_json(const nlohmann::json& j);

  bool operator==(const Quantizer&) const = default;

 private:
  std::string field_;
  std::vector<double> thresholds_;
  int requested_bins_ = 0;
};

}  // namespace fata
