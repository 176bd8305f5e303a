#include "fata/quantizer.hpp"

#include <algorithm>
#include <cmath>

#include "fata/error.hpp"

namespace fata {

Quantizer::Quantizer(std::string field, std::vector<double> thresholds, int requested_bins)
    : field_(std::move(field)), thresholds_(std::move(thresholds)), requested_bins_(requested_bins) {}

Quantizer Quantizer::fit(std::string field, std::span<const double> values, int n_bins) {
  if (n_bins < 2) throw ConfigError("quantizer for '" + field + "' needs n_bins >= 2");
  if (values.empty()) throw ConfigError("quantizer for '" + field + "' has no values");
  std::vector<double> sorted(values.begin(), values.end());
  for (double v : sorted) {
    if (!std::isfinite(v)) throw ConfigError("non-finite value in field '" + field + "'");
  }
  std::sort(sorted.begin(), sorted.end());
  const auto n = sorted.size();
  std::vector<double> cuts;
  for (int k = 1; k < n_bins; ++k) {
    // 1-based nearest rank ceil(k * n / n_bins).
    const auto num = static_cast<std::size_t>(k) * n;
    const auto rank = (num + static_cast<std::size_t>(n_bins) - 1) / static_cast<std::size_t>(n_bins);
    const double cut = sorted[std::max<std::size_t>(rank, 1) - 1];
    if (cut >= sorted.back()) continue;
    if (cuts.empty() || cut > cuts.back()) cuts.push_back(cut);
  }
  return Quantizer(std::move(field), std::move(cuts), n_bins);
}

int Quantizer::bin(double x) const {
  if (!std::isfinite(x)) throw ConfigError("cannot quantize non-finite value for '" + field_ + "'");
  return static_cast<int>(std::lower_bound(thresholds_.begin(), thresholds_.end(), x) - thresholds_.begin());
}

nlohmann::json Quantizer::to_json() const {
  return {{"field", field_}, {"thresholds", thresholds_}, {"n_bins", requested_bins_}};
}

Quantizer Quantizer::from_json(const nlohmann::json& j) {
  auto thresholds = j.at("thresholds").get<std::vector<double>>();
  if (!std::is_sorted(thresholds.begin(), thresholds.end()) ||
      std::adjacent_find(thresholds.begin(), thresholds.end()) != thresholds.end()) {
    throw ConfigError("quantizer thresholds must be strictly ascending");
  }
  return Quantizer(j.at("field").get<std::string>(), std::move(thresholds), j.at("n_bins").get<int>());
}

}  // namespace fata
