#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fata/nn/params.hpp"
#include "fata/rng.hpp"

namespace fata::nn {

struct GradCheckEntry {
  std::size_t param = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckResult {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
};

/// |a - n| / max(|a|, |n|, floor), or 0 when the denominator is zero. A
/// positive floor turns the comparison absolute for gradients so small that
/// finite differences only see round-off.
inline double relative_error(double a, double n, double floor = 0.0) {
  const double den = std::max({std::abs(a), std::abs(n), floor});
  return den == 0.0 ? 0.0 : std::abs(a - n) / den;
}

/// Compares `analytic` against central differences of `loss` at `coords`
/// (param index, flat index). `loss` must be a pure function of params.
inline GradCheckResult check_gradients(ParamSet<double>& params, const GradSet<double>& analytic,
                                       const std::function<double(const ParamSet<double>&)>& loss,
                                       const std::vector<std::pair<std::size_t, std::size_t>>& coords,
                                       double h = 1e-4, double floor = 0.0) {
  if (!(h > 0.0)) throw std::invalid_argument("finite-difference step must be positive");
  GradCheckResult out;
  for (auto [p, k] : coords) {
    auto& x = params.value(p)[k];
    const double saved = x;
    x = saved + h;
    const double up = loss(params);
    x = saved - h;
    const double down = loss(params);
    x = saved;
    GradCheckEntry e{p, k, analytic[p][k], (up - down) / (2.0 * h), 0.0};
    e.rel_error = relative_error(e.analytic, e.numeric, floor);
    out.max_rel_error = std::max(out.max_rel_error, e.rel_error);
    out.entries.push_back(e);
  }
  return out;
}

/// Picks at least `count` coordinates: every tensor contributes at least one
/// (all of it when small), the rest drawn uniformly.
inline std::vector<std::pair<std::size_t, std::size_t>> sample_coordinates(const ParamSet<double>& params,
                                                                           std::size_t count, std::uint64_t seed,
                                                                           std::size_t per_tensor = 2) {
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  Rng rng(seed);
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto n = params.value(p).size();
    if (n <= per_tensor) {
      for (std::size_t k = 0; k < n; ++k) coords.emplace_back(p, k);
    } else {
      for (std::size_t r = 0; r < per_tensor; ++r) coords.emplace_back(p, uniform_index(rng, n));
    }
  }
  const auto total = params.total_size();
  while (coords.size() < count && total > 0) {
    auto flat = uniform_index(rng, total);
    std::size_t p = 0;
    while (flat >= params.value(p).size()) flat -= params.value(p++).size();
    coords.emplace_back(p, flat);
  }
  return coords;
}

}  // namespace fata::nn
