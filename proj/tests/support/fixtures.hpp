#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fata/csv.hpp"
#include "fata/model.hpp"
#include "fata/nn/gradcheck.hpp"
#include "fata/pipeline.hpp"
#include "fata/rng.hpp"

namespace fata::testing {

/// Random categorical sequences: static columns s0.., dynamic columns d0..,
/// each drawing from `values` symbols; optional 0/1 "label" column.
inline CsvTable tiny_table(std::size_t sequences, std::size_t records, std::size_t n_static, std::size_t n_dynamic,
                           std::size_t values, std::uint64_t seed, bool with_label = false) {
  CsvTable t;
  t.header = {"seq_id", "time"};
  for (std::size_t j = 0; j < n_static; ++j) t.header.push_back("s" + std::to_string(j));
  for (std::size_t j = 0; j < n_dynamic; ++j) t.header.push_back("d" + std::to_string(j));
  if (with_label) t.header.push_back("label");
  Rng rng(seed);
  for (std::size_t s = 0; s < sequences; ++s) {
    std::vector<std::string> stat;
    for (std::size_t j = 0; j < n_static; ++j) stat.push_back("a" + std::to_string(uniform_index(rng, values)));
    double time = 0.0;
    for (std::size_t r = 0; r < records; ++r) {
      if (r > 0) time += exponential(rng, 5.0);
      std::vector<std::string> row{"q" + std::to_string(s), std::to_string(time)};
      row.insert(row.end(), stat.begin(), stat.end());
      for (std::size_t j = 0; j < n_dynamic; ++j) row.push_back("b" + std::to_string(uniform_index(rng, values)));
      if (with_label) row.push_back(uniform01(rng) < 0.3 ? "1" : "0");
      t.rows.push_back(std::move(row));
    }
  }
  return t;
}

inline std::vector<std::string> static_names(std::size_t n_static) {
  std::vector<std::string> out;
  for (std::size_t j = 0; j < n_static; ++j) out.push_back("s" + std::to_string(j));
  return out;
}

/// Everything in the train split, stride 1.
inline PreparedData tiny_prepared(std::size_t sequences, std::size_t records, std::size_t n_static,
                                  std::size_t n_dynamic, std::size_t values, std::size_t length, std::uint64_t seed,
                                  bool with_label = false, LabelPolicy policy = LabelPolicy::Exclude) {
  const auto table = tiny_table(sequences, records, n_static, n_dynamic, values, seed, with_label);
  std::optional<std::string> label;
  if (with_label) label = "label";
  const auto schema = infer_schema(table, static_names(n_static), label);
  PrepareOptions o;
  o.length = length;
  o.train_stride = 1;
  o.val_fraction = 0.0;
  o.test_fraction = 0.0;
  o.gap_bins = 4;
  o.label_policy = policy;
  return prepare_dataset(table, schema, o);
}

inline ModelConfig small_config(ModelMode mode, std::size_t length, std::size_t dim = 16) {
  ModelConfig c;
  c.mode = mode;
  c.length = length;
  c.dim = dim;
  c.field_dim = dim;
  c.field_layers = 1;
  c.field_heads = 2;
  c.field_ff_dim = 2 * dim;
  c.layers = 2;
  c.heads = 2;
  c.ff_dim = 2 * dim;
  c.dropout = 0.0;
  return c;
}

template <typename T>
std::vector<TokenizedWindow> views(const FataModel<T>& model, const PreparedData& data,
                                   const std::string& split = "train") {
  std::vector<TokenizedWindow> out;
  const auto layout = data.layout();
  for (const auto& w : data.split(split)) out.push_back(model.view(w, layout));
  return out;
}

/// Masks every window with the standard protocol, seeds derived from `seed`.
inline std::vector<TokenizedWindow> masked(std::span<const TokenizedWindow> windows, const Vocabulary& vocab,
                                           std::uint64_t seed, double rate = 0.15) {
  std::vector<TokenizedWindow> out;
  MaskOptions o;
  o.rate = rate;
  for (std::size_t i = 0; i < windows.size(); ++i) out.push_back(random_mask(windows[i], vocab, o, derive_seed(seed, i)));
  return out;
}

/// Pretraining loss of a double model; fills `grads` when given.
inline double mlm_objective(const FataModel<double>& model, const nn::ParamSet<double>& params,
                            std::span<const TokenizedWindow> batch, nn::GradSet<double>* grads) {
  nn::Tape<double> tape(grads != nullptr);
  nn::Bound<double> b(tape, params, grads);
  auto se = model.encode(b, batch, {});
  auto loss = model.mlm_loss(b, model.mlm_logits(b, se, batch.size()), batch);
  if (grads) tape.backward(loss);
  return tape.value(loss)[0];
}

/// Multiplies every normally initialized tensor by `factor`. At the default
/// init scale attention is almost uniform and many gradients sit at the
/// round-off level of a finite difference, which makes a check meaningless.
template <typename T>
void spread_weights(nn::ParamSet<T>& params, double factor) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params.init_kind(i) != nn::Init::Normal) continue;
    for (auto& v : params.value(i).values()) v = static_cast<T>(v * factor);
  }
}

/// Absolute floor for gradient comparisons: below this magnitude a central
/// difference with h = 1e-4 is dominated by round-off.
inline constexpr double kGradFloor = 1e-6;

/// Central-difference check of the full pretraining gradient over sampled
/// coordinates (every tensor represented).
inline nn::GradCheckResult mlm_gradcheck(FataModel<double>& model, std::span<const TokenizedWindow> batch,
                                         std::size_t count, std::uint64_t seed, double h = 1e-4,
                                         double floor = kGradFloor) {
  auto grads = model.params().zeros_like();
  mlm_objective(model, model.params(), batch, &grads);
  auto coords = nn::sample_coordinates(model.params(), count, seed);
  // Always include every time-position scalar (w_p, w_t, b).
  if (auto tp = model.params().find("embed.time_position")) {
    for (std::size_t k = 0; k < 3; ++k) coords.emplace_back(*tp, k);
  }
  return nn::check_gradients(
      model.params(), grads,
      [&](const nn::ParamSet<double>& ps) { return mlm_objective(model, ps, batch, nullptr); }, coords, h, floor);
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("fata_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fata::testing
