#include "fata/synthgen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>

#include "fata/error.hpp"
#include "fata/rng.hpp"

namespace fata {

std::string_view to_string(AnomalyRule rule) {
  switch (rule) {
    case AnomalyRule::ValueOnly:
      return "value_only";
    case AnomalyRule::TimeOnly:
      return "time_only";
    case AnomalyRule::Mixed:
      return "mixed";
  }
  return "mixed";
}

AnomalyRule anomaly_rule_from_string(std::string_view text) {
  for (auto r : {AnomalyRule::ValueOnly, AnomalyRule::TimeOnly, AnomalyRule::Mixed}) {
    if (to_string(r) == text) return r;
  }
  throw ConfigError("unknown anomaly rule '" + std::string(text) + "'");
}

std::vector<std::string> synth_static_fields() { return {"profile", "region"}; }

void GenSpec::validate() const {
  if (sequences == 0) throw ConfigError("sequences must be positive");
  if (records < burst_length + 1) throw ConfigError("records must exceed burst_length");
  if (burst_length == 0) throw ConfigError("burst_length must be positive");
  if (profiles < 2) throw ConfigError("at least two profiles are needed");
  if (regions == 0 || merchant_categories == 0 || channels == 0) throw ConfigError("category counts must be positive");
  if (!(amount_sigma > 0.0)) throw ConfigError("amount_sigma must be positive");
  if (!(gap_mean > 0.0)) throw ConfigError("gap_mean must be positive");
  if (!(burst_factor > 1.0)) throw ConfigError("burst_factor must exceed 1");
  if (!(anomaly_rate > 0.0 && anomaly_rate <= 0.5)) throw ConfigError("anomaly_rate must be in (0, 0.5]");
  if (train_fraction < 0.0 || val_fraction < 0.0 || train_fraction + val_fraction > 1.0) {
    throw ConfigError("split fractions must be non-negative and sum to at most 1");
  }
  for (double v : {base_amount, amount_step}) {
    if (!std::isfinite(v)) throw ConfigError("amounts must be finite");
  }
}

nlohmann::json GenSpec::to_json() const {
  return {{"sequences", sequences},
          {"records", records},
          {"profiles", profiles},
          {"regions", regions},
          {"merchant_categories", merchant_categories},
          {"channels", channels},
          {"base_amount", base_amount},
          {"amount_step", amount_step},
          {"amount_sigma", amount_sigma},
          {"gap_mean", gap_mean},
          {"anomaly_rate", anomaly_rate},
          {"rule", to_string(rule)},
          {"burst_factor", burst_factor},
          {"burst_length", burst_length},
          {"train_fraction", train_fraction},
          {"val_fraction", val_fraction},
          {"seed", seed}};
}

GenSpec GenSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("generator spec must be a JSON object");
  GenSpec s;
  const auto known = s.to_json();
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown generator spec key '" + key + "'");
  }
  try {
    s.sequences = j.value("sequences", s.sequences);
    s.records = j.value("records", s.records);
    s.profiles = j.value("profiles", s.profiles);
    s.regions = j.value("regions", s.regions);
    s.merchant_categories = j.value("merchant_categories", s.merchant_categories);
    s.channels = j.value("channels", s.channels);
    s.base_amount = j.value("base_amount", s.base_amount);
    s.amount_step = j.value("amount_step", s.amount_step);
    s.amount_sigma = j.value("amount_sigma", s.amount_sigma);
    s.gap_mean = j.value("gap_mean", s.gap_mean);
    s.anomaly_rate = j.value("anomaly_rate", s.anomaly_rate);
    s.rule = anomaly_rule_from_string(j.value("rule", std::string(to_string(s.rule))));
    s.burst_factor = j.value("burst_factor", s.burst_factor);
    s.burst_length = j.value("burst_length", s.burst_length);
    s.train_fraction = j.value("train_fraction", s.train_fraction);
    s.val_fraction = j.value("val_fraction", s.val_fraction);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad generator spec: ") + e.what());
  }
  s.validate();
  return s;
}

namespace {

// Profile c favours merchant categories c and c + 1 (mod M).
std::size_t draw_mcc(Rng& rng, std::size_t profile, std::size_t m) {
  if (uniform01(rng) < 0.7) return (profile + uniform_index(rng, 2)) % m;
  return uniform_index(rng, m);
}

std::string format_number(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, end);
}

double log_normal_pdf(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return -0.5 * z * z - std::log(sigma) - 0.5 * std::log(2.0 * 3.141592653589793);
}

double log_sum_exp(double a, double b) {
  const double m = std::max(a, b);
  if (m == -std::numeric_limits<double>::infinity()) return m;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace

std::vector<GeneratedSequence> generate(const GenSpec& spec) {
  spec.validate();
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(spec.sequences)));
  const auto n_val = static_cast<std::size_t>(std::llround(spec.val_fraction * static_cast<double>(spec.sequences)));
  const bool split = spec.train_fraction > 0.0 || spec.val_fraction > 0.0;

  std::vector<GeneratedSequence> out(spec.sequences);
  for (std::size_t s = 0; s < spec.sequences; ++s) {
    Rng rng(derive_seed(spec.seed, s));
    auto& q = out[s];
    q.id = "s" + std::to_string(s);
    if (split) q.split = s < n_train ? "train" : s < n_train + n_val ? "val" : "test";
    q.profile = uniform_index(rng, spec.profiles);
    q.region = uniform_index(rng, spec.regions);

    const bool anomalous = uniform01(rng) < spec.anomaly_rate;
    // Drawn unconditionally so normal and anomalous sequences consume the
    // stream identically.
    const bool coin = uniform01(rng) < 0.5;
    if (anomalous) {
      switch (spec.rule) {
        case AnomalyRule::ValueOnly:
          q.planted = PlantedKind::Value;
          break;
        case AnomalyRule::TimeOnly:
          q.planted = PlantedKind::Time;
          break;
        case AnomalyRule::Mixed:
          q.planted = coin ? PlantedKind::Time : PlantedKind::Value;
          break;
      }
    }

    const double mu = spec.profile_mean(q.profile);
    double t = spec.gap_mean * 10.0 * uniform01(rng);
    for (std::size_t i = 0; i < spec.records; ++i) {
      if (i > 0) {
        double gap = exponential(rng, spec.gap_mean);
        if (q.planted == PlantedKind::Time && i + spec.burst_length >= spec.records) gap /= spec.burst_factor;
        t += gap;
      }
      q.times.push_back(t);
      double amount = mu + spec.amount_sigma * standard_normal(rng);
      const bool last = i + 1 == spec.records;
      if (last && q.planted == PlantedKind::Value) {
        auto other = uniform_index(rng, spec.profiles - 1);
        if (other >= q.profile) ++other;
        amount = spec.profile_mean(other) + spec.amount_sigma * standard_normal(rng);
      }
      q.amounts.push_back(amount);
      q.mcc.push_back(draw_mcc(rng, q.profile, spec.merchant_categories));
      q.channel.push_back(uniform_index(rng, spec.channels));
    }
  }
  return out;
}

CsvTable records_table(const std::vector<GeneratedSequence>& data, const GenSpec& spec) {
  const bool split = spec.train_fraction > 0.0 || spec.val_fraction > 0.0;
  CsvTable t;
  t.header = {"seq_id", "time"};
  if (split) t.header.push_back("split");
  for (const char* h : {"profile", "region", "amount", "mcc", "channel", "is_anomaly"}) t.header.push_back(h);
  for (const auto& q : data) {
    for (std::size_t i = 0; i < q.times.size(); ++i) {
      std::vector<std::string> row{q.id, format_number(q.times[i])};
      if (split) row.push_back(q.split);
      row.push_back("p" + std::to_string(q.profile));
      row.push_back("r" + std::to_string(q.region));
      row.push_back(format_number(q.amounts[i]));
      row.push_back("m" + std::to_string(q.mcc[i]));
      row.push_back("ch" + std::to_string(q.channel[i]));
      row.push_back(i + 1 == q.times.size() && q.label() ? "1" : "0");
      t.rows.push_back(std::move(row));
    }
  }
  return t;
}

CsvTable labels_table(const std::vector<GeneratedSequence>& data) {
  CsvTable t;
  t.header = {"seq_id", "split", "label", "kind"};
  for (const auto& q : data) {
    const char* kind = q.planted == PlantedKind::Time ? "time" : q.planted == PlantedKind::Value ? "value" : "none";
    t.rows.push_back({q.id, q.split, std::to_string(q.label()), kind});
  }
  return t;
}

void write_dataset(const std::filesystem::path& dir, const GenSpec& spec,
                   const std::vector<GeneratedSequence>& data) {
  std::filesystem::create_directories(dir);
  write_csv(dir / "records.csv", records_table(data, spec));
  write_csv(dir / "labels.csv", labels_table(data));
  std::ofstream os(dir / "spec.json");
  if (!os) throw ConfigError("cannot write " + (dir / "spec.json").string());
  os << spec.to_json().dump(2) << '\n';
}

double oracle_score(const GenSpec& spec, const GeneratedSequence& q) {
  if (q.times.size() != spec.records || q.amounts.size() != spec.records) {
    throw ConfigError("sequence length does not match the generation spec");
  }
  if (q.profile >= spec.profiles) throw ConfigError("sequence profile outside the generation spec");
  const auto n = spec.records;

  // Burst: each of the last gaps ~ Exp(gap_mean / factor) instead of Exp(gap_mean).
  double gap_sum = 0.0;
  for (std::size_t i = n - spec.burst_length; i < n; ++i) gap_sum += q.times[i] - q.times[i - 1];
  const double f = spec.burst_factor;
  const double log_lr_time =
      static_cast<double>(spec.burst_length) * std::log(f) - (f - 1.0) * gap_sum / spec.gap_mean;

  // Value: final amount from a uniformly chosen other profile.
  const double a = q.amounts[n - 1];
  double log_mix = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < spec.profiles; ++c) {
    if (c == q.profile) continue;
    log_mix = log_sum_exp(log_mix, log_normal_pdf(a, spec.profile_mean(c), spec.amount_sigma));
  }
  log_mix -= std::log(static_cast<double>(spec.profiles - 1));
  const double log_lr_value = log_mix - log_normal_pdf(a, spec.profile_mean(q.profile), spec.amount_sigma);

  switch (spec.rule) {
    case AnomalyRule::TimeOnly:
      return log_lr_time;
    case AnomalyRule::ValueOnly:
      return log_lr_value;
    case AnomalyRule::Mixed:
      return log_sum_exp(log_lr_time, log_lr_value) - std::log(2.0);
  }
  return 0.0;
}

}  // namespace fata
