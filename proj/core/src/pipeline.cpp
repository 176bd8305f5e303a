#include "fata/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fata/error.hpp"
#include "fata/rng.hpp"
#include "fata/shards.hpp"

namespace fata {

namespace {

constexpr int kPreparedVersion = 1;

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw StateError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw StateError("malformed " + path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::size_t stride_for(const PrepareOptions& o, const std::string& split) {
  if (split == "train") return o.train_stride;
  if (split == "val") return o.val_stride;
  return o.test_stride;
}

}  // namespace

void PrepareOptions::validate() const {
  if (length == 0) throw ConfigError("window length must be positive");
  if (train_stride == 0 || val_stride == 0 || test_stride == 0) throw ConfigError("strides must be positive");
  if (gap_bins < 2) throw ConfigError("gap_bins must be at least 2");
  if (val_fraction < 0.0 || test_fraction < 0.0 || val_fraction + test_fraction >= 1.0) {
    throw ConfigError("val/test fractions must be non-negative and leave room for training data");
  }
}

nlohmann::json PrepareOptions::to_json() const {
  return {{"length", length},
          {"train_stride", train_stride},
          {"val_stride", val_stride},
          {"test_stride", test_stride},
          {"pad", pad},
          {"static_policy", static_policy == StaticPolicy::Strict ? "strict" : "first"},
          {"label_policy", to_string(label_policy)},
          {"gap_bins", gap_bins},
          {"val_fraction", val_fraction},
          {"test_fraction", test_fraction},
          {"seed", seed}};
}

PrepareOptions PrepareOptions::from_json(const nlohmann::json& j) {
  PrepareOptions o;
  try {
    o.length = j.value("length", o.length);
    o.train_stride = j.value("train_stride", o.train_stride);
    o.val_stride = j.value("val_stride", o.val_stride);
    o.test_stride = j.value("test_stride", o.test_stride);
    o.pad = j.value("pad", o.pad);
    const auto sp = j.value("static_policy", std::string("strict"));
    if (sp != "strict" && sp != "first") throw ConfigError("static_policy must be strict or first");
    o.static_policy = sp == "strict" ? StaticPolicy::Strict : StaticPolicy::First;
    o.label_policy = label_policy_from_string(j.value("label_policy", std::string("exclude")));
    o.gap_bins = j.value("gap_bins", o.gap_bins);
    o.val_fraction = j.value("val_fraction", o.val_fraction);
    o.test_fraction = j.value("test_fraction", o.test_fraction);
    o.seed = j.value("seed", o.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad prepare options: ") + e.what());
  }
  o.validate();
  return o;
}

const std::vector<TokenizedWindow>& PreparedData::split(const std::string& name) const {
  const auto it = splits.find(name);
  if (it == splits.end()) throw ConfigError("prepared data has no '" + name + "' split");
  return it->second;
}

std::map<std::string, std::string> assign_splits(const CsvTable& table, const PrepareOptions& options) {
  const auto id_col = table.require_column(kSeqIdColumn);
  const int split_col = table.column(kSplitColumn);
  std::map<std::string, std::string> out;
  std::vector<std::string> order;
  for (const auto& row : table.rows) {
    const auto& id = row[id_col];
    if (split_col >= 0) {
      const auto& s = row[static_cast<std::size_t>(split_col)];
      if (std::find(kSplitNames.begin(), kSplitNames.end(), s) == kSplitNames.end()) {
        throw ConfigError("split value '" + s + "' is not train, val or test");
      }
      auto [it, inserted] = out.emplace(id, s);
      if (!inserted && it->second != s) throw ConfigError("sequence '" + id + "' spans several splits");
    } else if (out.emplace(id, "").second) {
      order.push_back(id);
    }
  }
  if (split_col >= 0) return out;

  std::vector<std::size_t> perm(order.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(derive_seed(options.seed, 0x53504c4954ULL));
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[uniform_index(rng, i)]);
  const auto n = static_cast<double>(order.size());
  const auto n_test = static_cast<std::size_t>(std::llround(options.test_fraction * n));
  const auto n_val = static_cast<std::size_t>(std::llround(options.val_fraction * n));
  for (std::size_t k = 0; k < perm.size(); ++k) {
    out[order[perm[k]]] = k < n_test ? "test" : k < n_test + n_val ? "val" : "train";
  }
  return out;
}

PreparedData prepare_dataset(const CsvTable& table, const Schema& schema, const PrepareOptions& options) {
  options.validate();
  schema.validate();
  if (schema.find(kTimeGapField)) throw ConfigError("field name '" + std::string(kTimeGapField) + "' is reserved");
  const bool include_label = options.label_policy == LabelPolicy::IncludeMaskLast;
  if (include_label && !schema.label_field) throw ConfigError("label policy include_mask_last needs a label field");

  const auto assignment = assign_splits(table, options);
  const auto id_col = table.require_column(kSeqIdColumn);
  std::map<std::string, CsvTable> parts;
  for (const auto& name : kSplitNames) parts[name].header = table.header;
  for (const auto& row : table.rows) parts[assignment.at(row[id_col])].rows.push_back(row);
  if (parts["train"].rows.empty()) throw ConfigError("the train split is empty");

  PreparedData data;
  data.schema = schema;
  const auto& train = parts["train"];
  for (const auto& f : schema.fields) {
    if (f.dtype != FieldType::Numerical) continue;
    const auto c = train.require_column(f.name);
    std::vector<double> values;
    for (const auto& row : train.rows) {
      if (auto x = parse_real(row[c])) values.push_back(*x);
    }
    data.quantizers.emplace(f.name, Quantizer::fit(f.name, values, f.n_bins));
  }

  std::map<std::string, RecordSet> records;
  for (const auto& name : kSplitNames) records.emplace(name, group_sequences(parts[name]));
  auto gaps = sequence_gaps(records.at("train"));
  data.time_scale = fit_time_scale(gaps);
  gaps.push_back(0.0);
  const auto gap_q = Quantizer::fit(std::string(kTimeGapField), gaps, options.gap_bins);
  data.vocab = build_vocab(schema, data.quantizers, train, include_label, &gap_q, gaps);

  for (const auto& name : kSplitNames) {
    WindowOptions wo;
    wo.length = options.length;
    wo.stride = stride_for(options, name);
    wo.pad = options.pad;
    wo.static_policy = options.static_policy;
    auto& out = data.splits[name];
    for (const auto& w : make_windows(records.at(name), schema, wo)) {
      out.push_back(tokenize_window(w, schema, data.vocab, options.label_policy));
    }
  }
  return data;
}

void save_prepared(const std::filesystem::path& dir, const PreparedData& data, const PrepareOptions& options) {
  std::filesystem::create_directories(dir / "shards");
  write_json(dir / "schema.json", data.schema.to_json());
  nlohmann::json q = nlohmann::json::object();
  for (const auto& [name, quant] : data.quantizers) q[name] = quant.to_json();
  write_json(dir / "quantizers.json", q);
  data.vocab.save(dir / "vocab.json");
  nlohmann::json counts = nlohmann::json::object();
  for (const auto& [name, windows] : data.splits) {
    write_shard(dir / "shards" / name, windows, data.vocab, options.label_policy);
    counts[name] = windows.size();
  }
  write_json(dir / "meta.json", {{"format", "fata-prepared"},
                                 {"version", kPreparedVersion},
                                 {"time_scale", data.time_scale},
                                 {"vocab_digest", data.vocab.digest()},
                                 {"options", options.to_json()},
                                 {"windows", counts}});
}

PreparedData load_prepared(const std::filesystem::path& dir) {
  const auto meta = read_json(dir / "meta.json");
  if (meta.value("format", std::string()) != "fata-prepared" || meta.value("version", 0) != kPreparedVersion) {
    throw StateError(dir.string() + " is not a prepared dataset of a supported version");
  }
  PreparedData data;
  try {
    data.schema = Schema::from_json(read_json(dir / "schema.json"));
  } catch (const ConfigError& e) {
    throw StateError(std::string("bad stored schema: ") + e.what());
  }
  const auto quantizers = read_json(dir / "quantizers.json");
  try {
    for (const auto& [name, j] : quantizers.items()) data.quantizers.emplace(name, Quantizer::from_json(j));
  } catch (const std::exception& e) {
    throw StateError(std::string("bad stored quantizers: ") + e.what());
  }
  data.vocab = Vocabulary::load(dir / "vocab.json");
  if (data.vocab.digest() != meta.value("vocab_digest", std::string())) {
    throw StateError("vocab.json does not match the prepared dataset");
  }
  data.time_scale = meta.value("time_scale", 1.0);
  for (const auto& [name, count] : meta.at("windows").items()) {
    data.splits[name] = read_shard(dir / "shards" / name, data.vocab);
    if (data.splits[name].size() != count.get<std::size_t>()) throw StateError("shard '" + name + "' is incomplete");
  }
  return data;
}

}  // namespace fata
