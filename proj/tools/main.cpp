// fata: command line front end for the whole pipeline.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fata/csv.hpp"
#include "fata/error.hpp"
#include "fata/eval.hpp"
#include "fata/log.hpp"
#include "fata/pipeline.hpp"
#include "fata/synthgen.hpp"
#include "fata/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fata;

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("FATA_SEED");
  if (!s || !*s) return std::nullopt;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != std::strlen(s)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(std::string("FATA_SEED is not an unsigned integer: ") + s);
  }
}

// Seed precedence: --seed, then FATA_SEED, then the config file.
void apply_seed(json& section, const std::optional<std::uint64_t>& flag) {
  if (flag) section["seed"] = *flag;
  else if (const auto e = env_seed()) section["seed"] = *e;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

struct TrainFlags {
  std::string data, out, config;
  std::optional<std::string> mode;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads, epochs, batch;
  std::optional<double> lr;
  bool quiet = false;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f, bool with_mode) {
  cmd->add_option("--data", f.data, "Prepared dataset directory")->required();
  cmd->add_option("--out", f.out, "Run directory")->required();
  cmd->add_option("--config", f.config, "JSON with optional \"model\" and \"train\" sections");
  if (with_mode) cmd->add_option("--mode", f.mode, "fata, no_time_pos, replicated_static or both_off");
  cmd->add_option("--seed", f.seed, "Overrides FATA_SEED and the config seed");
  cmd->add_option("--threads", f.threads, "Worker threads");
  cmd->add_option("--epochs", f.epochs, "Epochs for this phase");
  cmd->add_option("--batch", f.batch, "Batch size");
  cmd->add_option("--lr", f.lr, "Learning rate for this phase");
  cmd->add_flag("--quiet", f.quiet, "Only warnings on stderr");
}

struct RunConfig {
  json model = json::object();
  json train = json::object();
};

RunConfig load_run_config(const TrainFlags& f) {
  RunConfig rc;
  if (!f.config.empty()) {
    const auto j = read_json_file(f.config);
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
      if (key == "model") rc.model = value;
      else if (key == "train") rc.train = value;
      else throw ConfigError("unknown run config section: " + key);
    }
  }
  if (f.mode) rc.model["mode"] = *f.mode;
  if (f.threads) rc.train["threads"] = *f.threads;
  if (f.batch) rc.train["batch_size"] = *f.batch;
  apply_seed(rc.train, f.seed);
  return rc;
}

ModelConfig model_for_data(json model, const fs::path& data_dir, const PreparedData& data) {
  const auto meta = read_json_file(data_dir / "meta.json");
  const auto options = PrepareOptions::from_json(meta.at("options"));
  model["length"] = options.length;
  model["time_scale"] = data.time_scale;
  model["label_policy"] = std::string(to_string(options.label_policy));
  return ModelConfig::from_json(model);
}

std::vector<TokenizedWindow> views_of(const FataModel<float>& model, const PreparedData& data,
                                      const std::string& split) {
  std::vector<TokenizedWindow> out;
  const auto layout = data.layout();
  for (const auto& w : data.split(split)) out.push_back(model.view(w, layout));
  return out;
}

class MetricsLog {
 public:
  MetricsLog(const fs::path& path, bool quiet) : out_(path, std::ios::binary), quiet_(quiet) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
  }
  MetricSink sink() {
    return [this](const json& r) {
      out_ << r.dump() << '\n';
      if (!quiet_) std::cerr << r.dump() << '\n';
    };
  }

 private:
  std::ofstream out_;
  bool quiet_;
};

void prepare_run_dir(const fs::path& out, const json& resolved) {
  fs::create_directories(out);
  write_json_file(out / "config.resolved.json", resolved);
}

// ---- generate ----

struct GenerateFlags {
  std::string spec, out;
  std::optional<std::size_t> sequences;
  std::optional<std::string> rule;
  std::optional<std::uint64_t> seed;
};

int cmd_generate(const GenerateFlags& f) {
  json j = f.spec.empty() ? json::object() : read_json_file(f.spec);
  if (!j.is_object()) throw ConfigError("generation spec must be a JSON object");
  if (f.sequences) j["sequences"] = *f.sequences;
  if (f.rule) j["rule"] = *f.rule;
  apply_seed(j, f.seed);
  const auto spec = GenSpec::from_json(j);
  spec.validate();
  const auto data = generate(spec);
  write_dataset(f.out, spec, data);
  const auto schema = infer_schema(records_table(data, spec), synth_static_fields(), std::string(kSynthLabelField));
  write_json_file(fs::path(f.out) / "schema.json", schema.to_json());
  write_json_file(fs::path(f.out) / "config.resolved.json", {{"command", "generate"}, {"spec", spec.to_json()}});
  std::size_t positives = 0;
  for (const auto& q : data) positives += static_cast<std::size_t>(q.label());
  std::cout << json{{"sequences", data.size()}, {"anomalies", positives}, {"out", f.out}}.dump() << '\n';
  return 0;
}

// ---- prepare ----

struct PrepareFlags {
  std::string records, schema, out, options;
  std::string static_fields, label;
  std::optional<std::size_t> length, train_stride, val_stride, test_stride;
  std::optional<int> bins;
  std::optional<std::string> label_policy, static_policy;
  std::optional<std::uint64_t> seed;
};

int cmd_prepare(const PrepareFlags& f) {
  json o = f.options.empty() ? json::object() : read_json_file(f.options);
  if (f.length) o["length"] = *f.length;
  if (f.train_stride) o["train_stride"] = *f.train_stride;
  if (f.val_stride) o["val_stride"] = *f.val_stride;
  if (f.test_stride) o["test_stride"] = *f.test_stride;
  if (f.bins) o["gap_bins"] = *f.bins;
  if (f.label_policy) o["label_policy"] = *f.label_policy;
  if (f.static_policy) o["static_policy"] = *f.static_policy;
  apply_seed(o, f.seed);
  const auto options = PrepareOptions::from_json(o);
  options.validate();

  const auto table = read_csv(f.records);
  Schema schema;
  if (!f.schema.empty()) {
    schema = Schema::from_json(read_json_file(f.schema));
  } else {
    const auto label = f.label.empty() ? std::nullopt : std::optional<std::string>(f.label);
    schema = infer_schema(table, split_list(f.static_fields), label);
  }
  const auto data = prepare_dataset(table, schema, options);
  save_prepared(f.out, data, options);
  write_json_file(fs::path(f.out) / "config.resolved.json",
                  {{"command", "prepare"}, {"records", f.records}, {"schema", schema.to_json()}, {"options", options.to_json()}});
  json counts = json::object();
  for (const auto& [name, ws] : data.splits) counts[name] = ws.size();
  std::cout << json{{"vocab_size", data.vocab.size()}, {"vocab_digest", data.vocab.digest()}, {"windows", counts}}.dump()
            << '\n';
  return 0;
}

// ---- pretrain ----

int cmd_pretrain(const TrainFlags& f) {
  auto rc = load_run_config(f);
  if (f.epochs) rc.train["pretrain_epochs"] = *f.epochs;
  if (f.lr) rc.train["pretrain_lr"] = *f.lr;
  const auto train_cfg = TrainConfig::from_json(rc.train);
  const auto data = load_prepared(f.data);
  const auto model_cfg = model_for_data(rc.model, f.data, data);
  const fs::path out = f.out;
  prepare_run_dir(out, {{"command", "pretrain"}, {"data", f.data}, {"vocab_digest", data.vocab.digest()},
                        {"model", model_cfg.to_json()}, {"train", train_cfg.to_json()}});

  auto model = FataModel<float>::create(model_cfg, data.vocab, train_cfg.seed);
  const auto windows = views_of(model, data, "train");
  nn::Adam<float> opt(model.params(), {.lr = train_cfg.pretrain_lr, .clip_norm = train_cfg.clip_norm});
  MetricsLog log(out / "metrics.jsonl", f.quiet);
  const auto r = pretrain(model, windows, data.vocab, train_cfg, &opt, log.sink());
  save_checkpoint(out / "checkpoint", model, data.vocab, &opt, {train_cfg.seed, r.steps, {{"phase", "pretrain"}}});
  json summary{{"steps", r.steps}, {"skipped_steps", r.skipped_steps}, {"windows", windows.size()}};
  if (!r.losses.empty()) summary["first_loss"] = r.losses.front(), summary["last_loss"] = r.losses.back();
  write_json_file(out / "pretrain.json", summary);
  std::cout << summary.dump() << '\n';
  return 0;
}

// ---- finetune ----

struct FinetuneFlags {
  TrainFlags train;
  std::string from;
  bool no_pretrain = false;
};

int cmd_finetune(const FinetuneFlags& ff) {
  const auto& f = ff.train;
  if (ff.from.empty() == !ff.no_pretrain) throw ConfigError("finetune needs exactly one of --from and --no-pretrain");
  auto rc = load_run_config(f);
  if (f.epochs) rc.train["finetune_epochs"] = *f.epochs;
  if (f.lr) rc.train["finetune_lr"] = *f.lr;
  const auto train_cfg = TrainConfig::from_json(rc.train);
  const auto data = load_prepared(f.data);

  std::optional<FataModel<float>> model;
  if (ff.no_pretrain) {
    model.emplace(FataModel<float>::create(model_for_data(rc.model, f.data, data), data.vocab, train_cfg.seed));
  } else {
    auto loaded = load_checkpoint(ff.from, &data.vocab);
    if (f.mode && model_mode_from_string(*f.mode) != loaded.model.config().mode) {
      throw ConfigError("--mode " + *f.mode + " does not match the checkpoint mode " +
                        std::string(to_string(loaded.model.config().mode)));
    }
    model.emplace(std::move(loaded.model));
  }
  const fs::path out = f.out;
  prepare_run_dir(out, {{"command", "finetune"},
                        {"data", f.data},
                        {"from", ff.no_pretrain ? json(nullptr) : json(ff.from)},
                        {"no_pretrain", ff.no_pretrain},
                        {"vocab_digest", data.vocab.digest()},
                        {"model", model->config().to_json()},
                        {"train", train_cfg.to_json()}});

  const auto train = views_of(*model, data, "train");
  const auto val = views_of(*model, data, "val");
  MetricsLog log(out / "metrics.jsonl", f.quiet);
  const auto r = finetune(*model, train, val, train_cfg, log.sink());
  save_checkpoint(out / "checkpoint", *model, data.vocab, nullptr,
                  {train_cfg.seed, r.best_epoch, {{"phase", "finetune"}, {"best_val_auc", r.best_auc}}});
  json summary{{"best_epoch", r.best_epoch}, {"best_val_auc", r.best_auc}, {"val_auc", r.val_auc},
               {"train_loss", r.train_loss}, {"stopped_early", r.stopped_early}, {"train_windows", r.train_windows}};
  write_json_file(out / "finetune.json", summary);
  std::cout << json{{"best_epoch", r.best_epoch}, {"best_val_auc", r.best_auc}}.dump() << '\n';
  return 0;
}

// ---- evaluate ----

struct EvalFlags {
  std::string data, checkpoint, out, split = "test";
};

int cmd_evaluate(const EvalFlags& f) {
  const auto data = load_prepared(f.data);
  const auto loaded = load_checkpoint(f.checkpoint, &data.vocab);
  const auto windows = views_of(loaded.model, data, f.split);
  std::vector<double> scores;
  std::vector<int> labels;
  for (std::size_t i = 0; i < windows.size(); i += 256) {
    const auto part = std::span(windows).subspan(i, std::min<std::size_t>(256, windows.size() - i));
    for (double s : loaded.model.scores(part)) scores.push_back(s);
    for (const auto& w : part) {
      if (!w.label) throw ConfigError("window of " + w.seq_id + " has no label");
      labels.push_back(*w.label);
    }
  }
  const auto roc = roc_auc(scores, labels);
  const json metrics{{"split", f.split},
                     {"windows", windows.size()},
                     {"auc", roc.auc},
                     {"positives", roc.positives},
                     {"negatives", roc.negatives},
                     {"mode", to_string(loaded.model.config().mode)}};
  const fs::path out = f.out;
  prepare_run_dir(out, {{"command", "evaluate"}, {"data", f.data}, {"checkpoint", f.checkpoint}, {"split", f.split}});
  write_json_file(out / "metrics.json", metrics);
  std::cout << metrics.dump() << '\n';
  return 0;
}

// ---- export ----

struct ExportFlags {
  std::string data, checkpoint, out, split = "test", which = "concat_window", tag_field;
  std::size_t pca = 2;
  std::size_t limit = 0;
};

int cmd_export(const ExportFlags& f) {
  const auto kind = embedding_kind_from_string(f.which);
  const auto data = load_prepared(f.data);
  const auto loaded = load_checkpoint(f.checkpoint, &data.vocab);
  auto windows = views_of(loaded.model, data, f.split);
  if (f.limit > 0 && windows.size() > f.limit) windows.resize(f.limit);
  if (windows.empty()) throw ConfigError("split " + f.split + " has no windows");
  ExportOptions o;
  o.kind = kind;
  o.tag_field = f.tag_field;
  const auto table = export_embeddings(loaded.model, windows, data.vocab, o);

  const fs::path out = f.out;
  prepare_run_dir(out, {{"command", "export"},
                        {"data", f.data},
                        {"checkpoint", f.checkpoint},
                        {"split", f.split},
                        {"which", f.which},
                        {"tag_field", f.tag_field},
                        {"pca", f.pca},
                        {"limit", f.limit}});
  write_embedding_csv(out / "embeddings.csv", table.ids, table.tags, table.rows);
  json summary{{"rows", table.rows.rows()}, {"dim", table.rows.cols()}};
  if (f.pca > 0) {
    const auto p = pca_fit_project(table.rows, f.pca);
    write_embedding_csv(out / "pca.csv", table.ids, table.tags, p.coordinates);
    write_text(out / "pca.svg", scatter_svg(p.coordinates, table.tags, "PCA of " + f.which + " embeddings"));
    summary["explained_variance"] = p.explained_variance;
    summary["total_variance"] = p.total_variance();
  }
  write_json_file(out / "export.json", summary);
  std::cout << summary.dump() << '\n';
  return 0;
}

// ---- ablate ----

struct AblateFlags {
  TrainFlags train;
  std::string variants = "fata,no_time_pos,replicated_static,both_off,no_pretrain";
};

int cmd_ablate(const AblateFlags& af) {
  const auto& f = af.train;
  auto rc = load_run_config(f);
  const auto train_cfg = TrainConfig::from_json(rc.train);
  const auto data = load_prepared(f.data);
  const auto names = split_list(af.variants);
  if (names.empty()) throw ConfigError("no variants given");
  for (const auto& n : names)
    if (n != "no_pretrain") (void)model_mode_from_string(n);

  const fs::path out = f.out;
  prepare_run_dir(out, {{"command", "ablate"},
                        {"data", f.data},
                        {"variants", names},
                        {"vocab_digest", data.vocab.digest()},
                        {"model", rc.model},
                        {"train", train_cfg.to_json()}});
  json rows = json::array();
  for (const auto& name : names) {
    const bool no_pretrain = name == "no_pretrain";
    auto mj = rc.model;
    mj["mode"] = no_pretrain ? "fata" : name;
    const auto cfg = model_for_data(mj, f.data, data);
    auto model = FataModel<float>::create(cfg, data.vocab, train_cfg.seed);
    const auto train = views_of(model, data, "train");
    const auto val = views_of(model, data, "val");
    const auto test = views_of(model, data, "test");
    fs::create_directories(out / name);
    MetricsLog log(out / name / "metrics.jsonl", f.quiet);
    if (!no_pretrain) pretrain(model, train, data.vocab, train_cfg, nullptr, log.sink());
    const auto r = finetune(model, train, val, train_cfg, log.sink());
    const double auc = evaluate_auc(model, test);
    rows.push_back({{"variant", name},
                    {"mode", to_string(cfg.mode)},
                    {"pretrained", !no_pretrain},
                    {"level_one_tokens", model.level_one_tokens()},
                    {"best_val_auc", r.best_auc},
                    {"test_auc", auc}});
    if (!f.quiet) std::cerr << rows.back().dump() << '\n';
  }
  write_json_file(out / "ablation.json", rows);

  std::printf("%-20s %-18s %10s %10s %10s\n", "variant", "mode", "tokens", "val AUC", "test AUC");
  for (const auto& r : rows) {
    std::printf("%-20s %-18s %10zu %10.4f %10.4f\n", r["variant"].get<std::string>().c_str(),
                r["mode"].get<std::string>().c_str(), r["level_one_tokens"].get<std::size_t>(),
                r["best_val_auc"].get<double>(), r["test_auc"].get<double>());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Field- and time-aware transformer for sequential tabular data"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Info logging");

  GenerateFlags gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic transaction dataset");
  g->add_option("--spec", gen.spec, "Generation spec JSON");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--sequences", gen.sequences, "Number of sequences");
  g->add_option("--rule", gen.rule, "mixed, time_only or value_only");
  g->add_option("--seed", gen.seed, "Overrides FATA_SEED and the generation spec seed");

  PrepareFlags prep;
  auto* p = app.add_subcommand("prepare", "Fit vocabulary and write window shards");
  p->add_option("--records", prep.records, "Records CSV")->required();
  p->add_option("--schema", prep.schema, "Schema JSON; inferred when omitted");
  p->add_option("--static", prep.static_fields, "Comma-separated static fields for schema inference");
  p->add_option("--label", prep.label, "Label field for schema inference");
  p->add_option("--options", prep.options, "PrepareOptions JSON");
  p->add_option("--out", prep.out, "Output directory")->required();
  p->add_option("--l,--length", prep.length, "Window length");
  p->add_option("--train-stride", prep.train_stride, "Train window stride");
  p->add_option("--val-stride", prep.val_stride, "Validation window stride");
  p->add_option("--test-stride", prep.test_stride, "Test window stride");
  p->add_option("--bins", prep.bins, "Bins for the time-gap field");
  p->add_option("--label-policy", prep.label_policy, "exclude or include_mask_last");
  p->add_option("--static-policy", prep.static_policy, "strict or first");
  p->add_option("--seed", prep.seed, "Split seed when the table has no split column");

  TrainFlags pre;
  auto* pt = app.add_subcommand("pretrain", "Masked field-token pretraining");
  add_train_flags(pt, pre, true);

  FinetuneFlags fin;
  auto* ft = app.add_subcommand("finetune", "Binary classification fine-tuning with early stopping");
  add_train_flags(ft, fin.train, true);
  ft->add_option("--from", fin.from, "Pretrained checkpoint directory");
  ft->add_flag("--no-pretrain", fin.no_pretrain, "Start from random weights");

  EvalFlags ev;
  auto* e = app.add_subcommand("evaluate", "Test AUC of a checkpoint");
  e->add_option("--data", ev.data, "Prepared dataset directory")->required();
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory")->required();
  e->add_option("--out", ev.out, "Run directory")->required();
  e->add_option("--split", ev.split, "train, val or test");

  ExportFlags ex;
  auto* x = app.add_subcommand("export", "Sequence embeddings as CSV plus a PCA scatter");
  x->add_option("--data", ex.data, "Prepared dataset directory")->required();
  x->add_option("--checkpoint", ex.checkpoint, "Checkpoint directory")->required();
  x->add_option("--out", ex.out, "Run directory")->required();
  x->add_option("--split", ex.split, "train, val or test");
  x->add_option("--which", ex.which, "concat_window, per_record or static_row");
  x->add_option("--tag-field", ex.tag_field, "Field whose value tags each row; label when empty");
  x->add_option("--pca", ex.pca, "Principal components to project onto (0 disables)");
  x->add_option("--limit", ex.limit, "Export at most this many windows");

  AblateFlags ab;
  auto* a = app.add_subcommand("ablate", "Train every variant and compare test AUC");
  add_train_flags(a, ab.train, false);
  a->add_option("--variants", ab.variants, "Comma-separated modes, plus no_pretrain");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }
  set_log_level(verbose ? LogLevel::Info : LogLevel::Warn);

  try {
    if (*g) return cmd_generate(gen);
    if (*p) return cmd_prepare(prep);
    if (*pt) return cmd_pretrain(pre);
    if (*ft) return cmd_finetune(fin);
    if (*e) return cmd_evaluate(ev);
    if (*x) return cmd_export(ex);
    if (*a) return cmd_ablate(ab);
  } catch (const ConfigError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  } catch (const StateError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 3;
  } catch (const std::exception& err) {
    std::cerr << "internal error: " << err.what() << '\n';
    return 1;
  }
  return 1;
}
