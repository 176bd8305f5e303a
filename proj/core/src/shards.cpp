#include "fata/shards.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "fata/error.hpp"

namespace fata {

namespace {

template <typename T>
void write_le(const std::filesystem::path& path, const std::vector<T>& values) {
  static_assert(sizeof(T) == 4);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  for (const T& v : values) {
    std::uint32_t bits = 0;
    std::memcpy(&bits, &v, 4);
    const unsigned char bytes[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                    static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
    out.write(reinterpret_cast<const char*>(bytes), 4);
  }
}

template <typename T>
std::vector<T> read_le(const std::filesystem::path& path, std::size_t count) {
  static_assert(sizeof(T) == 4);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StateError("cannot open shard array " + path.string());
  std::vector<unsigned char> raw(count * 4);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size() || in.peek() != std::ifstream::traits_type::eof()) {
    throw StateError("shard array " + path.string() + " has the wrong length");
  }
  std::vector<T> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t bits = static_cast<std::uint32_t>(raw[4 * i]) | (static_cast<std::uint32_t>(raw[4 * i + 1]) << 8) |
                               (static_cast<std::uint32_t>(raw[4 * i + 2]) << 16) |
                               (static_cast<std::uint32_t>(raw[4 * i + 3]) << 24);
    std::memcpy(&out[i], &bits, 4);
  }
  return out;
}

std::vector<std::string> field_names(const Vocabulary& vocab, const std::vector<int>& fields) {
  std::vector<std::string> names;
  for (int f : fields) names.push_back(vocab.field(static_cast<std::size_t>(f)).name);
  return names;
}

}  // namespace

void write_shard(const std::filesystem::path& dir, std::span<const TokenizedWindow> windows, const Vocabulary& vocab,
                 LabelPolicy policy) {
  std::filesystem::create_directories(dir);
  const auto layout = ColumnLayout::from_vocab(vocab);
  std::size_t length = windows.empty() ? 0 : windows.front().length;
  std::vector<std::int32_t> stat, dyn, pad, label;
  std::vector<float> times;
  nlohmann::json seq_ids = nlohmann::json::array();
  for (const auto& w : windows) {
    if (w.length != length || w.static_fields != layout.static_fields || w.dynamic_fields != layout.dynamic_fields) {
      throw ConfigError("all windows in a shard must share the vocabulary's column layout and length");
    }
    stat.insert(stat.end(), w.static_orig.begin(), w.static_orig.end());
    dyn.insert(dyn.end(), w.dynamic_orig.begin(), w.dynamic_orig.end());
    pad.push_back(static_cast<std::int32_t>(w.pad_count));
    label.push_back(w.label ? *w.label : -1);
    for (double t : w.times) times.push_back(static_cast<float>(t));
    seq_ids.push_back(w.seq_id);
  }
  const auto n = windows.size();
  const auto n_s = layout.static_fields.size();
  const auto n_d = layout.dynamic_fields.size();
  nlohmann::json manifest{
      {"format", "fata-shard"},
      {"version", kShardVersion},
      {"count", n},
      {"length", length},
      {"static_fields", field_names(vocab, layout.static_fields)},
      {"dynamic_fields", field_names(vocab, layout.dynamic_fields)},
      {"label_policy", to_string(policy)},
      {"vocab_digest", vocab.digest()},
      {"seq_ids", seq_ids},
      {"arrays",
       {{"static", {{"file", "static.i32"}, {"dtype", "int32_le"}, {"shape", {n, n_s}}}},
        {"dynamic", {{"file", "dynamic.i32"}, {"dtype", "int32_le"}, {"shape", {n, length, n_d}}}},
        {"pad", {{"file", "pad.i32"}, {"dtype", "int32_le"}, {"shape", {n}}}},
        {"label", {{"file", "label.i32"}, {"dtype", "int32_le"}, {"shape", {n}}}},
        {"times", {{"file", "times.f32"}, {"dtype", "float32_le"}, {"shape", {n, length}}}}}}};
  write_le(dir / "static.i32", stat);
  write_le(dir / "dynamic.i32", dyn);
  write_le(dir / "pad.i32", pad);
  write_le(dir / "label.i32", label);
  write_le(dir / "times.f32", times);
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(1) << '\n';
}

std::vector<TokenizedWindow> read_shard(const std::filesystem::path& dir, const Vocabulary& vocab) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw StateError("missing shard manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw StateError("shard manifest is not valid JSON: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "fata-shard" || manifest.value("version", 0) != kShardVersion) {
    throw StateError("unknown shard format/version in " + dir.string());
  }
  if (manifest.at("vocab_digest").get<std::string>() != vocab.digest()) {
    throw StateError("shard " + dir.string() + " was tokenized with a different vocabulary");
  }
  const auto layout = ColumnLayout::from_vocab(vocab);
  const auto policy = label_policy_from_string(manifest.at("label_policy").get<std::string>());
  const auto n = manifest.at("count").get<std::size_t>();
  const auto length = manifest.at("length").get<std::size_t>();
  const auto n_s = layout.static_fields.size();
  const auto n_d = layout.dynamic_fields.size();
  const auto stat = read_le<std::int32_t>(dir / "static.i32", n * n_s);
  const auto dyn = read_le<std::int32_t>(dir / "dynamic.i32", n * length * n_d);
  const auto pad = read_le<std::int32_t>(dir / "pad.i32", n);
  const auto label = read_le<std::int32_t>(dir / "label.i32", n);
  const auto times = read_le<float>(dir / "times.f32", n * length);
  const auto& seq_ids = manifest.at("seq_ids");

  std::vector<TokenizedWindow> out(n);
  for (std::size_t w = 0; w < n; ++w) {
    auto& tw = out[w];
    tw.seq_id = seq_ids.at(w).get<std::string>();
    tw.length = length;
    tw.n_static = n_s;
    tw.n_dynamic = n_d;
    tw.static_fields = layout.static_fields;
    tw.dynamic_fields = layout.dynamic_fields;
    tw.static_orig.assign(stat.begin() + static_cast<std::ptrdiff_t>(w * n_s),
                          stat.begin() + static_cast<std::ptrdiff_t>((w + 1) * n_s));
    tw.dynamic_orig.assign(dyn.begin() + static_cast<std::ptrdiff_t>(w * length * n_d),
                           dyn.begin() + static_cast<std::ptrdiff_t>((w + 1) * length * n_d));
    for (auto id : tw.static_orig) {
      if (id < 0 || id >= vocab.size()) throw StateError("shard token id out of vocabulary range");
    }
    for (auto id : tw.dynamic_orig) {
      if (id < 0 || id >= vocab.size()) throw StateError("shard token id out of vocabulary range");
    }
    if (pad[w] < 0 || static_cast<std::size_t>(pad[w]) >= length) throw StateError("shard pad count out of range");
    tw.pad_count = static_cast<std::size_t>(pad[w]);
    if (label[w] >= 0) tw.label = label[w];
    for (std::size_t i = 0; i < length; ++i) tw.times.push_back(times[w * length + i]);
    reset_masking(tw, layout, policy);
  }
  return out;
}

void write_windows_json(const std::filesystem::path& path, std::span<const TokenizedWindow> windows,
                        const Vocabulary& vocab) {
  nlohmann::json arr = nlohmann::json::array();
  auto decode = [&](TokenId id) {
    const auto d = vocab.decode(id);
    return d.field < 0 ? d.token : vocab.field(static_cast<std::size_t>(d.field)).name + "=" + d.token;
  };
  for (const auto& w : windows) {
    nlohmann::json jw{{"seq_id", w.seq_id}, {"pad_count", w.pad_count}, {"times", w.times}};
    jw["label"] = w.label ? nlohmann::json(*w.label) : nlohmann::json(nullptr);
    jw["static_ids"] = w.static_ids;
    nlohmann::json st = nlohmann::json::array();
    for (auto id : w.static_ids) st.push_back(decode(id));
    jw["static_tokens"] = st;
    nlohmann::json rows = nlohmann::json::array();
    nlohmann::json row_ids = nlohmann::json::array();
    for (std::size_t i = 0; i < w.length; ++i) {
      nlohmann::json r = nlohmann::json::array();
      nlohmann::json ri = nlohmann::json::array();
      for (std::size_t j = 0; j < w.n_dynamic; ++j) {
        r.push_back(decode(w.dynamic_ids[i * w.n_dynamic + j]));
        ri.push_back(w.dynamic_ids[i * w.n_dynamic + j]);
      }
      rows.push_back(std::move(r));
      row_ids.push_back(std::move(ri));
    }
    jw["dynamic_ids"] = row_ids;
    jw["dynamic_tokens"] = rows;
    arr.push_back(std::move(jw));
  }
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << nlohmann::json{{"windows", arr}}.dump(1) << '\n';
}

}  // namespace fata
