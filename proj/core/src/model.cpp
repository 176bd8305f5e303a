#include "fata/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "fata/error.hpp"
#include "fata/log.hpp"
#include "fata/nn/ops.hpp"

namespace fata {

using nn::Bound;
using nn::DropoutContext;
using nn::Init;
using nn::Tensor;
using nn::Var;

std::string_view to_string(ModelMode mode) {
  switch (mode) {
    case ModelMode::Fata:
      return "fata";
    case ModelMode::NoTimePos:
      return "no_time_pos";
    case ModelMode::ReplicatedStatic:
      return "replicated_static";
    case ModelMode::BothOff:
      return "both_off";
  }
  return "fata";
}

ModelMode model_mode_from_string(std::string_view text) {
  for (auto m : {ModelMode::Fata, ModelMode::NoTimePos, ModelMode::ReplicatedStatic, ModelMode::BothOff}) {
    if (to_string(m) == text) return m;
  }
  throw ConfigError("unknown model mode '" + std::string(text) + "'");
}

void ModelConfig::validate() const {
  if (length == 0) throw ConfigError("window length must be positive");
  if (!(time_scale > 0.0) || !std::isfinite(time_scale)) throw ConfigError("time_scale must be positive");
  nn::EncoderConfig{dim, layers, heads, ff_dim, dropout, length + 1}.validate();
  nn::EncoderConfig{field_dim, field_layers, field_heads, field_ff_dim, dropout, 1}.validate();
}

nlohmann::json ModelConfig::to_json() const {
  nlohmann::json j{{"mode", to_string(mode)},
                   {"length", length},
                   {"dim", dim},
                   {"field_dim", field_dim},
                   {"field_layers", field_layers},
                   {"field_heads", field_heads},
                   {"field_ff_dim", field_ff_dim},
                   {"layers", layers},
                   {"heads", heads},
                   {"ff_dim", ff_dim},
                   {"dropout", dropout},
                   {"time_scale", time_scale},
                   {"label_policy", to_string(label_policy)}};
  j["time_gap_field"] = time_gap_field ? nlohmann::json(*time_gap_field) : nlohmann::json(nullptr);
  return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.mode = model_mode_from_string(j.value("mode", std::string("fata")));
    c.length = j.value("length", c.length);
    c.dim = j.value("dim", c.dim);
    c.field_dim = j.value("field_dim", c.field_dim);
    c.field_layers = j.value("field_layers", c.field_layers);
    c.field_heads = j.value("field_heads", c.field_heads);
    c.field_ff_dim = j.value("field_ff_dim", c.field_ff_dim);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.ff_dim = j.value("ff_dim", c.ff_dim);
    c.dropout = j.value("dropout", c.dropout);
    c.time_scale = j.value("time_scale", c.time_scale);
    c.label_policy = label_policy_from_string(j.value("label_policy", std::string("exclude")));
    if (j.contains("time_gap_field") && !j["time_gap_field"].is_null()) c.time_gap_field = j["time_gap_field"].get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad model config: ") + e.what());
  }
  c.validate();
  return c;
}

double mlm_loss(std::span<const MlmTerm> terms) {
  double total = 0.0;
  std::size_t masked = 0;
  for (const auto& t : terms) {
    if (!t.masked) continue;
    if (t.target < 0 || static_cast<std::size_t>(t.target) >= t.probs.size()) {
      throw std::out_of_range("mlm target outside its head");
    }
    total -= std::log(t.probs[static_cast<std::size_t>(t.target)]);
    ++masked;
  }
  if (masked == 0) {
    log_warn("no masked tokens; MLM loss defined as 0");
    return 0.0;
  }
  return total / static_cast<double>(masked);
}

template <typename T>
FataModel<T> FataModel<T>::build(const ModelConfig& config, const Vocabulary& vocab) {
  config.validate();
  FataModel m;
  m.config_ = config;
  m.vocab_digest_ = vocab.digest();
  m.vocab_size_ = vocab.size();

  const auto layout = ColumnLayout::from_vocab(vocab);
  const bool has_label = layout.label_column >= 0;
  if (has_label != (config.label_policy == LabelPolicy::IncludeMaskLast)) {
    throw ConfigError("label policy does not match the vocabulary");
  }
  if (config.uses_time_gap() && layout.gap_column < 0) {
    throw ConfigError("time gap field requested but missing from the vocabulary");
  }
  if (!config.replicate_static()) m.static_fields_ = layout.static_fields;
  if (config.replicate_static()) m.dynamic_fields_ = layout.static_fields;
  for (std::size_t c = 0; c < layout.dynamic_fields.size(); ++c) {
    if (static_cast<int>(c) == layout.gap_column && !config.uses_time_gap()) continue;
    m.dynamic_fields_.push_back(layout.dynamic_fields[c]);
  }
  if (m.dynamic_fields_.empty()) throw ConfigError("model has no dynamic columns");

  auto& P = m.params_;
  const auto fd = config.field_dim;
  const auto d = config.dim;
  const auto n_s = m.static_fields_.size();
  const auto n_d = m.dynamic_fields_.size();
  const auto V = static_cast<std::size_t>(vocab.size());

  m.p_.token = P.add("embed.token", V, fd);
  if (n_s > 0) {
    m.p_.static_slot = P.add("embed.static_slot", n_s, fd);
    m.static_encoder_ = nn::Encoder::create(
        P, "static_encoder", {fd, config.field_layers, config.field_heads, config.field_ff_dim, config.dropout, n_s});
    m.p_.static_proj_w = P.add("static_proj.weight", n_s * fd, d);
    m.p_.static_proj_b = P.add("static_proj.bias", 1, d, Init::Zeros);
  }
  m.p_.dynamic_slot = P.add("embed.dynamic_slot", n_d, fd);
  m.dynamic_encoder_ = nn::Encoder::create(
      P, "dynamic_encoder", {fd, config.field_layers, config.field_heads, config.field_ff_dim, config.dropout, n_d});
  m.p_.dynamic_proj_w = P.add("dynamic_proj.weight", n_d * fd, d);
  m.p_.dynamic_proj_b = P.add("dynamic_proj.bias", 1, d, Init::Zeros);

  if (!config.replicate_static()) m.p_.field_type = P.add("embed.field_type", 2, d);
  if (config.time_aware()) {
    m.p_.time_position = P.add("embed.time_position", 1, 3, Init::Fixed, {1.0, 1.0, 0.0});
  } else {
    m.p_.position = P.add("embed.position", config.length, d);
  }
  const auto rows = m.rows_per_window();
  m.encoder_ = nn::Encoder::create(P, "fata_encoder",
                                   {d, config.layers, config.heads, config.ff_dim, config.dropout, rows});

  auto make_head = [&](const std::string& prefix, std::size_t column, int field) {
    Head h;
    h.field = field;
    h.offset = vocab.field(static_cast<std::size_t>(field)).offset;
    h.local_size = vocab.local_size(static_cast<std::size_t>(field));
    const auto width = static_cast<std::size_t>(kNumSpecials + h.local_size);
    const auto name = prefix + std::to_string(column) + "." + vocab.field(static_cast<std::size_t>(field)).name;
    h.weight = P.add(name + ".weight", d, width);
    h.bias = P.add(name + ".bias", 1, width, Init::Zeros);
    return h;
  };
  for (std::size_t c = 0; c < n_s; ++c) m.static_heads_.push_back(make_head("mlm.static", c, m.static_fields_[c]));
  for (std::size_t c = 0; c < n_d; ++c) m.dynamic_heads_.push_back(make_head("mlm.dynamic", c, m.dynamic_fields_[c]));

  m.p_.cls_w = P.add("cls.weight", rows * d, 1);
  m.p_.cls_b = P.add("cls.bias", 1, 1, Init::Zeros);
  return m;
}

template <typename T>
FataModel<T> FataModel<T>::create(const ModelConfig& config, const Vocabulary& vocab, std::uint64_t seed) {
  auto m = build(config, vocab);
  m.params_.initialize(seed);
  return m;
}

template <typename T>
FataModel<T> FataModel<T>::skeleton(const ModelConfig& config, const Vocabulary& vocab) {
  return build(config, vocab);
}

template <typename T>
int FataModel<T>::head_width(bool is_static, std::size_t column) const {
  const auto& h = is_static ? static_heads_.at(column) : dynamic_heads_.at(column);
  return kNumSpecials + h.local_size;
}

template <typename T>
int FataModel<T>::head_class(bool is_static, std::size_t column, TokenId id) const {
  const auto& h = is_static ? static_heads_.at(column) : dynamic_heads_.at(column);
  if (id >= 0 && id < kNumSpecials) return id;
  if (id >= h.offset && id < h.offset + h.local_size) return kNumSpecials + (id - h.offset);
  throw ConfigError("token id " + std::to_string(id) + " does not belong to the head's field");
}

template <typename T>
TokenizedWindow FataModel<T>::view(const TokenizedWindow& window, const ColumnLayout& layout) const {
  auto v = make_view(window, layout, config_.view_options());
  check_window(v);
  return v;
}

template <typename T>
void FataModel<T>::check_window(const TokenizedWindow& w) const {
  if (w.length != length()) {
    throw ConfigError("window length " + std::to_string(w.length) + " does not match model length " +
                      std::to_string(length()));
  }
  if (w.static_fields != static_fields_ || w.dynamic_fields != dynamic_fields_) {
    throw ConfigError("window columns do not match the model (wrong mode or vocabulary?)");
  }
  if (w.static_ids.size() != n_static() || w.dynamic_ids.size() != length() * n_dynamic() ||
      w.times.size() != length()) {
    throw ConfigError("window arrays have the wrong shape");
  }
  for (auto id : w.static_ids) {
    if (id < 0 || id >= vocab_size_) throw ConfigError("token id outside the vocabulary");
  }
  for (auto id : w.dynamic_ids) {
    if (id < 0 || id >= vocab_size_) throw ConfigError("token id outside the vocabulary");
  }
}

template <typename T>
std::vector<bool> FataModel<T>::head_only_mask() const {
  std::vector<bool> mask(params_.size(), false);
  mask[p_.cls_w] = true;
  mask[p_.cls_b] = true;
  return mask;
}

template <typename T>
Var FataModel<T>::static_field_encode(Bound<T>& b, std::span<const TokenizedWindow> batch,
                                      const DropoutContext& drop) const {
  if (n_static() == 0) throw ConfigError("model has no static row");
  auto& tape = b.tape();
  const auto n_s = n_static();
  std::vector<std::int32_t> ids, slots;
  ids.reserve(batch.size() * n_s);
  for (const auto& w : batch) {
    if (w.static_ids.size() != n_s) throw ConfigError("static id count does not match the model");
    for (std::size_t j = 0; j < n_s; ++j) {
      ids.push_back(w.static_ids[j]);
      slots.push_back(static_cast<std::int32_t>(j));
    }
  }
  Var x = nn::add(tape, nn::gather_rows(tape, b(p_.token), std::span<const std::int32_t>(ids)),
                  nn::gather_rows(tape, b(p_.static_slot), std::span<const std::int32_t>(slots)));
  Var h = static_encoder_.forward(b, x, n_s, {}, drop);
  h = nn::reshape(tape, h, batch.size(), n_s * config_.field_dim);
  return nn::linear(tape, h, b(p_.static_proj_w), b(p_.static_proj_b));
}

template <typename T>
Var FataModel<T>::dynamic_field_encode(Bound<T>& b, std::span<const TokenizedWindow> batch,
                                       const DropoutContext& drop) const {
  auto& tape = b.tape();
  const auto n_d = n_dynamic();
  const auto l = length();
  std::vector<std::int32_t> ids, slots;
  ids.reserve(batch.size() * l * n_d);
  slots.reserve(ids.capacity());
  for (const auto& w : batch) {
    if (w.dynamic_ids.size() != l * n_d) throw ConfigError("dynamic ids do not form an l x n_d grid");
    ids.insert(ids.end(), w.dynamic_ids.begin(), w.dynamic_ids.end());
    for (std::size_t i = 0; i < l; ++i) {
      for (std::size_t j = 0; j < n_d; ++j) slots.push_back(static_cast<std::int32_t>(j));
    }
  }
  Var x = nn::add(tape, nn::gather_rows(tape, b(p_.token), std::span<const std::int32_t>(ids)),
                  nn::gather_rows(tape, b(p_.dynamic_slot), std::span<const std::int32_t>(slots)));
  Var h = dynamic_encoder_.forward(b, x, n_d, {}, drop);
  h = nn::reshape(tape, h, batch.size() * l, n_d * config_.field_dim);
  return nn::linear(tape, h, b(p_.dynamic_proj_w), b(p_.dynamic_proj_b));
}

template <typename T>
Var FataModel<T>::position_embedding(Bound<T>& b, std::span<const TokenizedWindow> batch) const {
  auto& tape = b.tape();
  const auto l = length();
  const bool st = has_static_row();
  if (config_.time_aware()) {
    std::vector<T> positions, times;
    positions.reserve(batch.size() * rows_per_window());
    times.reserve(positions.capacity());
    const double inv = 1.0 / config_.time_scale;
    for (const auto& w : batch) {
      if (w.times.size() != l) throw ConfigError("window times have the wrong length");
      if (st) {
        positions.push_back(T(0));
        times.push_back(static_cast<T>(w.times[0] * inv));
      }
      for (std::size_t i = 0; i < l; ++i) {
        positions.push_back(static_cast<T>(i));
        times.push_back(static_cast<T>(w.times[i] * inv));
      }
    }
    return nn::time_position(tape, b(p_.time_position), std::span<const T>(positions), std::span<const T>(times),
                             config_.dim);
  }
  std::vector<std::int32_t> ids;
  ids.reserve(batch.size() * rows_per_window());
  for (std::size_t w = 0; w < batch.size(); ++w) {
    if (st) ids.push_back(0);
    for (std::size_t i = 0; i < l; ++i) ids.push_back(static_cast<std::int32_t>(i));
  }
  return nn::gather_rows(tape, b(p_.position), std::span<const std::int32_t>(ids));
}

template <typename T>
Var FataModel<T>::compose_inputs(Bound<T>& b, Var te_static, Var te_dynamic,
                                 std::span<const TokenizedWindow> batch) const {
  auto& tape = b.tape();
  const auto B = batch.size();
  const auto l = length();
  Var ie = te_dynamic;
  if (has_static_row()) {
    const std::array<Var, 2> parts{te_static, te_dynamic};
    Var stacked = nn::concat_rows(tape, std::span<const Var>(parts));
    std::vector<std::int32_t> order;
    order.reserve(B * (l + 1));
    for (std::size_t w = 0; w < B; ++w) {
      order.push_back(static_cast<std::int32_t>(w));
      for (std::size_t i = 0; i < l; ++i) order.push_back(static_cast<std::int32_t>(B + w * l + i));
    }
    ie = nn::gather_rows(tape, stacked, std::span<const std::int32_t>(order));
  }
  if (!config_.replicate_static()) {
    std::vector<std::int32_t> kinds;
    kinds.reserve(B * rows_per_window());
    for (std::size_t w = 0; w < B; ++w) {
      if (has_static_row()) kinds.push_back(0);
      for (std::size_t i = 0; i < l; ++i) kinds.push_back(1);
    }
    ie = nn::add(tape, ie, nn::gather_rows(tape, b(p_.field_type), std::span<const std::int32_t>(kinds)));
  }
  return nn::add(tape, ie, position_embedding(b, batch));
}

template <typename T>
Var FataModel<T>::fata_bert_forward(Bound<T>& b, Var ie, std::span<const TokenizedWindow> batch,
                                    const DropoutContext& drop) const {
  const auto R = rows_per_window();
  std::vector<std::uint8_t> valid;
  valid.reserve(batch.size() * R);
  for (const auto& w : batch) {
    if (has_static_row()) valid.push_back(1);
    for (std::size_t i = 0; i < length(); ++i) valid.push_back(i >= w.pad_count ? 1 : 0);
  }
  Var x = nn::dropout(b.tape(), ie, drop.rate, drop.rng);
  return encoder_.forward(b, x, R, valid, drop);
}

template <typename T>
Var FataModel<T>::encode(Bound<T>& b, std::span<const TokenizedWindow> batch, const DropoutContext& drop) const {
  if (batch.empty()) throw ConfigError("empty batch");
  Var te_s = has_static_row() ? static_field_encode(b, batch, drop) : Var{};
  Var te_d = dynamic_field_encode(b, batch, drop);
  Var ie = compose_inputs(b, te_s, te_d, batch);
  return fata_bert_forward(b, ie, batch, drop);
}

template <typename T>
typename FataModel<T>::MlmLogits FataModel<T>::mlm_logits(Bound<T>& b, Var se, std::size_t batch_size) const {
  auto& tape = b.tape();
  const auto R = rows_per_window();
  const auto l = length();
  const std::size_t off = has_static_row() ? 1 : 0;
  MlmLogits out;
  if (has_static_row()) {
    std::vector<std::int32_t> rows;
    for (std::size_t w = 0; w < batch_size; ++w) rows.push_back(static_cast<std::int32_t>(w * R));
    Var s = nn::gather_rows(tape, se, std::span<const std::int32_t>(rows));
    for (const auto& h : static_heads_) out.static_heads.push_back(nn::linear(tape, s, b(h.weight), b(h.bias)));
  }
  std::vector<std::int32_t> rows;
  rows.reserve(batch_size * l);
  for (std::size_t w = 0; w < batch_size; ++w) {
    for (std::size_t i = 0; i < l; ++i) rows.push_back(static_cast<std::int32_t>(w * R + off + i));
  }
  Var dyn = nn::gather_rows(tape, se, std::span<const std::int32_t>(rows));
  for (const auto& h : dynamic_heads_) out.dynamic_heads.push_back(nn::linear(tape, dyn, b(h.weight), b(h.bias)));
  return out;
}

template <typename T>
Var FataModel<T>::mlm_loss(Bound<T>& b, const MlmLogits& logits, std::span<const TokenizedWindow> batch,
                           std::optional<double> scale) const {
  auto& tape = b.tape();
  const auto B = batch.size();
  const double s = scale.value_or(1.0 / static_cast<double>(B));
  const auto l = length();
  std::vector<double> per_window(B, 0.0);
  for (std::size_t w = 0; w < B; ++w) {
    const auto m = batch[w].masked_count();
    per_window[w] = m == 0 ? 0.0 : s / static_cast<double>(m);
  }
  Var total{};
  auto accumulate = [&](Var term) { total = total.valid() ? nn::add(tape, total, term) : term; };

  for (std::size_t c = 0; c < static_heads_.size(); ++c) {
    std::vector<int> targets(B, 0);
    std::vector<T> weights(B, T(0));
    for (std::size_t w = 0; w < B; ++w) {
      if (batch[w].static_keep[c]) continue;
      targets[w] = head_class(true, c, batch[w].static_orig[c]);
      weights[w] = static_cast<T>(per_window[w]);
    }
    accumulate(nn::softmax_cross_entropy(tape, logits.static_heads.at(c), std::span<const int>(targets),
                                         std::span<const T>(weights)));
  }
  const auto n_d = n_dynamic();
  for (std::size_t c = 0; c < dynamic_heads_.size(); ++c) {
    std::vector<int> targets(B * l, 0);
    std::vector<T> weights(B * l, T(0));
    for (std::size_t w = 0; w < B; ++w) {
      for (std::size_t i = 0; i < l; ++i) {
        const auto cell = i * n_d + c;
        if (batch[w].dynamic_keep[cell]) continue;
        targets[w * l + i] = head_class(false, c, batch[w].dynamic_orig[cell]);
        weights[w * l + i] = static_cast<T>(per_window[w]);
      }
    }
    accumulate(nn::softmax_cross_entropy(tape, logits.dynamic_heads.at(c), std::span<const int>(targets),
                                         std::span<const T>(weights)));
  }
  return total;
}

template <typename T>
Var FataModel<T>::classify_logits(Bound<T>& b, Var se, std::size_t batch_size) const {
  auto& tape = b.tape();
  Var flat = nn::reshape(tape, se, batch_size, rows_per_window() * config_.dim);
  return nn::linear(tape, flat, b(p_.cls_w), b(p_.cls_b));
}

template <typename T>
Tensor<T> FataModel<T>::sequence_embeddings(std::span<const TokenizedWindow> batch) const {
  nn::Tape<T> tape(false);
  Bound<T> b(tape, params_);
  return tape.value(encode(b, batch, {}));
}

template <typename T>
std::vector<double> FataModel<T>::scores(std::span<const TokenizedWindow> windows, std::size_t chunk) const {
  std::vector<double> out;
  out.reserve(windows.size());
  chunk = std::max<std::size_t>(1, chunk);
  for (std::size_t begin = 0; begin < windows.size(); begin += chunk) {
    const auto part = windows.subspan(begin, std::min(chunk, windows.size() - begin));
    nn::Tape<T> tape(false);
    Bound<T> b(tape, params_);
    const auto& z = tape.value(classify_logits(b, encode(b, part, {}), part.size()));
    for (std::size_t i = 0; i < part.size(); ++i) out.push_back(1.0 / (1.0 + std::exp(-static_cast<double>(z[i]))));
  }
  return out;
}

template <typename T>
double FataModel<T>::mlm_loss_value(std::span<const TokenizedWindow> batch) const {
  nn::Tape<T> tape(false);
  Bound<T> b(tape, params_);
  Var se = encode(b, batch, {});
  auto logits = mlm_logits(b, se, batch.size());
  return static_cast<double>(tape.value(mlm_loss(b, logits, batch))[0]);
}

template class FataModel<float>;
template class FataModel<double>;

}  // namespace fata
