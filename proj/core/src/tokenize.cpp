#include "fata/tokenize.hpp"

#include "fata/error.hpp"
#include "fata/rng.hpp"

namespace fata {

std::string_view to_string(LabelPolicy policy) {
  return policy == LabelPolicy::Exclude ? "exclude" : "include_mask_last";
}

LabelPolicy label_policy_from_string(std::string_view text) {
  if (text == "exclude") return LabelPolicy::Exclude;
  if (text == "include_mask_last" || text == "include") return LabelPolicy::IncludeMaskLast;
  throw ConfigError("unknown label policy '" + std::string(text) + "'");
}

std::size_t TokenizedWindow::masked_count() const {
  std::size_t n = 0;
  for (auto k : static_keep) n += k == 0;
  for (auto k : dynamic_keep) n += k == 0;
  return n;
}

ColumnLayout ColumnLayout::from_vocab(const Vocabulary& vocab) {
  ColumnLayout layout;
  int gap = -1;
  for (std::size_t f = 0; f < vocab.fields().size(); ++f) {
    const auto& field = vocab.field(f);
    if (field.is_time_gap) {
      gap = static_cast<int>(f);
    } else if (field.kind == FieldKind::Static) {
      layout.static_fields.push_back(static_cast<int>(f));
    } else {
      if (field.is_label) layout.label_column = static_cast<int>(layout.dynamic_fields.size());
      layout.dynamic_fields.push_back(static_cast<int>(f));
    }
  }
  if (gap >= 0) {
    layout.gap_column = static_cast<int>(layout.dynamic_fields.size());
    layout.dynamic_fields.push_back(gap);
  }
  return layout;
}

void reset_masking(TokenizedWindow& w, const ColumnLayout& layout, LabelPolicy policy) {
  w.static_ids = w.static_orig;
  w.static_keep.assign(w.n_static, 1);
  w.static_candidate.assign(w.n_static, 1);
  w.dynamic_ids = w.dynamic_orig;
  w.dynamic_keep.assign(w.length * w.n_dynamic, 1);
  w.dynamic_candidate.assign(w.length * w.n_dynamic, 1);
  for (std::size_t i = 0; i < w.pad_count; ++i) {
    for (std::size_t j = 0; j < w.n_dynamic; ++j) w.dynamic_candidate[i * w.n_dynamic + j] = 0;
  }
  if (policy == LabelPolicy::IncludeMaskLast && layout.label_column >= 0 && w.length > 0) {
    const auto pos = (w.length - 1) * w.n_dynamic + static_cast<std::size_t>(layout.label_column);
    w.dynamic_ids[pos] = kMaskId;
    w.dynamic_candidate[pos] = 0;
  }
}

TokenizedWindow tokenize_window(const RecordWindow& window, const Schema& schema, const Vocabulary& vocab,
                                LabelPolicy policy) {
  const auto layout = ColumnLayout::from_vocab(vocab);
  const bool vocab_has_label = layout.label_column >= 0;
  if (policy == LabelPolicy::Exclude && vocab_has_label) {
    throw ConfigError("vocabulary contains the label field but the label policy excludes it");
  }
  if (policy == LabelPolicy::IncludeMaskLast && !vocab_has_label) {
    throw ConfigError("label policy includes the label but the vocabulary has no label field");
  }

  // Window dynamic columns follow the schema's dynamic-field order.
  std::vector<std::string> window_dynamic;
  for (const auto& f : schema.fields) {
    if (f.kind == FieldKind::Dynamic) window_dynamic.push_back(f.name);
  }
  if (window.static_values.size() != layout.static_fields.size()) {
    throw ConfigError("window static width does not match the vocabulary");
  }
  if (window.n_dynamic() != window_dynamic.size()) {
    throw ConfigError("window dynamic width does not match the schema");
  }

  TokenizedWindow tw;
  tw.seq_id = window.seq_id;
  tw.length = window.length;
  tw.n_static = layout.static_fields.size();
  tw.n_dynamic = layout.dynamic_fields.size();
  tw.static_fields = layout.static_fields;
  tw.dynamic_fields = layout.dynamic_fields;
  tw.times = window.times;
  tw.label = window.label;
  tw.pad_count = window.pad_count;

  for (std::size_t j = 0; j < tw.n_static; ++j) {
    const auto f = static_cast<std::size_t>(layout.static_fields[j]);
    if (schema.fields.empty() || !schema.find(vocab.field(f).name)) {
      throw ConfigError("vocabulary field '" + vocab.field(f).name + "' is missing from the schema");
    }
    tw.static_orig.push_back(vocab.encode_value(f, window.static_values[j]));
  }

  std::vector<int> source(tw.n_dynamic, -1);  // window column per layout column; -1 = time gap
  for (std::size_t c = 0; c < tw.n_dynamic; ++c) {
    const auto& field = vocab.field(static_cast<std::size_t>(layout.dynamic_fields[c]));
    if (field.is_time_gap) continue;
    for (std::size_t k = 0; k < window_dynamic.size(); ++k) {
      if (window_dynamic[k] == field.name) source[c] = static_cast<int>(k);
    }
    if (source[c] < 0) throw ConfigError("vocabulary field '" + field.name + "' is missing from the schema");
  }

  tw.dynamic_orig.assign(tw.length * tw.n_dynamic, kPadId);
  for (std::size_t i = window.pad_count; i < tw.length; ++i) {
    for (std::size_t c = 0; c < tw.n_dynamic; ++c) {
      const auto f = static_cast<std::size_t>(layout.dynamic_fields[c]);
      tw.dynamic_orig[i * tw.n_dynamic + c] =
          source[c] < 0 ? vocab.encode_number(f, window.gaps[i])
                        : vocab.encode_value(f, window.dynamic_value(i, static_cast<std::size_t>(source[c])));
    }
  }
  reset_masking(tw, layout, policy);
  return tw;
}

TokenizedWindow make_view(const TokenizedWindow& w, const ColumnLayout& layout, const ViewOptions& options) {
  std::vector<std::size_t> keep_cols;
  for (std::size_t c = 0; c < w.n_dynamic; ++c) {
    if (static_cast<int>(c) == layout.gap_column && !options.include_time_gap) continue;
    keep_cols.push_back(c);
  }
  TokenizedWindow v;
  v.seq_id = w.seq_id;
  v.length = w.length;
  v.times = w.times;
  v.label = w.label;
  v.pad_count = w.pad_count;

  const std::size_t n_rep = options.replicate_static ? w.n_static : 0;
  v.n_static = options.replicate_static ? 0 : w.n_static;
  v.n_dynamic = n_rep + keep_cols.size();
  if (!options.replicate_static) {
    v.static_fields = w.static_fields;
    v.static_ids = w.static_ids;
    v.static_orig = w.static_orig;
    v.static_keep = w.static_keep;
    v.static_candidate = w.static_candidate;
  }
  for (std::size_t j = 0; j < n_rep; ++j) v.dynamic_fields.push_back(w.static_fields[j]);
  for (auto c : keep_cols) v.dynamic_fields.push_back(w.dynamic_fields[c]);

  const auto cells = v.length * v.n_dynamic;
  v.dynamic_ids.resize(cells);
  v.dynamic_orig.resize(cells);
  v.dynamic_keep.resize(cells);
  v.dynamic_candidate.resize(cells);
  for (std::size_t i = 0; i < v.length; ++i) {
    const bool padded = i < v.pad_count;
    for (std::size_t j = 0; j < n_rep; ++j) {
      const auto dst = i * v.n_dynamic + j;
      v.dynamic_ids[dst] = padded ? kPadId : w.static_ids[j];
      v.dynamic_orig[dst] = padded ? kPadId : w.static_orig[j];
      v.dynamic_keep[dst] = padded ? 1 : w.static_keep[j];
      v.dynamic_candidate[dst] = padded ? 0 : w.static_candidate[j];
    }
    for (std::size_t k = 0; k < keep_cols.size(); ++k) {
      const auto src = i * w.n_dynamic + keep_cols[k];
      const auto dst = i * v.n_dynamic + n_rep + k;
      v.dynamic_ids[dst] = w.dynamic_ids[src];
      v.dynamic_orig[dst] = w.dynamic_orig[src];
      v.dynamic_keep[dst] = w.dynamic_keep[src];
      v.dynamic_candidate[dst] = w.dynamic_candidate[src];
    }
  }
  return v;
}

namespace {

void mask_pool(std::vector<TokenId>& ids, const std::vector<TokenId>& orig, std::vector<std::uint8_t>& keep,
               const std::vector<std::uint8_t>& candidate, const std::vector<int>& fields, std::size_t width,
               const Vocabulary& vocab, const MaskOptions& options, Rng& rng) {
  for (std::size_t pos = 0; pos < ids.size(); ++pos) {
    if (!candidate[pos]) continue;
    if (uniform01(rng) >= options.rate) continue;
    keep[pos] = 0;
    const double r = uniform01(rng);
    if (r < options.p_mask) {
      ids[pos] = kMaskId;
    } else if (r < options.p_mask + options.p_random) {
      const auto f = static_cast<std::size_t>(fields[pos % width]);
      const auto n = static_cast<std::uint64_t>(vocab.local_size(f));
      ids[pos] = n == 0 ? orig[pos] : vocab.field(f).offset + static_cast<TokenId>(uniform_index(rng, n));
    } else {
      ids[pos] = orig[pos];
    }
  }
}

}  // namespace

TokenizedWindow random_mask(const TokenizedWindow& window, const Vocabulary& vocab, const MaskOptions& options,
                            std::uint64_t seed) {
  if (!(options.rate >= 0.0 && options.rate <= 1.0)) throw ConfigError("mask rate must be in [0, 1]");
  TokenizedWindow out = window;
  Rng static_rng(derive_seed(seed, 0));
  Rng dynamic_rng(derive_seed(seed, 1));
  if (out.n_static > 0) {
    mask_pool(out.static_ids, out.static_orig, out.static_keep, out.static_candidate, out.static_fields,
              out.n_static, vocab, options, static_rng);
  }
  if (out.n_dynamic > 0) {
    mask_pool(out.dynamic_ids, out.dynamic_orig, out.dynamic_keep, out.dynamic_candidate, out.dynamic_fields,
              out.n_dynamic, vocab, options, dynamic_rng);
  }
  return out;
}

}  // namespace fata
