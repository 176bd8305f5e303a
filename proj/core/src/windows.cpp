#include "fata/windows.hpp"

#include <algorithm>
#include <unordered_map>

#include "fata/error.hpp"

namespace fata {

RecordSet group_sequences(CsvTable table) {
  RecordSet out;
  const auto id_col = table.require_column(kSeqIdColumn);
  const auto time_col = table.require_column(kTimeColumn);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto t = parse_real(row[time_col]);
    if (!t || *t < 0.0) {
      throw ConfigError("row " + std::to_string(r + 1) + ": time must be a non-negative real, got '" +
                        row[time_col] + "'");
    }
    auto [it, inserted] = index.emplace(row[id_col], out.sequences.size());
    if (inserted) out.sequences.push_back(Sequence{row[id_col], {}, {}});
    auto& seq = out.sequences[it->second];
    if (!seq.times.empty() && *t < seq.times.back()) {
      throw ConfigError("sequence '" + seq.id + "' has unsorted timestamps at row " + std::to_string(r + 1));
    }
    seq.rows.push_back(r);
    seq.times.push_back(*t);
  }
  out.table = std::move(table);
  return out;
}

std::vector<std::size_t> window_offsets(std::size_t n, std::size_t length, std::size_t stride) {
  std::vector<std::size_t> offsets;
  if (length == 0 || stride == 0 || n < length) return offsets;
  std::size_t start = 0;
  for (; start + length <= n; start += stride) offsets.push_back(start);
  if (offsets.back() + length < n) offsets.push_back(n - length);
  return offsets;
}

namespace {

struct ColumnMap {
  std::vector<std::size_t> static_cols;
  std::vector<std::string> static_names;
  std::vector<std::size_t> dynamic_cols;
  int label_col = -1;
};

ColumnMap map_columns(const CsvTable& table, const Schema& schema) {
  ColumnMap m;
  for (const auto& f : schema.fields) {
    const auto c = table.require_column(f.name);
    if (f.kind == FieldKind::Static) {
      m.static_cols.push_back(c);
      m.static_names.push_back(f.name);
    } else {
      m.dynamic_cols.push_back(c);
    }
  }
  if (schema.label_field) m.label_col = static_cast<int>(table.require_column(*schema.label_field));
  return m;
}

}  // namespace

std::vector<RecordWindow> make_windows(const RecordSet& records, const Schema& schema,
                                       const WindowOptions& options) {
  if (options.length == 0) throw ConfigError("window length must be positive");
  if (options.stride == 0) throw ConfigError("window stride must be positive");
  const auto cols = map_columns(records.table, schema);
  const auto l = options.length;
  const auto n_dyn = cols.dynamic_cols.size();
  std::vector<RecordWindow> out;

  for (const auto& seq : records.sequences) {
    const auto n = seq.rows.size();
    std::vector<std::size_t> offsets = window_offsets(n, l, options.stride);
    std::size_t pad = 0;
    if (offsets.empty()) {
      if (!options.pad || n == 0) continue;
      offsets.push_back(0);
      pad = l - n;
    }
    for (const auto start : offsets) {
      RecordWindow w;
      w.seq_id = seq.id;
      w.length = l;
      w.start = start;
      w.pad_count = pad;
      w.dynamic_values.assign(l * n_dyn, std::string());
      w.times.assign(l, 0.0);
      w.gaps.assign(l, 0.0);
      const std::size_t real = l - pad;
      const double t0 = seq.times[start];
      const auto& first_row = records.table.rows[seq.rows[start]];
      for (const auto c : cols.static_cols) w.static_values.push_back(first_row[c]);
      for (std::size_t k = 0; k < real; ++k) {
        const auto pos = pad + k;
        const auto& row = records.table.rows[seq.rows[start + k]];
        for (std::size_t j = 0; j < cols.static_cols.size(); ++j) {
          if (row[cols.static_cols[j]] != w.static_values[j] && options.static_policy == StaticPolicy::Strict) {
            throw ConfigError("static field '" + cols.static_names[j] + "' varies inside sequence '" + seq.id +
                              "' (window starting at record " + std::to_string(start) + ")");
          }
        }
        for (std::size_t j = 0; j < n_dyn; ++j) w.dynamic_values[pos * n_dyn + j] = row[cols.dynamic_cols[j]];
        w.times[pos] = seq.times[start + k] - t0;
        if (k > 0) w.gaps[pos] = seq.times[start + k] - seq.times[start + k - 1];
      }
      if (cols.label_col >= 0) {
        const auto& last = records.table.rows[seq.rows[start + real - 1]];
        if (const auto v = parse_real(last[static_cast<std::size_t>(cols.label_col)])) {
          w.label = *v > options.label_threshold ? 1 : 0;
        }
      }
      out.push_back(std::move(w));
    }
  }
  return out;
}

double fit_time_scale(std::span<const double> gaps) {
  std::vector<double> positive;
  for (double g : gaps) {
    if (g > 0.0) positive.push_back(g);
  }
  if (positive.empty()) return 1.0;
  std::sort(positive.begin(), positive.end());
  const auto n = positive.size();
  return n % 2 == 1 ? positive[n / 2] : 0.5 * (positive[n / 2 - 1] + positive[n / 2]);
}

std::vector<double> sequence_gaps(const RecordSet& records) {
  std::vector<double> gaps;
  for (const auto& seq : records.sequences) {
    for (std::size_t i = 1; i < seq.times.size(); ++i) gaps.push_back(seq.times[i] - seq.times[i - 1]);
  }
  return gaps;
}

std::vector<double> rebase_and_scale_times(const RecordWindow& window, double time_scale) {
  if (!(time_scale > 0.0)) throw ConfigError("time_scale must be positive");
  std::vector<double> out(window.times.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (i > 0 && window.times[i] < window.times[i - 1] && i > window.pad_count) {
      throw ConfigError("window times must be non-decreasing");
    }
    out[i] = window.times[i] / time_scale;
  }
  return out;
}

}  // namespace fata
