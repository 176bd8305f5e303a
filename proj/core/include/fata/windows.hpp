#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fata/csv.hpp"
#include "fata/schema.hpp"

namespace fata {

/// One sequence: the CSV rows sharing a seq_id, in timestamp order.
struct Sequence {
  std::string id;
  std::vector<std::size_t> rows;  // indices into RecordSet::table.rows
  std::vector<double> times;
};

struct RecordSet {
  CsvTable table;
  std::vector<Sequence> sequences;  // first-appearance order of seq_id
};

/// Groups rows by `seq_id`. Throws ConfigError on a missing column, a negative
/// or unparseable time, or timestamps that decrease within a sequence.
RecordSet group_sequences(CsvTable table);

enum class StaticPolicy {
  Strict,  // a static field varying inside a window is an error
  First,   // take the first record's value
};

struct WindowOptions {
  std::size_t length = 10;
  std::size_t stride = 5;
  bool pad = false;
  StaticPolicy static_policy = StaticPolicy::Strict;
  /// Window label = (last record's label value > threshold).
  double label_threshold = 0.5;
};

/// A length-l window. Dynamic values follow the schema's dynamic-field order
/// (label included); the first `pad_count` rows are padding with empty values
/// and time 0.
struct RecordWindow {
  std::string seq_id;
  std::size_t length = 0;
  std::size_t start = 0;  // offset of the first real record within its sequence
  std::vector<std::string> static_values;
  std::vector<std::string> dynamic_values;  // length x n_dynamic, row-major
  std::vector<double> times;                // rebased: first real record at 0
  std::vector<double> gaps;                 // gap to the previous record in the window; 0 for the first
  std::optional<int> label;
  std::size_t pad_count = 0;

  [[nodiscard]] std::size_t n_dynamic() const {
    return length == 0 ? 0 : dynamic_values.size() / length;
  }
  [[nodiscard]] const std::string& dynamic_value(std::size_t row, std::size_t col) const {
    return dynamic_values[row * n_dynamic() + col];
  }
};

/// Window start offsets for a sequence of n records: multiples of `stride`
/// while the window fits, then one final window clamped to end at the last
/// record. Empty when n < l.
std::vector<std::size_t> window_offsets(std::size_t n, std::size_t length, std::size_t stride);

std::vector<RecordWindow> make_windows(const RecordSet& records, const Schema& schema,
                                       const WindowOptions& options);

/// Median of the strictly positive gaps; 1 when there are none.
double fit_time_scale(std::span<const double> gaps);

/// All inter-record gaps (t_i - t_{i-1}) over every sequence.
std::vector<double> sequence_gaps(const RecordSet& records);

/// Window times divided by `time_scale`.
std::vector<double> rebase_and_scale_times(const RecordWindow& window, double time_scale);

}  // namespace fata
