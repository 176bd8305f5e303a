#include "fata/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "fata/csv.hpp"
#include "fata/error.hpp"

namespace fata {

RocResult roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ConfigError("scores and labels differ in length");
  RocResult r;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ConfigError("labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw NumericError("non-finite score");
    (labels[i] ? r.positives : r.negatives)++;
  }
  if (r.positives == 0 || r.negatives == 0) throw ConfigError("AUC needs both classes");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of (average) ranks of the positives; ranks are 1-based.
  double pos_rank_sum = 0.0;
  for (std::size_t begin = 0; begin < order.size();) {
    std::size_t end = begin + 1;
    while (end < order.size() && scores[order[end]] == scores[order[begin]]) ++end;
    const double avg_rank = 0.5 * static_cast<double>(begin + 1 + end);
    std::size_t pos = 0;
    for (std::size_t k = begin; k < end; ++k) pos += static_cast<std::size_t>(labels[order[k]]);
    pos_rank_sum += avg_rank * static_cast<double>(pos);
    r.tied_pairs += pos * (end - begin - pos);
    begin = end;
  }
  const double P = static_cast<double>(r.positives);
  const double N = static_cast<double>(r.negatives);
  r.auc = (pos_rank_sum - P * (P + 1.0) / 2.0) / (P * N);
  return r;
}

double PcaResult::total_variance() const {
  return std::accumulate(explained_variance.begin(), explained_variance.end(), 0.0);
}

PcaResult pca_fit_project(const nn::Tensor<double>& data, std::size_t k) {
  const auto n = data.rows();
  const auto dim = data.cols();
  if (n < 2) throw ConfigError("PCA needs at least two rows");
  if (k == 0 || k > std::min(n, dim)) {
    throw ConfigError("PCA component count " + std::to_string(k) + " exceeds min(N, dim) = " +
                      std::to_string(std::min(n, dim)));
  }
  if (!data.all_finite()) throw NumericError("PCA input contains non-finite values");

  using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Matrix X = Eigen::Map<const Matrix>(data.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  const Eigen::RowVectorXd mean = X.colwise().mean();
  X.rowwise() -= mean;

  Eigen::BDCSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  const Eigen::MatrixXd& V = svd.matrixV();

  PcaResult out;
  out.mean.assign(mean.data(), mean.data() + dim);
  out.components = nn::Tensor<double>(k, dim);
  out.explained_variance.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    const double s = c < static_cast<std::size_t>(sv.size()) ? sv(static_cast<Eigen::Index>(c)) : 0.0;
    out.explained_variance[c] = s * s / static_cast<double>(n - 1);
    Eigen::VectorXd v = V.col(static_cast<Eigen::Index>(c));
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    for (std::size_t j = 0; j < dim; ++j) out.components(c, j) = v(static_cast<Eigen::Index>(j));
  }
  out.coordinates = nn::Tensor<double>(n, k);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < k; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        acc += X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) * out.components(c, j);
      }
      out.coordinates(r, c) = acc;
    }
  }
  return out;
}

std::string_view to_string(EmbeddingKind kind) {
  switch (kind) {
    case EmbeddingKind::ConcatWindow:
      return "concat_window";
    case EmbeddingKind::PerRecord:
      return "per_record";
    case EmbeddingKind::StaticRow:
      return "static_row";
  }
  return "concat_window";
}

EmbeddingKind embedding_kind_from_string(std::string_view text) {
  for (auto k : {EmbeddingKind::ConcatWindow, EmbeddingKind::PerRecord, EmbeddingKind::StaticRow}) {
    if (to_string(k) == text) return k;
  }
  throw ConfigError("unknown embedding kind '" + std::string(text) + "'");
}

namespace {

// Decoded token of `column`'s field for record `row` (or the static value).
std::string tag_value(const TokenizedWindow& w, const Vocabulary& vocab, int field, std::size_t row) {
  for (std::size_t j = 0; j < w.static_fields.size(); ++j) {
    if (w.static_fields[j] == field) return vocab.decode(w.static_orig[j]).token;
  }
  for (std::size_t c = 0; c < w.dynamic_fields.size(); ++c) {
    if (w.dynamic_fields[c] == field) return vocab.decode(w.dynamic_orig[row * w.n_dynamic + c]).token;
  }
  throw ConfigError("tag field '" + vocab.field(static_cast<std::size_t>(field)).name + "' is not in the window");
}

std::string xml_escape(std::string_view text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

EmbeddingTable export_embeddings(const FataModel<float>& model, std::span<const TokenizedWindow> windows,
                                 const Vocabulary& vocab, const ExportOptions& options) {
  if (options.kind == EmbeddingKind::StaticRow && !model.has_static_row()) {
    throw ConfigError("static_row embeddings need a model with a separate static row");
  }
  const int tag_field = options.tag_field.empty() ? -1 : static_cast<int>(vocab.require_field(options.tag_field));
  const auto d = model.config().dim;
  const auto l = model.length();
  const auto R = model.rows_per_window();
  const std::size_t off = model.has_static_row() ? 1 : 0;

  std::size_t width = d;
  std::size_t per_window = 1;
  if (options.kind == EmbeddingKind::ConcatWindow) width = R * d;
  if (options.kind == EmbeddingKind::PerRecord) per_window = l;

  EmbeddingTable table;
  table.rows = nn::Tensor<double>(windows.size() * per_window, width);
  const auto chunk = std::max<std::size_t>(1, options.chunk);
  for (std::size_t begin = 0; begin < windows.size(); begin += chunk) {
    const auto part = windows.subspan(begin, std::min(chunk, windows.size() - begin));
    const auto se = model.sequence_embeddings(part);
    for (std::size_t w = 0; w < part.size(); ++w) {
      const auto& win = part[w];
      const auto index = begin + w;
      const std::string base = win.seq_id + ":" + std::to_string(index);
      const std::string label_tag = win.label ? std::to_string(*win.label) : "";
      for (std::size_t r = 0; r < per_window; ++r) {
        const auto out_row = index * per_window + r;
        std::size_t tag_row = l - 1;
        switch (options.kind) {
          case EmbeddingKind::ConcatWindow:
            for (std::size_t k = 0; k < R * d; ++k) table.rows(out_row, k) = se[w * R * d + k];
            table.ids.push_back(base);
            break;
          case EmbeddingKind::PerRecord:
            for (std::size_t k = 0; k < d; ++k) table.rows(out_row, k) = se(w * R + off + r, k);
            table.ids.push_back(base + ":" + std::to_string(r));
            tag_row = r;
            break;
          case EmbeddingKind::StaticRow:
            for (std::size_t k = 0; k < d; ++k) table.rows(out_row, k) = se(w * R, k);
            table.ids.push_back(base);
            break;
        }
        table.tags.push_back(tag_field < 0 ? label_tag : tag_value(win, vocab, tag_field, tag_row));
      }
    }
  }
  return table;
}

void write_embedding_csv(const std::filesystem::path& path, std::span<const std::string> ids,
                         std::span<const std::string> tags, const nn::Tensor<double>& values) {
  CsvTable t;
  t.header = {"id", "tag"};
  for (std::size_t c = 0; c < values.cols(); ++c) t.header.push_back("c" + std::to_string(c));
  for (std::size_t r = 0; r < values.rows(); ++r) {
    std::vector<std::string> row{ids[r], tags[r]};
    for (std::size_t c = 0; c < values.cols(); ++c) {
      std::ostringstream os;
      os << std::setprecision(9) << values(r, c);
      row.push_back(os.str());
    }
    t.rows.push_back(std::move(row));
  }
  write_csv(path, t);
}

std::string scatter_svg(const nn::Tensor<double>& values, std::span<const std::string> tags,
                        std::string_view title) {
  constexpr double kSize = 480.0, kMargin = 40.0;
  static constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                             "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  std::map<std::string, std::size_t> colors;
  for (const auto& t : tags) colors.emplace(t, 0);
  std::size_t next = 0;
  for (auto& [tag, c] : colors) c = next++ % std::size(kPalette);

  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (values.rows() > 0 && values.cols() >= 1) {
    x0 = x1 = values(0, 0);
    y0 = y1 = values.cols() > 1 ? values(0, 1) : 0.0;
    for (std::size_t r = 0; r < values.rows(); ++r) {
      x0 = std::min(x0, values(r, 0));
      x1 = std::max(x1, values(r, 0));
      const double y = values.cols() > 1 ? values(r, 1) : 0.0;
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  const double sx = x1 > x0 ? (kSize - 2 * kMargin) / (x1 - x0) : 1.0;
  const double sy = y1 > y0 ? (kSize - 2 * kMargin) / (y1 - y0) : 1.0;

  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << R"(<svg xmlns="http://www.w3.org/2000/svg" width=")" << kSize << R"(" height=")" << kSize << R"(">)" << '\n';
  os << R"(<rect width="100%" height="100%" fill="white"/>)" << '\n';
  if (!title.empty()) os << R"(<text x="10" y="20" font-size="14">)" << xml_escape(title) << "</text>\n";
  for (std::size_t r = 0; r < values.rows(); ++r) {
    const double x = kMargin + (values(r, 0) - x0) * sx;
    const double yv = values.cols() > 1 ? values(r, 1) : 0.0;
    const double y = kSize - kMargin - (yv - y0) * sy;
    os << R"(<circle cx=")" << x << R"(" cy=")" << y << R"(" r="2.5" fill=")" << kPalette[colors[tags[r]]]
       << R"(" fill-opacity="0.7"/>)" << '\n';
  }
  double ly = 40;
  for (const auto& [tag, c] : colors) {
    os << R"(<rect x=")" << kSize - 110 << R"(" y=")" << ly - 9 << R"(" width="10" height="10" fill=")"
       << kPalette[c] << R"("/>)";
    os << R"(<text x=")" << kSize - 95 << R"(" y=")" << ly << R"(" font-size="11">)"
       << (tag.empty() ? "(none)" : xml_escape(tag)) << "</text>\n";
    ly += 15;
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace fata
