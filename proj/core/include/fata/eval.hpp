#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fata/model.hpp"
#include "fata/nn/tensor.hpp"
#include "fata/vocab.hpp"

namespace fata {

struct RocResult {
  double auc = 0.5;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t tied_pairs = 0;  // positive/negative pairs with equal scores
};

/// Rank-based (Mann-Whitney) AUC with average ranks, so ties count 1/2.
/// Labels are 0/1. Throws ConfigError unless both classes are present.
RocResult roc_auc(std::span<const double> scores, std::span<const int> labels);

struct PcaResult {
  nn::Tensor<double> components;  // k x dim, orthonormal rows
  std::vector<double> explained_variance;
  std::vector<double> mean;
  nn::Tensor<double> coordinates;  // N x k

  [[nodiscard]] double total_variance() const;
};

/// Principal components of the rows of `data` (N x dim) by SVD of the centered
/// matrix. Variances use the N - 1 denominator. Each component's entry of
/// largest magnitude is made positive.
PcaResult pca_fit_project(const nn::Tensor<double>& data, std::size_t k);

enum class EmbeddingKind { ConcatWindow, PerRecord, StaticRow };

std::string_view to_string(EmbeddingKind kind);
EmbeddingKind embedding_kind_from_string(std::string_view text);

struct EmbeddingTable {
  std::vector<std::string> ids;
  std::vector<std::string> tags;
  nn::Tensor<double> rows;
};

struct ExportOptions {
  EmbeddingKind kind = EmbeddingKind::ConcatWindow;
  /// Field whose decoded value tags each row; the window label when empty.
  std::string tag_field;
  std::size_t chunk = 64;
};

/// SE rows of each window arranged per `options.kind`. Windows must be in
/// the model's view.
EmbeddingTable export_embeddings(const FataModel<float>& model, std::span<const TokenizedWindow> windows,
                                 const Vocabulary& vocab, const ExportOptions& options);

/// CSV with header id,tag,c0..c{k-1}.
void write_embedding_csv(const std::filesystem::path& path, std::span<const std::string> ids,
                         std::span<const std::string> tags, const nn::Tensor<double>& values);

/// Scatter plot of the first two columns of `values`, colored by tag.
std::string scatter_svg(const nn::Tensor<double>& values, std::span<const std::string> tags,
                        std::string_view title = {});

}  // namespace fata
