#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "fata/error.hpp"
#include "fata/eval.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace fata;
using namespace fata::testing;

namespace {

nn::Tensor<double> random_matrix(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  nn::Tensor<double> x(n, dim);
  // Distinct column scales keep the spectrum well separated.
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < dim; ++c) x(r, c) = standard_normal(rng) * (1.0 + static_cast<double>(c)) + 0.3 * c;
  return x;
}

double dot(const nn::Tensor<double>& m, std::size_t a, std::size_t b) {
  double s = 0.0;
  for (std::size_t j = 0; j < m.cols(); ++j) s += m(a, j) * m(b, j);
  return s;
}

}  // namespace

TEST_CASE("roc examples and errors") {
  CHECK(roc_auc(std::vector<double>{.9, .1}, std::vector<int>{1, 0}).auc == 1.0);
  CHECK(roc_auc(std::vector<double>{.1, .9}, std::vector<int>{1, 0}).auc == 0.0);
  const auto tied = roc_auc(std::vector<double>{.4, .4, .4, .4}, std::vector<int>{1, 0, 1, 0});
  CHECK(tied.auc == 0.5);
  CHECK(tied.tied_pairs == 4);
  CHECK(tied.positives == 2);
  CHECK(tied.negatives == 2);

  CHECK_THROWS_AS(roc_auc(std::vector<double>{.1, .2}, std::vector<int>{1, 1}), ConfigError);
  CHECK_THROWS_AS(roc_auc(std::vector<double>{.1}, std::vector<int>{1, 0}), ConfigError);
  CHECK_THROWS_AS(roc_auc(std::vector<double>{.1, .2}, std::vector<int>{1, 2}), ConfigError);
  CHECK_THROWS_AS(roc_auc(std::vector<double>{.1, NAN}, std::vector<int>{1, 0}), NumericError);
}

TEST_CASE("roc matches the pairwise oracle, with and without ties") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + uniform_index(rng, 300);
    std::vector<double> s(n);
    std::vector<int> y(n);
    const bool coarse = trial % 2 == 0;
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = i == 0 ? 1 : i == 1 ? 0 : static_cast<int>(uniform_index(rng, 2));
      s[i] = coarse ? static_cast<double>(uniform_index(rng, 5)) : standard_normal(rng) + 0.7 * y[i];
    }
    const double auc = roc_auc(s, y).auc;
    CHECK(std::abs(auc - pairwise_auc(s, y)) < 1e-12);

    // Strictly monotone transforms leave the ranking and the AUC unchanged.
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = std::exp(0.5 * s[i]) * 3.0 - 1.0;
    CHECK(roc_auc(t, y).auc == doctest::Approx(auc).epsilon(1e-12));
  }
}

TEST_CASE("pca on collinear data") {
  nn::Tensor<double> x(20, 3);
  for (std::size_t r = 0; r < 20; ++r) {
    const double t = static_cast<double>(r) - 7.0;
    x(r, 0) = 2.0 * t + 1.0;
    x(r, 1) = -t;
    x(r, 2) = 0.5 * t + 4.0;
  }
  const auto p = pca_fit_project(x, 3);
  CHECK(p.explained_variance[0] / p.total_variance() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(p.explained_variance[1]) < 1e-20 + 1e-12 * p.explained_variance[0]);
  const double norm = std::sqrt(4.0 + 1.0 + 0.25);
  CHECK(p.components(0, 0) == doctest::Approx(2.0 / norm));
  CHECK(p.components(0, 1) == doctest::Approx(-1.0 / norm));
}

TEST_CASE("pca matches the covariance eigendecomposition oracle") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto x = random_matrix(50, 8, seed);
    const auto p = pca_fit_project(x, 8);
    const auto oracle = jacobi_eigen(covariance(x.values(), 50, 8), 8);
    for (std::size_t k = 0; k < 8; ++k) {
      CHECK(p.explained_variance[k] == doctest::Approx(oracle.values[k]).epsilon(1e-9));
      double same = 0.0, flipped = 0.0;
      for (std::size_t j = 0; j < 8; ++j) {
        same = std::max(same, std::abs(p.components(k, j) - oracle.vectors[k][j]));
        flipped = std::max(flipped, std::abs(p.components(k, j) + oracle.vectors[k][j]));
      }
      CHECK(std::min(same, flipped) < 1e-6);
      // Largest-magnitude entry is positive.
      std::size_t arg = 0;
      for (std::size_t j = 1; j < 8; ++j)
        if (std::abs(p.components(k, j)) > std::abs(p.components(k, arg))) arg = j;
      CHECK(p.components(k, arg) > 0.0);
    }
    for (std::size_t a = 0; a < 8; ++a)
      for (std::size_t b = 0; b < 8; ++b) CHECK(std::abs(dot(p.components, a, b) - (a == b ? 1.0 : 0.0)) < 1e-8);
    for (std::size_t k = 1; k < 8; ++k) CHECK(p.explained_variance[k] <= p.explained_variance[k - 1]);

    // Completeness: k = dim keeps the whole variance.
    double trace = 0.0;
    const auto cov = covariance(x.values(), 50, 8);
    for (std::size_t i = 0; i < 8; ++i) trace += cov[i * 8 + i];
    CHECK(std::abs(p.total_variance() - trace) < 1e-9 * std::max(1.0, trace));

    // Coordinates are centered and equal (x - mean) C^T.
    for (std::size_t k = 0; k < 8; ++k) {
      double mean = 0.0;
      for (std::size_t r = 0; r < 50; ++r) mean += p.coordinates(r, k) / 50.0;
      CHECK(std::abs(mean) < 1e-9);
    }
    double expect = 0.0;
    for (std::size_t j = 0; j < 8; ++j) expect += (x(7, j) - p.mean[j]) * p.components(2, j);
    CHECK(p.coordinates(7, 2) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("pca degenerate input and errors") {
  nn::Tensor<double> same(5, 3, 2.5);
  const auto p = pca_fit_project(same, 2);
  CHECK(p.total_variance() == 0.0);
  CHECK(std::abs(dot(p.components, 0, 0) - 1.0) < 1e-12);
  CHECK(std::abs(dot(p.components, 0, 1)) < 1e-12);

  CHECK_THROWS_AS(pca_fit_project(nn::Tensor<double>(1, 3), 1), ConfigError);
  CHECK_THROWS_AS(pca_fit_project(random_matrix(4, 3, 1), 4), ConfigError);
  CHECK_THROWS_AS(pca_fit_project(random_matrix(4, 3, 1), 0), ConfigError);
  auto bad = random_matrix(4, 3, 1);
  bad(1, 1) = NAN;
  CHECK_THROWS_AS(pca_fit_project(bad, 2), NumericError);
}

TEST_CASE("embedding export shapes and tags") {
  const auto data = tiny_prepared(12, 12, 2, 3, 5, 10, 8, true);
  const auto cfg = small_config(ModelMode::Fata, 10, 8);
  const auto model = FataModel<float>::create(cfg, data.vocab, 3);
  auto ws = views(model, data);
  ws.resize(25);
  const auto d = cfg.dim;

  ExportOptions o;
  o.chunk = 7;
  auto concat = export_embeddings(model, ws, data.vocab, o);
  CHECK(concat.rows.rows() == 25);
  CHECK(concat.rows.cols() == 11 * d);
  CHECK(concat.ids.size() == 25);
  CHECK(concat.tags[0] == std::to_string(*ws[0].label));

  o.kind = EmbeddingKind::PerRecord;
  o.tag_field = "d1";
  const auto per = export_embeddings(model, ws, data.vocab, o);
  CHECK(per.rows.rows() == 250);
  CHECK(per.rows.cols() == d);
  const auto d1 = static_cast<int>(data.vocab.require_field("d1"));
  std::size_t col = 0;
  while (ws[0].dynamic_fields[col] != d1) ++col;
  CHECK(per.tags[4] == data.vocab.decode(ws[0].dynamic_orig[4 * ws[0].n_dynamic + col]).token);
  // Per-record rows are the slices of the concatenated row past the static row.
  for (std::size_t k = 0; k < d; ++k) CHECK(per.rows(13, k) == concat.rows(1, (1 + 3) * d + k));

  o.kind = EmbeddingKind::StaticRow;
  o.tag_field = "s0";
  const auto st = export_embeddings(model, ws, data.vocab, o);
  CHECK(st.rows.rows() == 25);
  CHECK(st.tags[0] == data.vocab.decode(ws[0].static_orig[0]).token);
  for (std::size_t k = 0; k < d; ++k) CHECK(st.rows(2, k) == concat.rows(2, k));

  // The static row attends to the records: changing a dynamic token moves it.
  auto changed = ws[0];
  const auto pos = 9 * changed.n_dynamic;
  const auto field = static_cast<std::size_t>(changed.dynamic_fields[0]);
  changed.dynamic_ids[pos] = changed.dynamic_orig[pos] = data.vocab.field(field).offset +
      (changed.dynamic_orig[pos] == data.vocab.field(field).offset ? 1 : 0);
  const std::vector<TokenizedWindow> pair{ws[0], changed};
  const auto both = export_embeddings(model, pair, data.vocab, o);
  double diff = 0.0;
  for (std::size_t k = 0; k < d; ++k) diff += std::abs(both.rows(0, k) - both.rows(1, k));
  CHECK(diff > 0.0);

  o.tag_field = "nope";
  CHECK_THROWS_AS(export_embeddings(model, ws, data.vocab, o), ConfigError);
  CHECK(embedding_kind_from_string("per_record") == EmbeddingKind::PerRecord);
  CHECK_THROWS_AS(embedding_kind_from_string("sideways"), ConfigError);

  const auto rep = FataModel<float>::create(small_config(ModelMode::ReplicatedStatic, 10, 8), data.vocab, 3);
  const auto rws = views(rep, data);
  ExportOptions so;
  so.kind = EmbeddingKind::StaticRow;
  CHECK_THROWS_AS(export_embeddings(rep, rws, data.vocab, so), ConfigError);
  so.kind = EmbeddingKind::ConcatWindow;
  CHECK(export_embeddings(rep, rws, data.vocab, so).rows.cols() == 10 * 8);
}

TEST_CASE("embedding csv and svg output") {
  nn::Tensor<double> v(3, 2, std::vector<double>{0.5, 1.0, -2.0, 3.25, 1e-3, 0.0});
  const std::vector<std::string> ids{"a", "b", "c"};
  const std::vector<std::string> tags{"0", "1", "<x>"};
  const auto dir = temp_dir("export");
  write_embedding_csv(dir / "e.csv", ids, tags, v);
  const auto t = read_csv(dir / "e.csv");
  CHECK(t.header == std::vector<std::string>{"id", "tag", "c0", "c1"});
  REQUIRE(t.rows.size() == 3);
  CHECK(t.rows[1][0] == "b");
  CHECK(std::stod(t.rows[1][3]) == 3.25);

  const auto svg = scatter_svg(v, tags, "PCA & co");
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  std::size_t circles = 0;
  for (auto p = svg.find("<circle"); p != std::string::npos; p = svg.find("<circle", p + 1)) ++circles;
  CHECK(circles == 3);
  CHECK(svg.find("&lt;x&gt;") != std::string::npos);
  CHECK(svg.find("PCA &amp; co") != std::string::npos);
  CHECK(svg.find("<x>") == std::string::npos);
}
