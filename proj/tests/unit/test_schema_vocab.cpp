#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

#include "fata/csv.hpp"
#include "fata/error.hpp"
#include "fata/quantizer.hpp"
#include "fata/rng.hpp"
#include "fata/schema.hpp"
#include "fata/vocab.hpp"
#include "fixtures.hpp"

using namespace fata;

namespace {

CsvTable card_table() {
  return parse_csv(
      "seq_id,time,card_type,amount,merchant,rating\n"
      "a,0,gold,12.5,shop,3\n"
      "a,1,gold,7,cafe,5\n"
      "b,0,basic,,shop,4\n"
      "b,3,basic,101.25,bar,1\n");
}

// Sorted sample read at 1-based ranks ceil(k n / bins), duplicates and cut
// points at the maximum removed.
std::vector<double> nearest_rank_oracle(std::vector<double> v, int bins) {
  std::sort(v.begin(), v.end());
  std::vector<double> out;
  const double n = static_cast<double>(v.size());
  for (int k = 1; k < bins; ++k) {
    const auto rank = static_cast<std::size_t>(std::ceil(k * n / bins));
    const double cut = v[rank - 1];
    if (cut >= v.back()) continue;
    if (out.empty() || cut > out.back()) out.push_back(cut);
  }
  return out;
}

}  // namespace

TEST_CASE("csv parsing handles quotes and rejects ragged rows") {
  auto t = parse_csv("a,b\n\"x,1\",\"say \"\"hi\"\"\"\r\n2,3\n");
  REQUIRE(t.header == std::vector<std::string>{"a", "b"});
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0][0] == "x,1");
  CHECK(t.rows[0][1] == "say \"hi\"");
  CHECK(t.column("b") == 1);
  CHECK(t.column("c") == -1);
  CHECK_THROWS_AS((void)t.require_column("c"), ConfigError);
  CHECK_THROWS_AS(parse_csv("a,b\n1\n"), ConfigError);
  CHECK_THROWS_AS(parse_csv("a\n\"open\n"), ConfigError);
  CHECK_THROWS_AS(parse_csv(""), ConfigError);

  const auto again = parse_csv(format_csv(t));
  CHECK(again.header == t.header);
  CHECK(again.rows == t.rows);
}

TEST_CASE("parse_real is strict") {
  CHECK(parse_real("12.5") == 12.5);
  CHECK(parse_real("-3") == -3.0);
  CHECK(parse_real("1e3") == 1000.0);
  CHECK_FALSE(parse_real("12a"));
  CHECK_FALSE(parse_real(""));
  CHECK_FALSE(parse_real("nan"));
  CHECK_FALSE(parse_real("inf"));
}

TEST_CASE("infer_schema assigns kind and dtype") {
  const auto s = infer_schema(card_table(), {"card_type"}, std::nullopt);
  REQUIRE(s.find("card_type"));
  CHECK(s.find("card_type")->kind == FieldKind::Static);
  CHECK(s.find("card_type")->dtype == FieldType::Categorical);
  CHECK(s.find("amount")->kind == FieldKind::Dynamic);
  CHECK(s.find("amount")->dtype == FieldType::Numerical);
  CHECK(s.find("amount")->n_bins == kDefaultBins);
  CHECK(s.find("rating")->dtype == FieldType::Numerical);
  CHECK(s.find("merchant")->dtype == FieldType::Categorical);
  CHECK_FALSE(s.find("seq_id"));
  CHECK_FALSE(s.find("time"));
  CHECK(s.n_static() == 1);
  CHECK(s.n_dynamic() == 3);

  const auto labelled = infer_schema(card_table(), {"card_type"}, std::string("rating"), 8);
  CHECK(labelled.is_label("rating"));
  CHECK(labelled.find("amount")->n_bins == 8);

  CHECK_THROWS_AS(infer_schema(card_table(), {"mcc_top"}, std::nullopt), ConfigError);
  CHECK_THROWS_AS(infer_schema(card_table(), {}, std::string("nope")), ConfigError);

  auto empty_col = card_table();
  empty_col.header.push_back("blank");
  for (auto& r : empty_col.rows) r.push_back("");
  CHECK_THROWS_AS(infer_schema(empty_col, {}, std::nullopt), ConfigError);
  CHECK_THROWS_AS(infer_schema(CsvTable{{"seq_id", "time", "x"}, {}}, {}, std::nullopt), ConfigError);
}

TEST_CASE("schema validation and JSON round trip") {
  const auto s = infer_schema(card_table(), {"card_type"}, std::string("rating"));
  CHECK(Schema::from_json(s.to_json()) == s);

  Schema dup = s;
  dup.fields.push_back(dup.fields.front());
  CHECK_THROWS_AS(dup.validate(), ConfigError);

  Schema only_static;
  only_static.fields = {{"a", FieldKind::Static, FieldType::Categorical, 0}};
  CHECK_THROWS_AS(only_static.validate(), ConfigError);

  Schema one_bin;
  one_bin.fields = {{"x", FieldKind::Dynamic, FieldType::Numerical, 1}};
  CHECK_THROWS_AS(one_bin.validate(), ConfigError);

  Schema static_label;
  static_label.fields = {{"a", FieldKind::Static, FieldType::Categorical, 0},
                         {"b", FieldKind::Dynamic, FieldType::Categorical, 0}};
  static_label.label_field = "a";
  CHECK_THROWS_AS(static_label.validate(), ConfigError);

  CHECK_THROWS_AS(Schema::from_json(nlohmann::json{{"fields", {{{"name", "x"}, {"kind", "weird"}}}}}), ConfigError);
}

TEST_CASE("quantizer nearest-rank thresholds") {
  std::vector<double> uniform;
  for (int i = 0; i < 100; ++i) uniform.push_back(i);
  const auto q = Quantizer::fit("x", uniform, 4);
  CHECK(q.thresholds() == nearest_rank_oracle(uniform, 4));
  CHECK(q.effective_bins() == 4);

  const std::vector<double> constant{5, 5, 5, 5};
  const auto c = Quantizer::fit("c", constant, 4);
  CHECK(c.thresholds().empty());
  CHECK(c.effective_bins() == 1);
  CHECK(c.requested_bins() == 4);

  const std::vector<double> two{1, 2};
  CHECK(Quantizer::fit("t", two, 2).thresholds() == std::vector<double>{1.0});

  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v;
    const auto n = 1 + uniform_index(rng, 200);
    for (std::size_t i = 0; i < n; ++i) v.push_back(std::round(standard_normal(rng) * 4.0));
    const int bins = 2 + static_cast<int>(uniform_index(rng, 30));
    const auto fit = Quantizer::fit("r", v, bins);
    CHECK(fit.thresholds() == nearest_rank_oracle(v, bins));
    CHECK(fit.effective_bins() == 1 + static_cast<int>(fit.thresholds().size()));
    CHECK(std::adjacent_find(fit.thresholds().begin(), fit.thresholds().end(),
                             [](double a, double b) { return !(a < b); }) == fit.thresholds().end());
  }

  CHECK_THROWS_AS(Quantizer::fit("x", uniform, 1), ConfigError);
  CHECK_THROWS_AS(Quantizer::fit("x", std::vector<double>{}, 4), ConfigError);
}

TEST_CASE("quantizer bins count thresholds below and clamp") {
  const Quantizer q("x", {25, 50, 75}, 4);
  CHECK(q.bin(10) == 0);
  CHECK(q.bin(1e9) == 3);
  CHECK(q.bin(50) == 1);
  CHECK(q.bin(25) == 0);
  const std::vector<double> cuts{25, 50, 75};
  for (double x : {-3.0, 25.0, 26.0, 49.5, 50.0, 74.0, 75.0, 80.0}) {
    CHECK(q.bin(x) == std::count_if(cuts.begin(), cuts.end(), [x](double c) { return c < x; }));
  }
  CHECK(q.bin(25.0001) == 1);
  CHECK(q.bin(-1e9) == 0);
  CHECK_THROWS_AS((void)q.bin(std::numeric_limits<double>::quiet_NaN()), ConfigError);
  CHECK_THROWS_AS((void)q.bin(std::numeric_limits<double>::infinity()), ConfigError);

  int prev = 0;
  for (double x = -10; x <= 110; x += 0.25) {
    const int b = q.bin(x);
    CHECK(b >= prev);
    prev = b;
  }

  CHECK(Quantizer::from_json(q.to_json()) == q);
  CHECK_THROWS_AS(Quantizer::from_json(nlohmann::json{{"field", "x"}, {"thresholds", {2, 1}}, {"n_bins", 3}}),
                  ConfigError);
}

TEST_CASE("vocabulary sizes, order and fallback") {
  Schema s;
  s.fields = {{"A", FieldKind::Dynamic, FieldType::Categorical, 0}, {"B", FieldKind::Dynamic, FieldType::Numerical, 3}};
  CsvTable rows;
  rows.header = {"seq_id", "time", "A", "B"};
  for (const auto& [a, b] : std::vector<std::pair<std::string, std::string>>{{"y", "1"}, {"x", "5"}, {"y", "9"}}) {
    rows.rows.push_back({"s", "0", a, b});
  }
  QuantizerMap qs;
  qs.emplace("B", Quantizer("B", {2, 6}, 3));
  const auto v = build_vocab(s, qs, rows);

  CHECK(v.size() == 3 + 2 + 3);
  CHECK(v.local_size(0) == 2);
  CHECK(v.local_size(1) == 3);
  // Specials first, then fields in schema order, values in first-seen order.
  CHECK(v.encode_token(0, "y") == 3);
  CHECK(v.encode_token(0, "x") == 4);
  CHECK(v.encode_value(1, "1") == 5);
  CHECK(v.encode_value(1, "5") == 6);
  CHECK(v.encode_value(1, "100") == 7);
  CHECK(v.encode_number(1, 9.0) == 7);
  CHECK(v.encode_token(0, "never") == kUnkId);
  CHECK(v.encode_value(1, "") == kUnkId);
  CHECK(v.encode_value(1, "abc") == kUnkId);
  CHECK(v.head_width(0) == 5);
  CHECK(v.head_class(0, 4) == kNumSpecials + 1);
  CHECK(v.head_class(0, kMaskId) == kMaskId);
  CHECK_THROWS_AS((void)v.head_class(0, 5), ConfigError);
  CHECK_THROWS_AS((void)v.encode_number(0, 1.0), ConfigError);

  const auto again = build_vocab(s, qs, rows);
  CHECK(again.digest() == v.digest());
  CHECK(again.to_json() == v.to_json());

  QuantizerMap none;
  CHECK_THROWS_AS(build_vocab(s, none, rows), ConfigError);
}

TEST_CASE("every id decodes to one field value and re-encodes") {
  const auto table = fata::testing::tiny_table(20, 6, 2, 3, 7, 11);
  const auto schema = infer_schema(table, fata::testing::static_names(2), std::nullopt);
  QuantizerMap qs;
  const auto v = build_vocab(schema, qs, table);
  for (TokenId id = 0; id < v.size(); ++id) {
    const auto d = v.decode(id);
    if (id < kNumSpecials) {
      CHECK(d.field == -1);
      CHECK(d.token == Vocabulary::special_name(id));
      CHECK(v.field_of(id) == -1);
      continue;
    }
    REQUIRE(d.field >= 0);
    CHECK(v.field_of(id) == d.field);
    CHECK(v.encode_token(static_cast<std::size_t>(d.field), d.token) == id);
  }
  CHECK(v.field_of(v.size()) == -1);
  CHECK_THROWS_AS((void)v.decode(v.size()), ConfigError);
  CHECK_THROWS_AS((void)v.decode(-1), ConfigError);

  // Field blocks are contiguous and disjoint.
  TokenId next = kNumSpecials;
  for (const auto& f : v.fields()) {
    CHECK(f.offset == next);
    next += static_cast<TokenId>(f.tokens.size());
  }
  CHECK(next == v.size());
}

TEST_CASE("vocabulary persistence and digest") {
  const auto table = fata::testing::tiny_table(10, 5, 1, 2, 4, 5);
  const auto schema = infer_schema(table, fata::testing::static_names(1), std::nullopt);
  QuantizerMap qs;
  const auto v = build_vocab(schema, qs, table);
  CHECK(v.digest().size() == 64);

  const auto dir = fata::testing::temp_dir("vocab");
  v.save(dir / "vocab.json");
  const auto loaded = Vocabulary::load(dir / "vocab.json");
  CHECK(loaded.digest() == v.digest());
  CHECK(loaded.size() == v.size());
  for (TokenId id = kNumSpecials; id < v.size(); ++id) CHECK(loaded.decode(id).token == v.decode(id).token);

  auto j = v.to_json();
  j["fields"][0]["tokens"][0] = "tampered";
  CHECK_THROWS_AS(Vocabulary::from_json(j), StateError);
  CHECK_THROWS_AS(Vocabulary::load(dir / "missing.json"), StateError);

  // A different table gives a different digest.
  const auto other = build_vocab(schema, qs, fata::testing::tiny_table(10, 5, 1, 2, 5, 6));
  CHECK(other.digest() != v.digest());
}

TEST_CASE("sha256 known answers") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
