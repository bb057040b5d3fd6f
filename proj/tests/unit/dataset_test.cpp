#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "tabsage/dataset.hpp"
#include "tabsage/error.hpp"
#include "tabsage/rng.hpp"
#include "test_support.hpp"

using namespace tabsage;

namespace {

const std::string kHeader = "cement,slag,fly_ash,water,superplasticizer,coarse_agg,fine_agg,age,strength\n";

std::string sample_rows(int rows) {
  std::string text = kHeader;
  for (int r = 0; r < rows; ++r) {
    text += std::to_string(300 + r) + ",100,50,180,5,900,700,28," + std::to_string(30 + r) + "\n";
  }
  return text;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoError;
}

RawDataset one_row(std::vector<double> inputs, double strength = 40.0) {
  RawDataset raw;
  raw.inputs = RowMatrix(1, kInputColumns, std::move(inputs));
  raw.strength = {strength};
  return raw;
}

}  // namespace

TEST_CASE("load_csv reads the concrete table") {
  const auto raw = load_csv(testing::data_file());
  CHECK(raw.size() == 1030);
  CHECK(raw.inputs.cols() == 8);
  CHECK(raw.strength.size() == 1030);
  // First record of the UCI table.
  CHECK(raw.value(0, Column::cement) == doctest::Approx(540.0));
  CHECK(raw.value(0, Column::water) == doctest::Approx(162.0));
  CHECK(raw.value(0, Column::age) == doctest::Approx(28.0));
  CHECK(raw.strength[0] == doctest::Approx(79.99).epsilon(1e-3));
}

TEST_CASE("column order in the file is free") {
  const std::string text =
      "strength,age,fine_agg,coarse_agg,superplasticizer,water,fly_ash,slag,cement\n"
      "40,28,700,900,5,180,50,100,300\n";
  const auto raw = parse_csv(text);
  CHECK(raw.value(0, Column::cement) == 300.0);
  CHECK(raw.value(0, Column::slag) == 100.0);
  CHECK(raw.value(0, Column::fine_agg) == 700.0);
  CHECK(raw.strength[0] == 40.0);
}

TEST_CASE("header aliases and custom mappings") {
  const std::string uci =
      "Cement (component 1)(kg in a m^3 mixture),Blast Furnace Slag (component 2)(kg in a m^3 mixture),"
      "Fly Ash (component 3)(kg in a m^3 mixture),Water  (component 4)(kg in a m^3 mixture),"
      "Superplasticizer (component 5)(kg in a m^3 mixture),Coarse Aggregate  (component 6)(kg in a m^3 mixture),"
      "Fine Aggregate (component 7)(kg in a m^3 mixture),Age (day),"
      "\"Concrete compressive strength(MPa, megapascals) \"\n"
      "540,0,0,162,2.5,1040,676,28,79.99\n";
  const auto raw = parse_csv(uci);
  CHECK(raw.value(0, Column::coarse_agg) == 1040.0);

  auto mapping = ColumnMapping::defaults();
  mapping.add("c", "cement");
  const std::string custom = "c,slag,fly_ash,water,superplasticizer,coarse_agg,fine_agg,age,strength\n1,2,3,4,5,6,7,8,9\n";
  CHECK(parse_csv(custom, mapping).value(0, Column::cement) == 1.0);
  CHECK(code_of([&] { parse_csv(custom); }) == ErrorCode::SchemaMismatch);
}

TEST_CASE("load_csv errors") {
  CHECK(code_of([] { load_csv("/nonexistent/concrete.csv"); }) == ErrorCode::MissingFile);
  CHECK_THROWS_WITH_AS(load_csv("/nonexistent/concrete.csv"), doctest::Contains("/nonexistent/concrete.csv"), Error);

  const auto header_only = code_of([] { parse_csv(kHeader); });
  CHECK((header_only == ErrorCode::EmptyData || header_only == ErrorCode::MissingValue));

  CHECK(code_of([] { parse_csv("cement,slag\n1,2\n"); }) == ErrorCode::SchemaMismatch);
  CHECK(code_of([] { parse_csv(sample_rows(1).substr(0, kHeader.size() - 1) + ",extra\n1,2,3,4,5,6,7,8,9,10\n"); }) ==
        ErrorCode::SchemaMismatch);

  auto text = sample_rows(8);
  // Row 7 (1-based data row) gets a malformed water cell.
  std::vector<std::string> lines;
  std::string line;
  std::istringstream in(text);
  while (std::getline(in, line)) lines.push_back(line);
  lines[7] = "306,100,50,abc,5,900,700,28,36";
  std::string broken;
  for (const auto& l : lines) broken += l + "\n";
  CHECK_THROWS_WITH_AS(parse_csv(broken), doctest::Contains("row=7, col=water"), Error);
  CHECK(code_of([&] { parse_csv(broken); }) == ErrorCode::ParseError);

  lines[7] = "306,100,50,,5,900,700,28,36";
  broken.clear();
  for (const auto& l : lines) broken += l + "\n";
  CHECK(code_of([&] { parse_csv(broken); }) == ErrorCode::MissingValue);
  CHECK_THROWS_WITH_AS(parse_csv(broken), doctest::Contains("row=7"), Error);
}

TEST_CASE("feature groups have the documented widths and names") {
  const std::vector<std::pair<char, std::size_t>> widths = {{'A', 8}, {'B', 4}, {'C', 7}, {'D', 7}, {'E', 6}};
  for (const auto& [tag, width] : widths) CHECK(feature_group(tag).size() == width);
  CHECK(feature_group('B').names() == std::vector<std::string>{"cement", "water", "superplasticizer", "age"});
  CHECK(feature_group('E').names() ==
        std::vector<std::string>{"cement", "scm", "water", "superplasticizer", "aggregate", "age"});
  CHECK(code_of([] { feature_group('F'); }) == ErrorCode::UnknownFeatureGroup);
}

TEST_CASE("group A is the identity") {
  const auto raw = load_csv(testing::data_file());
  const auto table = apply_feature_group(raw, feature_group('A'));
  CHECK(table.values == raw.inputs);
  std::vector<std::string> names(kColumnNames.begin(), kColumnNames.end());
  CHECK(table.names == names);
}

TEST_CASE("group C ratios on a hand-computed mixture") {
  const auto raw = one_row({300, 100, 50, 180, 5, 900, 700, 28});
  const auto table = apply_feature_group(raw, feature_group('C'));
  CHECK(table.names == std::vector<std::string>{"binder", "aggregate", "fluidity", "w_b", "agg_b", "sp_b", "age"});
  CHECK(table.values(0, 0) == doctest::Approx(450.0));
  CHECK(table.values(0, 1) == doctest::Approx(1600.0));
  CHECK(table.values(0, 2) == doctest::Approx(185.0));
  CHECK(table.values(0, 3) == doctest::Approx(0.4));
  CHECK(table.values(0, 4) == doctest::Approx(3.5556).epsilon(1e-4));
  CHECK(table.values(0, 5) == doctest::Approx(0.011111).epsilon(1e-4));
  CHECK(table.values(0, 6) == doctest::Approx(28.0));
}

TEST_CASE("group E combines SCM and aggregate") {
  const auto raw = one_row({300, 100, 50, 180, 5, 900, 700, 28});
  const auto table = apply_feature_group(raw, feature_group('E'));
  CHECK(table.values(0, 0) == 300.0);
  CHECK(table.values(0, 1) == doctest::Approx(150.0));
  CHECK(table.values(0, 2) == 180.0);
  CHECK(table.values(0, 3) == 5.0);
  CHECK(table.values(0, 4) == doctest::Approx(1600.0));
  CHECK(table.values(0, 5) == 28.0);
}

TEST_CASE("group D keeps the split binder and merges aggregate") {
  const auto raw = one_row({300, 100, 50, 180, 5, 900, 700, 28});
  const auto table = apply_feature_group(raw, feature_group('D'));
  CHECK(table.names ==
        std::vector<std::string>{"cement", "slag", "fly_ash", "water", "superplasticizer", "aggregate", "age"});
  CHECK(table.values(0, 5) == doctest::Approx(1600.0));
}

TEST_CASE("zero binder is a named division by zero") {
  const auto raw = one_row({0, 0, 0, 180, 5, 900, 700, 28});
  CHECK(code_of([&] { apply_feature_group(raw, feature_group('C')); }) == ErrorCode::DivisionByZero);
  CHECK_THROWS_WITH_AS(apply_feature_group(raw, feature_group('C')), doctest::Contains("row 1"), Error);
  CHECK_NOTHROW(apply_feature_group(raw, feature_group('A')));
}

TEST_CASE("normalizer maps feature extremes to 0 and 1") {
  const auto raw = load_csv(testing::data_file());
  for (char group : {'A', 'B', 'C', 'D', 'E'}) {
    const auto table = make_feature_table(raw, group);
    for (std::size_t c = 0; c < table.dim(); ++c) {
      const auto col = table.features.column(c);
      const auto [lo, hi] = std::minmax_element(col.begin(), col.end());
      CHECK(*lo == 0.0);
      CHECK(*hi == 1.0);
    }
  }
}

TEST_CASE("normalizer: degenerate column maps to 0; empty table is an error") {
  RowMatrix table(3, 2, std::vector<double>{1, 5, 2, 5, 3, 5});
  const std::vector<double> target = {10, 20, 30};
  const auto n = Normalizer::fit(table, target);
  const auto out = n.normalize(table);
  for (std::size_t r = 0; r < 3; ++r) CHECK(out(r, 1) == 0.0);
  CHECK(out(0, 0) == 0.0);
  CHECK(out(2, 0) == 1.0);
  CHECK(code_of([] { Normalizer::fit(RowMatrix(), {}); }) == ErrorCode::EmptyTable);
}

TEST_CASE("target standardization has zero mean, unit variance and an exact inverse") {
  const auto raw = load_csv(testing::data_file());
  const auto table = make_feature_table(raw, 'A');
  const double n = static_cast<double>(table.size());
  const double mean = std::accumulate(table.target.begin(), table.target.end(), 0.0) / n;
  double var = 0.0;
  for (double t : table.target) var += (t - mean) * (t - mean);
  CHECK(std::abs(mean) < 1e-12);
  CHECK(var / n == doctest::Approx(1.0).epsilon(1e-12));

  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    const double s = 2.0 + 80.0 * rng.uniform();
    const double back = table.normalizer.denormalize_target(table.normalizer.normalize_target(s));
    CHECK(std::abs(back - s) <= 1e-12 * s);
  }
}

TEST_CASE("split sizes, partition and determinism") {
  const auto masks = split(1030, 42);
  CHECK(masks.train.size() == 721);
  CHECK(masks.validation.size() == 154);
  CHECK(masks.test.size() == 155);
  std::set<std::size_t> all;
  for (const auto* m : {&masks.train, &masks.validation, &masks.test}) {
    CHECK(std::is_sorted(m->begin(), m->end()));
    all.insert(m->begin(), m->end());
  }
  CHECK(all.size() == 1030);
  CHECK(*all.rbegin() == 1029);
  CHECK(split(1030, 42) == masks);
  CHECK(split(1030, 43) != masks);

  const auto holdout = masks.holdout();
  CHECK(holdout.size() == 309);
  CHECK(std::is_sorted(holdout.begin(), holdout.end()));

  const auto small = split(10, 1);
  CHECK(small.train.size() == 7);
  CHECK(small.validation.size() == 1);
  CHECK(small.test.size() == 2);
  CHECK(code_of([] { split(9, 1); }) == ErrorCode::TooFewRecords);
}

TEST_CASE("split partitions for many sizes and seeds") {
  for (std::size_t n = 10; n < 200; n += 7) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto m = split(n, seed);
      CHECK(m.train.size() == n * 70 / 100);
      CHECK(m.validation.size() == n * 15 / 100);
      CHECK(m.train.size() + m.validation.size() + m.test.size() == n);
      std::vector<std::size_t> joined = m.train;
      joined.insert(joined.end(), m.validation.begin(), m.validation.end());
      joined.insert(joined.end(), m.test.begin(), m.test.end());
      std::sort(joined.begin(), joined.end());
      std::vector<std::size_t> expected(n);
      std::iota(expected.begin(), expected.end(), 0);
      CHECK(joined == expected);
    }
  }
}
