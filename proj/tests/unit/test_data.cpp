#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "helpers.hpp"

using namespace nnsens;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

std::string write_temp(const std::string& name, const std::string& text) {
  const auto path = std::filesystem::temp_directory_path() / ("nnsens_test_" + name);
  std::ofstream(path) << text;
  return path.string();
}

Schema toy_schema() {
  Schema s;
  s.target = "y";
  s.columns = {{"a", ColumnKind::numeric}, {"color", ColumnKind::categorical}};
  return s;
}

Dataset numeric_dataset(std::vector<std::vector<double>> cols) {
  Dataset ds;
  const std::size_t n = cols.front().size();
  ds.features = Tensor2(n, cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j) {
    ds.columns.push_back({"c" + std::to_string(j), ColumnKind::numeric, j, "c" + std::to_string(j), {}});
    for (std::size_t i = 0; i < n; ++i) ds.features(i, j) = cols[j][i];
  }
  ds.targets.assign(n, 0.0);
  ds.split.assign(n, SplitRole::train);
  return ds;
}

const std::string kFixture = std::string(NNSENS_SOURCE_DIR) + "/data/fixtures/credit_fixture_200.csv";
const std::string kCreditSchema = std::string(NNSENS_SOURCE_DIR) + "/data/schemas/credit.json";

}  // namespace

TEST_CASE("loading a small CSV with a categorical column", "[data]") {
  const auto path = write_temp("toy.csv", "a,color,y\n1.5,red,0\n2,blue,1\n-3e1,red,2.5\n");
  const Dataset ds = load_csv(path, toy_schema());
  CHECK(ds.rows() == 3);
  CHECK(ds.width() == 2);
  CHECK(ds.columns[1].kind == ColumnKind::categorical);
  CHECK(ds.columns[1].levels == std::vector<std::string>{"red", "blue"});
  CHECK(ds.features.values == std::vector<double>{1.5, 0, 2, 1, -30, 0});
  CHECK(ds.targets == std::vector<double>{0, 1, 2.5});
}

TEST_CASE("quoted cells and blank lines are handled", "[data]") {
  const auto path = write_temp("quoted.csv", "a,color,y\n\"1\",\"dark, red\",0\n\n2,\"say \"\"hi\"\"\",1\n");
  const Dataset ds = load_csv(path, toy_schema());
  CHECK(ds.rows() == 2);
  CHECK(ds.columns[1].levels == std::vector<std::string>{"dark, red", "say \"hi\""});
}

TEST_CASE("a non-numeric cell names its row and column", "[data]") {
  const auto path = write_temp("bad.csv", "a,color,y\n1,red,0\nabc,blue,1\n");
  CHECK_THROWS_WITH(load_csv(path, toy_schema()),
                    ContainsSubstring("data row 2") && ContainsSubstring("column 'a'") &&
                        ContainsSubstring("'abc'"));
}

TEST_CASE("malformed files are rejected", "[data]") {
  CHECK_THROWS_AS(load_csv("/nonexistent/file.csv", toy_schema()), IoError);
  CHECK_THROWS_AS(load_csv(write_temp("empty.csv", ""), toy_schema()), IoError);
  CHECK_THROWS_AS(load_csv(write_temp("header.csv", "a,color,y\n"), toy_schema()), IoError);
  CHECK_THROWS_AS(load_csv(write_temp("ragged.csv", "a,color,y\n1,red\n"), toy_schema()), IoError);
  CHECK_THROWS_AS(load_csv(write_temp("notarget.csv", "a,color\n1,red\n"), toy_schema()), IoError);
  CHECK_THROWS_WITH(load_csv(write_temp("extra.csv", "a,color,z,y\n1,red,3,0\n"), toy_schema()),
                    ContainsSubstring("'z'"));
  Schema cls = toy_schema();
  cls.classification = true;
  CHECK_THROWS_AS(load_csv(write_temp("label.csv", "a,color,y\n1,red,0.5\n"), cls), IoError);
}

TEST_CASE("one-hot encoding of three categories", "[data]") {
  const auto path = write_temp("abc.csv", "a,color,y\n1,C,0\n2,A,0\n3,B,1\n4,A,1\n");
  const Dataset enc = one_hot_encode(load_csv(path, toy_schema()));
  CHECK(enc.feature_names() == std::vector<std::string>{"a", "color=A", "color=B", "color=C"});
  for (std::size_t i = 0; i < enc.rows(); ++i) {
    CHECK(enc.features(i, 1) + enc.features(i, 2) + enc.features(i, 3) == 1.0);
  }
  CHECK(enc.features(0, 3) == 1.0);
  const auto groups = enc.groups();
  REQUIRE(groups.size() == 2);
  CHECK(groups[1].name == "color");
  CHECK(groups[1].members == std::vector<std::size_t>{1, 2, 3});
}

TEST_CASE("numeric-only data is unchanged by one-hot encoding", "[data]") {
  const Dataset ds = numeric_dataset({{1, 2, 3}, {4, 5, 6}});
  const Dataset enc = one_hot_encode(ds);
  CHECK(enc.features == ds.features);
  CHECK(enc.columns == ds.columns);
}

TEST_CASE("numeric-looking levels sort numerically and unseen levels encode as zeros", "[data]") {
  const auto path = write_temp("levels.csv", "a,color,y\n1,10,0\n2,2,0\n3,1,1\n4,7,1\n");
  Dataset ds = load_csv(path, toy_schema());
  ds.split = {SplitRole::train, SplitRole::train, SplitRole::train, SplitRole::test};
  const Dataset enc = one_hot_encode(ds);
  CHECK(enc.feature_names() == std::vector<std::string>{"a", "color=1", "color=2", "color=10"});
  CHECK(enc.features(3, 1) + enc.features(3, 2) + enc.features(3, 3) == 0.0);
  REQUIRE(enc.warnings.size() == 1);
  CHECK_THAT(enc.warnings[0], ContainsSubstring("unseen"));
}

TEST_CASE("credit fixture expands the categorical variables", "[data]") {
  const Schema schema = load_schema(kCreditSchema);
  const Dataset raw = load_csv(kFixture, schema);
  CHECK(raw.rows() == 200);
  CHECK(raw.width() == 23);
  // Independent one-pass scan of the raw file for distinct levels.
  std::ifstream in(kFixture);
  std::string line;
  std::getline(in, line);
  std::map<int, std::set<std::string>> distinct;  // column position -> levels
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    for (int c = 0; std::getline(ss, cell, ','); ++c) {
      if (c >= 2 && c <= 4) distinct[c].insert(cell);
    }
  }
  const std::size_t expect = 23 - 3 + distinct[2].size() + distinct[3].size() + distinct[4].size();
  const Dataset enc = one_hot_encode(raw);
  CHECK(enc.width() == expect);
  CHECK(enc.groups().size() == 23);
  for (const Column& c : enc.columns) {
    if (c.source.rfind("PAY_", 0) == 0) CHECK(c.name == c.source);
  }
}

TEST_CASE("standardisation", "[data]") {
  Dataset ds = numeric_dataset({{0, 2}, {5, 5}});
  const Dataset z = standardize(ds);
  CHECK(z.features.values == std::vector<double>{-1, 0, 1, 0});
  REQUIRE(z.warnings.size() == 1);
  CHECK_THAT(z.warnings[0], ContainsSubstring("constant"));
  CHECK(z.preprocessing.scales[1] == 0.0);
}

TEST_CASE("standardisation fits on train rows only and inverts", "[data]") {
  Dataset ds = numeric_dataset({{1, 3, 100}, {-2, 0.5, 7}});
  ds.split = {SplitRole::train, SplitRole::train, SplitRole::test};
  const Dataset z = standardize(ds);
  CHECK(z.preprocessing.means[0] == 2.0);
  CHECK(z.preprocessing.scales[0] == 1.0);
  CHECK(z.features(2, 0) == 98.0);
  const Tensor2 back = inverse_standardize(z.features, z.preprocessing);
  for (std::size_t i = 0; i < back.values.size(); ++i) {
    CHECK_THAT(back.values[i], WithinAbs(ds.features.values[i], 1e-12));
  }
}

TEST_CASE("stored preprocessing reproduces the transform", "[data]") {
  const Schema schema = load_schema(kCreditSchema);
  const Dataset raw = load_csv(kFixture, schema);
  Dataset prepared = standardize(one_hot_encode(split(raw, {0.8, 0.0, 0.2}, 3)));
  const Dataset again = apply_preprocessing(raw, prepared.preprocessing);
  CHECK(again.features == prepared.features);
}

TEST_CASE("split sizes", "[data]") {
  const Dataset sim = split(generate_synthetic(10000, 0.1, 1), {0.85, 0.0, 0.15}, 2);
  CHECK(sim.rows_with(SplitRole::train).size() == 8500);
  CHECK(sim.rows_with(SplitRole::test).size() == 1500);
  Dataset big = numeric_dataset({std::vector<double>(30000, 1.0)});
  big = split(big, fractions_for_counts(30000, 25000), 4);
  CHECK(big.rows_with(SplitRole::train).size() == 25000);
  CHECK(big.rows_with(SplitRole::test).size() == 5000);
  const Dataset again = split(generate_synthetic(10000, 0.1, 1), {0.85, 0.0, 0.15}, 2);
  CHECK(again.split == sim.split);
  const Dataset other = split(generate_synthetic(10000, 0.1, 1), {0.85, 0.0, 0.15}, 3);
  CHECK(other.split != sim.split);
  CHECK_THROWS_AS(split(sim, {0.5, 0.6, 0.0}, 1), ConfigError);
}

TEST_CASE("synthetic data", "[data]") {
  CHECK(generate_synthetic(10, 0.1, 5).features == generate_synthetic(10, 0.1, 5).features);
  const Dataset ds = generate_synthetic(1000000, 0.1, 9);
  std::vector<double> mean(5, 0.0);
  double resid = 0.0, resid2 = 0.0;
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    for (std::size_t j = 0; j < 5; ++j) mean[j] += ds.features(i, j);
    const double e = ds.targets[i] - synthetic_mean(ds.features.row(i));
    resid += e;
    resid2 += e * e;
  }
  const double n = static_cast<double>(ds.rows());
  for (double m : mean) CHECK(std::abs(m / n) < 0.005);
  const double var = resid2 / n - (resid / n) * (resid / n);
  // Var of a sample variance of N(0, 0.01) at n = 1e6 is about 2e-10; 3 sd < 5e-5.
  CHECK_THAT(var, WithinAbs(0.01, 5e-5));
  CHECK(ds.feature_names() == std::vector<std::string>{"X1", "X2", "X3", "X4", "X5"});
}

TEST_CASE("windowing", "[data]") {
  Tensor2 series(10, 3);
  for (std::size_t i = 0; i < 10; ++i) {
    for (std::size_t c = 0; c < 3; ++c) series(i, c) = static_cast<double>(10 * i + c);
  }
  Tensor2 five(5, 2);
  CHECK(windowize(five, 3, 1, SequenceMode::many_to_one).count == 3);
  const SequenceBatch one = windowize(series, 1, 2, SequenceMode::many_to_one);
  CHECK(one.count == 10);
  const SequenceBatch w = windowize(series, 4, 1, SequenceMode::many_to_many);
  REQUIRE(w.count == 7);
  CHECK(w.features == 2);
  for (std::size_t t = 0; t < 7; ++t) {
    for (std::size_t s = 0; s < 4; ++s) {
      CHECK(w.at(t, s, 0) == static_cast<double>(10 * (t + s)));
      CHECK(w.at(t, s, 1) == static_cast<double>(10 * (t + s) + 2));
      CHECK(w.targets[t * 4 + s] == static_cast<double>(10 * (t + s) + 1));
    }
  }
  const SequenceBatch last = windowize(series, 4, 1, SequenceMode::many_to_one);
  CHECK(last.targets[2] == 51.0);
  CHECK_THROWS_AS(windowize(five, 6, 0, SequenceMode::many_to_one), ShapeError);
}

TEST_CASE("variable selection keeps the named raw columns", "[data]") {
  const Schema schema = load_schema(kCreditSchema);
  const Dataset raw = load_csv(kFixture, schema);
  const Dataset sub = select_variables(raw, {"PAY_0", "SEX", "LIMIT_BAL"});
  CHECK(sub.feature_names() == std::vector<std::string>{"LIMIT_BAL", "SEX", "PAY_0"});
  CHECK_THROWS_AS(select_variables(raw, {"NOPE"}), ConfigError);
  const Schema restricted = schema.restricted_to({"PAY_0", "SEX"});
  CHECK(restricted.columns.size() == 2);
  CHECK(load_csv(kFixture, restricted).width() == 2);
}

TEST_CASE("built-in credit layout matches the shipped schema file", "[data]") {
  const Schema file = load_schema(std::string(NNSENS_SOURCE_DIR) + "/data/schemas/credit.json");
  const Schema builtin = credit_schema();
  CHECK(builtin.target == file.target);
  CHECK(builtin.classification == file.classification);
  CHECK(builtin.ignore == file.ignore);
  REQUIRE(builtin.columns.size() == 23);
  CHECK(builtin.columns == file.columns);
}
