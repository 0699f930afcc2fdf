#include <catch_amalgamated.hpp>

#include "helpers.hpp"

using namespace nnsens;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

void check_lambdas(const ImportanceReport& r, std::vector<double> want, double tol = 1e-12) {
  REQUIRE(r.entries.size() == want.size());
  for (std::size_t j = 0; j < want.size(); ++j) CHECK_THAT(r.entries[j].lambda, WithinAbs(want[j], tol));
}

void check_normalized(const ImportanceReport& r) {
  CHECK_THAT(r.total(), WithinAbs(100.0, 1e-9));
  for (const auto& e : r.entries) CHECK(e.lambda >= 0.0);
}

}  // namespace

TEST_CASE("global importance of 3x1 - x2 + 0x3 is (75, 25, 0)", "[explain]") {
  const Network net = testutil::linear_unit({3, -1, 0});
  const auto r = global_importance(net, testutil::random_matrix(1, 17, 3), {});
  check_lambdas(r, {75, 25, 0});
  CHECK(r.normalizer == 4.0);
  CHECK(r.sample_count == 17);
  CHECK(r.entries[2].lambda == 0.0);
}

TEST_CASE("global importance from a Jacobian uses the RMS", "[explain]") {
  InputJacobian jac{Tensor2(2, 2, {3, 0, 4, 1})};
  const auto r = global_importance_iid(jac, {"a", "b"});
  // RMS: sqrt(12.5), sqrt(0.5)
  const double a = std::sqrt(12.5), b = std::sqrt(0.5);
  check_lambdas(r, {100 * a / (a + b), 100 * b / (a + b)});
  CHECK(r.entries[0].name == "a");
}

TEST_CASE("an insensitive model raises a numeric error", "[explain]") {
  const Network net = testutil::linear_unit({0, 0});
  CHECK_THROWS_AS(global_importance(net, testutil::random_matrix(1, 3, 2), {}), NumericError);
}

TEST_CASE("names must match the feature count", "[explain]") {
  const Network net = testutil::linear_unit({1, 2});
  ExplainOptions opt;
  opt.names = {"only"};
  CHECK_THROWS_AS(global_importance(net, Tensor2(1, 2), opt), ShapeError);
}

TEST_CASE("permuting features permutes the report", "[explain]") {
  const Network net = testutil::random_net(3, 3, {6, 1}, {Activation::tanh, Activation::linear});
  Network perm = net;
  const std::size_t order[3] = {2, 0, 1};
  Tensor2 x = testutil::random_matrix(4, 40, 3), xp(40, 3);
  for (std::size_t o = 0; o < 6; ++o) {
    for (std::size_t j = 0; j < 3; ++j) perm.layers[0].weight(o, j) = net.layers[0].weight(o, order[j]);
  }
  for (std::size_t i = 0; i < 40; ++i) {
    for (std::size_t j = 0; j < 3; ++j) xp(i, j) = x(i, order[j]);
  }
  const auto a = global_importance(net, x, {});
  const auto b = global_importance(perm, xp, {});
  for (std::size_t j = 0; j < 3; ++j) CHECK_THAT(b.entries[j].lambda, WithinRel(a.entries[order[j]].lambda, 1e-12));
}

TEST_CASE("scaling the selected output leaves the report unchanged", "[explain]") {
  const Network net = testutil::random_net(5, 4, {5, 1}, {Activation::tanh, Activation::linear});
  Network scaled = net;
  for (double& w : scaled.layers[1].weight.values) w *= 7.5;
  const Tensor2 x = testutil::random_matrix(6, 30, 4);
  const auto a = global_importance(net, x, {});
  const auto b = global_importance(scaled, x, {});
  for (std::size_t j = 0; j < 4; ++j) CHECK_THAT(b.entries[j].lambda, WithinRel(a.entries[j].lambda, 1e-12));
}

TEST_CASE("raw-unit scales divide sensitivities by the column scale", "[explain]") {
  const Network net = testutil::linear_unit({3, -1});
  ExplainOptions opt;
  opt.raw_unit_scales = {3.0, 1.0};
  const auto r = global_importance(net, Tensor2(2, 2), opt);
  check_lambdas(r, {50, 50});
  CHECK(r.raw_units);
}

TEST_CASE("local importance of 3x1 - x2 is (90, 10)", "[explain]") {
  const Network net = testutil::linear_unit({3, -1});
  const std::vector<double> x0{0.3, -2.0};
  const auto r = local_importance(net, x0, {}, 0);
  check_lambdas(r, {90, 10});
  CHECK(r.subject == std::optional<std::size_t>(0));
  CHECK(r.scope == ReportScope::local);
}

TEST_CASE("a single active coordinate takes all local importance", "[explain]") {
  Network net;
  net.layers.push_back({Tensor2(1, 3, {1.0, 0.0, 0.0}), {0.0}, Activation::tanh});
  net.layers.push_back({Tensor2(1, 1, 1.0), {0.0}, Activation::tanh});
  const std::vector<double> x0{1.0, 5.0, -1.0};
  check_lambdas(local_importance(net, x0), {100, 0, 0}, 0.0);
}

TEST_CASE("memoryless recurrent model reduces to the iid case", "[explain]") {
  RecurrentNetwork rnn;
  rnn.input_weight = Tensor2(1, 2, {3.0, -1.0});
  rnn.recurrent_weight = Tensor2(1, 1);
  rnn.hidden_bias = {0.0};
  rnn.hidden_activation = Activation::linear;
  rnn.head = testutil::linear_unit({1.0});
  rnn.tau = 3;
  const SequenceBatch b = testutil::random_sequences(7, 9, 3, 2);
  check_lambdas(global_importance_many_to_one(rnn, b), {75, 25});
  rnn.mode = SequenceMode::many_to_many;
  check_lambdas(global_importance_many_to_many(rnn, b), {75, 25});
  check_lambdas(local_importance(rnn, b.sequence(0)), {90, 10});
  rnn.mode = SequenceMode::many_to_one;
  const auto lag = lag_importance_global(rnn, b);
  check_lambdas(lag, {100, 0, 0}, 0.0);
}

TEST_CASE("dead recurrent input gets zero importance", "[explain]") {
  RecurrentNetwork rnn = testutil::random_rnn(8, 3, 4, 3, SequenceMode::many_to_one);
  for (std::size_t a = 0; a < 4; ++a) rnn.input_weight(a, 2) = 0.0;
  SequenceBatch b = testutil::random_sequences(9, 5, 3, 3);
  for (std::size_t t = 0; t < 5; ++t) {
    for (std::size_t s = 0; s < 3; ++s) b.at(t, s, 2) = 0.0;
  }
  CHECK(global_importance_many_to_one(rnn, b).entries[2].lambda == 0.0);
}

TEST_CASE("linear recurrence importance matches the unrolled closed form", "[explain]") {
  // Two features with input weights (w1, w2) feeding h_s = a h_{s-1} + w.x_s, y = h.
  RecurrentNetwork rnn = testutil::linear_recurrence(0.6, 1.0, 4);
  rnn.input_weight = Tensor2(1, 2, {2.0, -0.5});
  const SequenceBatch b = testutil::random_sequences(10, 6, 4, 2);
  const auto r = global_importance_many_to_one(rnn, b);
  // d y / d x_j at lag 0 is w_j.
  CHECK_THAT(r.entries[0].raw, WithinRel(2.0, 1e-8));
  CHECK_THAT(r.entries[1].raw, WithinRel(0.5, 1e-8));
  const auto all = global_importance_many_to_one(rnn, b, {}, LagAggregation::all_lags);
  const double geo = 1 + 0.6 + 0.36 + 0.216;
  CHECK_THAT(all.entries[0].raw, WithinRel(2.0 * geo, 1e-8));
  CHECK(all.metric != r.metric);
}

TEST_CASE("many-to-many with tau 1 equals many-to-one", "[explain]") {
  RecurrentNetwork rnn = testutil::random_rnn(11, 3, 5, 1, SequenceMode::many_to_one);
  const SequenceBatch b = testutil::random_sequences(12, 8, 1, 3);
  const auto one = global_importance_many_to_one(rnn, b);
  rnn.mode = SequenceMode::many_to_many;
  const auto many = global_importance_many_to_many(rnn, b);
  for (std::size_t j = 0; j < 3; ++j) CHECK(one.entries[j].lambda == many.entries[j].lambda);
}

TEST_CASE("memoryless many-to-many equals iid on the flattened steps", "[explain]") {
  RecurrentNetwork rnn = testutil::random_rnn(13, 3, 4, 3, SequenceMode::many_to_many);
  rnn.recurrent_weight = Tensor2(4, 4);
  // Steps share the same rows so every step has the same sample set.
  SequenceBatch b(10, 3, 3);
  const Tensor2 rows = testutil::random_matrix(14, 10, 3);
  for (std::size_t t = 0; t < 10; ++t) {
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t j = 0; j < 3; ++j) b.at(t, s, j) = rows(t, j);
    }
  }
  Network ff;
  ff.layers.push_back({rnn.input_weight, rnn.hidden_bias, rnn.hidden_activation});
  for (const auto& l : rnn.head.layers) ff.layers.push_back(l);
  const auto iid = global_importance(ff, rows, {});
  const auto many = global_importance_many_to_many(rnn, b);
  for (std::size_t j = 0; j < 3; ++j) CHECK_THAT(many.entries[j].lambda, WithinRel(iid.entries[j].lambda, 1e-12));
}

TEST_CASE("recurrent metrics require the matching mode", "[explain]") {
  const RecurrentNetwork rnn = testutil::random_rnn(15, 2, 3, 2, SequenceMode::many_to_one);
  const SequenceBatch b = testutil::random_sequences(16, 3, 2, 2);
  CHECK_THROWS_AS(global_importance_many_to_many(rnn, b), ConfigError);
}

TEST_CASE("lag importance decays geometrically for a linear recurrence", "[explain]") {
  const double a = 0.5;
  const RecurrentNetwork rnn = testutil::linear_recurrence(a, 1.0, 4);
  const auto r = lag_importance_global(rnn, testutil::random_sequences(17, 7, 4, 1));
  const double k = 1 + a + a * a + a * a * a;
  for (std::size_t l = 0; l < 4; ++l) {
    CHECK_THAT(r.entries[l].lambda, WithinRel(100.0 * std::pow(a, static_cast<double>(l)) / k, 1e-10));
  }
  CHECK(r.entries[3].name == "lag 3");
}

TEST_CASE("local lag importance of an identical batch equals the global one", "[explain]") {
  const RecurrentNetwork rnn = testutil::random_rnn(18, 2, 3, 3, SequenceMode::many_to_one);
  const SequenceBatch one = testutil::random_sequences(19, 1, 3, 2);
  SequenceBatch batch(4, 3, 2);
  for (std::size_t t = 0; t < 4; ++t) {
    std::copy(one.values.begin(), one.values.end(), batch.values.begin() + static_cast<std::ptrdiff_t>(t * 6));
  }
  const auto g = lag_importance_global(rnn, batch);
  const auto l = lag_importance_local(rnn, one.sequence(0), OutputSelector::output(0), 2);
  for (std::size_t k = 0; k < 3; ++k) CHECK_THAT(l.entries[k].lambda, WithinRel(g.entries[k].lambda, 1e-12));
  CHECK(l.subject == std::optional<std::size_t>(2));
}

TEST_CASE("every metric produces a normalised report", "[explain]") {
  const Network net = testutil::random_net(20, 4, {6, 2}, {Activation::relu, Activation::softmax});
  const Tensor2 x = testutil::random_matrix(21, 25, 4);
  ExplainOptions opt;
  opt.selector = OutputSelector::predicted_class();
  check_normalized(global_importance(net, x, opt));
  check_normalized(local_importance(net, x.row(3), opt));
  RecurrentNetwork rnn = testutil::random_rnn(22, 3, 4, 3, SequenceMode::many_to_one);
  const SequenceBatch b = testutil::random_sequences(23, 6, 3, 3);
  check_normalized(global_importance_many_to_one(rnn, b));
  check_normalized(lag_importance_global(rnn, b));
  check_normalized(local_importance(rnn, b.sequence(1)));
  rnn.mode = SequenceMode::many_to_many;
  check_normalized(global_importance_many_to_many(rnn, b));
}

TEST_CASE("group rollup", "[explain]") {
  const Network net = testutil::linear_unit({3, -1, 0});
  const auto r = global_importance(net, Tensor2(1, 3), {});
  const auto same = group_importance(r, {{"x1", {0}}, {"x2", {1}}, {"x3", {2}}});
  CHECK(same.lambdas() == r.lambdas());
  CHECK(same.grouped);

  const Network two = testutil::linear_unit({3, 2});
  const auto merged = group_importance(global_importance(two, Tensor2(1, 2), {}), {{"both", {0, 1}}});
  check_lambdas(merged, {100});

  CHECK_THROWS_AS(group_importance(r, {{"a", {0, 1}}, {"b", {1, 2}}}), ConfigError);
  CHECK_THROWS_AS(group_importance(r, {{"a", {0, 1}}}), ConfigError);
  CHECK_THROWS_AS(group_importance(r, {{"a", {0, 1, 2, 3}}}), ConfigError);
}

TEST_CASE("feature selection by cumulative importance", "[explain]") {
  const Network net = testutil::linear_unit({3, -1, 0});
  const auto r = global_importance(net, Tensor2(1, 3), {});
  const auto s90 = select_features(r, 90);
  CHECK(s90.ids == std::vector<std::size_t>{0, 1});
  CHECK_THAT(s90.cumulative, WithinAbs(100.0, 1e-12));
  const auto s100 = select_features(r, 100);
  CHECK(s100.ids == std::vector<std::size_t>{0, 1});
  const auto s50 = select_features(r, 50);
  CHECK(s50.ids == std::vector<std::size_t>{0});
  CHECK(s50.names == std::vector<std::string>{"x1"});
  CHECK_THROWS_AS(select_features(r, 0.0), ConfigError);
  CHECK_THROWS_AS(select_features(r, 100.5), ConfigError);
}

TEST_CASE("ranking breaks ties by id", "[explain]") {
  const Network net = testutil::linear_unit({1, 2, 2, 1});
  const auto r = global_importance(net, Tensor2(1, 4), {});
  CHECK(r.ranking() == std::vector<std::size_t>{1, 2, 0, 3});
}
