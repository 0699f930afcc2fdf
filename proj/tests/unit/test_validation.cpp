#include <catch_amalgamated.hpp>

#include "helpers.hpp"

using namespace nnsens;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("closed-form oracle values", "[validation]") {
  const auto lambda = closed_form_oracle_lambda();
  const double want[5] = {14.87, 17.04, 45.24, 22.62, 0.23};
  for (std::size_t j = 0; j < 5; ++j) CHECK_THAT(lambda[j], WithinAbs(want[j], 0.006));
  CHECK_THAT(lambda[2] / lambda[3], WithinRel(2.0, 1e-15));
  CHECK(lambda[4] < 0.5);
  const auto raw = closed_form_oracle_raw();
  CHECK_THAT(raw[0] * raw[0] + raw[1] * raw[1], WithinRel(1.0, 1e-15));
}

TEST_CASE("Monte-Carlo oracle converges with shrinking standard errors", "[validation]") {
  const OracleReport small = true_importance_oracle(10000, 1);
  const OracleReport large = true_importance_oracle(1000000, 1);
  const auto raw = closed_form_oracle_raw();
  for (std::size_t j = 0; j < 2; ++j) {
    CHECK(std::abs(large.raw[j] - raw[j]) < 4.0 * large.standard_error[j]);
    CHECK_THAT(small.standard_error[j] / large.standard_error[j], WithinRel(10.0, 0.1));
  }
  for (std::size_t j = 2; j < 5; ++j) {
    CHECK_THAT(large.raw[j], WithinRel(raw[j], 1e-9));
    CHECK(large.standard_error[j] == 0.0);
  }
  double total = 0.0;
  for (double l : large.lambda) total += l;
  CHECK_THAT(total, WithinAbs(100.0, 1e-9));
  CHECK_THROWS_AS(true_importance_oracle(100, 1), ConfigError);
}

TEST_CASE("logistic baseline finds the single informative feature", "[validation]") {
  Dataset ds;
  ds.features = testutil::random_matrix(31, 400, 2);
  ds.columns = {{"a", ColumnKind::numeric, 0, "a", {}}, {"b", ColumnKind::numeric, 1, "b", {}}};
  std::mt19937_64 rng(32);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < 400; ++i) {
    ds.targets.push_back(u(rng) < 1.0 / (1.0 + std::exp(-3.0 * ds.features(i, 0))) ? 1.0 : 0.0);
  }
  ds.classification = true;
  const auto r = logistic_baseline_importance(ds);
  CHECK(r.entries[0].lambda > 95.0);
  CHECK(r.metric == "logistic_l1");
}

TEST_CASE("strong l1 concentrates weight across duplicated columns", "[validation]") {
  Tensor2 x(300, 2);
  const Tensor2 base = testutil::random_matrix(33, 300, 1);
  std::mt19937_64 rng(36);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> y;
  for (std::size_t i = 0; i < 300; ++i) {
    x(i, 0) = base(i, 0);
    x(i, 1) = base(i, 0) * 1.0001;
    y.push_back(u(rng) < 1.0 / (1.0 + std::exp(-2.0 * base(i, 0))) ? 1.0 : 0.0);
  }
  const LogisticFit weak = fit_logistic_lasso(x, y, {1e-4, 200000, 1e-8});
  const LogisticFit strong = fit_logistic_lasso(x, y, {0.1, 200000, 1e-8});
  const double l1_weak = std::abs(weak.coefficients[0]) + std::abs(weak.coefficients[1]);
  const double l1_strong = std::abs(strong.coefficients[0]) + std::abs(strong.coefficients[1]);
  CHECK(l1_strong < l1_weak);
  CHECK(std::min(std::abs(strong.coefficients[0]), std::abs(strong.coefficients[1])) == 0.0);
  const std::vector<double> bad{0.0, 2.0};
  CHECK_THROWS_AS(fit_logistic_lasso(Tensor2(2, 1), bad), ConfigError);
}

TEST_CASE("brute-force oracle on a linear model", "[validation]") {
  const Network net = testutil::linear_unit({3, -1, 0});
  const Tensor2 x = testutil::random_matrix(34, 10, 3);
  const auto g = brute_force_metric_oracle(net, x, MetricKind::global_iid);
  CHECK_THAT(g.entries[0].lambda, WithinAbs(75.0, 1e-6));
  CHECK_THAT(g.entries[1].lambda, WithinAbs(25.0, 1e-6));
  CHECK_THAT(g.entries[2].lambda, WithinAbs(0.0, 1e-6));
  const auto l = brute_force_metric_oracle(net, x, MetricKind::local);
  CHECK_THAT(l.entries[0].lambda, WithinAbs(90.0, 1e-6));
}

TEST_CASE("brute-force oracle agrees with the tape-based metrics", "[validation]") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Network net = testutil::random_net(seed, 4, {5, 1}, {Activation::tanh, Activation::linear});
    const Tensor2 x = testutil::random_matrix(seed + 10, 20, 4);
    const auto fast = global_importance(net, x, {});
    const auto slow = brute_force_metric_oracle(net, x, MetricKind::global_iid);
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(testutil::rel_err(fast.entries[j].lambda, slow.entries[j].lambda) < 1e-4);
    }
    const RecurrentNetwork rnn = testutil::random_rnn(seed, 3, 4, 3, SequenceMode::many_to_one);
    const SequenceBatch b = testutil::random_sequences(seed + 20, 10, 3, 3);
    const auto lag = lag_importance_global(rnn, b);
    const auto lag_slow = brute_force_metric_oracle(rnn, b, MetricKind::lag_global);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(testutil::rel_err(lag.entries[k].lambda, lag_slow.entries[k].lambda) < 1e-4);
    }
  }
}

TEST_CASE("brute-force oracle reproduces geometric lag decay", "[validation]") {
  const RecurrentNetwork rnn = testutil::linear_recurrence(0.5, 1.0, 3);
  const auto r = brute_force_metric_oracle(rnn, testutil::random_sequences(35, 5, 3, 1), MetricKind::lag_global);
  CHECK_THAT(r.entries[0].lambda, WithinRel(100.0 / 1.75, 1e-8));
  CHECK_THAT(r.entries[1].lambda, WithinRel(50.0 / 1.75, 1e-8));
  CHECK_THAT(r.entries[2].lambda, WithinRel(25.0 / 1.75, 1e-8));
}

TEST_CASE("brute-force oracle enforces its size limits", "[validation]") {
  const Network net = testutil::linear_unit({1, 1, 1, 1, 1, 1});
  CHECK_THROWS_AS(brute_force_metric_oracle(net, Tensor2(2, 6), MetricKind::global_iid), ConfigError);
  const RecurrentNetwork rnn = testutil::linear_recurrence(0.5, 1.0, 4);
  CHECK_THROWS_AS(brute_force_metric_oracle(rnn, testutil::random_sequences(1, 2, 4, 1), MetricKind::lag_global),
                  ConfigError);
}

TEST_CASE("gradient check trials are deterministic and pass", "[validation]") {
  const auto a = gradient_check_trial(17);
  const auto b = gradient_check_trial(17);
  CHECK(a.max_input_error == b.max_input_error);
  CHECK(a.max_parameter_error == b.max_parameter_error);
  CHECK(a.checked > 0);
  CHECK(a.passed(1e-5));
  CHECK(relative_error(1.0, 1.0 + 1e-7) < 1e-6);
}
