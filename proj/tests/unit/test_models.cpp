#include <catch_amalgamated.hpp>

#include "helpers.hpp"

using namespace nnsens;

namespace {

ModelSpec sim_spec(std::uint64_t seed) {
  ModelSpec s;
  s.input_width = 5;
  s.widths = {64, 32, 1};
  s.activations = {Activation::relu, Activation::relu, Activation::linear};
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("two-hidden-layer regression net", "[models]") {
  const Network net = build_mlp(sim_spec(7));
  CHECK(net.layers.size() == 3);
  CHECK(net.input_width() == 5);
  CHECK(net.output_width() == 1);
  CHECK(net.layers[1].weight.rows == 32);
  CHECK_FALSE(net.is_classifier());
}

TEST_CASE("one-hidden-layer softmax classifier", "[models]") {
  ModelSpec s;
  s.input_width = 33;
  s.widths = {64, 2};
  s.activations = {Activation::tanh, Activation::softmax};
  const Network net = build_mlp(s);
  CHECK(net.layers.size() == 2);
  CHECK(net.is_classifier());
  const Tensor2 out = forward(net, testutil::random_matrix(1, 4, 33));
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(out(i, 0) + out(i, 1) - 1.0) < 1e-12);
}

TEST_CASE("construction is deterministic per seed", "[models]") {
  CHECK(build_mlp(sim_spec(7)) == build_mlp(sim_spec(7)));
  CHECK_FALSE(build_mlp(sim_spec(7)) == build_mlp(sim_spec(8)));
}

TEST_CASE("initial weights stay inside the Glorot bound and biases are zero", "[models]") {
  const Network net = build_mlp(sim_spec(3));
  for (const DenseLayer& l : net.layers) {
    const double limit = std::sqrt(6.0 / static_cast<double>(l.weight.rows + l.weight.cols));
    for (double w : l.weight.values) CHECK(std::abs(w) <= limit);
    for (double b : l.bias) CHECK(b == 0.0);
  }
}

TEST_CASE("invalid specs are rejected", "[models]") {
  ModelSpec s = sim_spec(1);
  s.activations.pop_back();
  CHECK_THROWS_AS(build_mlp(s), ConfigError);
  s = sim_spec(1);
  s.input_width = 0;
  CHECK_THROWS_AS(build_mlp(s), ConfigError);
  s = sim_spec(1);
  s.activations[0] = Activation::softmax;
  CHECK_THROWS(build_mlp(s));
  CHECK_THROWS_AS(parse_activation("sigmoid"), ConfigError);
}

TEST_CASE("many-to-one recurrent model accepts tau x p sequences", "[models]") {
  const RecurrentNetwork rnn = testutil::random_rnn(1, 3, 8, 5, SequenceMode::many_to_one);
  const Tensor2 out = forward(rnn, testutil::random_sequences(2, 4, 5, 3));
  CHECK(out.rows == 4);
  CHECK(out.cols == 1);
}

TEST_CASE("many-to-many recurrent model emits one output per step", "[models]") {
  const RecurrentNetwork rnn = testutil::random_rnn(1, 3, 8, 5, SequenceMode::many_to_many);
  const SequenceBatch b = testutil::random_sequences(2, 4, 5, 3);
  const Tensor2 out = forward(rnn, b);
  REQUIRE(out.rows == 20);
  for (std::size_t t = 0; t < 4; ++t) {
    const auto ref = reference::evaluate(rnn, reference::sequence_values(b, t));
    for (std::size_t s = 0; s < 5; ++s) CHECK(std::abs(out(t * 5 + s, 0) - ref[s][0]) < 1e-12);
  }
}

TEST_CASE("many-to-many outputs are causal", "[models]") {
  const RecurrentNetwork rnn = testutil::random_rnn(6, 2, 4, 4, SequenceMode::many_to_many);
  SequenceBatch a = testutil::random_sequences(7, 1, 4, 2);
  SequenceBatch b = a;
  b.at(0, 3, 0) += 1.0;  // change only the newest step
  const Tensor2 ya = forward(rnn, a), yb = forward(rnn, b);
  for (std::size_t s = 0; s < 3; ++s) CHECK(ya(s, 0) == yb(s, 0));
  CHECK(ya(3, 0) != yb(3, 0));
}

TEST_CASE("zero recurrence behaves as a per-step feed-forward net", "[models]") {
  RecurrentNetwork rnn = testutil::random_rnn(2, 2, 1, 3, SequenceMode::many_to_many);
  rnn.recurrent_weight = Tensor2(1, 1);
  Network ff;
  ff.layers.push_back({rnn.input_weight, rnn.hidden_bias, rnn.hidden_activation});
  for (const auto& l : rnn.head.layers) ff.layers.push_back(l);
  const SequenceBatch b = testutil::random_sequences(3, 2, 3, 2);
  const Tensor2 y = forward(rnn, b);
  for (std::size_t t = 0; t < 2; ++t) {
    const Tensor2 step_out = forward(ff, b.sequence(t));
    for (std::size_t s = 0; s < 3; ++s) CHECK(std::abs(y(t * 3 + s, 0) - step_out(s, 0)) < 1e-15);
  }
}

TEST_CASE("recurrent shapes are validated", "[models]") {
  RecurrentNetwork rnn = testutil::random_rnn(2, 2, 3, 3, SequenceMode::many_to_one);
  rnn.recurrent_weight = Tensor2(2, 3);
  CHECK_THROWS_AS(rnn.validate(), ShapeError);
}
