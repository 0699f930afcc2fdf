#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"

using namespace nnsens;
using Catch::Matchers::ContainsSubstring;

namespace {

ModelBundle mlp_bundle() {
  ModelBundle b;
  b.spec.input_width = 3;
  b.spec.widths = {4, 2};
  b.spec.activations = {Activation::tanh, Activation::softmax};
  b.spec.seed = 12;
  Network net = build_mlp(b.spec);
  net.layers[0].bias = {0.1, -0.2, 1e-300, 3.5};
  b.model = net;
  b.preprocessing.categories = {{"color", {"blue", "red"}}};
  b.preprocessing.means = {1.0, 0.5, 0.25};
  b.preprocessing.scales = {2.0, 0.0, 1.0 / 3.0};
  Schema s;
  s.target = "y";
  s.classification = true;
  s.columns = {{"a", ColumnKind::numeric}, {"color", ColumnKind::categorical}};
  s.ignore = {"id"};
  b.schema = s;
  b.split_fractions = {0.7, 0.1, 0.2};
  b.split_seed = 9;
  b.train_seed = 10;
  b.feature_names = {"a", "color=blue", "color=red"};
  b.selector = OutputSelector::positive_class();
  return b;
}

}  // namespace

TEST_CASE("feed-forward bundle round trip is exact", "[serialize]") {
  const ModelBundle b = mlp_bundle();
  const ModelBundle r = deserialize_model(serialize_model(b));
  CHECK(r.network() == b.network());
  CHECK(r.spec == b.spec);
  CHECK(r.preprocessing == b.preprocessing);
  CHECK(r.schema == b.schema);
  CHECK(r.split_fractions == b.split_fractions);
  CHECK(r.split_seed == 9);
  CHECK(r.train_seed == 10);
  CHECK(r.feature_names == b.feature_names);
  CHECK(r.selector == b.selector);
  CHECK(serialize_model(r) == serialize_model(b));
}

TEST_CASE("recurrent bundle round trip is exact", "[serialize]") {
  ModelBundle b;
  b.spec.architecture = Architecture::rnn;
  b.spec.input_width = 2;
  b.spec.hidden_width = 3;
  b.spec.widths = {1};
  b.spec.activations = {Activation::linear};
  b.spec.mode = SequenceMode::many_to_many;
  b.spec.tau = 4;
  b.spec.seed = 5;
  b.model = build_rnn(b.spec);
  const ModelBundle r = deserialize_model(serialize_model(b));
  CHECK(r.is_recurrent());
  CHECK(r.recurrent() == b.recurrent());
  CHECK_FALSE(r.schema.has_value());
  CHECK_THROWS_AS(r.network(), ConfigError);
}

TEST_CASE("save and load through a file", "[serialize]") {
  const auto path = (std::filesystem::temp_directory_path() / "nnsens_test_model.nnsm").string();
  save_model(mlp_bundle(), path);
  CHECK(load_model(path).network() == mlp_bundle().network());
  CHECK_THROWS_AS(load_model(path + ".missing"), IoError);
}

TEST_CASE("corrupted model files are rejected", "[serialize]") {
  const std::string bytes = serialize_model(mlp_bundle());
  std::string flipped = bytes;
  flipped[bytes.size() - 20] ^= 0x01;
  CHECK_THROWS_WITH(deserialize_model(flipped), ContainsSubstring("checksum"));
  CHECK_THROWS_WITH(deserialize_model("XXXXXXXX" + bytes.substr(8)), ContainsSubstring("magic"));
  CHECK_THROWS_AS(deserialize_model(bytes.substr(0, bytes.size() / 2)), IoError);
  CHECK_THROWS_AS(deserialize_model(bytes + "x"), IoError);
  CHECK_THROWS_AS(deserialize_model(""), IoError);
}

TEST_CASE("schema and config JSON", "[serialize]") {
  const Schema s = mlp_bundle().schema.value();
  CHECK(schema_from_json(to_json(s)) == s);
  CHECK_THROWS_AS(schema_from_json(json{{"target", "y"}, {"columns", json::array()}}), ConfigError);
  CHECK_THROWS_AS(load_schema("/nonexistent.json"), IoError);
  TrainConfig c;
  c.learning_rate = 0.002;
  c.decay = 0.001;
  c.l1_weight = 0.01;
  c.decay_mode = DecayMode::inverse_time_step;
  c.loss = LossKind::cross_entropy;
  CHECK(train_config_from_json(to_json(c)) == c);
  CHECK(train_config_from_json(json{{"batch_size", 7}}, c).batch_size == 7);
  CHECK_THROWS_AS(train_config_from_json(json{{"learning_rate", -1.0}}), ConfigError);
  CHECK(model_spec_from_json(to_json(mlp_bundle().spec)) == mlp_bundle().spec);
}

TEST_CASE("report documents round trip", "[serialize]") {
  const Network net = testutil::linear_unit({3, -1, 0});
  ExplainOptions opt;
  opt.names = {"a", "b,c", "d"};
  const auto r = global_importance(net, Tensor2(2, 3), opt);
  const auto j = report_to_json(r);
  CHECK(j["kind"] == "importance_report");
  CHECK(j["ranking"] == json::array({0, 1, 2}));
  CHECK(report_from_json(json::parse(j.dump())) == r);
  const FeatureSubset s = select_features(r, 90);
  const FeatureSubset back = subset_from_json(subset_to_json(s));
  CHECK(back.ids == s.ids);
  CHECK(back.names == s.names);
  CHECK_THROWS_AS(subset_from_json(j), IoError);
}

TEST_CASE("text, CSV, and SVG renderings", "[serialize]") {
  const Network net = testutil::linear_unit({1, 3, 0});
  ExplainOptions opt;
  opt.names = {"low", "high", "a<b"};
  const auto r = global_importance(net, Tensor2(1, 3), opt);
  const std::string text = report_to_text(r);
  CHECK(text.find("high") < text.find("low"));
  CHECK_THAT(text, ContainsSubstring("75.00"));
  const std::string csv = report_to_csv(r);
  CHECK(csv.rfind("id,name,lambda,raw\n", 0) == 0);
  const std::string svg = report_to_svg(r);
  CHECK_THAT(svg, ContainsSubstring("width=\"800\" height=\"90\""));
  CHECK_THAT(svg, ContainsSubstring("75.00%"));
  CHECK_THAT(svg, ContainsSubstring("a&lt;b"));
  CHECK(svg.find(">high<") < svg.find(">low<"));
}

TEST_CASE("train report JSON and JSONL", "[serialize]") {
  TrainReport rep;
  rep.epochs = {{1, 0.5, 0.6, 0.01}, {2, 0.4, std::numeric_limits<double>::quiet_NaN(), 0.01}};
  rep.metric = "mse";
  rep.stopped_epoch = 2;
  const auto j = to_json(rep);
  CHECK(j["epochs"][1]["validation_loss"].is_null());
  CHECK(j["test_error"].is_null());
  const std::string lines = to_jsonl(rep);
  CHECK(std::count(lines.begin(), lines.end(), '\n') == 2);
}
