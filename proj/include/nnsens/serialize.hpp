#pragma once

// Model file layout (all integers unsigned 64-bit little-endian):
//
//   offset 0   8 bytes   magic "NNSMODL1"
//   offset 8   u64       H = length of the JSON header in bytes
//   offset 16  H bytes   UTF-8 JSON header (spec, array directory, metadata)
//              u64       N = number of doubles in the payload
//              8N bytes  IEEE-754 binary64 values, little-endian, in the
//                        order given by the header's "arrays" directory
//              u64       FNV-1a 64 checksum of the header and payload bytes
//
// See docs/model_format.md for the header fields.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "nnsens/data.hpp"
#include "nnsens/engine.hpp"
#include "nnsens/models.hpp"
#include "nnsens/training.hpp"

namespace nnsens {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// JSON conversions for configuration types

inline json to_json(const ModelSpec& s) {
  json j;
  j["architecture"] = s.architecture == Architecture::mlp ? "mlp" : "rnn";
  j["input_width"] = s.input_width;
  j["widths"] = s.widths;
  std::vector<std::string> acts;
  for (Activation a : s.activations) acts.push_back(to_string(a));
  j["activations"] = acts;
  if (s.architecture == Architecture::rnn) {
    j["hidden_width"] = s.hidden_width;
    j["hidden_activation"] = to_string(s.hidden_activation);
    j["mode"] = to_string(s.mode);
    j["tau"] = s.tau;
  }
  j["seed"] = s.seed;
  return j;
}

inline ModelSpec model_spec_from_json(const json& j) {
  ModelSpec s;
  const std::string arch = j.at("architecture").get<std::string>();
  if (arch == "mlp") s.architecture = Architecture::mlp;
  else if (arch == "rnn") s.architecture = Architecture::rnn;
  else throw ConfigError("unknown architecture '" + arch + "'");
  s.input_width = j.at("input_width").get<std::size_t>();
  s.widths = j.at("widths").get<std::vector<std::size_t>>();
  for (const auto& a : j.at("activations")) s.activations.push_back(parse_activation(a.get<std::string>()));
  if (s.architecture == Architecture::rnn) {
    s.hidden_width = j.at("hidden_width").get<std::size_t>();
    s.hidden_activation = parse_activation(j.value("hidden_activation", std::string("tanh")));
    s.mode = parse_sequence_mode(j.value("mode", std::string("many_to_one")));
    s.tau = j.at("tau").get<std::size_t>();
  }
  s.seed = j.value("seed", std::uint64_t{0});
  return s;
}

inline json to_json(const Schema& s) {
  json j;
  j["target"] = s.target;
  j["task"] = s.classification ? "classification" : "regression";
  j["columns"] = json::array();
  for (const ColumnSpec& c : s.columns) {
    j["columns"].push_back({{"name", c.name}, {"kind", to_string(c.kind)}});
  }
  j["ignore"] = s.ignore;
  return j;
}

inline Schema schema_from_json(const json& j) {
  Schema s;
  s.target = j.at("target").get<std::string>();
  const std::string task = j.value("task", std::string("regression"));
  if (task != "classification" && task != "regression") {
    throw ConfigError("schema task must be 'classification' or 'regression'");
  }
  s.classification = task == "classification";
  for (const auto& c : j.at("columns")) {
    s.columns.push_back({c.at("name").get<std::string>(),
                         parse_column_kind(c.value("kind", std::string("numeric")))});
  }
  if (j.contains("ignore")) s.ignore = j.at("ignore").get<std::vector<std::string>>();
  if (s.columns.empty()) throw ConfigError("schema declares no feature columns");
  return s;
}

inline Schema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open schema '" + path + "'");
  try {
    return schema_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw IoError("schema '" + path + "' is malformed: " + e.what());
  }
}

inline json to_json(const Preprocessing& p) {
  json j;
  j["categories"] = json::array();
  for (const CategoryMap& m : p.categories) {
    j["categories"].push_back({{"column", m.column}, {"levels", m.levels}});
  }
  return j;  // means/scales travel in the binary payload
}

inline json to_json(const TrainConfig& c) {
  return {{"loss", to_string(c.loss)},
          {"learning_rate", c.learning_rate},
          {"decay", c.decay},
          {"decay_mode", to_string(c.decay_mode)},
          {"l1_weight", c.l1_weight},
          {"max_epochs", c.max_epochs},
          {"batch_size", c.batch_size},
          {"patience", c.patience},
          {"seed", c.seed},
          {"validation_fraction", c.validation_fraction},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon}};
}

/// Fields absent from `j` keep their value from `base`.
inline TrainConfig train_config_from_json(const json& j, TrainConfig base = {}) {
  if (j.contains("loss")) base.loss = parse_loss(j["loss"].get<std::string>());
  base.learning_rate = j.value("learning_rate", base.learning_rate);
  base.decay = j.value("decay", base.decay);
  if (j.contains("decay_mode")) base.decay_mode = parse_decay_mode(j["decay_mode"].get<std::string>());
  base.l1_weight = j.value("l1_weight", base.l1_weight);
  base.max_epochs = j.value("max_epochs", base.max_epochs);
  base.batch_size = j.value("batch_size", base.batch_size);
  base.patience = j.value("patience", base.patience);
  base.seed = j.value("seed", base.seed);
  base.validation_fraction = j.value("validation_fraction", base.validation_fraction);
  base.beta1 = j.value("beta1", base.beta1);
  base.beta2 = j.value("beta2", base.beta2);
  base.epsilon = j.value("epsilon", base.epsilon);
  base.validate();
  return base;
}

inline json to_json(const OutputSelector& s) {
  return {{"kind", s.kind == OutputSelector::Kind::predicted_class ? "predicted_class" : "output_index"},
          {"index", s.index}};
}

inline OutputSelector selector_from_json(const json& j) {
  OutputSelector s;
  s.kind = j.at("kind").get<std::string>() == "predicted_class" ? OutputSelector::Kind::predicted_class
                                                                 : OutputSelector::Kind::output_index;
  s.index = j.value("index", std::size_t{0});
  return s;
}

inline json to_json(const TrainReport& r) {
  json epochs = json::array();
  for (const EpochRecord& e : r.epochs) {
    json rec{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"learning_rate", e.learning_rate}};
    rec["validation_loss"] = std::isfinite(e.validation_loss) ? json(e.validation_loss) : json(nullptr);
    epochs.push_back(rec);
  }
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  return {{"metric", r.metric},
          {"stopped_epoch", r.stopped_epoch},
          {"best_epoch", r.best_epoch},
          {"train_error", num(r.train_error)},
          {"test_error", num(r.test_error)},
          {"train_rows", r.train_rows},
          {"validation_rows", r.validation_rows},
          {"test_rows", r.test_rows},
          {"epochs", epochs}};
}

/// One JSON record per epoch, newline-terminated.
inline std::string to_jsonl(const TrainReport& r) {
  const json doc = to_json(r);
  std::string out;
  for (const auto& rec : doc.at("epochs")) out += rec.dump() + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Model bundle

/// A trained model plus everything needed to apply it to raw data again.
struct ModelBundle {
  ModelSpec spec;
  std::variant<Network, RecurrentNetwork> model;
  Preprocessing preprocessing;
  std::optional<Schema> schema;
  SplitFractions split_fractions;
  std::uint64_t split_seed = 0;
  std::uint64_t train_seed = 0;
  std::vector<std::string> feature_names;
  OutputSelector selector;

  const Network& network() const {
    if (!std::holds_alternative<Network>(model)) throw ConfigError("model is not feed-forward");
    return std::get<Network>(model);
  }
  const RecurrentNetwork& recurrent() const {
    if (!std::holds_alternative<RecurrentNetwork>(model)) throw ConfigError("model is not recurrent");
    return std::get<RecurrentNetwork>(model);
  }
  bool is_recurrent() const { return std::holds_alternative<RecurrentNetwork>(model); }
};

namespace detail {

inline constexpr char kMagic[8] = {'N', 'N', 'S', 'M', 'O', 'D', 'L', '1'};

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFFu));
}

inline std::uint64_t get_u64(const std::string& in, std::size_t& pos) {
  if (pos + 8 > in.size()) throw IoError("model file is truncated");
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + b])) << (8 * b);
  }
  pos += 8;
  return v;
}

inline std::uint64_t fnv1a(const char* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct ArrayEntry {
  std::string name;
  std::size_t rows;
  std::size_t cols;
};

template <class Fn>
void for_each_array(ModelBundle& b, Fn&& fn) {
  auto dense = [&](Network& net, const std::string& prefix) {
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      const std::string p = prefix + "layers." + std::to_string(l) + ".";
      fn(p + "weight", net.layers[l].weight.rows, net.layers[l].weight.cols,
         std::span<double>(net.layers[l].weight.values));
      fn(p + "bias", std::size_t{1}, net.layers[l].bias.size(), std::span<double>(net.layers[l].bias));
    }
  };
  if (auto* net = std::get_if<Network>(&b.model)) {
    dense(*net, "");
  } else {
    auto& rnn = std::get<RecurrentNetwork>(b.model);
    fn("input_weight", rnn.input_weight.rows, rnn.input_weight.cols, std::span<double>(rnn.input_weight.values));
    fn("recurrent_weight", rnn.recurrent_weight.rows, rnn.recurrent_weight.cols,
       std::span<double>(rnn.recurrent_weight.values));
    fn("hidden_bias", std::size_t{1}, rnn.hidden_bias.size(), std::span<double>(rnn.hidden_bias));
    dense(rnn.head, "head.");
  }
  fn("preprocessing.means", std::size_t{1}, b.preprocessing.means.size(),
     std::span<double>(b.preprocessing.means));
  fn("preprocessing.scales", std::size_t{1}, b.preprocessing.scales.size(),
     std::span<double>(b.preprocessing.scales));
}

}  // namespace detail

inline std::string serialize_model(const ModelBundle& bundle) {
  ModelBundle b = bundle;  // for_each_array needs mutable spans
  json header;
  header["format"] = "nnsens-model";
  header["version"] = 1;
  header["spec"] = to_json(b.spec);
  header["preprocessing"] = to_json(b.preprocessing);
  header["schema"] = b.schema ? to_json(*b.schema) : json(nullptr);
  header["split"] = {{"train", b.split_fractions.train},
                     {"validation", b.split_fractions.validation},
                     {"test", b.split_fractions.test},
                     {"seed", b.split_seed}};
  header["train_seed"] = b.train_seed;
  header["feature_names"] = b.feature_names;
  header["selector"] = to_json(b.selector);
  header["arrays"] = json::array();
  std::vector<double> payload;
  detail::for_each_array(b, [&](const std::string& name, std::size_t rows, std::size_t cols,
                                std::span<double> values) {
    header["arrays"].push_back({{"name", name}, {"rows", rows}, {"cols", cols}, {"offset", payload.size()}});
    payload.insert(payload.end(), values.begin(), values.end());
  });
  const std::string text = header.dump();

  std::string out(detail::kMagic, 8);
  detail::put_u64(out, text.size());
  const std::size_t body_start = out.size();
  out += text;
  detail::put_u64(out, payload.size());
  for (double v : payload) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  detail::put_u64(out, detail::fnv1a(out.data() + body_start, out.size() - body_start));
  return out;
}

inline ModelBundle deserialize_model(const std::string& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), detail::kMagic, 8) != 0) {
    throw IoError("not a model file (bad magic)");
  }
  std::size_t pos = 8;
  const std::uint64_t header_len = detail::get_u64(bytes, pos);
  if (header_len > bytes.size() - pos) throw IoError("model file is truncated (header)");
  const std::size_t body_start = pos;
  const std::string text = bytes.substr(pos, header_len);
  pos += header_len;
  const std::uint64_t count = detail::get_u64(bytes, pos);
  if (count > (bytes.size() - pos) / 8) throw IoError("model file is truncated (payload)");
  std::vector<double> payload(count);
  for (auto& v : payload) v = std::bit_cast<double>(detail::get_u64(bytes, pos));
  const std::size_t body_end = pos;
  const std::uint64_t stored = detail::get_u64(bytes, pos);
  if (pos != bytes.size()) throw IoError("model file has trailing bytes");
  if (stored != detail::fnv1a(bytes.data() + body_start, body_end - body_start)) {
    throw IoError("model file checksum mismatch (file is corrupted)");
  }

  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("model header is not valid JSON: ") + e.what());
  }
  try {
    if (header.at("format") != "nnsens-model" || header.at("version") != 1) {
      throw IoError("unsupported model format/version");
    }
    ModelBundle b;
    b.spec = model_spec_from_json(header.at("spec"));
    if (b.spec.architecture == Architecture::mlp) b.model = build_mlp(b.spec);
    else b.model = build_rnn(b.spec);
    for (const auto& c : header.at("preprocessing").at("categories")) {
      b.preprocessing.categories.push_back(
          {c.at("column").get<std::string>(), c.at("levels").get<std::vector<std::string>>()});
    }
    if (!header.at("schema").is_null()) b.schema = schema_from_json(header.at("schema"));
    const auto& sp = header.at("split");
    b.split_fractions = {sp.at("train").get<double>(), sp.at("validation").get<double>(),
                         sp.at("test").get<double>()};
    b.split_seed = sp.at("seed").get<std::uint64_t>();
    b.train_seed = header.at("train_seed").get<std::uint64_t>();
    b.feature_names = header.at("feature_names").get<std::vector<std::string>>();
    b.selector = selector_from_json(header.at("selector"));

    const auto& arrays = header.at("arrays");
    std::size_t index = 0;
    // Preprocessing vectors are sized from the directory before filling.
    for (const auto& a : arrays) {
      const std::string name = a.at("name").get<std::string>();
      if (name == "preprocessing.means") b.preprocessing.means.resize(a.at("cols").get<std::size_t>());
      if (name == "preprocessing.scales") b.preprocessing.scales.resize(a.at("cols").get<std::size_t>());
    }
    detail::for_each_array(b, [&](const std::string& name, std::size_t rows, std::size_t cols,
                                  std::span<double> values) {
      if (index >= arrays.size()) throw IoError("model file is missing array '" + name + "'");
      const auto& a = arrays[index++];
      if (a.at("name") != name || a.at("rows") != rows || a.at("cols") != cols) {
        throw IoError("model array '" + name + "' does not match the architecture");
      }
      const auto offset = a.at("offset").get<std::size_t>();
      if (offset + values.size() > payload.size()) throw IoError("model array '" + name + "' out of range");
      std::copy_n(payload.begin() + static_cast<std::ptrdiff_t>(offset), values.size(), values.begin());
    });
    if (index != arrays.size()) throw IoError("model file has unexpected extra arrays");
    return b;
  } catch (const json::exception& e) {
    throw IoError(std::string("model header is malformed: ") + e.what());
  }
}

inline void save_model(const ModelBundle& b, const std::string& path) {
  const std::string bytes = serialize_model(b);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write model file '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing model file '" + path + "'");
}

inline ModelBundle load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return deserialize_model(ss.str());
  } catch (const IoError& e) {
    throw IoError("'" + path + "': " + e.what());
  } catch (const Error& e) {
    throw IoError("'" + path + "': invalid model: " + e.what());
  }
}

}  // namespace nnsens
