// nnsens: command-line front end for training, explaining, and reproducing.
//
// Exit status: 0 success, 1 numerical or metric error, 2 usage or I/O error.

#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nnsens/nnsens.hpp"

namespace fs = std::filesystem;
using namespace nnsens;

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr const char* kOutputDirEnv = "NNSENS_OUTPUT_DIR";
constexpr const char* kCreditEnv = "NNSENS_CREDIT_CSV";
constexpr const char* kCreditDefaultPath = "data/credit/default_of_credit_card_clients.csv";

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

fs::path output_dir() {
  const char* env = std::getenv(kOutputDirEnv);
  return env && *env ? fs::path(env) : fs::path("nnsens-out");
}

fs::path resolve_output(const std::string& given, const std::string& default_name) {
  return given.empty() ? output_dir() / default_name : fs::path(given);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw IoError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

std::string pretty(const json& j) { return j.dump(2) + "\n"; }

/// Records what a run read, wrote, and how long it took.
class Manifest {
 public:
  Manifest(std::string subcommand, std::vector<std::string> argv)
      : subcommand_(std::move(subcommand)), argv_(std::move(argv)), start_(Clock::now()) {}

  json config = json::object();
  json seeds = json::object();

  void input(const fs::path& p) { inputs_.push_back(describe(p)); }
  void output(const fs::path& p) { outputs_.push_back(describe(p)); }
  void timing(const std::string& name, double secs) { timings_[name] = secs; }

  /// Writes the manifest; it is the last file a run produces.
  void write(const fs::path& path) {
    json j;
    j["kind"] = "run_manifest";
    j["version"] = 1;
    j["tool_version"] = kVersion;
    j["command"] = argv_;
    j["subcommand"] = subcommand_;
    j["config"] = config;
    j["seeds"] = seeds;
    j["inputs"] = inputs_;
    j["outputs"] = outputs_;
    timings_["total_seconds"] = seconds_since(start_);
    j["timings"] = timings_;
    write_file(path, pretty(j));
  }

 private:
  static json describe(const fs::path& p) {
    const std::string bytes = read_file(p);
    return {{"path", p.string()},
            {"bytes", bytes.size()},
            {"fnv1a64", hex64(detail::fnv1a(bytes.data(), bytes.size()))}};
  }

  std::string subcommand_;
  std::vector<std::string> argv_;
  Clock::time_point start_;
  json inputs_ = json::array();
  json outputs_ = json::array();
  json timings_ = json::object();
};

fs::path manifest_for(const fs::path& primary) { return fs::path(primary.string() + ".manifest.json"); }

/// Writes each (path, content) pair and records it in the manifest. All
/// contents are computed before the first write.
void write_outputs(Manifest& m, const std::vector<std::pair<fs::path, std::string>>& files) {
  for (const auto& [path, content] : files) {
    write_file(path, content);
    m.output(path);
  }
}

std::string join(const std::vector<std::string>& v, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

template <class T>
std::vector<T> parse_list(const std::string& text, T (*parse)(const std::string&)) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse(item));
  }
  return out;
}

std::size_t parse_size(const std::string& s) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size()) throw ConfigError("'" + s + "' is not a non-negative integer");
  return static_cast<std::size_t>(v);
}

OutputSelector parse_selector(const std::string& s, const OutputSelector& fallback) {
  if (s.empty() || s == "default") return fallback;
  if (s == "positive") return OutputSelector::positive_class();
  if (s == "predicted") return OutputSelector::predicted_class();
  if (s.rfind("output:", 0) == 0) return OutputSelector::output(parse_size(s.substr(7)));
  throw ConfigError("unknown selector '" + s + "' (expected default, positive, predicted, output:N)");
}

SplitRole parse_role(const std::string& s) {
  if (s == "train") return SplitRole::train;
  if (s == "test") return SplitRole::test;
  if (s == "validation") return SplitRole::validation;
  throw ConfigError("unknown row set '" + s + "'");
}

std::string render(const ImportanceReport& r, const std::string& format) {
  if (format == "json") return pretty(report_to_json(r));
  if (format == "csv") return report_to_csv(r);
  if (format == "svg") return report_to_svg(r);
  if (format == "text") return report_to_text(r);
  throw ConfigError("unknown format '" + format + "'");
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOptions {
  std::size_t n = 10000;
  std::uint64_t seed = 1;
  double noise = 0.1;
  std::string out;
};

std::string synthetic_csv(const Dataset& ds) {
  std::string out = "X1,X2,X3,X4,X5,Y\n";
  char buf[32];
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g,", ds.features(i, j));
      out += buf;
    }
    std::snprintf(buf, sizeof buf, "%.17g\n", ds.targets[i]);
    out += buf;
  }
  return out;
}

int run_simulate(const SimulateOptions& o, Manifest& m) {
  if (!(o.noise >= 0.0)) throw ConfigError("--noise must be >= 0");
  const fs::path out = resolve_output(o.out, "synthetic.csv");
  const Dataset ds = generate_synthetic(o.n, o.noise, o.seed);
  m.config = {{"n", o.n}, {"noise_sd", o.noise}, {"out", out.string()}};
  m.seeds = {{"data", o.seed}};
  write_outputs(m, {{out, synthetic_csv(ds)}});
  m.write(manifest_for(out));
  std::cout << "wrote " << ds.rows() << " rows to " << out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::string data, schema, arch, train_config, feature_subset, out_model, report;
  std::string preset;
  std::uint64_t seed = 1;
  std::optional<std::uint64_t> split_seed;
  std::optional<double> train_fraction, validation_fraction, test_fraction;
  std::string widths, activations;
  std::optional<double> lr, decay, l1, early_stopping_fraction;
  std::optional<std::size_t> epochs, batch_size, patience;
};

struct Recipe {
  Preset preset;
  ModelSpec arch;  // architecture fields only; widths come from the preset
};

Recipe build_recipe(const TrainOptions& o, bool classification) {
  Recipe r;
  if (!o.preset.empty()) {
    r.preset = preset_by_name(o.preset);
  } else {
    r.preset.name = "custom";
    r.preset.split = {0.8, 0.0, 0.2};
    if (classification) r.preset.train.loss = LossKind::cross_entropy;
  }
  r.arch.architecture = Architecture::mlp;
  if (!o.arch.empty()) {
    const json j = read_json(o.arch);
    try {
      if (j.contains("architecture")) {
        const std::string a = j["architecture"].get<std::string>();
        if (a != "mlp" && a != "rnn") throw ConfigError("unknown architecture '" + a + "'");
        r.arch.architecture = a == "rnn" ? Architecture::rnn : Architecture::mlp;
      }
      if (j.contains("widths")) r.preset.widths = j["widths"].get<std::vector<std::size_t>>();
      if (j.contains("activations")) {
        r.preset.activations.clear();
        for (const auto& a : j["activations"]) r.preset.activations.push_back(parse_activation(a.get<std::string>()));
      }
      r.arch.hidden_width = j.value("hidden_width", std::size_t{0});
      r.arch.hidden_activation = parse_activation(j.value("hidden_activation", std::string("tanh")));
      r.arch.mode = parse_sequence_mode(j.value("mode", std::string("many_to_one")));
      r.arch.tau = j.value("tau", std::size_t{1});
    } catch (const json::exception& e) {
      throw ConfigError("architecture file '" + o.arch + "': " + e.what());
    }
  }
  if (!o.widths.empty()) r.preset.widths = parse_list<std::size_t>(o.widths, parse_size);
  if (!o.activations.empty()) r.preset.activations = parse_list<Activation>(o.activations, parse_activation);
  if (r.preset.widths.empty()) {
    throw ConfigError("no architecture: pass --preset, --arch, or --widths/--activations");
  }
  if (!o.train_config.empty()) {
    try {
      r.preset.train = train_config_from_json(read_json(o.train_config), r.preset.train);
    } catch (const json::exception& e) {
      throw ConfigError("train config '" + o.train_config + "': " + e.what());
    }
  }
  TrainConfig& c = r.preset.train;
  if (o.lr) c.learning_rate = *o.lr;
  if (o.decay) c.decay = *o.decay;
  if (o.l1) c.l1_weight = *o.l1;
  if (o.epochs) c.max_epochs = *o.epochs;
  if (o.batch_size) c.batch_size = *o.batch_size;
  if (o.patience) c.patience = *o.patience;
  if (o.early_stopping_fraction) c.validation_fraction = *o.early_stopping_fraction;
  c.validate();
  if (o.split_seed) r.preset.split_seed = *o.split_seed;
  if (o.train_fraction || o.validation_fraction || o.test_fraction) {
    SplitFractions f = r.preset.split;
    if (o.train_fraction) f.train = *o.train_fraction;
    if (o.validation_fraction) f.validation = *o.validation_fraction;
    if (o.test_fraction) f.test = *o.test_fraction;
    else f.test = 1.0 - f.train - f.validation;
    r.preset.split = f;
  }
  return r;
}

int run_train(const TrainOptions& o, Manifest& m) {
  // Everything is validated and computed before the first file is written.
  Schema schema = load_schema(o.schema);
  Dataset raw = load_csv(o.data, schema);
  std::optional<FeatureSubset> subset;
  if (!o.feature_subset.empty()) {
    try {
      subset = subset_from_json(read_json(o.feature_subset));
    } catch (const json::exception& e) {
      throw IoError("feature subset '" + o.feature_subset + "': " + e.what());
    }
    raw = select_variables(raw, subset->names);
    schema = schema.restricted_to(subset->names);
  }
  const Recipe recipe = build_recipe(o, raw.classification);
  const Preset& p = recipe.preset;

  ModelBundle bundle;
  TrainReport report;
  if (recipe.arch.architecture == Architecture::mlp) {
    TrainedModel t = train_model(raw, schema, p, o.seed);
    bundle = std::move(t.bundle);
    report = std::move(t.report);
  } else {
    SequenceData sd = prepare_sequences(raw, nullptr, recipe.arch.tau, recipe.arch.mode, p.split, p.split_seed);
    ModelSpec spec = recipe.arch;
    spec.input_width = sd.prepared.width();
    spec.widths = p.widths;
    spec.activations = p.activations;
    spec.seed = o.seed;
    if (spec.hidden_width == 0) throw ConfigError("recurrent architecture needs hidden_width");
    RecurrentNetwork rnn = build_rnn(spec);
    TrainConfig cfg = p.train;
    cfg.seed = o.seed;
    report = train(rnn, sd.batch, sd.roles, cfg);
    bundle.spec = spec;
    bundle.model = std::move(rnn);
    bundle.preprocessing = sd.prepared.preprocessing;
    bundle.schema = schema;
    bundle.split_fractions = p.split;
    bundle.split_seed = p.split_seed;
    bundle.train_seed = o.seed;
    bundle.feature_names = sd.prepared.feature_names();
    bundle.selector = OutputSelector::output(0);
  }

  const fs::path model_path = resolve_output(o.out_model, "model.nnsm");
  const fs::path report_path = o.report.empty() ? fs::path(model_path.string() + ".report.json") : fs::path(o.report);
  const fs::path epochs_path = fs::path(model_path.string() + ".epochs.jsonl");
  json rep;
  rep["kind"] = "train_report";
  rep["version"] = 1;
  rep["preset"] = o.preset.empty() ? json(nullptr) : json(o.preset);
  rep["seed"] = o.seed;
  json cfg = to_json(p.train);
  cfg["seed"] = o.seed;
  rep["config"] = {{"train", cfg},
                   {"model", to_json(bundle.spec)},
                   {"split", {{"train", p.split.train}, {"validation", p.split.validation},
                              {"test", p.split.test}, {"seed", p.split_seed}}},
                   {"features", bundle.feature_names}};
  if (subset) rep["config"]["feature_subset"] = subset->names;
  rep["result"] = to_json(report);

  m.config = rep["config"];
  m.config["data"] = o.data;
  m.config["schema"] = o.schema;
  m.seeds = {{"model", o.seed}, {"split", p.split_seed}};
  m.input(o.data);
  m.input(o.schema);
  if (subset) m.input(o.feature_subset);
  const std::string model_bytes = serialize_model(bundle);
  write_outputs(m, {{model_path, model_bytes}, {report_path, pretty(rep)}, {epochs_path, to_jsonl(report)}});
  m.write(manifest_for(model_path));

  char line[256];
  std::snprintf(line, sizeof line, "trained %s: %s test %.6g, train %.6g; stopped at epoch %zu (best %zu)\n",
                p.name.c_str(), report.metric.c_str(), report.test_error, report.train_error,
                report.stopped_epoch, report.best_epoch);
  std::cout << line << "model: " << model_path.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// explain / select

struct ExplainOptionsCli {
  std::string model, data, schema, scope = "global", format = "text", rows = "train", selector, out;
  std::string aggregation = "lag0";
  std::optional<std::size_t> sample_id;
  bool raw_units = false;
  bool group = false;
};

struct LoadedData {
  ModelBundle bundle;
  Dataset ds;                          // feed-forward: prepared rows
  std::optional<SequenceData> seq;     // recurrent: windows
};

LoadedData load_for_model(const std::string& model_path, const std::string& data_path,
                          const std::string& schema_path) {
  LoadedData L;
  L.bundle = load_model(model_path);
  Schema schema;
  if (!schema_path.empty()) schema = load_schema(schema_path);
  else if (L.bundle.schema) schema = *L.bundle.schema;
  else throw ConfigError("model file carries no schema; pass --schema");
  const Dataset raw = load_csv(data_path, schema);
  if (L.bundle.is_recurrent()) {
    const RecurrentNetwork& rnn = L.bundle.recurrent();
    L.seq = prepare_sequences(raw, &L.bundle.preprocessing, rnn.tau, rnn.mode, L.bundle.split_fractions,
                              L.bundle.split_seed);
    if (L.seq->batch.features != rnn.input_width()) {
      throw ShapeError("data encodes to " + std::to_string(L.seq->batch.features) +
                       " features but the model expects " + std::to_string(rnn.input_width()));
    }
  } else {
    L.ds = apply_preprocessing(raw, L.bundle.preprocessing);
    L.ds.split = split(raw, L.bundle.split_fractions, L.bundle.split_seed).split;
    if (L.ds.width() != L.bundle.network().input_width()) {
      throw ShapeError("data encodes to " + std::to_string(L.ds.width()) +
                       " features but the model expects " + std::to_string(L.bundle.network().input_width()));
    }
  }
  return L;
}

std::vector<std::size_t> select_rows(const std::vector<SplitRole>& roles, std::size_t n, const std::string& which) {
  if (which == "all") {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    return all;
  }
  auto rows = windows_with(roles, parse_role(which));
  if (rows.empty()) throw ConfigError("row set '" + which + "' is empty for this model's split");
  return rows;
}

ImportanceReport compute_report(const LoadedData& L, const ExplainOptionsCli& o) {
  ExplainOptions opt;
  opt.selector = parse_selector(o.selector, L.bundle.selector);
  if (L.bundle.is_recurrent()) {
    const RecurrentNetwork& rnn = L.bundle.recurrent();
    const SequenceData& sd = *L.seq;
    opt.names = sd.prepared.feature_names();
    if (o.raw_units) opt.raw_unit_scales = L.bundle.preprocessing.scales;
    auto check_id = [&](std::size_t id) {
      if (id >= sd.batch.count) {
        throw ConfigError("--sample-id " + std::to_string(id) + " out of range for " +
                          std::to_string(sd.batch.count) + " windows");
      }
    };
    if (o.scope == "lag") {
      if (o.sample_id) {
        check_id(*o.sample_id);
        return lag_importance_local(rnn, sd.batch.sequence(*o.sample_id), opt.selector, *o.sample_id);
      }
      return lag_importance_global(rnn, sd.batch.subset(select_rows(sd.roles, sd.batch.count, o.rows)),
                                   opt.selector);
    }
    if (o.scope == "local") {
      if (!o.sample_id) throw ConfigError("--scope local needs --sample-id");
      check_id(*o.sample_id);
      return local_importance(rnn, sd.batch.sequence(*o.sample_id), opt, *o.sample_id);
    }
    const SequenceBatch rows = sd.batch.subset(select_rows(sd.roles, sd.batch.count, o.rows));
    if (rnn.mode == SequenceMode::many_to_many) return global_importance_many_to_many(rnn, rows, opt);
    const auto agg = o.aggregation == "all_lags" ? LagAggregation::all_lags : LagAggregation::current_step;
    return global_importance_many_to_one(rnn, rows, opt, agg);
  }
  const Network& net = L.bundle.network();
  opt.names = L.ds.feature_names();
  if (o.raw_units) opt.raw_unit_scales = L.ds.preprocessing.scales;
  if (o.scope == "lag") throw ConfigError("--scope lag needs a recurrent model");
  if (o.scope == "local") {
    if (!o.sample_id) throw ConfigError("--scope local needs --sample-id");
    if (*o.sample_id >= L.ds.rows()) {
      throw ConfigError("--sample-id " + std::to_string(*o.sample_id) + " out of range for " +
                        std::to_string(L.ds.rows()) + " rows");
    }
    return local_importance(net, L.ds.features.row(*o.sample_id), opt, *o.sample_id);
  }
  const auto rows = select_rows(L.ds.split, L.ds.rows(), o.rows);
  return global_importance(net, L.ds.features.gather_rows(rows), opt);
}

ImportanceReport maybe_group(const ImportanceReport& r, const LoadedData& L, bool group) {
  if (!group || r.scope == ReportScope::lag_global || r.scope == ReportScope::lag_local) return r;
  return group_importance(r, L.bundle.is_recurrent() ? L.seq->prepared.groups() : L.ds.groups());
}

int run_explain(const ExplainOptionsCli& o, Manifest& m) {
  const LoadedData L = load_for_model(o.model, o.data, o.schema);
  const auto t0 = Clock::now();
  const ImportanceReport report = maybe_group(compute_report(L, o), L, o.group);
  const double secs = seconds_since(t0);
  const std::string body = render(report, o.format);
  if (o.out.empty()) {
    std::cout << body;
    return 0;
  }
  m.config = {{"model", o.model}, {"data", o.data}, {"scope", o.scope}, {"format", o.format},
              {"rows", o.rows}, {"raw_units", o.raw_units}, {"group", o.group},
              {"selector", report.selector}, {"aggregation", o.aggregation}};
  if (o.sample_id) m.config["sample_id"] = *o.sample_id;
  m.seeds = {{"split", L.bundle.split_seed}, {"model", L.bundle.train_seed}};
  m.input(o.model);
  m.input(o.data);
  m.timing("importance_seconds", secs);
  write_outputs(m, {{o.out, body}});
  m.write(manifest_for(o.out));
  return 0;
}

struct SelectOptions {
  std::string model, data, schema, report, rows = "train", out_subset, selector;
  double threshold = 90.0;
  bool no_group = false;
};

int run_select(const SelectOptions& o, Manifest& m) {
  ImportanceReport report;
  if (!o.report.empty()) {
    try {
      report = report_from_json(read_json(o.report));
    } catch (const json::exception& e) {
      throw IoError("report '" + o.report + "': " + e.what());
    }
    m.input(o.report);
  } else {
    if (o.model.empty() || o.data.empty()) throw ConfigError("select needs --report or both --model and --data");
    const LoadedData L = load_for_model(o.model, o.data, o.schema);
    ExplainOptionsCli e;
    e.rows = o.rows;
    e.selector = o.selector;
    report = maybe_group(compute_report(L, e), L, !o.no_group);
    m.input(o.model);
    m.input(o.data);
    m.seeds = {{"split", L.bundle.split_seed}, {"model", L.bundle.train_seed}};
  }
  const FeatureSubset subset = select_features(report, o.threshold);
  const fs::path out = resolve_output(o.out_subset, "subset.json");
  m.config = {{"threshold", o.threshold}, {"rows", o.rows}, {"grouped", report.grouped}};
  write_outputs(m, {{out, pretty(subset_to_json(subset))}});
  m.write(manifest_for(out));
  char line[128];
  std::snprintf(line, sizeof line, "selected %zu of %zu features (%.2f%% cumulative, threshold %.2f%%)\n",
                subset.ids.size(), report.entries.size(), subset.cumulative, o.threshold);
  std::cout << line << join(subset.names, ", ") << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckOptions {
  std::uint64_t seed = 1;
  std::size_t trials = 100;
  double tolerance = 1e-5;
  std::string model;
};

/// Input-gradient checks of a saved model at random standard-normal inputs.
GradcheckResult check_saved_model(const ModelBundle& b, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  GradcheckResult res;
  res.seed = seed;
  if (b.is_recurrent()) {
    const RecurrentNetwork& rnn = b.recurrent();
    Tensor2 seq(rnn.tau, rnn.input_width());
    for (double& v : seq.values) v = normal(rng);
    const std::size_t c = b.selector.kind == OutputSelector::Kind::output_index ? b.selector.index : 0;
    const Tensor2 g = rnn_input_gradients(rnn, seq, rnn.tau - 1, OutputSelector::output(c));
    const auto fd = finite_difference_gradient(
        [&](std::span<const double> v) { return reference::evaluate(rnn, {v.begin(), v.end()}).back()[c]; },
        seq.values, 1e-5);
    for (std::size_t k = 0; k < rnn.tau; ++k) {
      for (std::size_t j = 0; j < rnn.input_width(); ++j) {
        res.max_input_error = std::max(res.max_input_error,
                                       relative_error(g(k, j), fd[(rnn.tau - 1 - k) * rnn.input_width() + j]));
        ++res.checked;
      }
    }
    return res;
  }
  const Network& net = b.network();
  Tensor2 x(1, net.input_width());
  for (int attempt = 0; attempt < 20; ++attempt) {
    for (double& v : x.values) v = normal(rng);
    if (detail::relu_margin(net, x) > 1e-3) break;
  }
  if (detail::relu_margin(net, x) <= 1e-3) {
    res.skipped = x.cols;
    return res;
  }
  const std::size_t c = reference::pick(b.selector, reference::evaluate(net, x.values));
  const auto g = input_gradient(net, x.values, OutputSelector::output(c));
  const auto fd = finite_difference_gradient(
      [&](std::span<const double> v) { return reference::evaluate(net, {v.begin(), v.end()})[c]; }, x.values,
      1e-5);
  for (std::size_t j = 0; j < g.size(); ++j) {
    res.max_input_error = std::max(res.max_input_error, relative_error(g[j], fd[j]));
    ++res.checked;
  }
  return res;
}

int run_gradcheck(const GradcheckOptions& o) {
  if (o.trials == 0) throw ConfigError("--trials must be >= 1");
  std::optional<ModelBundle> bundle;
  if (!o.model.empty()) bundle = load_model(o.model);
  std::size_t passed = 0, skipped = 0;
  double worst_in = 0.0, worst_param = 0.0;
  for (std::size_t t = 0; t < o.trials; ++t) {
    const std::uint64_t s = o.seed + t;
    const GradcheckResult r = bundle ? check_saved_model(*bundle, s) : gradient_check_trial(s);
    worst_in = std::max(worst_in, r.max_input_error);
    worst_param = std::max(worst_param, r.max_parameter_error);
    if (r.checked == 0) ++skipped;
    if (r.passed(o.tolerance)) ++passed;
  }
  char line[256];
  std::snprintf(line, sizeof line,
                "gradcheck: %zu/%zu trials passed (max rel. error: input %.3g, parameter %.3g; tolerance %.3g%s)\n",
                passed, o.trials, worst_in, worst_param, o.tolerance,
                skipped ? (", " + std::to_string(skipped) + " skipped at ReLU kinks").c_str() : "");
  std::cout << line;
  return passed == o.trials ? 0 : 1;
}

// ---------------------------------------------------------------------------
// reproduce

struct ReproduceOptions {
  std::string experiment, out, data, schema;
  std::size_t runs = 1;
  std::uint64_t seed = 1;
  std::size_t n = 10000;
  double threshold = 90.0;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

int reproduce_sim_cmd(const ReproduceOptions& o, Manifest& m, const fs::path& dir) {
  std::vector<std::pair<fs::path, std::string>> files;
  json runs = json::array();
  std::array<double, 5> mean{};
  std::optional<SimResult> first;
  for (std::size_t k = 0; k < o.runs; ++k) {
    const auto t0 = Clock::now();
    SimResult r = reproduce_sim(o.seed + k, o.n);
    m.timing("run_" + std::to_string(k + 1) + "_seconds", seconds_since(t0));
    json lam = json::array();
    for (std::size_t j = 0; j < 5; ++j) {
      mean[j] += r.report.entries[j].lambda / static_cast<double>(o.runs);
      lam.push_back(r.report.entries[j].lambda);
    }
    runs.push_back({{"seed", o.seed + k},
                    {"test_mse", r.test_mse},
                    {"stopped_epoch", r.model.report.stopped_epoch},
                    {"lambda", lam}});
    if (k == 0) first = std::move(r);
  }
  const auto closed = closed_form_oracle_lambda();
  std::ostringstream table;
  table << "feature  model (run 1)  model (mean of " << o.runs << ")  oracle (MC)  oracle SE(raw)  closed form  diff (pp)\n";
  std::string csv = "feature,model_run1,model_mean,oracle_mc,oracle_se_raw,closed_form,diff_pp\n";
  for (std::size_t j = 0; j < 5; ++j) {
    const double lam = first->report.entries[j].lambda;
    char line[256];
    std::snprintf(line, sizeof line, "X%zu       %13.2f  %18.2f  %11.2f  %14.2e  %11.2f  %9.2f\n", j + 1, lam,
                  mean[j], first->oracle.lambda[j], first->oracle.standard_error[j], closed[j],
                  lam - first->oracle.lambda[j]);
    table << line;
    std::snprintf(line, sizeof line, "X%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", j + 1, lam, mean[j],
                  first->oracle.lambda[j], first->oracle.standard_error[j], closed[j], lam - first->oracle.lambda[j]);
    csv += line;
  }
  table << "test MSE (run 1): " << fmt("%.4e", first->test_mse) << "\n";
  json summary{{"kind", "reproduce_summary"},
               {"version", 1},
               {"experiment", "sim"},
               {"runs", runs},
               {"mean_lambda", mean},
               {"oracle_lambda", first->oracle.lambda}};
  files.push_back({dir / "importance.json", pretty(report_to_json(first->report))});
  files.push_back({dir / "importance.svg", report_to_svg(first->report)});
  files.push_back({dir / "importance.txt", report_to_text(first->report)});
  files.push_back({dir / "oracle.json", pretty(oracle_to_json(first->oracle))});
  files.push_back({dir / "comparison.txt", table.str()});
  files.push_back({dir / "comparison.csv", csv});
  files.push_back({dir / "model.nnsm", serialize_model(first->model.bundle)});
  files.push_back({dir / "summary.json", pretty(summary)});
  m.config = {{"experiment", "sim"}, {"runs", o.runs}, {"n", o.n}, {"preset", "sim-regression"},
              {"train", to_json(preset_by_name("sim-regression").train)}};
  m.seeds = {{"base", o.seed}, {"split", preset_by_name("sim-regression").split_seed}};
  write_outputs(m, files);
  m.write(dir / "run_manifest.json");
  std::cout << report_to_text(first->report) << "\n" << table.str();
  return 0;
}

std::string credit_data_path(const std::string& given) {
  if (!given.empty()) return given;
  if (const char* env = std::getenv(kCreditEnv); env && *env) return env;
  if (fs::exists(kCreditDefaultPath)) return kCreditDefaultPath;
  throw IoError(std::string("credit data not found: pass --data, set ") + kCreditEnv +
                ", or run scripts/fetch_credit_data.sh (expects " + kCreditDefaultPath + ")");
}

int reproduce_credit_cmd(const ReproduceOptions& o, Manifest& m, const fs::path& dir) {
  const std::string data = credit_data_path(o.data);
  const Schema schema = o.schema.empty() ? credit_schema() : load_schema(o.schema);
  const Dataset raw = load_csv(data, schema);
  const auto t0 = Clock::now();
  const CreditResult r = reproduce_credit(raw, schema, o.runs, o.seed, o.threshold);
  m.timing("experiment_seconds", seconds_since(t0));

  auto errors = [](const ErrorSummary& s) {
    return json{{"train_mean", s.train_mean}, {"train_sd", s.train_sd}, {"test_mean", s.test_mean},
                {"test_sd", s.test_sd}};
  };
  json runs = json::array();
  for (std::size_t k = 0; k < r.full_runs.size(); ++k) {
    runs.push_back({{"seed", r.full_runs[k].seed},
                    {"full_train_error", r.full_runs[k].train_error},
                    {"full_test_error", r.full_runs[k].test_error},
                    {"reduced_train_error", r.subset_runs[k].train_error},
                    {"reduced_test_error", r.subset_runs[k].test_error}});
  }
  json summary{{"kind", "reproduce_summary"}, {"version", 1},        {"experiment", "credit"},
               {"runs", runs},                {"full", errors(r.full)}, {"reduced", errors(r.reduced)},
               {"selected", r.subset.names},  {"variable_count", r.variable_count}, {"data", data}};

  std::ostringstream table;
  auto pct = [](double v) { return fmt("%.2f%%", 100.0 * v); };
  char line[256];
  std::snprintf(line, sizeof line, "%-32s  %-9s  %-22s  %-22s\n", "model", "variables", "train error (mean ± sd)",
                "test error (mean ± sd)");
  table << line;
  std::snprintf(line, sizeof line, "%-32s  %9zu  %10s ± %-9s  %10s ± %-9s\n", "FCN, all variables", r.variable_count,
                pct(r.full.train_mean).c_str(), pct(r.full.train_sd).c_str(), pct(r.full.test_mean).c_str(),
                pct(r.full.test_sd).c_str());
  table << line;
  std::snprintf(line, sizeof line, "%-32s  %9zu  %10s ± %-9s  %10s ± %-9s\n", "FCN, after feature selection",
                r.subset.names.size(), pct(r.reduced.train_mean).c_str(), pct(r.reduced.train_sd).c_str(),
                pct(r.reduced.test_mean).c_str(), pct(r.reduced.test_sd).c_str());
  table << line;
  table << "runs: " << o.runs << ", selected (" << fmt("%.2f", r.subset.cumulative) << "% cumulative): "
        << join(r.subset.names, ", ") << "\n";
  std::string csv = "model,variables,train_mean,train_sd,test_mean,test_sd\n";
  csv += "full," + std::to_string(r.variable_count) + "," + fmt("%.17g", r.full.train_mean) + "," +
         fmt("%.17g", r.full.train_sd) + "," + fmt("%.17g", r.full.test_mean) + "," + fmt("%.17g", r.full.test_sd) + "\n";
  csv += "selected," + std::to_string(r.subset.names.size()) + "," + fmt("%.17g", r.reduced.train_mean) + "," +
         fmt("%.17g", r.reduced.train_sd) + "," + fmt("%.17g", r.reduced.test_mean) + "," +
         fmt("%.17g", r.reduced.test_sd) + "\n";

  std::vector<std::pair<fs::path, std::string>> files{
      {dir / "importance.json", pretty(report_to_json(r.report))},
      {dir / "importance.svg", report_to_svg(r.report)},
      {dir / "importance.txt", report_to_text(r.report)},
      {dir / "importance_encoded.json", pretty(report_to_json(r.encoded_report))},
      {dir / "importance_encoded.svg", report_to_svg(r.encoded_report)},
      {dir / "logistic_baseline.json", pretty(report_to_json(r.logistic_report))},
      {dir / "logistic_baseline.svg", report_to_svg(r.logistic_report)},
      {dir / "subset.json", pretty(subset_to_json(r.subset))},
      {dir / "table1.txt", table.str()},
      {dir / "table1.csv", csv},
      {dir / "summary.json", pretty(summary)}};
  m.config = {{"experiment", "credit"}, {"runs", o.runs}, {"threshold", o.threshold}, {"data", data},
              {"schema", to_json(schema)}, {"train_full", to_json(preset_by_name("credit-fcn").train)},
              {"train_reduced", to_json(preset_by_name("credit-fcn-subset").train)}};
  m.seeds = {{"base", o.seed}, {"split", preset_by_name("credit-fcn").split_seed}};
  m.input(data);
  write_outputs(m, files);
  m.write(dir / "run_manifest.json");
  std::cout << report_to_text(r.report) << "\n" << table.str();
  return 0;
}

int run_reproduce(const ReproduceOptions& o, Manifest& m) {
  if (o.runs == 0) throw ConfigError("--runs must be >= 1");
  const fs::path dir = resolve_output(o.out, "reproduce-" + o.experiment);
  if (o.experiment == "sim") return reproduce_sim_cmd(o, m, dir);
  return reproduce_credit_cmd(o, m, dir);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural-network sensitivity analysis: train, explain, select, reproduce"};
  app.set_version_flag("--version", std::string("nnsens ") + kVersion);
  app.require_subcommand(1);
  std::vector<std::string> args(argv, argv + argc);

  SimulateOptions sim;
  auto* c_sim = app.add_subcommand("simulate", "write the synthetic regression dataset as CSV");
  c_sim->add_option("--n", sim.n, "number of rows")->check(CLI::PositiveNumber);
  c_sim->add_option("--seed", sim.seed, "random seed");
  c_sim->add_option("--noise", sim.noise, "noise standard deviation");
  c_sim->add_option("--out", sim.out, "output CSV (default: $NNSENS_OUTPUT_DIR/synthetic.csv)");

  TrainOptions tr;
  auto* c_train = app.add_subcommand("train", "train a model and save it");
  c_train->add_option("--data", tr.data, "input CSV")->required();
  c_train->add_option("--schema", tr.schema, "schema JSON")->required();
  c_train->add_option("--preset", tr.preset, "sim-regression | credit-fcn | credit-fcn-subset");
  c_train->add_option("--arch", tr.arch, "architecture JSON");
  c_train->add_option("--train-config", tr.train_config, "training configuration JSON");
  c_train->add_option("--feature-subset", tr.feature_subset, "feature subset JSON from 'select'");
  c_train->add_option("--out-model", tr.out_model, "model file (default: $NNSENS_OUTPUT_DIR/model.nnsm)");
  c_train->add_option("--report", tr.report, "training report JSON (default: <model>.report.json)");
  c_train->add_option("--seed", tr.seed, "initialisation and shuffling seed");
  c_train->add_option("--split-seed", tr.split_seed, "train/test split seed");
  c_train->add_option("--train-fraction", tr.train_fraction, "share of rows for training");
  c_train->add_option("--validation-fraction", tr.validation_fraction, "share of rows for validation");
  c_train->add_option("--test-fraction", tr.test_fraction, "share of rows for testing");
  c_train->add_option("--widths", tr.widths, "layer widths, e.g. 64,2");
  c_train->add_option("--activations", tr.activations, "layer activations, e.g. tanh,softmax");
  c_train->add_option("--lr", tr.lr, "Adam learning rate");
  c_train->add_option("--decay", tr.decay, "learning-rate decay");
  c_train->add_option("--l1", tr.l1, "l1 penalty weight");
  c_train->add_option("--epochs", tr.epochs, "maximum epochs");
  c_train->add_option("--batch-size", tr.batch_size, "mini-batch size");
  c_train->add_option("--patience", tr.patience, "early-stopping patience");
  c_train->add_option("--early-stopping-fraction", tr.early_stopping_fraction,
                      "share of train rows held out for early stopping (0 disables)");

  ExplainOptionsCli ex;
  auto* c_explain = app.add_subcommand("explain", "compute an importance report");
  c_explain->add_option("--model", ex.model, "model file")->required();
  c_explain->add_option("--data", ex.data, "input CSV")->required();
  c_explain->add_option("--schema", ex.schema, "schema JSON (default: the one stored in the model)");
  c_explain->add_option("--scope", ex.scope, "global | local | lag")
      ->check(CLI::IsMember({"global", "local", "lag"}));
  c_explain->add_option("--sample-id", ex.sample_id, "row (or window) for local and local-lag reports");
  c_explain->add_option("--format", ex.format, "json | csv | svg | text")
      ->check(CLI::IsMember({"json", "csv", "svg", "text"}));
  c_explain->add_option("--rows", ex.rows, "train | test | all")->check(CLI::IsMember({"train", "test", "all"}));
  c_explain->add_option("--selector", ex.selector, "default | positive | predicted | output:N");
  c_explain->add_option("--aggregation", ex.aggregation, "many-to-one lags: lag0 | all_lags")
      ->check(CLI::IsMember({"lag0", "all_lags"}));
  c_explain->add_flag("--raw-units", ex.raw_units, "sensitivities w.r.t. unscaled inputs");
  c_explain->add_flag("--group", ex.group, "sum encoded columns per original variable");
  c_explain->add_option("--out", ex.out, "output file (default: stdout)");

  SelectOptions se;
  auto* c_select = app.add_subcommand("select", "pick the features covering a share of importance");
  c_select->add_option("--model", se.model, "model file");
  c_select->add_option("--data", se.data, "input CSV");
  c_select->add_option("--schema", se.schema, "schema JSON (default: the one stored in the model)");
  c_select->add_option("--report", se.report, "existing global importance report JSON");
  c_select->add_option("--rows", se.rows, "train | test | all")->check(CLI::IsMember({"train", "test", "all"}));
  c_select->add_option("--selector", se.selector, "default | positive | predicted | output:N");
  c_select->add_option("--threshold", se.threshold, "cumulative importance percentage");
  c_select->add_flag("--no-group", se.no_group, "select encoded columns instead of variables");
  c_select->add_option("--out-subset", se.out_subset, "subset JSON (default: $NNSENS_OUTPUT_DIR/subset.json)");

  GradcheckOptions gc;
  auto* c_grad = app.add_subcommand("gradcheck", "compare analytic gradients with finite differences");
  c_grad->add_option("--seed", gc.seed, "first trial seed");
  c_grad->add_option("--trials", gc.trials, "number of trials");
  c_grad->add_option("--tolerance", gc.tolerance, "maximum relative error");
  c_grad->add_option("--model", gc.model, "check a saved model instead of random networks");

  ReproduceOptions rp;
  auto* c_rep = app.add_subcommand("reproduce", "rerun a reference experiment end to end");
  c_rep->add_option("--experiment", rp.experiment, "sim | credit")->required()->check(CLI::IsMember({"sim", "credit"}));
  c_rep->add_option("--runs", rp.runs, "number of seeded runs");
  c_rep->add_option("--seed", rp.seed, "first run seed");
  c_rep->add_option("--out", rp.out, "output directory (default: $NNSENS_OUTPUT_DIR/reproduce-<experiment>)");
  c_rep->add_option("--data", rp.data, "credit CSV (default: $NNSENS_CREDIT_CSV or " + std::string(kCreditDefaultPath) + ")");
  c_rep->add_option("--schema", rp.schema, "credit schema JSON (default: built-in layout)");
  c_rep->add_option("--threshold", rp.threshold, "selection threshold percentage");
  c_rep->add_option("--n", rp.n, "synthetic rows")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    Manifest manifest(sub->get_name(), args);
    if (sub == c_sim) return run_simulate(sim, manifest);
    if (sub == c_train) return run_train(tr, manifest);
    if (sub == c_explain) return run_explain(ex, manifest);
    if (sub == c_select) return run_select(se, manifest);
    if (sub == c_grad) return run_gradcheck(gc);
    if (sub == c_rep) return run_reproduce(rp, manifest);
  } catch (const NumericError& e) {
    std::cerr << "nnsens: numeric error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "nnsens: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "nnsens: unexpected error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
