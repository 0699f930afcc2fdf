#pragma once

// End-to-end pipelines shared by the command-line tool and the acceptance
// suite: presets, train-on-raw-data, and the two reproduction experiments.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nnsens/data.hpp"
#include "nnsens/explain.hpp"
#include "nnsens/models.hpp"
#include "nnsens/serialize.hpp"
#include "nnsens/training.hpp"
#include "nnsens/validation.hpp"

namespace nnsens {

struct Preset {
  std::string name;
  std::vector<std::size_t> widths;
  std::vector<Activation> activations;
  TrainConfig train;
  SplitFractions split;
  std::uint64_t split_seed = 0;
  bool standardize = true;
};

/// sim-regression: 5 -> 64 -> 32 -> 1 ReLU net, MSE, 85/15 split.
/// credit-fcn: 64 tanh units, 2-way softmax, Adam lr 0.002 with inverse-time
/// decay 0.001, l1 0.01, at most 100 epochs, 25/30 of rows for training.
/// credit-fcn-subset: the 32-unit unregularised variant used after selection.
inline Preset preset_by_name(const std::string& name) {
  Preset p;
  p.name = name;
  if (name == "sim-regression") {
    p.widths = {64, 32, 1};
    p.activations = {Activation::relu, Activation::relu, Activation::linear};
    p.train.loss = LossKind::mse;
    p.train.learning_rate = 1e-3;
    p.train.max_epochs = 300;
    p.train.batch_size = 32;
    p.train.patience = 30;
    p.train.validation_fraction = 0.1;
    p.split = {0.85, 0.0, 0.15};
    p.split_seed = 2;
    return p;
  }
  if (name == "credit-fcn" || name == "credit-fcn-subset") {
    const bool subset = name == "credit-fcn-subset";
    p.widths = {subset ? std::size_t{32} : std::size_t{64}, 2};
    p.activations = {Activation::tanh, Activation::softmax};
    p.train.loss = LossKind::cross_entropy;
    p.train.learning_rate = 0.002;
    p.train.decay = 0.001;
    p.train.decay_mode = DecayMode::inverse_time_epoch;
    p.train.l1_weight = subset ? 0.0 : 0.01;
    p.train.max_epochs = 100;
    p.train.batch_size = 128;
    p.train.patience = 10;
    p.train.validation_fraction = 0.1;
    p.split = {25.0 / 30.0, 0.0, 5.0 / 30.0};
    p.split_seed = 4;
    return p;
  }
  throw ConfigError("unknown preset '" + name + "' (expected sim-regression, credit-fcn, credit-fcn-subset)");
}

/// split -> one-hot (fitted on train rows) -> standardise (fitted on train rows).
inline Dataset prepare(const Dataset& raw, const SplitFractions& fractions, std::uint64_t seed,
                       bool standardize_inputs) {
  Dataset ds = split(raw, fractions, seed);
  ds = one_hot_encode(ds);
  if (standardize_inputs) ds = standardize(ds);
  return ds;
}

struct TrainedModel {
  ModelBundle bundle;
  TrainReport report;
  Dataset data;  // encoded and scaled, with split
};

/// Builds the preset architecture on the prepared data and trains it.
inline TrainedModel train_model(const Dataset& raw, const std::optional<Schema>& schema,
                                const Preset& preset, std::uint64_t model_seed) {
  TrainedModel out;
  out.data = prepare(raw, preset.split, preset.split_seed, preset.standardize);
  ModelSpec spec;
  spec.architecture = Architecture::mlp;
  spec.input_width = out.data.width();
  spec.widths = preset.widths;
  spec.activations = preset.activations;
  spec.seed = model_seed;
  Network net = build_mlp(spec);
  TrainConfig cfg = preset.train;
  cfg.seed = model_seed;
  out.report = train(net, out.data, cfg);
  out.bundle.spec = spec;
  out.bundle.model = std::move(net);
  out.bundle.preprocessing = out.data.preprocessing;
  out.bundle.schema = schema;
  out.bundle.split_fractions = preset.split;
  out.bundle.split_seed = preset.split_seed;
  out.bundle.train_seed = model_seed;
  out.bundle.feature_names = out.data.feature_names();
  out.bundle.selector = default_selector(out.data.classification, preset.widths.back());
  return out;
}

/// Global importance of a feed-forward bundle on the given rows of prepared data.
inline ImportanceReport explain_rows(const ModelBundle& bundle, const Dataset& ds,
                                     const std::vector<std::size_t>& rows, bool raw_units = false) {
  ExplainOptions opt;
  opt.selector = bundle.selector;
  opt.names = ds.feature_names();
  if (raw_units) opt.raw_unit_scales = ds.preprocessing.scales;
  return global_importance(bundle.network(), ds.features.gather_rows(rows), opt);
}

// ---------------------------------------------------------------------------
// Recurrent data

struct SequenceData {
  Dataset prepared;  // encoded and scaled rows, time-ordered
  SequenceBatch batch;
  std::vector<SplitRole> roles;  // one per window
};

/// Encodes and standardises every row (fitted on all rows unless `fitted`
/// is given), appends the target as the last series column, cuts windows of
/// length tau, and assigns each window a seeded split role.
inline SequenceData prepare_sequences(const Dataset& raw, const Preprocessing* fitted, std::size_t tau,
                                      SequenceMode mode, const SplitFractions& fractions,
                                      std::uint64_t split_seed) {
  SequenceData out;
  if (fitted) {
    out.prepared = apply_preprocessing(raw, *fitted);
  } else {
    Dataset all = raw;
    all.split.assign(raw.rows(), SplitRole::train);
    out.prepared = standardize(one_hot_encode(all));
  }
  out.prepared.split.clear();
  const std::size_t p = out.prepared.width();
  Tensor2 series(out.prepared.rows(), p + 1);
  for (std::size_t i = 0; i < series.rows; ++i) {
    for (std::size_t j = 0; j < p; ++j) series(i, j) = out.prepared.features(i, j);
    series(i, p) = out.prepared.targets[i];
  }
  out.batch = windowize(series, tau, p, mode);
  Dataset index_view;
  index_view.features = Tensor2(out.batch.count, 0);
  out.roles = split(index_view, fractions, split_seed).split;
  return out;
}

inline std::vector<std::size_t> windows_with(const std::vector<SplitRole>& roles, SplitRole role) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < roles.size(); ++i) {
    if (roles[i] == role) out.push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Credit-default layout

/// Column layout of the UCI "default of credit card clients" table: ID is
/// ignored, SEX/EDUCATION/MARRIAGE are categorical, the rest numeric.
inline Schema credit_schema() {
  Schema s;
  s.target = "default payment next month";
  s.classification = true;
  s.ignore = {"ID"};
  std::vector<std::string> names{"LIMIT_BAL", "SEX", "EDUCATION", "MARRIAGE", "AGE", "PAY_0"};
  for (int k = 2; k <= 6; ++k) names.push_back("PAY_" + std::to_string(k));
  for (int k = 1; k <= 6; ++k) names.push_back("BILL_AMT" + std::to_string(k));
  for (int k = 1; k <= 6; ++k) names.push_back("PAY_AMT" + std::to_string(k));
  for (const std::string& n : names) {
    const bool cat = n == "SEX" || n == "EDUCATION" || n == "MARRIAGE";
    s.columns.push_back({n, cat ? ColumnKind::categorical : ColumnKind::numeric});
  }
  return s;
}

// ---------------------------------------------------------------------------
// Synthetic regression experiment

struct SimResult {
  TrainedModel model;
  double test_mse = 0.0;
  ImportanceReport report;  // raw-unit sensitivities on the train rows
  OracleReport oracle;
};

inline SimResult reproduce_sim(std::uint64_t seed = 1, std::size_t n = 10000) {
  const Preset preset = preset_by_name("sim-regression");
  SimResult r;
  const Dataset raw = generate_synthetic(n, 0.1, seed);
  r.model = train_model(raw, std::nullopt, preset, seed);
  r.test_mse = r.model.report.test_error;
  r.report = explain_rows(r.model.bundle, r.model.data, r.model.data.rows_with(SplitRole::train), true);
  r.oracle = true_importance_oracle(1000000, seed + 1000);
  return r;
}

// ---------------------------------------------------------------------------
// Credit-default experiment

struct RunErrors {
  std::uint64_t seed = 0;
  double train_error = 0.0;
  double test_error = 0.0;
  std::size_t stopped_epoch = 0;
};

struct ErrorSummary {
  double train_mean = 0.0, train_sd = 0.0, test_mean = 0.0, test_sd = 0.0;
};

inline ErrorSummary summarize(const std::vector<RunErrors>& runs) {
  ErrorSummary s;
  const double n = static_cast<double>(runs.size());
  for (const auto& r : runs) {
    s.train_mean += r.train_error / n;
    s.test_mean += r.test_error / n;
  }
  if (runs.size() > 1) {
    for (const auto& r : runs) {
      s.train_sd += (r.train_error - s.train_mean) * (r.train_error - s.train_mean);
      s.test_sd += (r.test_error - s.test_mean) * (r.test_error - s.test_mean);
    }
    s.train_sd = std::sqrt(s.train_sd / (n - 1.0));
    s.test_sd = std::sqrt(s.test_sd / (n - 1.0));
  }
  return s;
}

struct CreditResult {
  ImportanceReport encoded_report;  // per encoded column, first full model
  ImportanceReport report;          // rolled up to original variables
  ImportanceReport logistic_report; // rolled up to original variables
  FeatureSubset subset;
  std::vector<RunErrors> full_runs;
  std::vector<RunErrors> subset_runs;
  ErrorSummary full;
  ErrorSummary reduced;
  std::size_t variable_count = 0;
};

/// Trains the full model `runs` times (distinct seeds, same split), explains
/// the first one, selects the variables covering `threshold` percent, and
/// retrains the smaller subset model `runs` times.
inline CreditResult reproduce_credit(const Dataset& raw, const Schema& schema, std::size_t runs,
                                     std::uint64_t base_seed = 1, double threshold = 90.0) {
  if (runs == 0) throw ConfigError("runs must be >= 1");
  const Preset full = preset_by_name("credit-fcn");
  const Preset reduced = preset_by_name("credit-fcn-subset");
  CreditResult r;
  r.variable_count = raw.width();
  for (std::size_t k = 0; k < runs; ++k) {
    const std::uint64_t seed = base_seed + k;
    TrainedModel m = train_model(raw, schema, full, seed);
    r.full_runs.push_back({seed, m.report.train_error, m.report.test_error, m.report.stopped_epoch});
    if (k == 0) {
      r.encoded_report = explain_rows(m.bundle, m.data, m.data.rows_with(SplitRole::train));
      r.report = group_importance(r.encoded_report, m.data.groups());
      r.subset = select_features(r.report, threshold);
      r.logistic_report = group_importance(logistic_baseline_importance(m.data), m.data.groups());
    }
  }
  const Dataset raw_subset = select_variables(raw, r.subset.names);
  const Schema subset_schema = schema.restricted_to(r.subset.names);
  for (std::size_t k = 0; k < runs; ++k) {
    const std::uint64_t seed = base_seed + k;
    TrainedModel m = train_model(raw_subset, subset_schema, reduced, seed);
    r.subset_runs.push_back({seed, m.report.train_error, m.report.test_error, m.report.stopped_epoch});
  }
  r.full = summarize(r.full_runs);
  r.reduced = summarize(r.subset_runs);
  return r;
}

}  // namespace nnsens
