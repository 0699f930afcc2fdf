#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nnsens/data.hpp"
#include "nnsens/engine.hpp"
#include "nnsens/models.hpp"
#include "nnsens/sequence.hpp"

namespace nnsens {

enum class ReportScope { global, local, lag_global, lag_local };

inline std::string to_string(ReportScope s) {
  switch (s) {
    case ReportScope::global: return "global";
    case ReportScope::local: return "local";
    case ReportScope::lag_global: return "lag_global";
    case ReportScope::lag_local: return "lag_local";
  }
  return "unknown";
}

struct ImportanceEntry {
  std::size_t id = 0;
  std::string name;
  double lambda = 0.0;  // percentage
  double raw = 0.0;     // aggregated sensitivity before normalisation

  friend bool operator==(const ImportanceEntry&, const ImportanceEntry&) = default;
};

/// Normalised sensitivities, one entry per feature (or lag) in id order.
/// Lambdas are non-negative and sum to 100.
struct ImportanceReport {
  ReportScope scope = ReportScope::global;
  /// Which aggregation produced the raw values, e.g. "iid", "many_to_one".
  std::string metric;
  std::optional<std::size_t> subject;  // sample or sequence id for local scopes
  std::vector<ImportanceEntry> entries;
  double normalizer = 0.0;  // C (features) or K (lags)
  std::string selector;
  std::size_t sample_count = 0;
  bool raw_units = false;
  bool grouped = false;

  double total() const {
    double s = 0.0;
    for (const auto& e : entries) s += e.lambda;
    return s;
  }

  /// Entry positions sorted by descending lambda, ties by ascending id.
  std::vector<std::size_t> ranking() const {
    std::vector<std::size_t> order(entries.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return entries[a].lambda > entries[b].lambda;
    });
    return order;
  }

  std::vector<double> lambdas() const {
    std::vector<double> out;
    for (const auto& e : entries) out.push_back(e.lambda);
    return out;
  }

  friend bool operator==(const ImportanceReport&, const ImportanceReport&) = default;
};

/// Lag reports use entry id k = lag behind the output (0 = current step).
using LagReport = ImportanceReport;

struct FeatureSubset {
  std::vector<std::size_t> ids;
  std::vector<std::string> names;
  double cumulative = 0.0;
  double threshold = 0.0;
};

/// Options shared by the feature-importance metrics.
struct ExplainOptions {
  OutputSelector selector = OutputSelector::output(0);
  std::vector<std::string> names;
  /// When non-empty, sensitivities are chained through a standardiser:
  /// d f / d raw_j = (d f / d z_j) / scale_j (0 for constant columns).
  std::vector<double> raw_unit_scales;
};

namespace detail {

inline std::vector<std::string> names_or_default(const std::vector<std::string>& names,
                                                 std::size_t p, const std::string& prefix) {
  if (names.empty()) {
    std::vector<std::string> out;
    for (std::size_t j = 0; j < p; ++j) out.push_back(prefix + std::to_string(j + 1));
    return out;
  }
  if (names.size() != p) {
    throw ShapeError("got " + std::to_string(names.size()) + " names for " + std::to_string(p) +
                     " features");
  }
  return names;
}

/// lambda_j = 100 * raw_j / C with C = sum_j raw_j (summed in index order).
inline ImportanceReport normalize(std::vector<double> raw, std::vector<std::string> names,
                                  ReportScope scope, std::string metric) {
  double c = 0.0;
  for (double r : raw) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw NumericError("sensitivity is negative or non-finite");
    c += r;
  }
  if (!(c > 0.0)) {
    throw NumericError("the model output is insensitive to every input (normalizer C = 0); "
                       "no importance report can be formed");
  }
  ImportanceReport rep;
  rep.scope = scope;
  rep.metric = std::move(metric);
  rep.normalizer = c;
  for (std::size_t j = 0; j < raw.size(); ++j) {
    rep.entries.push_back({j, std::move(names[j]), 100.0 * (raw[j] / c), raw[j]});
  }
  return rep;
}

inline double rms(double sum_of_squares, std::size_t n) {
  return std::sqrt(sum_of_squares / static_cast<double>(n));
}

inline void chain_scales(Tensor2& jac, const std::vector<double>& scales) {
  if (scales.empty()) return;
  if (scales.size() != jac.cols) throw ShapeError("raw-unit scales do not match feature count");
  for (std::size_t i = 0; i < jac.rows; ++i) {
    for (std::size_t j = 0; j < jac.cols; ++j) {
      jac(i, j) = scales[j] == 0.0 ? 0.0 : jac(i, j) / scales[j];
    }
  }
}

inline void chain_scales(std::vector<Tensor2>& jacs, const std::vector<double>& scales) {
  for (Tensor2& j : jacs) chain_scales(j, scales);
}

/// Column-wise root-mean-square of lag row k over the sequences.
inline std::vector<double> lag_row_rms(const std::vector<Tensor2>& jacs, std::size_t k) {
  const std::size_t p = jacs.front().cols;
  std::vector<double> acc(p, 0.0);
  for (const Tensor2& j : jacs) {
    for (std::size_t f = 0; f < p; ++f) acc[f] += j(k, f) * j(k, f);
  }
  for (double& a : acc) a = rms(a, jacs.size());
  return acc;
}

inline void require_mode(const RecurrentNetwork& rnn, SequenceMode mode, const char* what) {
  if (rnn.mode != mode) {
    throw ConfigError(std::string(what) + " requires a " + to_string(mode) + " model, got " +
                      to_string(rnn.mode));
  }
}

inline void require_sequences(const SequenceBatch& batch) {
  if (batch.count == 0) throw ConfigError("importance needs at least one sequence");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Global importance

/// lambda_j proportional to sqrt(mean_i (d f(x^i) / d x_j)^2).
inline ImportanceReport global_importance_iid(const InputJacobian& jac,
                                              const std::vector<std::string>& names = {}) {
  const std::size_t n = jac.n_samples();
  const std::size_t p = jac.n_features();
  if (n == 0) throw ConfigError("global importance needs at least one sample");
  std::vector<double> acc(p, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      const double g = jac.entries(i, j);
      acc[j] += g * g;
    }
  }
  for (double& a : acc) a = detail::rms(a, n);
  auto rep = detail::normalize(std::move(acc), detail::names_or_default(names, p, "x"),
                               ReportScope::global, "iid");
  rep.sample_count = n;
  return rep;
}

inline ImportanceReport global_importance(const Network& net, const Tensor2& batch,
                                          const ExplainOptions& opt = {}) {
  InputJacobian jac = input_jacobian_batch(net, batch, opt.selector);
  detail::chain_scales(jac.entries, opt.raw_unit_scales);
  auto rep = global_importance_iid(jac, opt.names);
  rep.selector = opt.selector.describe();
  rep.raw_units = !opt.raw_unit_scales.empty();
  return rep;
}

enum class LagAggregation {
  current_step,  // derivative w.r.t. the same-step input only
  all_lags,      // sum over lags of per-lag RMS (extension, not the standard metric)
};

/// lambda_j proportional to sqrt(mean_t (d y^t / d x_j^t)^2) using the
/// final-step output of each sequence.
inline ImportanceReport global_importance_many_to_one(
    const RecurrentNetwork& rnn, const SequenceBatch& batch, const ExplainOptions& opt = {},
    LagAggregation aggregation = LagAggregation::current_step) {
  detail::require_mode(rnn, SequenceMode::many_to_one, "many-to-one importance");
  detail::require_sequences(batch);
  auto jacs = rnn_lag_jacobians(rnn, batch, rnn.tau - 1, opt.selector);
  detail::chain_scales(jacs, opt.raw_unit_scales);
  std::vector<double> raw = detail::lag_row_rms(jacs, 0);
  if (aggregation == LagAggregation::all_lags) {
    for (std::size_t k = 1; k < rnn.tau; ++k) {
      const auto r = detail::lag_row_rms(jacs, k);
      for (std::size_t j = 0; j < raw.size(); ++j) raw[j] += r[j];
    }
  }
  auto rep = detail::normalize(std::move(raw),
                               detail::names_or_default(opt.names, batch.features, "x"),
                               ReportScope::global,
                               aggregation == LagAggregation::all_lags ? "many_to_one_all_lags"
                                                                       : "many_to_one");
  rep.sample_count = batch.count;
  rep.selector = opt.selector.describe();
  rep.raw_units = !opt.raw_unit_scales.empty();
  return rep;
}

/// lambda_j proportional to (1/tau) sum_l sqrt(mean_t (d y^{t-l} / d x_j^{t-l})^2):
/// the same-step derivative RMS at every output position, averaged over positions.
inline ImportanceReport global_importance_many_to_many(const RecurrentNetwork& rnn,
                                                       const SequenceBatch& batch,
                                                       const ExplainOptions& opt = {}) {
  detail::require_mode(rnn, SequenceMode::many_to_many, "many-to-many importance");
  detail::require_sequences(batch);
  std::vector<double> raw(batch.features, 0.0);
  for (std::size_t s = 0; s < rnn.tau; ++s) {
    auto jacs = rnn_lag_jacobians(rnn, batch, s, opt.selector);
    detail::chain_scales(jacs, opt.raw_unit_scales);
    const auto r = detail::lag_row_rms(jacs, 0);
    for (std::size_t j = 0; j < raw.size(); ++j) raw[j] += r[j];
  }
  for (double& r : raw) r /= static_cast<double>(rnn.tau);
  auto rep = detail::normalize(std::move(raw),
                               detail::names_or_default(opt.names, batch.features, "x"),
                               ReportScope::global, "many_to_many");
  rep.sample_count = batch.count;
  rep.selector = opt.selector.describe();
  rep.raw_units = !opt.raw_unit_scales.empty();
  return rep;
}

// ---------------------------------------------------------------------------
// Local importance

/// lambda0_j proportional to (d f(x0) / d x_j)^2.
inline ImportanceReport local_importance(const Network& net, std::span<const double> x0,
                                         const ExplainOptions& opt = {},
                                         std::optional<std::size_t> sample_id = std::nullopt) {
  InputJacobian jac = input_jacobian_batch(net, Tensor2::row_vector(x0), opt.selector);
  detail::chain_scales(jac.entries, opt.raw_unit_scales);
  std::vector<double> raw;
  for (double g : jac.entries.values) raw.push_back(g * g);
  auto rep = detail::normalize(std::move(raw), detail::names_or_default(opt.names, x0.size(), "x"),
                               ReportScope::local, "local");
  rep.subject = sample_id;
  rep.sample_count = 1;
  rep.selector = opt.selector.describe();
  rep.raw_units = !opt.raw_unit_scales.empty();
  return rep;
}

/// Recurrent local importance of one (tau x p) sequence: squared same-step
/// derivatives of the final output (many_to_one) or their mean over the tau
/// output positions (many_to_many).
inline ImportanceReport local_importance(const RecurrentNetwork& rnn, const Tensor2& sequence,
                                         const ExplainOptions& opt = {},
                                         std::optional<std::size_t> sequence_id = std::nullopt) {
  const SequenceBatch one = SequenceBatch::from_sequence(sequence);
  std::vector<double> raw(sequence.cols, 0.0);
  const bool per_step = rnn.mode == SequenceMode::many_to_many;
  const std::size_t first = per_step ? 0 : rnn.tau - 1;
  for (std::size_t s = first; s < rnn.tau; ++s) {
    auto jacs = rnn_lag_jacobians(rnn, one, s, opt.selector);
    detail::chain_scales(jacs, opt.raw_unit_scales);
    for (std::size_t j = 0; j < raw.size(); ++j) raw[j] += jacs[0](0, j) * jacs[0](0, j);
  }
  if (per_step) {
    for (double& r : raw) r /= static_cast<double>(rnn.tau);
  }
  auto rep = detail::normalize(std::move(raw),
                               detail::names_or_default(opt.names, sequence.cols, "x"),
                               ReportScope::local, per_step ? "local_many_to_many" : "local_many_to_one");
  rep.subject = sequence_id;
  rep.sample_count = 1;
  rep.selector = opt.selector.describe();
  rep.raw_units = !opt.raw_unit_scales.empty();
  return rep;
}

// ---------------------------------------------------------------------------
// Time-lag importance

namespace detail {

inline LagReport lag_report_from(const std::vector<Tensor2>& jacs, std::size_t tau,
                                 ReportScope scope) {
  const std::size_t p = jacs.front().cols;
  std::vector<double> raw(tau, 0.0);
  for (std::size_t k = 0; k < tau; ++k) {
    const auto r = lag_row_rms(jacs, k);
    double s = 0.0;
    for (double v : r) s += v;
    raw[k] = s / static_cast<double>(p);
  }
  std::vector<std::string> names;
  for (std::size_t k = 0; k < tau; ++k) names.push_back("lag " + std::to_string(k));
  try {
    auto rep = normalize(std::move(raw), std::move(names), scope, "lag");
    rep.sample_count = jacs.size();
    return rep;
  } catch (const NumericError&) {
    throw NumericError("the model output is insensitive to every lag (normalizer K = 0)");
  }
}

}  // namespace detail

/// gamma_k proportional to (1/p) sum_j sqrt(mean_t (d y^t / d x_j^{t-k})^2).
inline LagReport lag_importance_global(const RecurrentNetwork& rnn, const SequenceBatch& batch,
                                       const OutputSelector& selector = OutputSelector::output(0)) {
  detail::require_mode(rnn, SequenceMode::many_to_one, "lag importance");
  detail::require_sequences(batch);
  const auto jacs = rnn_lag_jacobians(rnn, batch, rnn.tau - 1, selector);
  auto rep = detail::lag_report_from(jacs, rnn.tau, ReportScope::lag_global);
  rep.selector = selector.describe();
  return rep;
}

/// Single-sequence gamma_k: the average over sequences is dropped.
inline LagReport lag_importance_local(const RecurrentNetwork& rnn, const Tensor2& sequence,
                                      const OutputSelector& selector = OutputSelector::output(0),
                                      std::optional<std::size_t> sequence_id = std::nullopt) {
  detail::require_mode(rnn, SequenceMode::many_to_one, "lag importance");
  const auto jacs =
      rnn_lag_jacobians(rnn, SequenceBatch::from_sequence(sequence), rnn.tau - 1, selector);
  auto rep = detail::lag_report_from(jacs, rnn.tau, ReportScope::lag_local);
  rep.subject = sequence_id;
  rep.selector = selector.describe();
  return rep;
}

// ---------------------------------------------------------------------------
// Grouping and selection

/// Sums member lambdas per group. `groups` must partition the entry ids.
inline ImportanceReport group_importance(const ImportanceReport& report,
                                         const std::vector<FeatureGroup>& groups) {
  std::vector<int> hits(report.entries.size(), 0);
  for (const FeatureGroup& g : groups) {
    if (g.members.empty()) throw ConfigError("group '" + g.name + "' has no members");
    for (std::size_t m : g.members) {
      if (m >= hits.size()) {
        throw ConfigError("group '" + g.name + "' names feature " + std::to_string(m) +
                          " beyond the report's " + std::to_string(hits.size()) + " entries");
      }
      ++hits[m];
    }
  }
  for (std::size_t j = 0; j < hits.size(); ++j) {
    if (hits[j] != 1) {
      throw ConfigError("group map is not a partition: feature " + std::to_string(j) +
                        " appears in " + std::to_string(hits[j]) + " groups");
    }
  }
  ImportanceReport out = report;
  out.entries.clear();
  out.grouped = true;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    ImportanceEntry e{g, groups[g].name, 0.0, 0.0};
    for (std::size_t m : groups[g].members) {
      e.lambda += report.entries[m].lambda;
      e.raw += report.entries[m].raw;
    }
    out.entries.push_back(std::move(e));
  }
  return out;
}

/// Smallest prefix of the descending ranking whose cumulative lambda reaches
/// `threshold` percent (with 1e-9 slack for rounding in the normalisation).
inline FeatureSubset select_features(const ImportanceReport& report, double threshold = 90.0) {
  if (!(threshold > 0.0 && threshold <= 100.0)) {
    throw ConfigError("selection threshold must lie in (0, 100]");
  }
  if (report.scope != ReportScope::global) {
    throw ConfigError("feature selection needs a global report");
  }
  FeatureSubset out;
  out.threshold = threshold;
  for (std::size_t pos : report.ranking()) {
    if (out.cumulative + 1e-9 >= threshold) break;
    out.ids.push_back(report.entries[pos].id);
    out.names.push_back(report.entries[pos].name);
    out.cumulative += report.entries[pos].lambda;
  }
  return out;
}

}  // namespace nnsens
