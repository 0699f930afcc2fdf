#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "nnsens/sequence.hpp"
#include "nnsens/tensor.hpp"

namespace nnsens {

enum class ColumnKind { numeric, categorical };

inline std::string to_string(ColumnKind k) {
  return k == ColumnKind::numeric ? "numeric" : "categorical";
}

inline ColumnKind parse_column_kind(const std::string& s) {
  if (s == "numeric") return ColumnKind::numeric;
  if (s == "categorical") return ColumnKind::categorical;
  throw ConfigError("unknown column kind '" + s + "'");
}

enum class SplitRole : std::uint8_t { train, validation, test };

/// One feature column. Before encoding, a categorical column stores level
/// codes (indices into `levels`); after encoding every column is numeric and
/// `source` names the original variable it came from.
struct Column {
  std::string name;
  ColumnKind kind = ColumnKind::numeric;
  std::size_t group = 0;
  std::string source;
  std::vector<std::string> levels;

  friend bool operator==(const Column&, const Column&) = default;
};

/// Encoded columns sharing one original variable.
struct FeatureGroup {
  std::string name;
  std::vector<std::size_t> members;

  friend bool operator==(const FeatureGroup&, const FeatureGroup&) = default;
};

/// Levels observed for one categorical variable on the training rows.
struct CategoryMap {
  std::string column;
  std::vector<std::string> levels;

  friend bool operator==(const CategoryMap&, const CategoryMap&) = default;
};

/// Fitted preprocessing parameters, reusable on new data.
struct Preprocessing {
  std::vector<CategoryMap> categories;
  std::vector<double> means;
  std::vector<double> scales;  // 0 marks a constant column

  bool encoded() const { return !categories.empty(); }
  bool standardized() const { return !means.empty(); }

  friend bool operator==(const Preprocessing&, const Preprocessing&) = default;
};

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::numeric;

  friend bool operator==(const ColumnSpec&, const ColumnSpec&) = default;
};

/// Declares the feature columns, their kinds, and the target of a CSV file.
struct Schema {
  std::string target;
  bool classification = false;
  std::vector<ColumnSpec> columns;
  std::vector<std::string> ignore;

  /// Copy keeping only the named variables (in schema order).
  Schema restricted_to(const std::vector<std::string>& keep) const {
    Schema out = *this;
    out.columns.clear();
    for (const ColumnSpec& c : columns) {
      if (std::find(keep.begin(), keep.end(), c.name) != keep.end()) out.columns.push_back(c);
      else out.ignore.push_back(c.name);
    }
    for (const std::string& k : keep) {
      const bool known = std::any_of(columns.begin(), columns.end(),
                                     [&](const ColumnSpec& c) { return c.name == k; });
      if (!known) throw ConfigError("feature subset names unknown variable '" + k + "'");
    }
    if (out.columns.empty()) throw ConfigError("feature subset is empty");
    return out;
  }

  friend bool operator==(const Schema&, const Schema&) = default;
};

struct Dataset {
  Tensor2 features;
  std::vector<double> targets;
  std::string target_name;
  bool classification = false;
  std::vector<Column> columns;
  std::vector<SplitRole> split;  // empty until split() is applied
  Preprocessing preprocessing;
  std::vector<std::string> warnings;

  std::size_t rows() const { return features.rows; }
  std::size_t width() const { return features.cols; }

  std::vector<std::size_t> rows_with(SplitRole role) const {
    if (split.size() != features.rows) throw ConfigError("dataset has no split assignment");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < split.size(); ++i) {
      if (split[i] == role) out.push_back(i);
    }
    return out;
  }

  std::vector<std::string> feature_names() const {
    std::vector<std::string> out;
    for (const Column& c : columns) out.push_back(c.name);
    return out;
  }

  std::vector<FeatureGroup> groups() const {
    std::vector<FeatureGroup> out;
    for (std::size_t j = 0; j < columns.size(); ++j) {
      const std::string& src = columns[j].source.empty() ? columns[j].name : columns[j].source;
      auto it = std::find_if(out.begin(), out.end(),
                             [&](const FeatureGroup& g) { return g.name == src; });
      if (it == out.end()) out.push_back({src, {j}});
      else it->members.push_back(j);
    }
    return out;
  }

  std::size_t class_count() const {
    if (!classification) return 0;
    double m = 0.0;
    for (double t : targets) m = std::max(m, t);
    return static_cast<std::size_t>(m) + 1;
  }

  void validate() const {
    if (columns.size() != features.cols) {
      throw ShapeError("dataset has " + std::to_string(columns.size()) + " columns but width " +
                       std::to_string(features.cols));
    }
    if (targets.size() != features.rows) {
      throw ShapeError("dataset has " + std::to_string(targets.size()) + " targets for " +
                       std::to_string(features.rows) + " rows");
    }
    if (!split.empty() && split.size() != features.rows) {
      throw ShapeError("split assignment does not cover every row");
    }
  }
};

// ---------------------------------------------------------------------------
// CSV loading

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

/// Splits one CSV record; double-quoted fields may contain commas and "" escapes.
inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      cells.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  cells.push_back(trim(cur));
  return cells;
}

inline bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (*b == '+') ++b;
  const auto res = std::from_chars(b, e, out);
  return res.ec == std::errc() && res.ptr == e && std::isfinite(out);
}

/// Orders category labels numerically when both parse as numbers.
inline bool level_less(const std::string& a, const std::string& b) {
  double x = 0.0, y = 0.0;
  const bool na = parse_double(a, x);
  const bool nb = parse_double(b, y);
  if (na && nb) return x < y;
  if (na != nb) return na;
  return a < b;
}

}  // namespace detail

/// Reads a header-first CSV. Every header column must be the target, a
/// schema column, or listed in `ignore`. Numeric cells must parse as finite
/// doubles; categorical cells are stored as level codes.
inline Dataset load_csv(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty()) {
    throw IoError("'" + path + "' is empty (no header row)");
  }
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);
  const auto header = detail::split_csv_line(line);

  std::map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < header.size(); ++i) position[header[i]] = i;
  if (!position.contains(schema.target)) {
    throw IoError("'" + path + "': target column '" + schema.target + "' not found in header");
  }
  std::vector<std::size_t> source_index;
  for (const ColumnSpec& c : schema.columns) {
    auto it = position.find(c.name);
    if (it == position.end()) {
      throw IoError("'" + path + "': schema column '" + c.name + "' not found in header");
    }
    source_index.push_back(it->second);
  }
  for (const std::string& h : header) {
    const bool known = h == schema.target ||
                       std::find(schema.ignore.begin(), schema.ignore.end(), h) !=
                           schema.ignore.end() ||
                       std::any_of(schema.columns.begin(), schema.columns.end(),
                                   [&](const ColumnSpec& c) { return c.name == h; });
    if (!known) throw IoError("'" + path + "': header column '" + h + "' is not in the schema");
  }

  Dataset ds;
  ds.target_name = schema.target;
  ds.classification = schema.classification;
  for (std::size_t j = 0; j < schema.columns.size(); ++j) {
    ds.columns.push_back({schema.columns[j].name, schema.columns[j].kind, j,
                          schema.columns[j].name, {}});
  }
  std::vector<std::map<std::string, std::size_t>> level_codes(schema.columns.size());
  std::vector<double> values;
  const std::size_t target_pos = position[schema.target];
  std::size_t row = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    ++row;
    const auto cells = detail::split_csv_line(line);
    const std::string where =
        "'" + path + "' data row " + std::to_string(row) + " (line " + std::to_string(line_no) + ")";
    if (cells.size() != header.size()) {
      throw IoError(where + ": expected " + std::to_string(header.size()) + " cells, got " +
                    std::to_string(cells.size()));
    }
    for (std::size_t j = 0; j < schema.columns.size(); ++j) {
      const std::string& cell = cells[source_index[j]];
      if (schema.columns[j].kind == ColumnKind::numeric) {
        double v = 0.0;
        if (!detail::parse_double(cell, v)) {
          throw IoError(where + ", column '" + schema.columns[j].name + "': '" + cell +
                        "' is not a number");
        }
        values.push_back(v);
      } else {
        if (cell.empty()) {
          throw IoError(where + ", column '" + schema.columns[j].name + "': empty category");
        }
        auto [it, inserted] = level_codes[j].try_emplace(cell, ds.columns[j].levels.size());
        if (inserted) ds.columns[j].levels.push_back(cell);
        values.push_back(static_cast<double>(it->second));
      }
    }
    double t = 0.0;
    if (!detail::parse_double(cells[target_pos], t)) {
      throw IoError(where + ", target '" + schema.target + "': '" + cells[target_pos] +
                    "' is not a number");
    }
    if (schema.classification && (t < 0.0 || t != std::floor(t))) {
      throw IoError(where + ", target '" + schema.target + "': class label '" +
                    cells[target_pos] + "' must be a non-negative integer");
    }
    ds.targets.push_back(t);
  }
  if (row == 0) throw IoError("'" + path + "' has a header but no data rows");
  ds.features = Tensor2(row, schema.columns.size(), std::move(values));
  ds.validate();
  return ds;
}

/// Keeps only the named original variables of a raw (unencoded) dataset.
inline Dataset select_variables(const Dataset& ds, const std::vector<std::string>& keep) {
  std::vector<std::size_t> cols;
  for (const std::string& k : keep) {
    auto it = std::find_if(ds.columns.begin(), ds.columns.end(),
                           [&](const Column& c) { return c.name == k; });
    if (it == ds.columns.end()) throw ConfigError("unknown variable '" + k + "'");
    cols.push_back(static_cast<std::size_t>(it - ds.columns.begin()));
  }
  std::sort(cols.begin(), cols.end());
  cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
  if (cols.empty()) throw ConfigError("variable selection is empty");
  Dataset out = ds;
  out.columns.clear();
  out.features = Tensor2(ds.rows(), cols.size());
  for (std::size_t c = 0; c < cols.size(); ++c) {
    out.columns.push_back(ds.columns[cols[c]]);
    out.columns.back().group = c;
    for (std::size_t i = 0; i < ds.rows(); ++i) out.features(i, c) = ds.features(i, cols[c]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitFractions {
  double train = 1.0;
  double validation = 0.0;
  double test = 0.0;

  friend bool operator==(const SplitFractions&, const SplitFractions&) = default;
};

/// Seeded shuffle, then the first round(train*n) rows go to train, the next
/// round(validation*n) to validation, and the rest to test.
inline Dataset split(Dataset ds, const SplitFractions& f, std::uint64_t seed) {
  if (f.train < 0.0 || f.validation < 0.0 || f.test < 0.0 ||
      std::abs(f.train + f.validation + f.test - 1.0) > 1e-9) {
    throw ConfigError("split fractions must be non-negative and sum to 1");
  }
  const std::size_t n = ds.rows();
  const auto n_train = static_cast<std::size_t>(std::llround(f.train * static_cast<double>(n)));
  const auto n_val =
      static_cast<std::size_t>(std::llround(f.validation * static_cast<double>(n)));
  if (n_train + n_val > n) throw ConfigError("split fractions exceed the row count");
  const std::size_t n_test = n - n_train - n_val;
  if ((f.train > 0.0 && n_train == 0) || (f.validation > 0.0 && n_val == 0) ||
      (f.test > 0.0 && n_test == 0)) {
    throw ConfigError("split of " + std::to_string(n) + " rows leaves a requested part empty");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  ds.split.assign(n, SplitRole::test);
  for (std::size_t i = 0; i < n_train; ++i) ds.split[order[i]] = SplitRole::train;
  for (std::size_t i = n_train; i < n_train + n_val; ++i) ds.split[order[i]] = SplitRole::validation;
  return ds;
}

/// Fractions for an exact (train, test) row count split.
inline SplitFractions fractions_for_counts(std::size_t rows, std::size_t train_rows) {
  const double tr = static_cast<double>(train_rows) / static_cast<double>(rows);
  return {tr, 0.0, 1.0 - tr};
}

// ---------------------------------------------------------------------------
// One-hot encoding

/// Levels of every categorical column observed on the train rows (all rows
/// when no split is assigned), in natural order.
inline std::vector<CategoryMap> fit_one_hot(const Dataset& ds) {
  std::vector<CategoryMap> maps;
  const bool has_split = !ds.split.empty();
  for (std::size_t j = 0; j < ds.columns.size(); ++j) {
    const Column& c = ds.columns[j];
    if (c.kind != ColumnKind::categorical) continue;
    std::vector<bool> seen(c.levels.size(), false);
    for (std::size_t i = 0; i < ds.rows(); ++i) {
      if (has_split && ds.split[i] != SplitRole::train) continue;
      seen[static_cast<std::size_t>(ds.features(i, j))] = true;
    }
    CategoryMap m{c.name, {}};
    for (std::size_t k = 0; k < c.levels.size(); ++k) {
      if (seen[k]) m.levels.push_back(c.levels[k]);
    }
    std::sort(m.levels.begin(), m.levels.end(), detail::level_less);
    maps.push_back(std::move(m));
  }
  return maps;
}

/// Expands categorical columns into indicator columns named "VAR=level".
/// Rows whose level is absent from the map get all-zero indicators.
inline Dataset apply_one_hot(const Dataset& ds, const std::vector<CategoryMap>& maps) {
  Dataset out;
  out.targets = ds.targets;
  out.target_name = ds.target_name;
  out.classification = ds.classification;
  out.split = ds.split;
  out.preprocessing = ds.preprocessing;
  out.preprocessing.categories = maps;
  out.warnings = ds.warnings;

  struct Plan {
    std::size_t source;
    bool categorical = false;
    std::size_t width = 1;
    std::vector<std::ptrdiff_t> code_to_slot;  // -1 for unseen
  };
  std::vector<Plan> plans;
  std::size_t group = 0;
  for (std::size_t j = 0; j < ds.columns.size(); ++j, ++group) {
    const Column& c = ds.columns[j];
    if (c.kind == ColumnKind::numeric) {
      out.columns.push_back({c.name, ColumnKind::numeric, group,
                             c.source.empty() ? c.name : c.source, {}});
      plans.push_back({j, false, 1, {}});
      continue;
    }
    auto it = std::find_if(maps.begin(), maps.end(),
                           [&](const CategoryMap& m) { return m.column == c.name; });
    if (it == maps.end()) throw ConfigError("no category map for column '" + c.name + "'");
    Plan p{j, true, it->levels.size(), std::vector<std::ptrdiff_t>(c.levels.size(), -1)};
    for (std::size_t k = 0; k < c.levels.size(); ++k) {
      auto pos = std::find(it->levels.begin(), it->levels.end(), c.levels[k]);
      if (pos != it->levels.end()) p.code_to_slot[k] = pos - it->levels.begin();
    }
    for (const std::string& level : it->levels) {
      out.columns.push_back({c.name + "=" + level, ColumnKind::numeric, group, c.name, {}});
    }
    plans.push_back(std::move(p));
  }

  out.features = Tensor2(ds.rows(), out.columns.size());
  std::size_t unseen = 0;
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    std::size_t dst = 0;
    for (const Plan& p : plans) {
      const double v = ds.features(i, p.source);
      if (!p.categorical) {
        out.features(i, dst++) = v;
        continue;
      }
      const auto slot = p.code_to_slot[static_cast<std::size_t>(v)];
      if (slot >= 0) out.features(i, dst + static_cast<std::size_t>(slot)) = 1.0;
      else ++unseen;
      dst += p.width;
    }
  }
  if (unseen > 0) {
    out.warnings.push_back(std::to_string(unseen) +
                           " categorical cell(s) had levels unseen in training; encoded as zeros");
  }
  out.validate();
  return out;
}

inline Dataset one_hot_encode(const Dataset& ds) {
  const bool any_categorical = std::any_of(ds.columns.begin(), ds.columns.end(), [](const Column& c) {
    return c.kind == ColumnKind::categorical;
  });
  if (!any_categorical) return ds;
  return apply_one_hot(ds, fit_one_hot(ds));
}

// ---------------------------------------------------------------------------
// Standardisation

/// Means and population standard deviations of the train rows.
inline std::pair<std::vector<double>, std::vector<double>> fit_scaler(const Dataset& ds) {
  const auto rows = ds.rows_with(SplitRole::train);
  if (rows.empty()) throw ConfigError("cannot fit scaler: no train rows");
  const std::size_t p = ds.width();
  std::vector<double> mean(p, 0.0), scale(p, 0.0);
  for (std::size_t i : rows) {
    for (std::size_t j = 0; j < p; ++j) mean[j] += ds.features(i, j);
  }
  for (double& m : mean) m /= static_cast<double>(rows.size());
  for (std::size_t i : rows) {
    for (std::size_t j = 0; j < p; ++j) {
      const double d = ds.features(i, j) - mean[j];
      scale[j] += d * d;
    }
  }
  for (std::size_t j = 0; j < p; ++j) {
    scale[j] = std::sqrt(scale[j] / static_cast<double>(rows.size()));
    if (!(scale[j] > 1e-12 * std::max(1.0, std::abs(mean[j])))) scale[j] = 0.0;
  }
  return {std::move(mean), std::move(scale)};
}

/// (x - mean) / scale per column; constant columns (scale 0) map to 0.
inline Dataset apply_scaler(Dataset ds, const std::vector<double>& mean,
                            const std::vector<double>& scale) {
  if (mean.size() != ds.width() || scale.size() != ds.width()) {
    throw ShapeError("scaler fitted for " + std::to_string(mean.size()) +
                     " columns applied to width " + std::to_string(ds.width()));
  }
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    for (std::size_t j = 0; j < ds.width(); ++j) {
      double& v = ds.features(i, j);
      v = scale[j] == 0.0 ? 0.0 : (v - mean[j]) / scale[j];
    }
  }
  ds.preprocessing.means = mean;
  ds.preprocessing.scales = scale;
  return ds;
}

inline Dataset standardize(const Dataset& ds) {
  auto [mean, scale] = fit_scaler(ds);
  Dataset out = apply_scaler(ds, mean, scale);
  for (std::size_t j = 0; j < scale.size(); ++j) {
    if (scale[j] == 0.0) {
      out.warnings.push_back("column '" + out.columns[j].name +
                             "' is constant on the train rows; mapped to 0");
    }
  }
  return out;
}

/// Undoes apply_scaler (constant columns return their mean).
inline Tensor2 inverse_standardize(const Tensor2& scaled, const Preprocessing& prep) {
  if (prep.means.size() != scaled.cols) throw ShapeError("scaler width mismatch");
  Tensor2 out = scaled;
  for (std::size_t i = 0; i < out.rows; ++i) {
    for (std::size_t j = 0; j < out.cols; ++j) {
      out(i, j) = out(i, j) * prep.scales[j] + prep.means[j];
    }
  }
  return out;
}

/// Re-applies fitted encoding and scaling to freshly loaded raw data.
inline Dataset apply_preprocessing(const Dataset& raw, const Preprocessing& prep) {
  Dataset ds = raw;
  const bool any_categorical = std::any_of(raw.columns.begin(), raw.columns.end(), [](const Column& c) {
    return c.kind == ColumnKind::categorical;
  });
  if (any_categorical) ds = apply_one_hot(raw, prep.categories);
  if (prep.standardized()) ds = apply_scaler(std::move(ds), prep.means, prep.scales);
  ds.preprocessing = prep;
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic regression data

/// Y = cos X1 + sin X2 + 2 X3 + X4 + X5/100 + eps, X_j ~ N(0,1) iid and
/// eps ~ N(0, noise_sd^2).
inline Dataset generate_synthetic(std::size_t n, double noise_sd = 0.1, std::uint64_t seed = 1) {
  if (n == 0) throw ConfigError("synthetic dataset needs n >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset ds;
  ds.features = Tensor2(n, 5);
  ds.targets.resize(n);
  ds.target_name = "Y";
  for (std::size_t j = 0; j < 5; ++j) {
    const std::string name = "X" + std::to_string(j + 1);
    ds.columns.push_back({name, ColumnKind::numeric, j, name, {}});
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto x = ds.features.row(i);
    for (double& v : x) v = normal(rng);
    const double eps = noise_sd * normal(rng);
    ds.targets[i] = std::cos(x[0]) + std::sin(x[1]) + 2.0 * x[2] + x[3] + 0.01 * x[4] + eps;
  }
  return ds;
}

/// Noise-free part of the synthetic target.
inline double synthetic_mean(std::span<const double> x) {
  return std::cos(x[0]) + std::sin(x[1]) + 2.0 * x[2] + x[3] + 0.01 * x[4];
}

// ---------------------------------------------------------------------------
// Windowing

/// Overlapping windows over a time-major series. Features are every column
/// except `target_column`; window t covers rows t .. t+tau-1.
inline SequenceBatch windowize(const Tensor2& series, std::size_t tau, std::size_t target_column,
                               SequenceMode mode) {
  if (tau == 0) throw ConfigError("window length tau must be >= 1");
  if (series.rows < tau) {
    throw ShapeError("series of " + std::to_string(series.rows) +
                     " rows is shorter than tau = " + std::to_string(tau));
  }
  if (target_column >= series.cols) throw ShapeError("target column out of range");
  if (series.cols < 2) throw ShapeError("series needs at least one feature besides the target");
  const std::size_t count = series.rows - tau + 1;
  SequenceBatch out(count, tau, series.cols - 1);
  out.target_mode = mode;
  for (std::size_t t = 0; t < count; ++t) {
    for (std::size_t s = 0; s < tau; ++s) {
      std::size_t dst = 0;
      for (std::size_t c = 0; c < series.cols; ++c) {
        if (c == target_column) continue;
        out.at(t, s, dst++) = series(t + s, c);
      }
      if (mode == SequenceMode::many_to_many) out.targets.push_back(series(t + s, target_column));
    }
    if (mode == SequenceMode::many_to_one) out.targets.push_back(series(t + tau - 1, target_column));
  }
  return out;
}

}  // namespace nnsens
