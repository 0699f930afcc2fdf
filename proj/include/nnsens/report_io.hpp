#pragma once

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <string>

#include "json.hpp"
#include "nnsens/explain.hpp"
#include "nnsens/validation.hpp"

namespace nnsens {

inline nlohmann::ordered_json report_to_json(const ImportanceReport& r) {
  nlohmann::ordered_json j;
  j["kind"] = "importance_report";
  j["version"] = 1;
  j["scope"] = to_string(r.scope);
  j["metric"] = r.metric;
  j["subject"] = r.subject ? nlohmann::ordered_json(*r.subject) : nlohmann::ordered_json(nullptr);
  j["selector"] = r.selector;
  j["sample_count"] = r.sample_count;
  j["normalizer"] = r.normalizer;
  j["raw_units"] = r.raw_units;
  j["grouped"] = r.grouped;
  j["entries"] = nlohmann::ordered_json::array();
  for (const auto& e : r.entries) {
    j["entries"].push_back({{"id", e.id}, {"name", e.name}, {"lambda", e.lambda}, {"raw", e.raw}});
  }
  j["ranking"] = nlohmann::ordered_json::array();
  for (std::size_t pos : r.ranking()) j["ranking"].push_back(r.entries[pos].id);
  return j;
}

inline ImportanceReport report_from_json(const nlohmann::ordered_json& j) {
  ImportanceReport r;
  const std::string scope = j.at("scope").get<std::string>();
  if (scope == "global") r.scope = ReportScope::global;
  else if (scope == "local") r.scope = ReportScope::local;
  else if (scope == "lag_global") r.scope = ReportScope::lag_global;
  else if (scope == "lag_local") r.scope = ReportScope::lag_local;
  else throw ConfigError("unknown report scope '" + scope + "'");
  r.metric = j.at("metric").get<std::string>();
  if (!j.at("subject").is_null()) r.subject = j.at("subject").get<std::size_t>();
  r.selector = j.at("selector").get<std::string>();
  r.sample_count = j.at("sample_count").get<std::size_t>();
  r.normalizer = j.at("normalizer").get<double>();
  r.raw_units = j.at("raw_units").get<bool>();
  r.grouped = j.at("grouped").get<bool>();
  for (const auto& e : j.at("entries")) {
    r.entries.push_back({e.at("id").get<std::size_t>(), e.at("name").get<std::string>(),
                         e.at("lambda").get<double>(), e.at("raw").get<double>()});
  }
  return r;
}

inline nlohmann::ordered_json subset_to_json(const FeatureSubset& s) {
  return {{"kind", "feature_subset"},
          {"version", 1},
          {"threshold", s.threshold},
          {"cumulative", s.cumulative},
          {"ids", s.ids},
          {"features", s.names}};
}

inline FeatureSubset subset_from_json(const nlohmann::ordered_json& j) {
  if (j.value("kind", std::string()) != "feature_subset") {
    throw IoError("not a feature subset document");
  }
  FeatureSubset s;
  s.threshold = j.at("threshold").get<double>();
  s.cumulative = j.at("cumulative").get<double>();
  s.ids = j.at("ids").get<std::vector<std::size_t>>();
  s.names = j.at("features").get<std::vector<std::string>>();
  return s;
}

inline std::string format_percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

/// Aligned columns, highest importance first.
inline std::string report_to_text(const ImportanceReport& r) {
  std::size_t width = 7;
  for (const auto& e : r.entries) width = std::max(width, e.name.size());
  std::ostringstream out;
  out << "# " << to_string(r.scope) << " importance (" << r.metric << ")";
  if (r.subject) out << ", subject " << *r.subject;
  out << ", selector " << r.selector << ", n = " << r.sample_count << "\n";
  char line[256];
  std::snprintf(line, sizeof line, "%4s  %-*s  %9s  %10s\n", "rank", static_cast<int>(width),
                "feature", "lambda %", "cumulative");
  out << line;
  double cum = 0.0;
  std::size_t rank = 1;
  for (std::size_t pos : r.ranking()) {
    const auto& e = r.entries[pos];
    cum += e.lambda;
    std::snprintf(line, sizeof line, "%4zu  %-*s  %9.2f  %10.2f\n", rank++, static_cast<int>(width),
                  e.name.c_str(), e.lambda, cum);
    out << line;
  }
  return out.str();
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  return out + "\"";
}

inline std::string report_to_csv(const ImportanceReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << "id,name,lambda,raw\n";
  for (const auto& e : r.entries) {
    out << e.id << ',' << csv_escape(e.name) << ',' << e.lambda << ',' << e.raw << '\n';
  }
  return out.str();
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

/// Horizontal bar chart on an 800 x (30 * k) canvas, bars sorted descending,
/// labelled with percentages to two decimals.
inline std::string report_to_svg(const ImportanceReport& r) {
  constexpr int kWidth = 800;
  constexpr int kRow = 30;
  constexpr int kLabel = 200;
  constexpr int kBarMax = 500;
  const int height = kRow * static_cast<int>(r.entries.size());
  double max_lambda = 0.0;
  for (const auto& e : r.entries) max_lambda = std::max(max_lambda, e.lambda);
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << kWidth << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"13\">\n";
  out << "<rect width=\"" << kWidth << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  int row = 0;
  for (std::size_t pos : r.ranking()) {
    const auto& e = r.entries[pos];
    const int y = row * kRow;
    const double w = max_lambda > 0.0 ? kBarMax * e.lambda / max_lambda : 0.0;
    char bar[64];
    std::snprintf(bar, sizeof bar, "%.2f", w);
    out << "<text x=\"" << kLabel - 8 << "\" y=\"" << y + 19 << "\" text-anchor=\"end\">"
        << xml_escape(e.name) << "</text>\n";
    out << "<rect x=\"" << kLabel << "\" y=\"" << y + 5 << "\" width=\"" << bar
        << "\" height=\"20\" fill=\"#3b6ea5\"/>\n";
    std::snprintf(bar, sizeof bar, "%.2f", kLabel + w + 6.0);
    out << "<text x=\"" << bar << "\" y=\"" << y + 19 << "\">" << format_percent(e.lambda)
        << "%</text>\n";
    ++row;
  }
  out << "</svg>\n";
  return out.str();
}

inline nlohmann::ordered_json oracle_to_json(const OracleReport& o) {
  const auto closed = closed_form_oracle_lambda();
  nlohmann::ordered_json j;
  j["kind"] = "oracle_report";
  j["n_draws"] = o.n_draws;
  j["features"] = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < 5; ++k) {
    j["features"].push_back({{"name", "X" + std::to_string(k + 1)},
                             {"raw", o.raw[k]},
                             {"lambda", o.lambda[k]},
                             {"standard_error", o.standard_error[k]},
                             {"closed_form_lambda", closed[k]}});
  }
  return j;
}

}  // namespace nnsens
