#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "metastab/experiments.hpp"

namespace metastab {

inline const char* kCsvHeader = "experiment,theorem_tag,N,exact_log,predicted_log,ratio,tolerance,pass";

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw Error("not a number: '" + s + "'");
  return v;
}

// Names and tags never contain commas or quotes, so no quoting is needed.
inline void check_csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") != std::string::npos) throw Error("field '" + s + "' cannot be written to CSV");
}

inline void write_rows_csv(std::ostream& os, const std::vector<Row>& rows) {
  os << kCsvHeader << "\n";
  for (const auto& r : rows) {
    check_csv_field(r.experiment);
    check_csv_field(r.theorem_tag);
    os << r.experiment << ',' << r.theorem_tag << ',' << r.N << ',' << format_double(r.exact_log) << ','
       << format_double(r.predicted_log) << ',' << format_double(r.ratio) << ',' << format_double(r.tolerance) << ','
       << (r.pass ? "true" : "false") << "\n";
  }
}

inline std::vector<Row> read_rows_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kCsvHeader) throw Error("CSV header does not match");
  std::vector<Row> rows;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 8) throw Error("CSV line " + std::to_string(lineno) + ": expected 8 fields");
    Row r;
    r.experiment = f[0];
    r.theorem_tag = f[1];
    r.N = std::stoi(f[2]);
    r.exact_log = parse_double(f[3]);
    r.predicted_log = parse_double(f[4]);
    r.ratio = parse_double(f[5]);
    r.tolerance = parse_double(f[6]);
    if (f[7] != "true" && f[7] != "false") throw Error("CSV line " + std::to_string(lineno) + ": bad pass value");
    r.pass = f[7] == "true";
    rows.push_back(std::move(r));
  }
  return rows;
}

// JSON numbers cannot hold inf or nan, so those are written as strings.
inline Json json_number(double v) {
  if (std::isfinite(v)) return v;
  return format_double(v);
}

inline Json rows_json(const std::vector<Row>& rows) {
  Json a = Json::array();
  for (const auto& r : rows)
    a.push_back(Json{{"experiment", r.experiment},
                     {"theorem_tag", r.theorem_tag},
                     {"N", r.N},
                     {"exact_log", json_number(r.exact_log)},
                     {"predicted_log", json_number(r.predicted_log)},
                     {"ratio", json_number(r.ratio)},
                     {"tolerance", json_number(r.tolerance)},
                     {"pass", r.pass}});
  return a;
}

// Replaces non-finite numbers anywhere inside j by their string form.
inline Json sanitize(const Json& j) {
  if (j.is_number_float()) return json_number(j.get<double>());
  if (j.is_array()) {
    Json a = Json::array();
    for (const auto& e : j) a.push_back(sanitize(e));
    return a;
  }
  if (j.is_object()) {
    Json o = Json::object();
    for (const auto& [k, v] : j.items()) o[k] = sanitize(v);
    return o;
  }
  return j;
}

struct ExperimentOutput {
  ExperimentSpec spec;
  ExperimentResult result;
  Json config;  // echo of the parsed configuration
};

inline std::string library_version() { return "0.1.0"; }

// Everything except the "timing" object is a function of the inputs.
inline Json make_report(const std::vector<ExperimentOutput>& runs, const Json& timing = Json::object()) {
  Json rep;
  rep["version"] = library_version();
  rep["versions"] = Json{{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                       "." + std::to_string(EIGEN_MINOR_VERSION)},
                         {"boost", std::to_string(BOOST_VERSION / 100000) + "." +
                                       std::to_string(BOOST_VERSION / 100 % 1000) + "." +
                                       std::to_string(BOOST_VERSION % 100)}};
  Json exps = Json::array();
  bool all = true;
  for (const auto& run : runs) {
    bool ok = run.result.passed();
    all = all && ok;
    int failed = 0;
    for (const auto& r : run.result.rows) failed += r.pass ? 0 : 1;
    exps.push_back(Json{{"name", run.spec.name},
                        {"kind", run.spec.kind},
                        {"potential", run.spec.potential},
                        {"config", run.config},
                        {"passed", ok},
                        {"rows", run.result.rows.size()},
                        {"failed", failed},
                        {"checks", rows_json(run.result.rows)},
                        {"diagnostics", sanitize(run.result.diagnostics)},
                        {"saddles", sanitize(run.result.saddles)}});
  }
  rep["passed"] = all;
  rep["experiments"] = exps;
  rep["timing"] = timing;
  return rep;
}

inline std::string file_safe(std::string s) {
  for (char& c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  return s;
}

// One two-column gnuplot file per series: N and the series value.
inline std::vector<std::pair<std::string, std::string>> gnuplot_files(const ExperimentSpec& spec,
                                                                      const ExperimentResult& res) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [tag, pts] : res.series) {
    std::ostringstream os;
    os << "# " << spec.name << " " << tag << "\n# N value\n";
    for (const auto& [N, v] : pts) os << N << " " << format_double(v) << "\n";
    out.emplace_back(file_safe(spec.name + "_" + tag) + ".dat", os.str());
  }
  return out;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error("cannot write " + p.string());
  f << text;
}

}  // namespace metastab
