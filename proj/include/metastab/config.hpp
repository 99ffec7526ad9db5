#pragma once

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "metastab/experiments.hpp"

namespace metastab {

// A configuration problem, located by 1-based line and dotted field path.
struct ConfigError : Error {
  int line;
  std::string field;
  ConfigError(int line_, std::string field_, const std::string& msg)
      : Error(format(line_, field_, msg)), line(line_), field(std::move(field_)) {}

  static std::string format(int line, const std::string& field, const std::string& msg) {
    std::string s;
    if (line > 0) s = "line " + std::to_string(line);
    if (!field.empty()) s += (s.empty() ? "" : ", ") + std::string("field '") + field + "'";
    return s.empty() ? msg : s + ": " + msg;
  }
};

struct OutputSpec {
  std::string dir = "out";
  std::string csv = "checks.csv";
  std::string json = "report.json";
  bool plots = true;
  bool flows = false;  // write flow CSV dumps from flows-verify experiments
};

struct Config {
  std::vector<ExperimentSpec> experiments;
  std::vector<Json> echo;  // normalized form of each experiment, for the report
  OutputSpec output;
};

namespace config_detail {

inline int line_of(const YAML::Node& n) { return n.Mark().line >= 0 ? n.Mark().line + 1 : 0; }

class Reader {
 public:
  Reader(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path)) {}

  const YAML::Node& node() const { return node_; }
  const std::string& path() const { return path_; }
  [[noreturn]] void fail(const std::string& msg) const { throw ConfigError(line_of(node_), path_, msg); }

  bool has(const std::string& key) {
    seen_.insert(key);
    return static_cast<bool>(node_[key]);
  }
  Reader child(const std::string& key) {
    seen_.insert(key);
    YAML::Node c = node_[key];
    if (!c) fail("missing required key '" + key + "'");
    return Reader(c, join(key));
  }
  Reader item(size_t k) const { return Reader(node_[k], path_ + "[" + std::to_string(k) + "]"); }

  template <class T>
  T as() const {
    try {
      return node_.as<T>();
    } catch (const YAML::Exception&) {
      fail(std::string("expected ") + type_name<T>());
    }
  }
  template <class T>
  T get(const std::string& key, T fallback) {
    return has(key) ? child(key).as<T>() : fallback;
  }

  void require_map() const {
    if (!node_.IsMap()) fail("expected a table");
  }
  void require_sequence() const {
    if (!node_.IsSequence()) fail("expected a list");
  }
  // Call after reading: any key never asked for is a typo.
  void reject_unknown() const {
    for (const auto& kv : node_) {
      auto k = kv.first.as<std::string>();
      if (!seen_.count(k)) throw ConfigError(line_of(kv.first), join(k), "unknown key");
    }
  }

 private:
  template <class T>
  static const char* type_name() {
    if constexpr (std::is_same_v<T, int> || std::is_same_v<T, long> || std::is_same_v<T, std::uint64_t>)
      return "an integer";
    else if constexpr (std::is_same_v<T, double>)
      return "a number";
    else if constexpr (std::is_same_v<T, bool>)
      return "true or false";
    else
      return "a string";
  }
  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  YAML::Node node_;
  std::string path_;
  std::set<std::string> seen_;
};

inline std::vector<double> number_list(Reader r) {
  r.require_sequence();
  std::vector<double> out;
  for (size_t k = 0; k < r.node().size(); ++k) out.push_back(r.item(k).as<double>());
  return out;
}

inline Polynomial polynomial(Reader r, int d) {
  r.require_sequence();
  std::vector<Polynomial::Term> terms;
  for (size_t k = 0; k < r.node().size(); ++k) {
    Reader t = r.item(k);
    t.require_map();
    Polynomial::Term term;
    term.coef = t.child("coef").as<double>();
    Reader p = t.child("pow");
    p.require_sequence();
    for (size_t a = 0; a < p.node().size(); ++a) {
      int e = p.item(a).as<int>();
      if (e < 0) p.item(a).fail("exponents must be nonnegative");
      term.pow.push_back(e);
    }
    if (static_cast<int>(term.pow.size()) != d) p.fail("expected " + std::to_string(d) + " exponents");
    t.reject_unknown();
    terms.push_back(std::move(term));
  }
  return Polynomial(d, std::move(terms));
}

inline Box box(Reader r) {
  r.require_map();
  Box b{number_list(r.child("lo")), number_list(r.child("hi"))};
  r.reject_unknown();
  if (b.lo.size() != b.hi.size() || b.lo.empty()) r.fail("lo and hi must have the same nonzero length");
  for (size_t k = 0; k < b.lo.size(); ++k)
    if (!(b.lo[k] < b.hi[k])) r.fail("lo must be below hi in every coordinate");
  return b;
}

// A builtin name, or a table {builtin | F, G, box, name}.
inline PotentialField potential(Reader r, std::string& label, Json& echo) {
  if (r.node().IsScalar()) {
    label = r.as<std::string>();
    try {
      auto f = builtin_field(label);
      echo = label;
      return f;
    } catch (const Error& e) {
      r.fail(e.what());
    }
  }
  r.require_map();
  Polynomial F;
  Box bx;
  if (r.has("builtin")) {
    Reader b = r.child("builtin");
    label = b.as<std::string>();
    bool found = false;
    for (const auto& p : builtin_potentials())
      if (p.name == label) {
        F = p.F;
        bx = p.box;
        found = true;
      }
    if (!found) b.fail("unknown builtin potential '" + label + "'");
    if (r.has("F")) r.child("F").fail("give either builtin or F, not both");
  } else {
    Reader bnode = r.child("box");
    bx = box(bnode);
    F = polynomial(r.child("F"), static_cast<int>(bx.lo.size()));
    label = r.get<std::string>("name", "custom");
  }
  if (r.has("box") && r.has("builtin")) bx = box(r.child("box"));
  if (static_cast<int>(bx.lo.size()) != F.dim()) r.fail("box dimension does not match the potential");
  Polynomial G(F.dim());
  if (r.has("G")) G = polynomial(r.child("G"), F.dim());
  if (r.has("name")) label = r.child("name").as<std::string>();
  r.reject_unknown();

  auto terms_json = [](const Polynomial& p) {
    Json a = Json::array();
    for (const auto& t : p.terms()) a.push_back(Json{{"coef", t.coef}, {"pow", t.pow}});
    return a;
  };
  echo = Json{{"name", label}, {"F", terms_json(F)}, {"G", terms_json(G)}, {"box", {{"lo", bx.lo}, {"hi", bx.hi}}}};
  return polynomial_field(label, F, G, bx);
}

inline std::vector<Cycle> cycles(Reader r, int d) {
  r.require_sequence();
  if (r.node().size() == 0) r.fail("at least one cycle is required");
  std::vector<Cycle> out;
  for (size_t k = 0; k < r.node().size(); ++k) {
    Reader c = r.item(k);
    c.require_sequence();
    Cycle cyc;
    for (size_t j = 0; j < c.node().size(); ++j) {
      Reader v = c.item(j);
      IVec z;
      if (v.node().IsScalar()) {
        z.push_back(v.as<long>());
      } else {
        v.require_sequence();
        for (size_t a = 0; a < v.node().size(); ++a) z.push_back(v.item(a).as<long>());
      }
      if (static_cast<int>(z.size()) != d)
        v.fail("vertex has " + std::to_string(z.size()) + " coordinates, the potential has dimension " +
               std::to_string(d));
      cyc.z.push_back(std::move(z));
    }
    out.push_back(std::move(cyc));
  }
  auto diag = validate_cycles(out);
  if (!diag.ok) r.fail("invalid cycles: " + diag.failures.front());
  return out;
}

inline std::optional<double> auto_or_number(Reader r) {
  if (r.node().IsScalar() && r.node().Scalar() == "auto") return std::nullopt;
  return r.as<double>();
}

// Every well index in the file is 1-based.
inline std::vector<int> wells(Reader r) {
  r.require_sequence();
  std::vector<int> out;
  for (size_t k = 0; k < r.node().size(); ++k) {
    int w = r.item(k).as<int>();
    if (w < 1) r.item(k).fail("well labels start at 1");
    out.push_back(w - 1);
  }
  return out;
}

inline ToleranceTable tolerances(Reader r) {
  r.require_map();
  ToleranceTable t;
  for (const auto& kv : r.node()) {
    std::string key = kv.first.as<std::string>();
    Reader v = r.child(key);
    auto positive = [](Reader x) {
      double tol = x.as<double>();
      if (!(tol >= 0)) x.fail("tolerances must be nonnegative");
      return tol;
    };
    if (key == "default") {
      t.fallback = positive(v);
    } else if (v.node().IsMap()) {
      for (const auto& e : v.node()) {
        std::string nk = e.first.as<std::string>();
        Reader ev = v.child(nk);
        int N = 0;
        if (nk != "default") {
          try {
            N = std::stoi(nk);
          } catch (const std::exception&) {
            ev.fail("keys inside a tolerance table are N values or 'default'");
          }
        }
        t.by_tag[key][N] = positive(ev);
      }
    } else {
      t.by_tag[key][0] = positive(v);
    }
  }
  return t;
}

inline Json tolerance_json(const ToleranceTable& t) {
  Json j = Json::object();
  j["default"] = t.fallback;
  for (const auto& [tag, m] : t.by_tag) {
    Json e = Json::object();
    for (const auto& [N, v] : m) e[N == 0 ? "default" : std::to_string(N)] = v;
    j[tag] = e;
  }
  return j;
}

inline Json cycles_json(const std::vector<Cycle>& cs) {
  Json a = Json::array();
  for (const auto& c : cs) a.push_back(c.z);
  return a;
}

inline ExperimentSpec experiment(Reader r, Json& echo) {
  r.require_map();
  ExperimentSpec s;
  s.name = r.child("name").as<std::string>();
  if (s.name.empty() || s.name.find_first_of(",\"/\\ \t") != std::string::npos)
    r.child("name").fail("names must be nonempty without spaces, commas, quotes or slashes");
  Reader kind = r.child("kind");
  s.kind = kind.as<std::string>();
  const auto& kinds = experiment_kinds();
  if (std::find(kinds.begin(), kinds.end(), s.kind) == kinds.end()) {
    std::string list;
    for (const auto& k : kinds) list += (list.empty() ? "" : ", ") + k;
    kind.fail("unknown experiment kind '" + s.kind + "' (expected one of " + list + ")");
  }
  Json pot;
  s.field = potential(r.child("potential"), s.potential, pot);
  s.cycles = cycles(r.child("cycles"), s.field.d);
  if (r.has("reference_cycles")) {
    if (s.kind != "ek-sweep") r.child("reference_cycles").fail("only ek-sweep uses reference_cycles");
    s.reference_cycles = cycles(r.child("reference_cycles"), s.field.d);
  }
  {
    Reader ns = r.child("N");
    ns.require_sequence();
    if (ns.node().size() == 0) ns.fail("the N list is empty");
    for (size_t k = 0; k < ns.node().size(); ++k) {
      int N = ns.item(k).as<int>();
      if (N < 4) ns.item(k).fail("N must be at least 4");
      if (!s.Ns.empty() && N <= s.Ns.back()) ns.item(k).fail("the N list must be strictly increasing");
      s.Ns.push_back(N);
    }
  }
  if (r.has("H")) s.H = auto_or_number(r.child("H"));
  if (r.has("epsilon")) {
    s.epsilon = auto_or_number(r.child("epsilon"));
    if (s.epsilon && !(*s.epsilon > 0)) r.child("epsilon").fail("epsilon must be positive");
  }
  if (r.has("rates")) {
    Reader rv = r.child("rates");
    auto v = rv.as<std::string>();
    if (v != "translate" && v != "barycentric") rv.fail("rates must be 'translate' or 'barycentric'");
    s.barycentric = v == "barycentric";
  }
  s.seeds_per_axis = r.get<int>("critical_seeds", s.seeds_per_axis);
  if (s.seeds_per_axis < 8) r.child("critical_seeds").fail("at least 8 seeds per axis are required");
  if (r.has("tolerances")) s.tolerances = tolerances(r.child("tolerances"));
  if (r.has("trend")) {
    Reader t = r.child("trend");
    if (t.node().IsScalar()) {
      s.trend = t.as<bool>();
    } else {
      t.require_map();
      s.trend = t.get<bool>("enabled", true);
      s.trend_from = t.get<int>("from", 0);
      s.trend_slack = t.get<double>("slack", 0.0);
      if (s.trend_slack < 0) t.child("slack").fail("slack must be nonnegative");
      t.reject_unknown();
    }
  }
  if (r.has("wells")) s.wells = wells(r.child("wells"));
  if (r.has("set_A")) s.set_A = wells(r.child("set_A"));
  if (r.has("set_B")) s.set_B = wells(r.child("set_B"));
  if (s.set_A.empty() != s.set_B.empty()) r.fail("set_A and set_B must be given together");
  if (r.has("collapse")) s.collapse_well = r.child("collapse").as<int>() - 1;
  s.seed = r.get<std::uint64_t>("seed", s.seed);
  s.samples = r.get<int>("samples", s.samples);
  if (s.samples < 2) r.child("samples").fail("at least two samples are required");
  s.visits = r.get<int>("visits", s.visits);
  s.extended = r.get<bool>("extended", s.extended);
  r.reject_unknown();

  auto one_based = [](std::vector<int> v) {
    for (int& x : v) ++x;
    return v;
  };
  echo = Json{{"name", s.name},
              {"kind", s.kind},
              {"potential", pot},
              {"cycles", cycles_json(s.cycles)},
              {"reference_cycles", cycles_json(s.reference_cycles)},
              {"N", s.Ns},
              {"H", s.H ? Json(*s.H) : Json("auto")},
              {"epsilon", s.epsilon ? Json(*s.epsilon) : Json("auto")},
              {"rates", s.barycentric ? "barycentric" : "translate"},
              {"critical_seeds", s.seeds_per_axis},
              {"tolerances", tolerance_json(s.tolerances)},
              {"trend", {{"enabled", s.trend}, {"from", s.trend_from}, {"slack", s.trend_slack}}},
              {"wells", one_based(s.wells)},
              {"set_A", one_based(s.set_A)},
              {"set_B", one_based(s.set_B)},
              {"collapse", s.collapse_well + 1},
              {"seed", s.seed},
              {"samples", s.samples},
              {"visits", s.visits},
              {"extended", s.extended}};
  return s;
}

}  // namespace config_detail

inline Config parse_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(e.mark.line + 1, "", e.msg);
  }
  using config_detail::Reader;
  Reader r(root, "");
  if (!root || root.IsNull()) throw ConfigError(1, "", "the configuration is empty");
  r.require_map();
  Config cfg;
  if (r.has("output")) {
    Reader o = r.child("output");
    o.require_map();
    cfg.output.dir = o.get<std::string>("dir", cfg.output.dir);
    cfg.output.csv = o.get<std::string>("csv", cfg.output.csv);
    cfg.output.json = o.get<std::string>("json", cfg.output.json);
    cfg.output.plots = o.get<bool>("plots", cfg.output.plots);
    cfg.output.flows = o.get<bool>("flows", cfg.output.flows);
    o.reject_unknown();
  }
  Reader ex = r.child("experiments");
  ex.require_sequence();
  if (ex.node().size() == 0) ex.fail("at least one experiment is required");
  std::set<std::string> names;
  for (size_t k = 0; k < ex.node().size(); ++k) {
    Json echo;
    auto spec = config_detail::experiment(ex.item(k), echo);
    if (!names.insert(spec.name).second) ex.item(k).child("name").fail("duplicate experiment name '" + spec.name + "'");
    spec.dump_flows = cfg.output.flows;
    cfg.experiments.push_back(std::move(spec));
    cfg.echo.push_back(std::move(echo));
  }
  r.reject_unknown();
  return cfg;
}

inline Config load_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError(0, "", "cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

}  // namespace metastab
