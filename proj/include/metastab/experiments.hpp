#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "metastab/flows.hpp"
#include "metastab/ptheory.hpp"
#include "metastab/reduced.hpp"
#include "metastab/saddle.hpp"
#include "metastab/simulate.hpp"

namespace metastab {

// One check. Tags ending in ":bound" pass when the exact value does not
// exceed the predicted bound; all other rows pass when |ratio - 1| <= tolerance.
struct Row {
  std::string experiment;
  std::string theorem_tag;
  int N = 0;
  double exact_log = 0;
  double predicted_log = 0;
  double ratio = 0;
  double tolerance = 0;
  bool pass = false;
};

inline bool same_double(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

inline bool operator==(const Row& a, const Row& b) {
  return a.experiment == b.experiment && a.theorem_tag == b.theorem_tag && a.N == b.N &&
         same_double(a.exact_log, b.exact_log) && same_double(a.predicted_log, b.predicted_log) &&
         same_double(a.ratio, b.ratio) && same_double(a.tolerance, b.tolerance) && a.pass == b.pass;
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline bool is_bound(const Row& r) { return ends_with(r.theorem_tag, ":bound"); }

inline double safe_log(double v) {
  if (v > 0) return std::log(v);
  if (v == 0) return -std::numeric_limits<double>::infinity();
  return std::numeric_limits<double>::quiet_NaN();
}

inline Row ratio_row_log(const std::string& exp, const std::string& tag, int N, double exact_log, double predicted_log,
                         double tol) {
  Row r{exp, tag, N, exact_log, predicted_log, std::exp(exact_log - predicted_log), tol, false};
  r.pass = std::isfinite(r.ratio) && std::abs(r.ratio - 1) <= tol;
  return r;
}

inline Row ratio_row(const std::string& exp, const std::string& tag, int N, double exact, double predicted,
                     double tol) {
  return ratio_row_log(exp, tag, N, safe_log(exact), safe_log(predicted), tol);
}

inline Row bound_row(const std::string& exp, const std::string& tag, int N, double value, double bound) {
  Row r{exp, tag + ":bound", N, safe_log(value), safe_log(bound), value / bound, 0.0, false};
  r.pass = value <= bound;
  return r;
}

// Per-tag tolerances. A key matches every tag it is a prefix of; the longest
// matching key wins. Within a key, N = 0 stands for all N.
struct ToleranceTable {
  double fallback = 0.15;
  std::map<std::string, std::map<int, double>> by_tag;

  double at(const std::string& tag, int N) const {
    const std::map<int, double>* best = nullptr;
    size_t len = 0;
    for (const auto& [key, m] : by_tag)
      if (tag.compare(0, key.size(), key) == 0 && key.size() >= len) {
        best = &m;
        len = key.size();
      }
    if (best) {
      if (auto it = best->find(N); it != best->end()) return it->second;
      if (auto it = best->find(0); it != best->end()) return it->second;
    }
    return fallback;
  }
};

inline const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> k{"identities", "capacity-sweep", "ek-sweep",
                                          "jump-rates", "flows-verify",   "mc-check"};
  return k;
}

struct ExperimentSpec {
  std::string name = "experiment";
  std::string kind;
  std::string potential;  // label for reports
  PotentialField field;
  std::vector<Cycle> cycles;
  std::vector<Cycle> reference_cycles;  // ek-sweep: second dynamics for the speed-up ratio
  std::vector<int> Ns;
  std::optional<double> H, epsilon;
  int seeds_per_axis = 16;
  ToleranceTable tolerances;
  bool trend = true;
  int trend_from = 0;
  double trend_slack = 0;
  std::vector<int> wells;         // 0-based; meaning depends on the kind
  std::vector<int> set_A, set_B;  // jump-rates: collapsed hitting problem
  int collapse_well = -1;
  std::uint64_t seed = 1;
  int samples = 10000;
  int visits = 0;
  // Exact solves in 100-bit floating point. Double loses the capacity to
  // cancellation once N (H - h) exceeds about 35.
  bool extended = true;
  bool dump_flows = false;
  bool barycentric = false;  // rates through F_N at the cycle barycenter
  int workers = 1;
};

// Everything that does not depend on N.
struct Problem {
  PotentialField f;
  std::vector<Cycle> cycles;
  LandscapeStructure ls;
  std::vector<SaddleAnalysis> saddles;
  ReducedChain rc;
  int d = 1;
  bool barycentric = false;
};

inline Problem make_problem(const PotentialField& f, const std::vector<Cycle>& cycles, std::optional<double> H,
                            std::optional<double> epsilon, int seeds_per_axis = 16, bool barycentric = false) {
  auto diag = validate_cycles(cycles);
  if (!diag.ok) {
    std::string msg = "invalid cycles:";
    for (const auto& s : diag.failures) msg += " " + s + ";";
    throw Error(msg);
  }
  if (cycles[0].dim() != f.d) throw Error("cycle dimension does not match the potential");
  Problem p;
  p.f = f;
  p.cycles = cycles;
  p.d = f.d;
  p.barycentric = barycentric;
  auto crit = find_critical_points(f, seeds_per_axis);
  double h = H ? *H : auto_saddle_height(crit);
  double e = epsilon ? *epsilon : auto_epsilon(crit, h);
  p.ls = build_landscape(f, h, e, crit);
  for (int s = 0; s < static_cast<int>(p.ls.saddles.size()); ++s) p.saddles.push_back(analyze_saddle(f, p.ls, s, cycles));
  p.rc = reduced_chain(p.ls, p.saddles, well_weights(p.ls, f));
  return p;
}

template <class Real>
struct Instance {
  int N = 0;
  std::shared_ptr<LatticeDomain> lat;
  Generator gen;
  MarkovChain<Real> chain, adj;
  std::vector<std::vector<int>> valleys;
};

template <class Real>
inline Instance<Real> make_instance(const Problem& p, int N) {
  Instance<Real> in;
  in.N = N;
  in.lat = std::make_shared<LatticeDomain>(discretize(p.f, N, p.cycles));
  in.gen = build_generator(in.lat, p.f, p.barycentric);
  in.chain = to_chain<Real>(in.gen);
  in.adj = to_chain<Real>(in.gen, true);
  in.valleys = valley_states(*in.lat, p.f, p.ls);
  return in;
}

using Json = nlohmann::ordered_json;

struct PointResult {
  int N = 0;
  std::vector<Row> rows;
  Json diag = Json::object();
  std::map<std::string, double> raw;  // values checked only through their trend
  std::vector<std::pair<std::string, std::string>> flow_dumps;  // file name, CSV text
};

struct ExperimentResult {
  std::vector<Row> rows;
  Json diagnostics = Json::array();
  Json saddles = Json::array();
  std::map<std::string, std::vector<std::pair<int, double>>> series;
  std::vector<std::pair<std::string, std::string>> flow_dumps;

  bool passed() const {
    for (const auto& r : rows)
      if (!r.pass) return false;
    return true;
  }
};

namespace detail {

inline std::string label(int i) { return std::to_string(i + 1); }

inline std::vector<int> union_of(const std::vector<std::vector<int>>& valleys, const std::vector<int>& wells) {
  std::vector<int> out;
  for (int w : wells) out.insert(out.end(), valleys.at(w).begin(), valleys.at(w).end());
  std::sort(out.begin(), out.end());
  return out;
}

inline int max_cycle_length(const std::vector<Cycle>& cycles) {
  int L = 0;
  for (const auto& c : cycles) L = std::max(L, c.L());
  return L;
}

inline std::pair<int, int> well_pair(const ExperimentSpec& spec, const Problem& p, int second_default) {
  int a = spec.wells.size() > 0 ? spec.wells[0] : 0;
  int b = spec.wells.size() > 1 ? spec.wells[1] : second_default;
  if (a < 0 || b < 0 || a >= p.ls.M() || b >= p.ls.M() || a == b)
    throw Error("wells must be two distinct indices below " + std::to_string(p.ls.M()));
  return {a, b};
}

// Exact finite-N identities on one lattice.
inline PointResult identities_at(const ExperimentSpec& spec, const Problem& p, int N) {
  PointResult out;
  out.N = N;
  const std::string& ex = spec.name;
  auto in = make_instance<double>(p, N);
  const auto& ch = in.chain;
  const auto& adj = in.adj;
  const int n = ch.n;
  const int L = max_cycle_length(p.cycles);
  auto [a, b] = well_pair(spec, p, 1);
  const auto& A = in.valleys[a];
  const auto& B = in.valleys[b];
  out.diag["states"] = n;
  std::mt19937_64 rng(spec.seed + static_cast<std::uint64_t>(N));

  out.rows.push_back(bound_row(ex, "stationarity", N, stationarity_residual(ch), 1e-12));
  out.rows.push_back(bound_row(ex, "stationarity-adjoint", N, stationarity_residual(adj), 1e-12));

  auto graph = edge_graph(ch);
  double worst = 0;
  for (int k = 0; k < 100; ++k) {
    Vec f = random_function<double>(n, rng), h = random_function<double>(n, rng);
    auto ff = field_flows(graph, f), fh = field_flows(graph, h);
    double x1 = inner(ff.Psi, fh.Phi), y1 = inner_mu(ch, Vec(-apply_L(ch, f)), h);
    double x2 = inner(ff.Psi, fh.Phi_star), y2 = inner_mu(ch, Vec(-apply_L(adj, f)), h);
    double scale = std::sqrt(norm2(ff.Psi) * norm2(fh.Phi));
    worst = std::max({worst, std::abs(x1 - y1) / scale, std::abs(x2 - y2) / scale});
  }
  out.rows.push_back(bound_row(ex, "flow-duality", N, worst, 1e-10));

  auto hd = equilibrium_potential(ch, adj, A, B);
  out.diag["capacity"] = hd.cap;
  out.rows.push_back(ratio_row(ex, "capacity-reversed", N, hd.cap_ba, hd.cap, 1e-9));
  out.rows.push_back(ratio_row(ex, "capacity-adjoint", N, hd.cap_star, hd.cap, 1e-9));
  auto dopt = dirichlet_optimizer(graph, hd);
  auto topt = thomson_optimizer(graph, hd);
  out.rows.push_back(ratio_row(ex, "dirichlet-principle", N, dirichlet_value(graph, dopt.f, dopt.phi, A, B), hd.cap, 1e-8));
  out.rows.push_back(ratio_row(ex, "thomson-principle", N, thomson_value(graph, topt.f, topt.phi, A, B), hd.cap, 1e-8));

  double sector = 0;
  for (int k = 0; k < 1000; ++k) {
    auto f = random_function<double>(n, rng), h = random_function<double>(n, rng);
    sector = std::max(sector, sector_ratio(ch, f, h));
  }
  out.rows.push_back(bound_row(ex, "sector-condition", N, sector, 4.0 * L * L));

  {
    std::uniform_real_distribution<double> u(0, 1);
    double w = 0;
    for (int k = 0; k < 10; ++k) {
      Func<double> g(n);
      for (int s = 0; s < n; ++s) g[s] = u(rng);
      w = std::max(w, rel_diff(expected_reward(ch, hd.nu_star, g, B), inner_mu(ch, g, hd.Vs) / hd.cap));
    }
    out.rows.push_back(bound_row(ex, "harmonic-measure-reward", N, w, 1e-9));
  }

  const int M = p.ls.M();
  auto jr = mean_jump_rates(ch, in.valleys);
  for (int i = 0; i < M; ++i) {
    std::vector<int> others;
    for (int j = 0; j < M; ++j)
      if (j != i) others.push_back(j);
    double cap = capacity(ch, in.valleys[i], union_of(in.valleys, others));
    out.rows.push_back(ratio_row(ex, "mean-rate-capacity." + label(i), N, jr.mass[i] * jr.lambda[i], cap, 1e-8));
  }

  auto cc = collapse(ch, A);
  out.rows.push_back(bound_row(ex, "collapse-stationarity", N, stationarity_residual(cc.chain), 1e-12));
  out.rows.push_back(ratio_row(ex, "collapse-capacity", N, capacity(cc.chain, {cc.o}, map_set(cc, B)), hd.cap, 1e-9));
  double csector = 0;
  for (int k = 0; k < 100; ++k) {
    auto f = random_function<double>(cc.chain.n, rng), h = random_function<double>(cc.chain.n, rng);
    csector = std::max(csector, sector_ratio(cc.chain, f, h));
  }
  out.rows.push_back(bound_row(ex, "collapse-sector-condition", N, csector, 4.0 * L * L));
  if (M >= 3) {
    for (int j = 0; j < M; ++j) {
      if (j == a) continue;
      std::vector<int> rest;
      for (int k = 0; k < M; ++k)
        if (k != a && k != j) rest.push_back(k);
      double pj = collapsed_hit_prob(cc, cc.o, map_set(cc, in.valleys[j]), map_set(cc, union_of(in.valleys, rest)));
      // Probabilities, so an absolute bound; some of them vanish exactly.
      out.rows.push_back(bound_row(ex, "jump-probability." + label(a) + "-" + label(j), N,
                                   std::abs(jr.r(a, j) / jr.lambda[a] - pj), 1e-8));
    }
  }

  auto cg = edge_graph(cc.chain);
  double norm_ratio = 0, div_err = 0;
  std::normal_distribution<double> nd;
  for (int k = 0; k < 100; ++k) {
    Flow<double> phi(graph);
    for (auto& v : phi.val) v = nd(rng);
    auto bar = collapse_flow(phi, cc, cg);
    norm_ratio = std::max(norm_ratio, norm2(bar) / norm2(phi));
    Vec d = divergence(phi), db = divergence(bar);
    double scale = d.cwiseAbs().maxCoeff();
    div_err = std::max(div_err, std::abs(db[cc.o] - divergence(phi, A)) / scale);
    for (int x = 0; x < n; ++x)
      if (cc.map[x] != cc.o) div_err = std::max(div_err, std::abs(db[cc.map[x]] - d[x]) / scale);
  }
  out.rows.push_back(bound_row(ex, "collapse-flow-norm", N, norm_ratio, 1 + 1e-12));
  out.rows.push_back(bound_row(ex, "collapse-flow-divergence", N, div_err, 1e-12));
  {
    Vec f = random_function<double>(n, rng);
    for (int x : A) f[x] = 0.3;
    auto bar = collapse_flow(field_flows(graph, f).Phi, cc, cg);
    auto direct = field_flows(cg, collapse_function(f, cc)).Phi;
    double worst_e = 0, scale = 0;
    for (int e = 0; e < cg->edge_count(); ++e) {
      worst_e = std::max(worst_e, std::abs(bar.val[e] - direct.val[e]));
      scale = std::max(scale, std::abs(direct.val[e]));
    }
    out.rows.push_back(bound_row(ex, "collapse-commutes", N, worst_e / scale, 1e-12));
  }

  for (size_t s = 0; s < p.saddles.size(); ++s) {
    try {
      auto mb = mesoscopic_sets(p.saddles[s], in.gen, p.f);
      auto lf = local_saddle_flow(in.gen, ch, graph, p.saddles[s], mb);
      out.rows.push_back(bound_row(ex, "local-flow-divergence." + label(static_cast<int>(s)), N, lf.residual, 1e-12));
    } catch (const Error& e) {
      out.diag["local_flow_skipped"].push_back(std::string("saddle ") + label(static_cast<int>(s)) + ": " + e.what());
    }
  }
  return out;
}

template <class Real>
inline PointResult capacity_at(const ExperimentSpec& spec, const Problem& p, int N) {
  PointResult out;
  out.N = N;
  auto in = make_instance<Real>(p, N);
  auto [a, b] = well_pair(spec, p, p.ls.M() - 1);
  auto pred = predictions(p.rc, N, p.d, in.chain.log_Z());
  Real cap = capacity(in.chain, in.valleys[a], in.valleys[b]);
  double pc = pred.log_capacity(p.rc, {a}, {b});
  out.rows.push_back(ratio_row_log(spec.name, "capacity-sharp", N, log_of(cap), pc,
                                   spec.tolerances.at("capacity-sharp", N)));
  for (int i = 0; i < p.ls.M(); ++i) {
    Real mass(0);
    for (int x : in.valleys[i]) mass += in.chain.mu(x);
    std::string tag = "well-mass." + label(i);
    out.rows.push_back(ratio_row_log(spec.name, tag, N, log_of(mass), pred.log_mass[i], spec.tolerances.at(tag, N)));
  }
  out.diag["states"] = in.chain.n;
  out.diag["log_kappa"] = pred.log_kappa;
  out.diag["cap_Y"] = cap_Y(p.rc, {a}, {b}).value;
  return out;
}

template <class Real>
inline double log_mean_time(const Problem& p, const Instance<Real>& in, int i) {
  auto targets = target_states(*in.lat, p.ls, i);
  if (targets.empty()) throw Error("well " + label(i) + " has no target minima");
  return log_of(mean_hitting_time(in.chain, designated_state(*in.lat, p.ls, i), targets));
}

template <class Real>
inline PointResult ek_at(const ExperimentSpec& spec, const Problem& p, const Problem* ref, int N) {
  PointResult out;
  out.N = N;
  auto in = make_instance<Real>(p, N);
  auto pred = predictions(p.rc, N, p.d, in.chain.log_Z());
  std::optional<Instance<Real>> rin;
  std::optional<PredictionSet> rpred;
  if (ref) {
    rin = make_instance<Real>(*ref, N);
    rpred = predictions(ref->rc, N, ref->d, rin->chain.log_Z());
  }
  std::vector<int> wells = spec.wells;
  if (wells.empty())
    for (int i = 0; i < p.ls.M(); ++i)
      if (!p.ls.targets[i].empty()) wells.push_back(i);
  for (int i : wells) {
    if (i < 0 || i >= p.ls.M()) throw Error("well index " + std::to_string(i) + " out of range");
    if (!std::isfinite(pred.log_ek[i])) continue;
    double e = log_mean_time(p, in, i);
    std::string tag = "eyring-kramers." + label(i);
    out.rows.push_back(ratio_row_log(spec.name, tag, N, e, pred.log_ek[i], spec.tolerances.at(tag, N)));
    if (ref) {
      double er = log_mean_time(*ref, *rin, i);
      std::string st = "speedup." + label(i);
      out.rows.push_back(ratio_row_log(spec.name, st, N, er - e, rpred->log_ek[i] - pred.log_ek[i],
                                       spec.tolerances.at(st, N)));
    }
  }
  out.diag["states"] = in.chain.n;
  return out;
}

template <class Real>
inline PointResult jump_rates_at(const ExperimentSpec& spec, const Problem& p, int N) {
  PointResult out;
  out.N = N;
  auto in = make_instance<Real>(p, N);
  auto pred = predictions(p.rc, N, p.d, in.chain.log_Z());
  for (size_t m = 0; m < p.ls.T.size(); ++m) {
    const auto& S = p.ls.S_tail[m];
    std::vector<std::vector<int>> wells;
    for (int j : S) wells.push_back(in.valleys[j]);
    auto jr = mean_jump_rates(in.chain, wells);
    for (int i : p.ls.T[m])
      for (size_t jj = 0; jj < S.size(); ++jj) {
        int j = S[jj];
        if (j == i) continue;
        int ii = static_cast<int>(std::find(S.begin(), S.end(), i) - S.begin());
        double r = to_double(Real(jr.r(ii, static_cast<int>(jj))));
        if (!std::isfinite(pred.log_rate[m](i, j))) {
          out.diag["unpredicted_rates"].push_back({{"level", m + 1}, {"from", i + 1}, {"to", j + 1}, {"rate", r}});
          continue;
        }
        std::string tag = "jump-rate." + label(i) + "-" + label(j);
        if (p.ls.T.size() > 1) tag += "@" + std::to_string(m + 1);
        out.rows.push_back(
            ratio_row_log(spec.name, tag, N, std::log(r), pred.log_rate[m](i, j), spec.tolerances.at(tag, N)));
      }
  }
  if (!spec.set_A.empty() && !spec.set_B.empty()) {
    int c = spec.collapse_well;
    if (c < 0)
      for (int i = 0; i < p.ls.M() && c < 0; ++i)
        if (std::find(spec.set_A.begin(), spec.set_A.end(), i) == spec.set_A.end() &&
            std::find(spec.set_B.begin(), spec.set_B.end(), i) == spec.set_B.end())
          c = i;
    if (c < 0) throw Error("no well left to collapse outside the sets A and B");
    auto cc = collapse(in.chain, in.valleys[c]);
    double hit = to_double(collapsed_hit_prob(cc, cc.o, map_set(cc, union_of(in.valleys, spec.set_A)),
                                    map_set(cc, union_of(in.valleys, spec.set_B))));
    double q = cap_Y(p.rc, spec.set_A, spec.set_B).q[c];
    out.rows.push_back(ratio_row(spec.name, "collapsed-hit", N, hit, q, spec.tolerances.at("collapsed-hit", N)));
    out.diag["collapsed_hit"] = hit;
    out.diag["q"] = q;
  }
  out.diag["states"] = in.chain.n;
  return out;
}

template <class Real>
inline PointResult flows_at(const ExperimentSpec& spec, const Problem& p, int N) {
  PointResult out;
  out.N = N;
  auto in = make_instance<Real>(p, N);
  auto graph = edge_graph(in.chain);
  for (size_t s = 0; s < p.saddles.size(); ++s) {
    const auto& sa = p.saddles[s];
    const std::string k = label(static_cast<int>(s));
    auto mb = mesoscopic_sets(sa, in.gen, p.f);
    int m1 = designated_state(*in.lat, p.ls, sa.well_a), m2 = designated_state(*in.lat, p.ls, sa.well_b);
    auto tf = saddle_test_flow(in.gen, in.chain, graph, sa, mb, m1, m2);
    const auto& r = tf.report;
    const std::string& ex = spec.name;
    out.rows.push_back(bound_row(ex, "local-flow-divergence." + k, N, r.lf1_residual, 1e-12));
    out.rows.push_back(bound_row(ex, "corrected-flow-off-target." + k, N, r.off_target, 1e-14));
    out.rows.push_back(bound_row(ex, "corrected-flow-target." + k, N, r.target_error, 1e-14));
    out.rows.push_back(bound_row(ex, "transfer-step1." + k, N, r.step1.norm2, r.step1.bound * (1 + 1e-12)));
    out.rows.push_back(bound_row(ex, "transfer-step2." + k, N, r.step2.norm2, r.step2.bound * (1 + 1e-12)));
    auto ld = local_dirichlet(in.gen, in.chain, sa, mb);
    std::string t;
    t = "local-dirichlet." + k;
    out.rows.push_back(ratio_row(ex, t, N, ld.ratio, 1.0, spec.tolerances.at(t, N)));
    t = "boundary-divergence-a." + k;
    out.rows.push_back(ratio_row(ex, t, N, r.boundary1, 1.0, spec.tolerances.at(t, N)));
    t = "boundary-divergence-b." + k;
    out.rows.push_back(ratio_row(ex, t, N, -r.boundary2, 1.0, spec.tolerances.at(t, N)));
    out.raw["interior-divergence." + k] = r.interior;
    out.raw["flow-defect." + k] = r.defect;
    out.diag["saddles"].push_back(Json{{"saddle", s + 1},
                                       {"box_states", count_of(mb.B)},
                                       {"core", mb.core.size()},
                                       {"lf1_residual", r.lf1_residual},
                                       {"boundary1", r.boundary1},
                                       {"boundary2", r.boundary2},
                                       {"boundary0", r.boundary0},
                                       {"unclassified", r.unclassified},
                                       {"interior", r.interior},
                                       {"achieved", r.achieved},
                                       {"delta", r.delta},
                                       {"defect", r.defect},
                                       {"chi1", r.chi1},
                                       {"chi2", r.chi2},
                                       {"rho", r.rho},
                                       {"off_target", r.off_target},
                                       {"target_error", r.target_error},
                                       {"kappa_log", r.kappa_log},
                                       {"step1_C0", r.step1.C0},
                                       {"step2_C0", r.step2.C0},
                                       {"local_dirichlet", ld.ratio}});
    if (spec.dump_flows) {
      std::ostringstream a, b;
      write_flow_csv(a, tf.Phi_N, in.lat.get());
      write_flow_csv(b, tf.Phi_tilde, in.lat.get());
      std::string stem = spec.name + "_saddle" + k + "_N" + std::to_string(N);
      out.flow_dumps.emplace_back(stem + "_phi.csv", a.str());
      out.flow_dumps.emplace_back(stem + "_phi_tilde.csv", b.str());
    }
  }
  out.diag["states"] = in.chain.n;
  return out;
}

inline PointResult mc_at(const ExperimentSpec& spec, const Problem& p, int N, int workers) {
  PointResult out;
  out.N = N;
  auto in = make_instance<double>(p, N);
  int a = spec.wells.empty() ? 0 : spec.wells[0];
  if (a < 0 || a >= p.ls.M()) throw Error("well index out of range");
  int x0 = designated_state(*in.lat, p.ls, a);
  auto targets = spec.wells.size() > 1 ? union_of(in.valleys, {spec.wells.begin() + 1, spec.wells.end()})
                                       : target_states(*in.lat, p.ls, a);
  if (targets.empty()) throw Error("no target states for the Monte Carlo check");
  double exact = mean_hitting_time(in.chain, x0, targets);
  auto st = estimate_mean_hitting(in.chain, x0, targets, spec.samples,
                                  spec.seed ^ (static_cast<std::uint64_t>(N) << 32), workers);
  // Tolerance: three standard errors, relative to the exact value.
  out.rows.push_back(ratio_row(spec.name, "mean-hitting-mc." + label(a), N, st.mean, exact, 3 * st.stderr_ / exact));
  out.diag["states"] = in.chain.n;
  out.diag["samples"] = st.n;
  out.diag["mean"] = st.mean;
  out.diag["stderr"] = st.stderr_;
  out.diag["exact"] = exact;
  if (spec.visits > 0) {
    std::vector<int> lab(in.chain.n, -1);
    for (int i = 0; i < p.ls.M(); ++i)
      for (int s : in.valleys[i]) lab[s] = i;
    auto v = visit_sequence(in.chain, x0, lab, p.ls.M(), spec.visits, spec.seed);
    Json t = Json::array();
    for (int i = 0; i < p.ls.M(); ++i) {
      Json row = Json::array();
      for (int j = 0; j < p.ls.M(); ++j) row.push_back(v.transitions(i, j));
      t.push_back(row);
    }
    out.diag["visit_transitions"] = t;
  }
  return out;
}

inline std::vector<std::string> trend_prefixes(const std::string& kind) {
  if (kind == "capacity-sweep") return {"capacity-sharp", "well-mass"};
  if (kind == "ek-sweep") return {"eyring-kramers", "speedup"};
  if (kind == "jump-rates") return {"jump-rate", "collapsed-hit"};
  if (kind == "flows-verify") return {"local-dirichlet"};
  return {};
}

}  // namespace detail

inline Json saddle_record(const SaddleAnalysis& sa, int index) {
  auto vec = [](const Vec& v) {
    Json a = Json::array();
    for (int k = 0; k < v.size(); ++k) a.push_back(v[k]);
    return a;
  };
  auto res = [](const SaddleResiduals& r) {
    return Json{{"vHv", r.vHv},           {"det_half", r.det_half}, {"det_full", r.det_full},
                {"min_eig_full", r.min_eig_full}, {"null_space", r.null_space}, {"eq02", r.eq02},
                {"eigen", r.eigen}};
  };
  return Json{{"saddle", index + 1},
              {"sigma", vec(sa.sigma)},
              {"wells", {sa.well_a + 1, sa.well_b + 1}},
              {"F", sa.F_sigma},
              {"lambda", vec(sa.lambda)},
              {"mu", sa.mu},
              {"alpha", sa.alpha},
              {"alpha_star", sa.alpha_star},
              {"omega", sa.omega},
              {"v", vec(sa.v)},
              {"v_star", vec(sa.v_star)},
              {"residuals", res(sa.res)},
              {"residuals_adjoint", res(sa.res_star)},
              {"jacobian_error", sa.jacobian_error}};
}

inline ExperimentResult run_experiment(const ExperimentSpec& spec) {
  const auto& kinds = experiment_kinds();
  if (std::find(kinds.begin(), kinds.end(), spec.kind) == kinds.end())
    throw Error("unknown experiment kind '" + spec.kind + "'");
  if (spec.Ns.empty()) throw Error("the N list is empty");
  Problem p = make_problem(spec.field, spec.cycles, spec.H, spec.epsilon, spec.seeds_per_axis, spec.barycentric);
  std::optional<Problem> ref;
  if (!spec.reference_cycles.empty())
    ref = make_problem(spec.field, spec.reference_cycles, spec.H, spec.epsilon, spec.seeds_per_axis, spec.barycentric);

  const int n = static_cast<int>(spec.Ns.size());
  const int outer = std::max(1, std::min(spec.workers, n));
  const int inner = std::max(1, spec.workers / outer);
  std::vector<PointResult> pts(n);
  parallel_for(n, outer, [&](int k) {
    const int N = spec.Ns[k];
    if (spec.kind == "identities")
      pts[k] = detail::identities_at(spec, p, N);
    else if (spec.kind == "capacity-sweep")
      pts[k] = spec.extended ? detail::capacity_at<Extended>(spec, p, N) : detail::capacity_at<double>(spec, p, N);
    else if (spec.kind == "ek-sweep")
      pts[k] = spec.extended ? detail::ek_at<Extended>(spec, p, ref ? &*ref : nullptr, N)
                             : detail::ek_at<double>(spec, p, ref ? &*ref : nullptr, N);
    else if (spec.kind == "jump-rates")
      pts[k] = spec.extended ? detail::jump_rates_at<Extended>(spec, p, N) : detail::jump_rates_at<double>(spec, p, N);
    else if (spec.kind == "flows-verify")
      pts[k] = spec.extended ? detail::flows_at<Extended>(spec, p, N) : detail::flows_at<double>(spec, p, N);
    else
      pts[k] = detail::mc_at(spec, p, N, inner);
  });

  ExperimentResult res;
  for (size_t s = 0; s < p.saddles.size(); ++s) res.saddles.push_back(saddle_record(p.saddles[s], static_cast<int>(s)));
  std::map<std::string, std::vector<std::pair<int, double>>> trend_series;
  const auto prefixes = detail::trend_prefixes(spec.kind);
  for (auto& pt : pts) {
    Json d = pt.diag;
    d["N"] = pt.N;
    res.diagnostics.push_back(d);
    for (auto& r : pt.rows) {
      if (!is_bound(r)) {
        res.series[r.theorem_tag].emplace_back(r.N, r.ratio);
        for (const auto& pre : prefixes)
          if (r.theorem_tag.compare(0, pre.size(), pre) == 0) trend_series[r.theorem_tag].emplace_back(r.N, std::abs(r.ratio - 1));
      }
      res.rows.push_back(r);
    }
    for (const auto& [tag, v] : pt.raw) {
      res.series[tag].emplace_back(pt.N, v);
      trend_series[tag].emplace_back(pt.N, v);
    }
    for (auto& f : pt.flow_dumps) res.flow_dumps.push_back(std::move(f));
  }
  if (spec.trend) {
    for (const auto& [tag, s] : trend_series) {
      for (size_t k = 1; k < s.size(); ++k) {
        if (s[k - 1].first < spec.trend_from) continue;
        res.rows.push_back(bound_row(spec.name, tag + ":trend", s[k].first, s[k].second,
                                     s[k - 1].second * (1 + spec.trend_slack)));
      }
    }
  }
  return res;
}

}  // namespace metastab
