#pragma once

#include <algorithm>
#include <deque>
#include <limits>
#include <map>
#include <memory>
#include <ostream>
#include <queue>
#include <sstream>
#include <tuple>
#include <vector>

#include "metastab/chain.hpp"
#include "metastab/landscape.hpp"
#include "metastab/ptheory.hpp"
#include "metastab/saddle.hpp"

namespace metastab {

// Unordered edges {u < v} with positive symmetric conductance, where
// c(x, y) = mu(x) R(x, y) and c^s = (c(x, y) + c(y, x)) / 2.
template <class Real>
struct EdgeGraph {
  int n = 0;
  std::vector<std::pair<int, int>> edges;
  std::vector<Real> c_uv, c_vu, cs;
  std::vector<std::vector<std::pair<int, int>>> adj;  // (neighbor, edge id), sorted by neighbor

  int edge_count() const { return static_cast<int>(edges.size()); }

  int find(int x, int y) const {
    if (x < 0 || x >= n) return -1;
    const auto& row = adj[x];
    auto it = std::lower_bound(row.begin(), row.end(), std::make_pair(y, -1));
    return (it != row.end() && it->first == y) ? it->second : -1;
  }
  // c(x, y) for an existing edge.
  Real c(int x, int y) const {
    int e = find(x, y);
    if (e < 0) return Real(0);
    return edges[e].first == x ? c_uv[e] : c_vu[e];
  }
};

template <class Real>
inline std::shared_ptr<const EdgeGraph<Real>> edge_graph(const MarkovChain<Real>& ch) {
  auto g = std::make_shared<EdgeGraph<Real>>();
  g->n = ch.n;
  std::map<std::pair<int, int>, std::pair<Real, Real>> acc;
  for (int x = 0; x < ch.n; ++x)
    for (typename MarkovChain<Real>::SpMat::InnerIterator it(ch.R, x); it; ++it) {
      int y = static_cast<int>(it.col());
      if (y == x) continue;
      Real cxy = ch.w[x] * it.value() / ch.Z;
      auto& slot = acc[{std::min(x, y), std::max(x, y)}];
      (x < y ? slot.first : slot.second) += cxy;
    }
  g->adj.resize(ch.n);
  for (const auto& [key, val] : acc) {
    Real s = (val.first + val.second) / Real(2);
    if (!(s > Real(0))) continue;
    int id = static_cast<int>(g->edges.size());
    g->edges.push_back(key);
    g->c_uv.push_back(val.first);
    g->c_vu.push_back(val.second);
    g->cs.push_back(s);
    g->adj[key.first].emplace_back(key.second, id);
    g->adj[key.second].emplace_back(key.first, id);
  }
  for (auto& row : g->adj) std::sort(row.begin(), row.end());
  return g;
}

// Antisymmetric edge function, stored on the (u < v) orientation of each edge.
template <class Real>
struct Flow {
  std::shared_ptr<const EdgeGraph<Real>> graph;
  std::vector<Real> val;

  Flow() = default;
  explicit Flow(std::shared_ptr<const EdgeGraph<Real>> g) : graph(std::move(g)), val(graph->edge_count(), Real(0)) {}

  Real at(int x, int y) const {
    int e = graph->find(x, y);
    if (e < 0) return Real(0);
    return graph->edges[e].first == x ? val[e] : Real(-val[e]);
  }
  void add(int x, int y, const Real& r) {
    int e = graph->find(x, y);
    if (e < 0) {
      std::ostringstream os;
      os << "edge (" << x << ", " << y << ") is not in E_N (zero symmetric conductance)";
      throw Error(os.str());
    }
    if (graph->edges[e].first == x)
      val[e] += r;
    else
      val[e] -= r;
  }

  Flow& operator+=(const Flow& o) {
    same_graph(o);
    for (size_t e = 0; e < val.size(); ++e) val[e] += o.val[e];
    return *this;
  }
  Flow& operator-=(const Flow& o) {
    same_graph(o);
    for (size_t e = 0; e < val.size(); ++e) val[e] -= o.val[e];
    return *this;
  }
  Flow& operator*=(const Real& s) {
    for (auto& v : val) v *= s;
    return *this;
  }
  friend Flow operator+(Flow a, const Flow& b) { return a += b; }
  friend Flow operator-(Flow a, const Flow& b) { return a -= b; }
  friend Flow operator*(const Real& s, Flow a) { return a *= s; }

 private:
  void same_graph(const Flow& o) const {
    if (graph != o.graph) throw Error("flows live on different edge sets");
  }
};

// (div phi)(x) = sum_y phi(x, y).
template <class Real>
inline Func<Real> divergence(const Flow<Real>& phi) {
  const auto& g = *phi.graph;
  Func<Real> d = Func<Real>::Zero(g.n);
  for (int e = 0; e < g.edge_count(); ++e) {
    d[g.edges[e].first] += phi.val[e];
    d[g.edges[e].second] -= phi.val[e];
  }
  return d;
}

template <class Real>
inline Real divergence(const Flow<Real>& phi, const std::vector<int>& set) {
  Func<Real> d = divergence(phi);
  Real s(0);
  for (int x : set) s += d[x];
  return s;
}

// max_x sum_y |phi(x, y)|; the natural scale for divergence tolerances.
template <class Real>
inline Real gross_scale(const Flow<Real>& phi) {
  const auto& g = *phi.graph;
  Func<Real> s = Func<Real>::Zero(g.n);
  for (int e = 0; e < g.edge_count(); ++e) {
    Real a = abs_of(phi.val[e]);
    s[g.edges[e].first] += a;
    s[g.edges[e].second] += a;
  }
  Real m(0);
  for (int x = 0; x < g.n; ++x)
    if (s[x] > m) m = s[x];
  return m;
}

template <class Real>
inline Real inner(const Flow<Real>& a, const Flow<Real>& b) {
  if (a.graph != b.graph) throw Error("flows live on different edge sets");
  Real s(0);
  for (size_t e = 0; e < a.val.size(); ++e) s += a.val[e] * b.val[e] / a.graph->cs[e];
  return s;
}

template <class Real>
inline Real norm2(const Flow<Real>& a) {
  return inner(a, a);
}

template <class Real>
struct FieldFlows {
  Flow<Real> Phi, Phi_star, Psi;
};

// Phi_f(x,y) = f(x) c(x,y) - f(y) c(y,x), Phi*_f(x,y) = f(x) c(y,x) - f(y) c(x,y),
// Psi_f(x,y) = c^s(x,y) (f(x) - f(y)).
template <class Real>
inline FieldFlows<Real> field_flows(std::shared_ptr<const EdgeGraph<Real>> graph, const Func<Real>& f) {
  FieldFlows<Real> out{Flow<Real>(graph), Flow<Real>(graph), Flow<Real>(graph)};
  const auto& g = *graph;
  if (f.size() != g.n) throw Error("function has wrong size");
  for (int e = 0; e < g.edge_count(); ++e) {
    auto [u, v] = g.edges[e];
    out.Phi.val[e] = f[u] * g.c_uv[e] - f[v] * g.c_vu[e];
    out.Phi_star.val[e] = f[u] * g.c_vu[e] - f[v] * g.c_uv[e];
    out.Psi.val[e] = g.cs[e] * (f[u] - f[v]);
  }
  return out;
}

// Share of a single translate: Phi*_{f,z} (star) or Phi_{f,z}, supported on gamma_z.
// Summed over all translates these give Phi*_f and Phi_f.
template <class Real>
inline Flow<Real> cycle_flow(const Generator& gen, const MarkovChain<Real>& ch,
                             std::shared_ptr<const EdgeGraph<Real>> graph, const Func<Real>& f, int translate,
                             bool star = true) {
  if (translate < 0 || translate >= static_cast<int>(gen.translates.size()))
    throw Error("translate index is not an interior base point");
  const Translate& t = gen.translates[translate];
  Flow<Real> phi(graph);
  const int L = static_cast<int>(t.states.size());
  Real C = translate_weight<Real>(t) / ch.Z;
  for (int j = 0; j < L; ++j) {
    int a = t.states[j], b = t.states[(j + 1) % L];
    if (star)
      phi.add(a, b, Real(-f[b] * C));
    else
      phi.add(a, b, Real(f[a] * C));
  }
  return phi;
}

// Lookup by base grid point of a given cycle.
template <class Real>
inline Flow<Real> cycle_flow_at(const Generator& gen, const MarkovChain<Real>& ch,
                                std::shared_ptr<const EdgeGraph<Real>> graph, const Func<Real>& f, int cycle,
                                long base, bool star = true) {
  for (int t = 0; t < static_cast<int>(gen.translates.size()); ++t)
    if (gen.translates[t].cycle == cycle && gen.translates[t].base == base)
      return cycle_flow(gen, ch, graph, f, t, star);
  std::ostringstream os;
  os << "grid point " << base << " is not an interior base point of cycle " << cycle;
  throw Error(os.str());
}

struct GoodPath {
  std::vector<int> states;
  double C0 = 0;  // slack: F_N(x_k) <= F_N(x_0) + C0 / N
};

inline double path_slack(const Generator& gen, const std::vector<int>& states) {
  double mx = 0;
  for (int s : states) mx = std::max(mx, gen.FN[s] - gen.FN[states.front()]);
  return gen.N * mx;
}

// Empty string when the path is good; otherwise the violated property.
template <class Real>
inline std::string path_violation(const Generator& gen, const EdgeGraph<Real>& graph, const GoodPath& p) {
  std::ostringstream os;
  if (p.states.empty()) return "empty path";
  for (size_t k = 0; k + 1 < p.states.size(); ++k)
    if (graph.find(p.states[k], p.states[k + 1]) < 0) {
      os << "P1 violated at step " << k << " (" << p.states[k] << " -> " << p.states[k + 1] << " is not an edge)";
      return os.str();
    }
  const double top = gen.FN[p.states.front()] + p.C0 / gen.N + 1e-12 * std::max(1.0, std::abs(gen.FN[p.states.front()]));
  for (size_t k = 0; k < p.states.size(); ++k)
    if (gen.FN[p.states[k]] > top) {
      os << "P2 violated at step " << k << " (state " << p.states[k] << " exceeds F_N(x_0) + C0/N)";
      return os.str();
    }
  std::vector<int> sorted = p.states;
  std::sort(sorted.begin(), sorted.end());
  auto dup = std::adjacent_find(sorted.begin(), sorted.end());
  if (dup != sorted.end()) {
    os << "self-intersection at state " << *dup;
    return os.str();
  }
  return {};
}

// chi_{Gamma,r}: r on every step of the path, so div = r at x_0 and -r at x_M.
template <class Real>
inline void add_path_flow(Flow<Real>& phi, const GoodPath& p, const Real& r) {
  for (size_t k = 0; k + 1 < p.states.size(); ++k) phi.add(p.states[k], p.states[k + 1], r);
}

template <class Real>
inline Flow<Real> path_flow(std::shared_ptr<const EdgeGraph<Real>> graph, const GoodPath& p, const Real& r) {
  Flow<Real> phi(graph);
  add_path_flow(phi, p, r);
  return phi;
}

template <class Real>
struct Transfer {
  Flow<Real> chi;
  double norm2 = 0;        // ||chi||^2
  double bound = 0;        // overlap * length * C * sum_a r_a^2 Z / w(a)
  double path_sum = 0;     // sum_a r_a^2 sum_{e in Gamma_a} 1/c^s(e), an intermediate bound
  int overlap = 0;         // largest number of paths through one edge
  int max_length = 0;      // longest path in steps
  double C = 0;            // max over paths and their edges of w(a) / (Z c^s(e))
  double C0 = 0;           // largest realized slack
  int paths = 0;
};

// Moves the divergence of phi off A along the given paths into B.
// paths[k] must start at A[k]; states of A with zero divergence are skipped.
template <class Real>
inline Transfer<Real> transfer_divergence(const Generator& gen, const MarkovChain<Real>& ch, const Flow<Real>& phi,
                                          const std::vector<int>& A, const std::vector<char>& B,
                                          const std::vector<GoodPath>& paths) {
  if (paths.size() != A.size()) throw Error("one good path per source state is required");
  const auto& graph = *phi.graph;
  Transfer<Real> out{Flow<Real>(phi.graph)};
  Func<Real> div = divergence(phi);
  std::vector<int> through(graph.edge_count(), 0);
  double sum_r2 = 0;
  for (size_t k = 0; k < A.size(); ++k) {
    const int a = A[k];
    const GoodPath& p = paths[k];
    Real r = -div[a];
    if (r == Real(0)) continue;
    std::ostringstream who;
    who << "good path from state " << a << ": ";
    if (p.states.empty() || p.states.front() != a) throw Error(who.str() + "does not start at its source");
    if (!B.at(p.states.back())) throw Error(who.str() + "does not end in the target set");
    std::string bad = path_violation(gen, graph, p);
    if (!bad.empty()) throw Error(who.str() + bad);
    add_path_flow(out.chi, p, r);
    ++out.paths;
    out.max_length = std::max(out.max_length, static_cast<int>(p.states.size()) - 1);
    out.C0 = std::max(out.C0, p.C0);
    double r2 = to_double(Real(r * r));
    double inv_sum = 0;
    for (size_t j = 0; j + 1 < p.states.size(); ++j) {
      int e = graph.find(p.states[j], p.states[j + 1]);
      ++through[e];
      double inv = to_double(Real(Real(1) / graph.cs[e]));
      inv_sum += inv;
      out.C = std::max(out.C, to_double(Real(ch.w[a] / (ch.Z * graph.cs[e]))));
    }
    out.path_sum += r2 * inv_sum;
    sum_r2 += r2 * to_double(Real(ch.Z / ch.w[a]));
  }
  for (int t : through) out.overlap = std::max(out.overlap, t);
  out.norm2 = to_double(norm2(out.chi));
  out.bound = double(out.overlap) * out.max_length * out.C * sum_r2;
  return out;
}

// Lattice walk from x along the direction u. Each step goes to the neighbor with
// strict progress along u that stays closest to the line x + t u (ties: smaller F_N),
// and the walk stops at the first state outside `inside`.
template <class Real>
inline GoodPath line_path(const Generator& gen, const EdgeGraph<Real>& graph, int x, const Vec& u,
                          const std::vector<char>& inside) {
  const LatticeDomain& lat = *gen.lat;
  GoodPath p;
  p.states.push_back(x);
  const Vec x0 = lat.point(x);
  int cur = x;
  while (inside[cur]) {
    const Vec pc = lat.point(cur);
    int best = -1;
    double best_d = 0, best_F = 0;
    for (auto [y, e] : graph.adj[cur]) {
      Vec py = lat.point(y);
      if (!((py - pc).dot(u) > 1e-12 / gen.N)) continue;
      Vec rel = py - x0;
      double dist = (rel - rel.dot(u) * u).norm();
      bool better = best < 0 || dist < best_d - 1e-12 / gen.N ||
                    (std::abs(dist - best_d) <= 1e-12 / gen.N && gen.FN[y] < best_F);
      if (better) {
        best = y;
        best_d = dist;
        best_F = gen.FN[y];
      }
    }
    if (best < 0) {
      std::ostringstream os;
      os << "failed good-path construction: no lattice step along u_1 from state " << cur;
      throw Error(os.str());
    }
    if (static_cast<int>(p.states.size()) > gen.size()) throw Error("failed good-path construction: walk does not terminate");
    p.states.push_back(best);
    cur = best;
  }
  p.C0 = path_slack(gen, p.states);
  return p;
}

// Minimax tree toward `root`: every state's tree path minimizes the highest F_N
// visited (ties: fewer steps, then smaller index).
struct DescentTree {
  int root = -1;
  std::vector<int> parent;
  std::vector<double> height;

  std::vector<int> path_from(int x) const {
    if (parent.at(x) < 0 && x != root) throw Error("failed good-path construction: state cannot reach the target");
    std::vector<int> out{x};
    while (x != root) {
      x = parent[x];
      out.push_back(x);
    }
    return out;
  }
};

template <class Real>
inline DescentTree descent_tree(const Generator& gen, const EdgeGraph<Real>& graph, int root) {
  DescentTree t;
  t.root = root;
  const int n = gen.size();
  t.parent.assign(n, -1);
  t.height.assign(n, std::numeric_limits<double>::infinity());
  std::vector<int> hops(n, std::numeric_limits<int>::max());
  std::vector<char> done(n, 0);
  using Key = std::tuple<double, int, int>;
  std::priority_queue<Key, std::vector<Key>, std::greater<Key>> pq;
  t.height[root] = gen.FN[root];
  hops[root] = 0;
  pq.emplace(t.height[root], 0, root);
  while (!pq.empty()) {
    auto [h, k, x] = pq.top();
    pq.pop();
    if (done[x]) continue;
    done[x] = 1;
    for (auto [y, e] : graph.adj[x]) {
      if (done[y]) continue;
      double hy = std::max(h, gen.FN[y]);
      if (hy < t.height[y] || (hy == t.height[y] && k + 1 < hops[y])) {
        t.height[y] = hy;
        hops[y] = k + 1;
        t.parent[y] = x;
        pq.emplace(hy, k + 1, y);
      }
    }
  }
  return t;
}

struct SaddleFlowReport {
  double lf1_residual = 0;     // max over B of |div Phi_N + mu L V_N| relative to the gross terms
  double boundary1 = 0;        // sum over the first boundary piece of div Phi_N / (kappa omega)
  double boundary2 = 0;        // same on the second piece
  double boundary0 = 0;        // sum of |div Phi_N| over the high piece / kappa
  double unclassified = 0;     // sum of |div Phi_N| over unclassified boundary states / kappa
  double interior = 0;         // sum of |div Phi_N| over B / kappa
  double achieved = 0;         // div at m_1 after both transfers / (kappa omega)
  double delta = 0;            // 1 - achieved
  double defect = 0;           // ||Phi~ - Phi_N||^2 / kappa
  double chi1 = 0, chi2 = 0, rho = 0;  // squared norms / kappa
  double off_target = 0;       // max off {m_1, m_2} of |div Phi~| / kappa
  double target_error = 0;     // max of |div Phi~(m_1) - kappa omega|, |div Phi~(m_2) + kappa omega| over kappa
  double kappa_log = 0;        // log kappa_N in true units
  Transfer<double> step1, step2;  // norms and bound constants, values dropped
  int m1 = -1, m2 = -1;
};

template <class Real>
struct SaddleTestFlow {
  Flow<Real> Phi_N, Phi_tilde, chi1, chi2, rho;
  Real kappa = Real(0);
  SaddleFlowReport report;
};

namespace detail {

template <class Real>
inline Transfer<double> summary(const Transfer<Real>& t) {
  Transfer<double> s;
  s.norm2 = t.norm2;
  s.bound = t.bound;
  s.path_sum = t.path_sum;
  s.overlap = t.overlap;
  s.max_length = t.max_length;
  s.C = t.C;
  s.C0 = t.C0;
  s.paths = t.paths;
  return s;
}

}  // namespace detail

// Phi_N = sum over core translates of Phi*_{V_N,z}, with the largest relative
// deviation on B from div Phi_N = -mu L V_N.
template <class Real>
struct LocalSaddleFlow {
  Flow<Real> Phi_N;
  Func<Real> V, div;
  double residual = 0;
};

template <class Real>
inline LocalSaddleFlow<Real> local_saddle_flow(const Generator& gen, const MarkovChain<Real>& ch,
                                               std::shared_ptr<const EdgeGraph<Real>> graph, const SaddleAnalysis& sa,
                                               const MesoBoxes& mb) {
  const int n = gen.size();
  LocalSaddleFlow<Real> out;
  out.V = vn<Real>(sa, gen);
  const Func<Real>& V = out.V;
  out.Phi_N = Flow<Real>(graph);
  const Real invZ = Real(1) / ch.Z;
  for (int t : mb.core) {
    const Translate& tr = gen.translates[t];
    const int L = static_cast<int>(tr.states.size());
    Real C = translate_weight<Real>(tr) * invZ;
    for (int j = 0; j < L; ++j) out.Phi_N.add(tr.states[j], tr.states[(j + 1) % L], Real(-V[tr.states[(j + 1) % L]] * C));
  }
  out.div = divergence(out.Phi_N);
  Func<Real> LV = apply_L(ch, V);
  for (int x = 0; x < n; ++x) {
    if (!mb.B[x]) continue;
    Real gross(0);
    for (typename MarkovChain<Real>::SpMat::InnerIterator it(ch.R, x); it; ++it)
      gross += abs_of(Real(ch.w[x] * it.value() * (V[it.col()] - V[x])));
    gross /= ch.Z;
    Real lhs = out.div[x] + ch.w[x] * LV[x] / ch.Z;
    if (gross > Real(0)) out.residual = std::max(out.residual, to_double(Real(abs_of(lhs) / gross)));
  }
  return out;
}

// Builds Phi_N = sum over core translates of Phi*_{V_N,z}, then moves its
// divergence into m_1, m_2 in two good-path steps and fixes the remaining
// defect with a multiple of the symmetric unit flow between them.
template <class Real>
inline SaddleTestFlow<Real> saddle_test_flow(const Generator& gen, const MarkovChain<Real>& ch,
                                             std::shared_ptr<const EdgeGraph<Real>> graph, const SaddleAnalysis& sa,
                                             const MesoBoxes& mb, int m1, int m2) {
  const int n = gen.size();
  const LatticeDomain& lat = *gen.lat;
  if (m1 == m2) throw Error("saddle test flow needs two distinct targets");
  if (mb.closure.at(m1) || mb.closure.at(m2)) throw Error("a target minimum lies inside the mesoscopic box");
  SaddleTestFlow<Real> out;
  SaddleFlowReport& rep = out.report;
  rep.m1 = m1;
  rep.m2 = m2;
  const Real k = kappa(ch, lat.d, gen.N, sa.F_sigma);
  out.kappa = k;
  rep.kappa_log = log_of(k);
  const Real kw = k * Real(sa.omega);

  auto local = local_saddle_flow(gen, ch, graph, sa, mb);
  rep.lf1_residual = local.residual;
  out.Phi_N = std::move(local.Phi_N);
  const Func<Real>& V = local.V;
  const Func<Real>& div = local.div;
  Real s1(0), s2(0), s0(0), su(0), sb(0);
  for (int x = 0; x < n; ++x) {
    if (mb.d1[x]) s1 += div[x];
    if (mb.d2[x]) s2 += div[x];
    if (mb.d0[x]) s0 += abs_of(div[x]);
    if (mb.unclassified[x]) su += abs_of(div[x]);
    if (mb.B[x]) sb += abs_of(div[x]);
  }
  rep.boundary1 = to_double(Real(s1 / kw));
  rep.boundary2 = to_double(Real(s2 / kw));
  rep.boundary0 = to_double(Real(s0 / k));
  rep.unclassified = to_double(Real(su / k));
  rep.interior = to_double(Real(sb / k));

  // Step 1: B-hat into its boundary along +-u_1.
  const Vec u1 = sa.U.col(0);
  std::vector<int> A1;
  std::vector<GoodPath> P1;
  for (int x = 0; x < n; ++x) {
    if (!mb.Bhat[x] || div[x] == Real(0)) continue;
    double side = (lat.point(x) - sa.sigma).dot(u1);
    A1.push_back(x);
    P1.push_back(line_path(gen, *graph, x, side >= 0 ? u1 : Vec(-u1), mb.Bhat));
  }
  std::vector<char> outside_hat(n, 1);
  for (int x = 0; x < n; ++x) outside_hat[x] = !mb.Bhat[x];
  Transfer<Real> t1 = transfer_divergence(gen, ch, out.Phi_N, A1, outside_hat, P1);
  out.chi1 = t1.chi;

  // Step 2: the rest of the closure into the minima, along minimax paths.
  Flow<Real> after1 = out.Phi_N + out.chi1;
  Func<Real> div1 = divergence(after1);
  const Real residue = Real(1e3 * std::numeric_limits<Real>::epsilon()) * gross_scale(after1);
  DescentTree tree1 = descent_tree(gen, *graph, m1), tree2 = descent_tree(gen, *graph, m2);
  std::vector<int> A2;
  std::vector<GoodPath> P2;
  for (int x = 0; x < n; ++x) {
    if (x == m1 || x == m2 || div1[x] == Real(0)) continue;
    if (!mb.closure[x] || mb.Bhat[x]) {
      // Rounding residue of step 1; anything larger is a bookkeeping error.
      if (abs_of(div1[x]) <= residue) continue;
      std::ostringstream os;
      os << "internal consistency: divergence left at state " << x << " outside the box closure";
      throw Error(os.str());
    }
    double side = (lat.point(x) - sa.sigma).dot(u1);
    GoodPath p;
    p.states = (side >= 0 ? tree1 : tree2).path_from(x);
    p.C0 = path_slack(gen, p.states);
    A2.push_back(x);
    P2.push_back(std::move(p));
  }
  std::vector<char> targets(n, 0);
  targets[m1] = targets[m2] = 1;
  Transfer<Real> t2 = transfer_divergence(gen, ch, after1, A2, targets, P2);
  out.chi2 = t2.chi;

  // Correction: (kappa omega - achieved) times the symmetric unit flow m_1 -> m_2.
  Flow<Real> after2 = after1 + out.chi2;
  Real achieved = divergence(after2)[m1];
  MarkovChain<Real> sym = symmetrized(ch);
  Func<Real> Vs = hitting_probability(sym, {m1}, {m2});
  Real caps = detail::escape_flux(sym, {m2}, Vs);
  out.rho = Flow<Real>(graph);
  const Real delta = kw - achieved;
  for (int e = 0; e < graph->edge_count(); ++e) {
    auto [a, b] = graph->edges[e];
    out.rho.val[e] = delta * graph->cs[e] * (Vs[a] - Vs[b]) / caps;
  }
  out.Phi_tilde = after2 + out.rho;

  Func<Real> dt = divergence(out.Phi_tilde);
  for (int x = 0; x < n; ++x) {
    if (x == m1 || x == m2) continue;
    rep.off_target = std::max(rep.off_target, to_double(Real(abs_of(dt[x]) / k)));
  }
  rep.target_error = std::max(to_double(Real(abs_of(Real(dt[m1] - kw)) / k)), to_double(Real(abs_of(Real(dt[m2] + kw)) / k)));
  rep.achieved = to_double(Real(achieved / kw));
  rep.delta = 1 - rep.achieved;
  rep.defect = to_double(Real(norm2(Flow<Real>(out.Phi_tilde - out.Phi_N)) / k));
  rep.chi1 = to_double(Real(norm2(out.chi1) / k));
  rep.chi2 = to_double(Real(norm2(out.chi2) / k));
  rep.rho = to_double(Real(norm2(out.rho) / k));
  rep.step1 = detail::summary(t1);
  rep.step2 = detail::summary(t2);
  return out;
}

// Membership in C_{a,b}(A, B) for functions and U_a(A, B) for flows.
// Violations are reported with the offending state.
template <class Real>
inline std::vector<std::string> function_violations(const Func<Real>& f, const std::vector<int>& A, const std::vector<int>& B,
                                                    double a, double b, double tol = 1e-10) {
  std::vector<std::string> out;
  auto check = [&](const std::vector<int>& S, double target, const char* name) {
    for (int x : S)
      if (to_double(abs_of(Real(f[x] - Real(target)))) > tol) {
        std::ostringstream os;
        os << "function value at state " << x << " in " << name << " is " << to_double(f[x]) << ", expected " << target;
        out.push_back(os.str());
      }
  };
  check(A, a, "A");
  check(B, b, "B");
  return out;
}

template <class Real>
inline std::vector<std::string> flow_violations(const Flow<Real>& phi, const std::vector<int>& A, const std::vector<int>& B,
                                                double a, double tol = 1e-10) {
  std::vector<std::string> out;
  Func<Real> d = divergence(phi);
  const int n = static_cast<int>(d.size());
  std::vector<char> ab = list_to_mask(A, n);
  for (int x : B) ab.at(x) = 1;
  // Cancellation leaves rounding noise at the scale of the conductances, not of phi.
  Real cscale(0);
  {
    const auto& g = *phi.graph;
    Func<Real> s = Func<Real>::Zero(g.n);
    for (int e = 0; e < g.edge_count(); ++e) {
      s[g.edges[e].first] += g.cs[e];
      s[g.edges[e].second] += g.cs[e];
    }
    for (int x = 0; x < g.n; ++x)
      if (s[x] > cscale) cscale = s[x];
  }
  const double scale = std::max({std::abs(a), to_double(gross_scale(phi)), to_double(cscale)});
  const double lim = tol * scale;
  for (int x = 0; x < n; ++x) {
    if (ab[x]) continue;
    if (to_double(abs_of(d[x])) > lim) {
      std::ostringstream os;
      os << "flow has divergence " << to_double(d[x]) << " at state " << x << " outside A and B";
      out.push_back(os.str());
    }
  }
  Real dA(0), dB(0);
  for (int x : A) dA += d[x];
  for (int x : B) dB += d[x];
  if (std::abs(to_double(dA) - a) > lim) {
    std::ostringstream os;
    os << "flow divergence on A is " << to_double(dA) << ", expected " << a << " (first state of A " << A.front() << ")";
    out.push_back(os.str());
  }
  if (std::abs(to_double(dB) + a) > lim) {
    std::ostringstream os;
    os << "flow divergence on B is " << to_double(dB) << ", expected " << -a << " (first state of B " << B.front() << ")";
    out.push_back(os.str());
  }
  return out;
}

namespace detail {

inline void raise_if(const std::vector<std::string>& v, const char* what) {
  if (v.empty()) return;
  std::ostringstream os;
  os << what << ": " << v.front();
  if (v.size() > 1) os << " (and " << v.size() - 1 << " more)";
  throw Error(os.str());
}

}  // namespace detail

// ||Phi_f - phi||^2 for f in C_{1,0}(A, B), phi in U_0(A, B); an upper bound for cap(A, B).
template <class Real>
inline Real dirichlet_value(std::shared_ptr<const EdgeGraph<Real>> graph, const Func<Real>& f, const Flow<Real>& phi,
                            const std::vector<int>& A, const std::vector<int>& B) {
  detail::raise_if(function_violations(f, A, B, 1.0, 0.0), "test function outside C_{1,0}(A,B)");
  detail::raise_if(flow_violations(phi, A, B, 0.0), "flow outside U_0(A,B)");
  return norm2(Flow<Real>(field_flows(graph, f).Phi - phi));
}

// 1 / ||Phi_h - psi||^2 for h in C_{0,0}(A, B), psi in U_1(A, B); a lower bound for cap(A, B).
template <class Real>
inline Real thomson_value(std::shared_ptr<const EdgeGraph<Real>> graph, const Func<Real>& h, const Flow<Real>& psi,
                          const std::vector<int>& A, const std::vector<int>& B) {
  detail::raise_if(function_violations(h, A, B, 0.0, 0.0), "test function outside C_{0,0}(A,B)");
  detail::raise_if(flow_violations(psi, A, B, 1.0), "flow outside U_1(A,B)");
  return Real(1) / norm2(Flow<Real>(field_flows(graph, h).Phi - psi));
}

template <class Real>
struct Optimizer {
  Func<Real> f;
  Flow<Real> phi;
};

// f_0 = (V + V*) / 2 and phi_0 = (Phi_{V*} - Phi*_V) / 2.
template <class Real>
inline Optimizer<Real> dirichlet_optimizer(std::shared_ptr<const EdgeGraph<Real>> graph, const HarmonicData<Real>& h) {
  Optimizer<Real> o;
  o.f = (h.V + h.Vs) / Real(2);
  o.phi = Real(0.5) * Flow<Real>(field_flows(graph, h.Vs).Phi - field_flows(graph, h.V).Phi_star);
  return o;
}

// g_0 = (V* - V) / (2 cap) and psi_0 = (Phi_{V*} + Phi*_V) / (2 cap).
template <class Real>
inline Optimizer<Real> thomson_optimizer(std::shared_ptr<const EdgeGraph<Real>> graph, const HarmonicData<Real>& h) {
  Optimizer<Real> o;
  const Real s = Real(1) / (Real(2) * h.cap);
  o.f = (h.Vs - h.V) * s;
  o.phi = s * Flow<Real>(field_flows(graph, h.Vs).Phi + field_flows(graph, h.V).Phi_star);
  return o;
}

// phi-bar(x, o) = sum_{z in E1} phi(x, z); edges inside E1 disappear.
template <class Real>
inline Flow<Real> collapse_flow(const Flow<Real>& phi, const Collapsed<Real>& cc,
                                std::shared_ptr<const EdgeGraph<Real>> collapsed_graph) {
  Flow<Real> out(collapsed_graph);
  const auto& g = *phi.graph;
  for (int e = 0; e < g.edge_count(); ++e) {
    if (phi.val[e] == Real(0)) continue;
    auto [u, v] = g.edges[e];
    int a = cc.map.at(u), b = cc.map.at(v);
    if (a == b) continue;
    out.add(a, b, phi.val[e]);
  }
  return out;
}

// Function on the collapsed chain taking f(E1) at the point o.
template <class Real>
inline Func<Real> collapse_function(const Func<Real>& f, const Collapsed<Real>& cc) {
  Func<Real> out(cc.chain.n);
  for (int x = 0; x < static_cast<int>(cc.map.size()); ++x) out[cc.map[x]] = f[x];
  return out;
}

// Lattice versions W^i of the wells: the greedy F_N-descent basin of each well,
// minus the closures of the boxes. A state whose descent ends in no well belongs
// to no W^i.
inline std::vector<std::vector<char>> lattice_wells(const Generator& gen, const PotentialField& f,
                                                    const LandscapeStructure& ls,
                                                    const std::vector<const MesoBoxes*>& boxes) {
  const int n = gen.size();
  auto nb = gen.lat->neighbors();
  std::vector<int> next(n);
  for (int s = 0; s < n; ++s) {
    next[s] = s;  // lowest (F_N, index) among s and its neighbors
    for (int y : nb[s])
      if (std::make_pair(gen.FN[y], y) < std::make_pair(gen.FN[next[s]], next[s])) next[s] = y;
  }
  std::vector<int> label(n, -2);
  for (int s = 0; s < n; ++s)
    if (next[s] == s) label[s] = ls.classify(f, gen.lat->point(s));
  std::vector<std::vector<char>> out(ls.M(), std::vector<char>(n, 0));
  for (int s = 0; s < n; ++s) {
    int x = s;
    while (next[x] != x) x = next[x];
    bool boxed = false;
    for (const MesoBoxes* mb : boxes) boxed = boxed || mb->closure[s];
    if (!boxed && label[x] >= 0) out[label[x]][s] = 1;
  }
  return out;
}

// h^q: q(i) on W^i, [q(a) - q(b)] V_N^sigma + q(b) on each box closure, 0 elsewhere.
// Index i of `q` and `wells` follows the landscape well numbering.
template <class Real>
inline Func<Real> approx_potential(const Generator& gen, const std::vector<double>& q,
                                   const std::vector<std::vector<char>>& wells,
                                   const std::vector<const SaddleAnalysis*>& saddles,
                                   const std::vector<const MesoBoxes*>& boxes) {
  const int n = gen.size();
  if (saddles.size() != boxes.size()) throw Error("one box per saddle is required");
  if (q.size() != wells.size()) throw Error("q needs one value per well");
  Func<Real> h = Func<Real>::Zero(n);
  for (size_t i = 0; i < wells.size(); ++i)
    for (int s = 0; s < n; ++s)
      if (wells[i][s]) h[s] = Real(q[i]);
  for (size_t k = 0; k < saddles.size(); ++k) {
    const SaddleAnalysis& sa = *saddles[k];
    const double qa = q.at(sa.well_a), qb = q.at(sa.well_b);
    for (int s = 0; s < n; ++s)
      if (boxes[k]->closure[s]) h[s] = Real(qa - qb) * vn_eval<Real>(sa, gen.N, gen.lat->point(s)) + Real(qb);
  }
  return h;
}

// Upsilon^q = sum_sigma (q(a) - q(b)) Phi~^sigma.
template <class Real>
inline Flow<Real> combine_saddle_flows(const std::vector<const SaddleTestFlow<Real>*>& flows,
                                       const std::vector<const SaddleAnalysis*>& saddles, const std::vector<double>& q) {
  if (flows.empty() || flows.size() != saddles.size()) throw Error("one test flow per saddle is required");
  Flow<Real> out(flows.front()->Phi_tilde.graph);
  for (size_t k = 0; k < flows.size(); ++k)
    out += Real(q.at(saddles[k]->well_a) - q.at(saddles[k]->well_b)) * flows[k]->Phi_tilde;
  return out;
}

// Debug dump: one row per edge with nonzero value, oriented u < v.
template <class Real>
inline void write_flow_csv(std::ostream& os, const Flow<Real>& phi, const LatticeDomain* lat = nullptr) {
  const auto& g = *phi.graph;
  os << "x,y,value";
  if (lat) os << ",x_coords,y_coords";
  os << "\n";
  os.precision(17);
  for (int e = 0; e < g.edge_count(); ++e) {
    if (phi.val[e] == Real(0)) continue;
    auto [u, v] = g.edges[e];
    os << u << ',' << v << ',' << to_double(phi.val[e]);
    if (lat) {
      auto coords = [&](int s) {
        std::ostringstream c;
        IVec k = lat->coords(s);
        for (int a = 0; a < lat->d; ++a) c << (a ? " " : "") << k[a];
        return c.str();
      };
      os << ',' << coords(u) << ',' << coords(v);
    }
    os << "\n";
  }
}

}  // namespace metastab
