#pragma once

#include <deque>
#include <sstream>
#include <vector>

#include <Eigen/SparseLU>

#include "metastab/chain.hpp"

namespace metastab {

// Linear system for (-L u)(x) = rhs(x) off a boundary set, u = g on the boundary.
// One factorization serves any number of right-hand sides.
template <class Real>
class DirichletSystem {
 public:
  using ColMat = Eigen::SparseMatrix<Real, Eigen::ColMajor>;

  DirichletSystem(const MarkovChain<Real>& c, const std::vector<char>& boundary)
      : chain_(&c), boundary_(boundary) {
    if (static_cast<int>(boundary.size()) != c.n) throw Error("boundary mask has wrong size");
    check_reachability();
    pos_.assign(c.n, -1);
    for (int x = 0; x < c.n; ++x)
      if (!boundary_[x]) {
        pos_[x] = static_cast<int>(interior_.size());
        interior_.push_back(x);
      }
    if (interior_.empty()) return;
    const int m = static_cast<int>(interior_.size());
    std::vector<Eigen::Triplet<Real>> trip;
    for (int i = 0; i < m; ++i) {
      int x = interior_[i];
      Real lam(0);
      for (typename MarkovChain<Real>::SpMat::InnerIterator it(c.R, x); it; ++it) {
        lam += it.value();
        int j = pos_[it.col()];
        if (j >= 0) trip.emplace_back(i, j, -it.value());
      }
      trip.emplace_back(i, i, lam);
    }
    K_.resize(m, m);
    K_.setFromTriplets(trip.begin(), trip.end());
    K_.makeCompressed();
    lu_.analyzePattern(K_);
    lu_.factorize(K_);
    if (lu_.info() != Eigen::Success) throw Error("sparse factorization failed: singular interior system");
  }

  const std::vector<int>& interior() const { return interior_; }

  Func<Real> solve(const Func<Real>& g, const Func<Real>* rhs = nullptr) const {
    const MarkovChain<Real>& c = *chain_;
    Func<Real> u(c.n);
    for (int x = 0; x < c.n; ++x) u[x] = boundary_[x] ? g[x] : Real(0);
    if (interior_.empty()) return u;
    const int m = static_cast<int>(interior_.size());
    Func<Real> b = Func<Real>::Zero(m);
    for (int i = 0; i < m; ++i) {
      int x = interior_[i];
      Real s = rhs ? (*rhs)[x] : Real(0);
      for (typename MarkovChain<Real>::SpMat::InnerIterator it(c.R, x); it; ++it)
        if (boundary_[it.col()]) s += it.value() * g[it.col()];
      b[i] = s;
    }
    Func<Real> sol = lu_.solve(b);
    for (int i = 0; i < m; ++i) u[interior_[i]] = sol[i];
    return u;
  }

 private:
  void check_reachability() const {
    const MarkovChain<Real>& c = *chain_;
    std::vector<std::vector<int>> into(c.n);
    for (int x = 0; x < c.n; ++x)
      for (typename MarkovChain<Real>::SpMat::InnerIterator it(c.R, x); it; ++it)
        into[it.col()].push_back(x);
    std::vector<char> seen(c.n, 0);
    std::deque<int> q;
    for (int x = 0; x < c.n; ++x)
      if (boundary_[x]) {
        seen[x] = 1;
        q.push_back(x);
      }
    if (q.empty()) throw Error("boundary set is empty");
    while (!q.empty()) {
      int y = q.front();
      q.pop_front();
      for (int x : into[y])
        if (!seen[x]) {
          seen[x] = 1;
          q.push_back(x);
        }
    }
    std::vector<int> stuck;
    for (int x = 0; x < c.n; ++x)
      if (!seen[x]) stuck.push_back(x);
    if (!stuck.empty()) {
      std::ostringstream os;
      os << "singular interior system: component of " << stuck.size()
         << " state(s) cannot reach the boundary (first state index " << stuck.front() << ")";
      throw Error(os.str());
    }
  }

  const MarkovChain<Real>* chain_;
  std::vector<char> boundary_;
  std::vector<int> interior_, pos_;
  ColMat K_;
  Eigen::SparseLU<ColMat, Eigen::COLAMDOrdering<int>> lu_;
};

namespace detail {

template <class Real>
inline std::vector<char> boundary_of(int n, const std::vector<int>& A, const std::vector<int>& B) {
  std::vector<char> m(n, 0);
  for (int x : A) m.at(x) = 1;
  for (int x : B) {
    if (m.at(x)) throw Error("sets A and B are not disjoint");
    m[x] = 1;
  }
  return m;
}

template <class Real>
inline Func<Real> indicator(int n, const std::vector<int>& A) {
  Func<Real> f = Func<Real>::Zero(n);
  for (int x : A) f[x] = Real(1);
  return f;
}

// sum_{x in A} mu(x) sum_y R(x, y) u(y), with u the potential that vanishes on A.
template <class Real>
inline Real escape_flux(const MarkovChain<Real>& c, const std::vector<int>& A, const Func<Real>& u) {
  Real s(0);
  for (int x : A) {
    Real t(0);
    for (typename MarkovChain<Real>::SpMat::InnerIterator it(c.R, x); it; ++it) t += it.value() * u[it.col()];
    s += c.w[x] * t;
  }
  return s / c.Z;
}

}  // namespace detail

// P_x[H_A < H_B] for the given chain.
template <class Real>
inline Func<Real> hitting_probability(const MarkovChain<Real>& c, const std::vector<int>& A, const std::vector<int>& B) {
  if (A.empty() || B.empty()) throw Error("sets A and B must be nonempty");
  DirichletSystem<Real> sys(c, detail::boundary_of<Real>(c.n, A, B));
  return sys.solve(detail::indicator<Real>(c.n, A));
}

// Capacity from a single solve of V_{B,A} = 1 - V_{A,B}, which keeps the small values accurate.
template <class Real>
inline Real capacity(const MarkovChain<Real>& c, const std::vector<int>& A, const std::vector<int>& B) {
  return detail::escape_flux(c, A, hitting_probability(c, B, A));
}

template <class Real>
struct HarmonicData {
  std::vector<int> A, B;
  Func<Real> V, V_ba;          // V_{A,B} and V_{B,A} from independent solves
  Func<Real> Vs, Vs_ba;        // adjoint versions
  Real cap = Real(0);          // cap(A,B)
  Real cap_ba = Real(0);       // cap(B,A)
  Real cap_star = Real(0);     // cap*(A,B)
  Func<Real> nu, nu_star;      // harmonic measures, supported on A
};

template <class Real>
inline HarmonicData<Real> equilibrium_potential(const MarkovChain<Real>& c, const MarkovChain<Real>& adj,
                                                const std::vector<int>& A, const std::vector<int>& B) {
  HarmonicData<Real> h;
  h.A = A;
  h.B = B;
  h.V = hitting_probability(c, A, B);
  h.V_ba = hitting_probability(c, B, A);
  h.Vs = hitting_probability(adj, A, B);
  h.Vs_ba = hitting_probability(adj, B, A);
  h.cap = detail::escape_flux(c, A, h.V_ba);
  h.cap_ba = detail::escape_flux(c, B, h.V);
  h.cap_star = detail::escape_flux(adj, A, h.Vs_ba);
  auto measure = [&](const MarkovChain<Real>& ch, const Func<Real>& u, const Real& cap) {
    Func<Real> nu = Func<Real>::Zero(ch.n);
    for (int x : A) {
      Real t(0);
      for (typename MarkovChain<Real>::SpMat::InnerIterator it(ch.R, x); it; ++it) t += it.value() * u[it.col()];
      nu[x] = ch.w[x] * t / ch.Z / cap;
    }
    return nu;
  };
  h.nu = measure(c, h.V_ba, h.cap);
  h.nu_star = measure(adj, h.Vs_ba, h.cap_star);
  return h;
}

// max over states off A u B of |L V| relative to the largest exit rate there.
template <class Real>
inline double harmonic_residual(const MarkovChain<Real>& c, const Func<Real>& V, const std::vector<int>& A,
                                const std::vector<int>& B) {
  std::vector<char> bd = detail::boundary_of<Real>(c.n, A, B);
  Func<Real> LV = apply_L(c, V);
  Func<Real> lam = c.exit_rates();
  Real mx(0), scale(0);
  for (int x = 0; x < c.n; ++x) {
    if (bd[x]) continue;
    if (abs_of(LV[x]) > mx) mx = abs_of(LV[x]);
    if (lam[x] > scale) scale = lam[x];
  }
  return scale > Real(0) ? to_double(Real(mx / scale)) : 0.0;
}

// u = E_x[H_A] for every state.
template <class Real>
inline Func<Real> mean_hitting_times(const MarkovChain<Real>& c, const std::vector<int>& A) {
  if (A.empty()) throw Error("target set must be nonempty");
  std::vector<char> bd = list_to_mask(A, c.n);
  DirichletSystem<Real> sys(c, bd);
  Func<Real> one = Func<Real>::Ones(c.n);
  return sys.solve(Func<Real>::Zero(c.n), &one);
}

template <class Real>
inline Real mean_hitting_time(const MarkovChain<Real>& c, int x0, const std::vector<int>& A) {
  for (int a : A)
    if (a == x0) return Real(0);
  return mean_hitting_times(c, A)[x0];
}

// sum_x start(x) E_x[ int_0^{H_B} reward(X_t) dt ].
template <class Real>
inline Real expected_reward(const MarkovChain<Real>& c, const Func<Real>& start, const Func<Real>& reward,
                            const std::vector<int>& B) {
  if (B.empty()) throw Error("target set must be nonempty");
  DirichletSystem<Real> sys(c, list_to_mask(B, c.n));
  Func<Real> u = sys.solve(Func<Real>::Zero(c.n), &reward);
  Real s(0);
  for (int x = 0; x < c.n; ++x) s += start[x] * u[x];
  return s;
}

template <class Real>
struct TraceResult {
  MarkovChain<Real> chain;   // rates among E, indexed by position in `states`
  std::vector<int> states;
  double max_clip = 0;       // largest negative rate set to zero
};

// Rates of the chain watched only on E: R^T(x,y) = R(x,y) + sum_{f notin E} R(x,f) P_f[first visit to E is y].
// This is the Schur complement of the rate matrix onto E.
template <class Real>
inline TraceResult<Real> trace_generator(const MarkovChain<Real>& c, const std::vector<int>& E) {
  if (E.empty()) throw Error("trace set must be nonempty");
  TraceResult<Real> out;
  out.states = E;
  std::vector<int> pos(c.n, -1);
  for (size_t i = 0; i < E.size(); ++i) pos[E[i]] = static_cast<int>(i);
  const int m = static_cast<int>(E.size());
  std::vector<char> inE = list_to_mask(E, c.n);
  bool all = static_cast<int>(E.size()) == c.n;
  std::vector<Func<Real>> u;
  if (!all) {
    DirichletSystem<Real> sys(c, inE);
    u.reserve(m);
    for (int j = 0; j < m; ++j) {
      Func<Real> g = Func<Real>::Zero(c.n);
      g[E[j]] = Real(1);
      u.push_back(sys.solve(g));
    }
  }
  std::vector<Eigen::Triplet<Real>> trip;
  for (int i = 0; i < m; ++i) {
    int x = E[i];
    std::vector<Real> row(m, Real(0));
    for (typename MarkovChain<Real>::SpMat::InnerIterator it(c.R, x); it; ++it) {
      int y = static_cast<int>(it.col());
      if (inE[y]) {
        row[pos[y]] += it.value();
      } else {
        for (int j = 0; j < m; ++j) row[j] += it.value() * u[j][y];
      }
    }
    for (int j = 0; j < m; ++j) {
      if (j == i) continue;
      if (row[j] < Real(0)) {
        out.max_clip = std::max(out.max_clip, -to_double(row[j]));
        row[j] = Real(0);
      }
      if (row[j] > Real(0)) trip.emplace_back(i, j, row[j]);
    }
  }
  out.chain.n = m;
  out.chain.shift = c.shift;
  out.chain.w.resize(m);
  out.chain.Z = Real(0);
  for (int i = 0; i < m; ++i) {
    out.chain.w[i] = c.w[E[i]];
    out.chain.Z += out.chain.w[i];
  }
  out.chain.R.resize(m, m);
  out.chain.R.setFromTriplets(trip.begin(), trip.end());
  out.chain.R.makeCompressed();
  return out;
}

template <class Real>
struct JumpRates {
  Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic> r;  // r(i,i) = 0
  Func<Real> lambda;
  Func<Real> mass;  // mu(E_i)
};

// Mean jump rates between wells of the trace on the union of the wells.
// One harmonic solve per well replaces the full Schur complement.
template <class Real>
inline JumpRates<Real> mean_jump_rates(const MarkovChain<Real>& c, const std::vector<std::vector<int>>& wells) {
  const int M = static_cast<int>(wells.size());
  std::vector<int> label(c.n, -1);
  for (int i = 0; i < M; ++i) {
    if (wells[i].empty()) throw Error("empty well set");
    for (int x : wells[i]) {
      if (label.at(x) >= 0) throw Error("well sets are not disjoint");
      label[x] = i;
    }
  }
  std::vector<char> inE(c.n, 0);
  for (int x = 0; x < c.n; ++x) inE[x] = label[x] >= 0;
  std::vector<Func<Real>> u(M);
  bool all = std::all_of(inE.begin(), inE.end(), [](char b) { return b != 0; });
  if (!all) {
    DirichletSystem<Real> sys(c, inE);
    for (int j = 0; j < M; ++j) u[j] = sys.solve(detail::indicator<Real>(c.n, wells[j]));
  }
  JumpRates<Real> out;
  out.r = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>::Zero(M, M);
  out.lambda = Func<Real>::Zero(M);
  out.mass = Func<Real>::Zero(M);
  for (int i = 0; i < M; ++i) {
    for (int x : wells[i]) {
      out.mass[i] += c.w[x];
      for (typename MarkovChain<Real>::SpMat::InnerIterator it(c.R, x); it; ++it) {
        int y = static_cast<int>(it.col());
        if (label[y] >= 0) {
          if (label[y] != i) out.r(i, label[y]) += c.w[x] * it.value();
        } else {
          for (int j = 0; j < M; ++j)
            if (j != i) out.r(i, j) += c.w[x] * it.value() * u[j][y];
        }
      }
    }
    for (int j = 0; j < M; ++j) out.r(i, j) /= out.mass[i];
    out.mass[i] /= c.Z;
  }
  for (int i = 0; i < M; ++i) out.lambda[i] = out.r.row(i).sum();
  return out;
}

template <class Real>
struct Collapsed {
  MarkovChain<Real> chain;
  std::vector<int> map;   // original state -> collapsed state
  int o = -1;             // the point replacing E1 (last index)
};

// The set E1 identified to a single point with mu-averaged exit rates.
template <class Real>
inline Collapsed<Real> collapse(const MarkovChain<Real>& c, const std::vector<int>& E1) {
  if (E1.empty() || static_cast<int>(E1.size()) >= c.n) throw Error("collapsed set must be a nonempty proper subset");
  std::vector<char> in = list_to_mask(E1, c.n);
  Collapsed<Real> out;
  out.map.assign(c.n, -1);
  int next = 0;
  for (int x = 0; x < c.n; ++x)
    if (!in[x]) out.map[x] = next++;
  out.o = next;
  for (int x : E1) out.map[x] = out.o;
  const int n = next + 1;
  MarkovChain<Real>& g = out.chain;
  g.n = n;
  g.shift = c.shift;
  g.Z = c.Z;
  g.w.assign(n, Real(0));
  for (int x = 0; x < c.n; ++x) g.w[out.map[x]] += c.w[x];
  std::vector<Eigen::Triplet<Real>> trip;
  for (int x = 0; x < c.n; ++x) {
    for (typename MarkovChain<Real>::SpMat::InnerIterator it(c.R, x); it; ++it) {
      int y = static_cast<int>(it.col());
      int a = out.map[x], b = out.map[y];
      if (a == b) continue;
      Real rate = in[x] ? c.w[x] * it.value() / g.w[out.o] : it.value();
      trip.emplace_back(a, b, rate);
    }
  }
  g.R.resize(n, n);
  g.R.setFromTriplets(trip.begin(), trip.end());
  g.R.makeCompressed();
  return out;
}

template <class Real>
inline std::vector<int> map_set(const Collapsed<Real>& cc, const std::vector<int>& A) {
  std::vector<int> out;
  for (int x : A) out.push_back(cc.map.at(x));
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// P_from[H_A < H_B] on a collapsed chain; `from` must lie outside A u B.
template <class Real>
inline Real collapsed_hit_prob(const Collapsed<Real>& cc, int from, const std::vector<int>& A, const std::vector<int>& B) {
  for (int x : A)
    if (x == from) throw Error("starting point lies in A");
  for (int x : B)
    if (x == from) throw Error("starting point lies in B");
  return hitting_probability(cc.chain, A, B)[from];
}

}  // namespace metastab
