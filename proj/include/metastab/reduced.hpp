#pragma once

#include <cmath>
#include <algorithm>
#include <deque>
#include <limits>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/constants/constants.hpp>

#include "metastab/chain.hpp"
#include "metastab/landscape.hpp"
#include "metastab/lattice.hpp"
#include "metastab/saddle.hpp"

namespace metastab {

// Reversible chain on the wells: conductance omega(i,j) between i and j,
// stationary law omega_i / sum_k omega_k and jump rates omega(i,j) / mu(i).
struct ReducedChain {
  Mat omega;                // symmetric, zero diagonal
  std::vector<double> nu;   // well weights nu_i
  std::vector<double> h;    // well depths F(m_i)
  double H = 0;
  std::vector<double> theta;
  std::vector<std::vector<int>> T, S_tail;

  int M() const { return static_cast<int>(omega.rows()); }
  double omega_i(int i) const { return omega.row(i).sum(); }
  double omega_total() const { return omega.sum(); }
  Vec mu() const {
    Vec m(M());
    const double tot = omega_total();
    for (int i = 0; i < M(); ++i) m[i] = tot > 0 ? omega_i(i) / tot : 0.0;
    return m;
  }
  Mat rates() const {
    Vec m = mu();
    Mat r = Mat::Zero(M(), M());
    for (int i = 0; i < M(); ++i)
      for (int j = 0; j < M(); ++j)
        if (i != j && m[i] > 0) r(i, j) = omega(i, j) / m[i];
    return r;
  }
  // The chain as a generic MarkovChain, for the trace and potential-theory routines.
  MarkovChain<double> as_chain() const {
    MarkovChain<double> c;
    c.n = M();
    Vec m = mu();
    Mat r = rates();
    c.w.assign(m.data(), m.data() + M());
    c.Z = 1.0;
    std::vector<Eigen::Triplet<double>> trip;
    for (int i = 0; i < M(); ++i)
      for (int j = 0; j < M(); ++j)
        if (r(i, j) > 0) trip.emplace_back(i, j, r(i, j));
    c.R.resize(M(), M());
    c.R.setFromTriplets(trip.begin(), trip.end());
    c.R.makeCompressed();
    return c;
  }
  // (L_Y q)(i) = sum_j rate(i,j) (q(j) - q(i)).
  Vec apply_L(const Vec& q) const {
    Mat r = rates();
    Vec out = Vec::Zero(M());
    for (int i = 0; i < M(); ++i)
      for (int j = 0; j < M(); ++j) out[i] += r(i, j) * (q[j] - q[i]);
    return out;
  }
  // D_Y(q) = 1/2 sum_{i,j} omega(i,j) (q(j) - q(i))^2.
  double dirichlet(const Vec& q) const {
    double s = 0;
    for (int i = 0; i < M(); ++i)
      for (int j = 0; j < M(); ++j) s += omega(i, j) * (q[j] - q[i]) * (q[j] - q[i]);
    return 0.5 * s;
  }
};

inline ReducedChain reduced_chain(const LandscapeStructure& ls, const std::vector<SaddleAnalysis>& saddles,
                                  const std::vector<double>& nu) {
  ReducedChain rc;
  const int M = ls.M();
  if (static_cast<int>(nu.size()) != M) throw Error("one weight per well is required");
  rc.omega = Mat::Zero(M, M);
  for (const auto& sa : saddles) {
    if (sa.well_a < 0 || sa.well_b < 0 || sa.well_a >= M || sa.well_b >= M || sa.well_a == sa.well_b)
      throw Error("saddle analysis is not attached to two distinct wells");
    rc.omega(sa.well_a, sa.well_b) += sa.omega;
    rc.omega(sa.well_b, sa.well_a) += sa.omega;
  }
  rc.nu = nu;
  for (const auto& w : ls.wells) rc.h.push_back(w.h);
  rc.H = ls.H;
  rc.theta = ls.theta;
  rc.T = ls.T;
  rc.S_tail = ls.S_tail;
  return rc;
}

inline ReducedChain reduced_from_omega(Mat omega, std::vector<double> nu = {}) {
  ReducedChain rc;
  if (omega.rows() != omega.cols()) throw Error("omega must be square");
  if ((omega - omega.transpose()).cwiseAbs().maxCoeff() > 1e-14 * std::max(1.0, omega.cwiseAbs().maxCoeff()))
    throw Error("omega must be symmetric");
  rc.omega = std::move(omega);
  rc.omega.diagonal().setZero();
  rc.nu = nu.empty() ? std::vector<double>(rc.M(), 1.0) : std::move(nu);
  rc.h.assign(rc.M(), 0.0);
  return rc;
}

struct CapY {
  double value = 0;       // D_Y(q_{A,B})
  double flux_A = 0;      // -sum_{A} mu L_Y q
  double flux_B = 0;      // sum_{B} mu L_Y q
  Vec q;                  // q_{A,B}
  bool disconnected = false;
};

// q_{A,B}: 1 on A, 0 on B, harmonic elsewhere. Free wells with no path to
// A u B keep q = 0; the capacity is 0 when B cannot be reached from A.
inline CapY cap_Y(const ReducedChain& rc, const std::vector<int>& A, const std::vector<int>& B) {
  const int M = rc.M();
  if (A.empty() || B.empty()) throw Error("sets A and B must be nonempty");
  std::vector<int> role(M, 0);  // 1 in A, 2 in B
  for (int a : A) {
    if (a < 0 || a >= M) throw Error("well index out of range");
    role[a] = 1;
  }
  for (int b : B) {
    if (b < 0 || b >= M) throw Error("well index out of range");
    if (role[b] == 1) throw Error("sets A and B are not disjoint");
    role[b] = 2;
  }
  CapY out;
  out.q = Vec::Zero(M);
  for (int a : A) out.q[a] = 1;
  // Free wells connected to A u B.
  std::vector<char> reach(M, 0);
  std::deque<int> queue;
  for (int i = 0; i < M; ++i)
    if (role[i]) {
      reach[i] = 1;
      queue.push_back(i);
    }
  while (!queue.empty()) {
    int i = queue.front();
    queue.pop_front();
    for (int j = 0; j < M; ++j)
      if (!reach[j] && rc.omega(i, j) > 0) {
        reach[j] = 1;
        queue.push_back(j);
      }
  }
  std::vector<int> free;
  std::vector<int> pos(M, -1);
  for (int i = 0; i < M; ++i)
    if (!role[i] && reach[i]) {
      pos[i] = static_cast<int>(free.size());
      free.push_back(i);
    }
  if (!free.empty()) {
    const int m = static_cast<int>(free.size());
    Mat K = Mat::Zero(m, m);
    Vec rhs = Vec::Zero(m);
    for (int r = 0; r < m; ++r) {
      int i = free[r];
      for (int j = 0; j < M; ++j) {
        if (j == i) continue;
        K(r, r) += rc.omega(i, j);
        if (pos[j] >= 0)
          K(r, pos[j]) -= rc.omega(i, j);
        else if (role[j] == 1)
          rhs[r] += rc.omega(i, j);
      }
    }
    Vec sol = K.fullPivLu().solve(rhs);
    for (int r = 0; r < m; ++r) out.q[free[r]] = sol[r];
  }
  out.value = rc.dirichlet(out.q);
  Vec Lq = rc.apply_L(out.q), mu = rc.mu();
  for (int a : A) out.flux_A -= mu[a] * Lq[a];
  for (int b : B) out.flux_B += mu[b] * Lq[b];
  out.disconnected = out.value == 0.0;
  return out;
}

// c_m(i,j) = 1/2 {cap({i}, S\\{i}) + cap({j}, S\\{j}) - cap({i,j}, S\\{i,j})} within the set S.
inline double c_m(const ReducedChain& rc, const std::vector<int>& S, int i, int j) {
  if (i == j) throw Error("c_m needs two distinct wells");
  auto in = [&](int k) { return std::find(S.begin(), S.end(), k) != S.end(); };
  if (!in(i) || !in(j)) throw Error("wells must belong to the set S_m");
  auto rest = [&](std::vector<int> drop) {
    std::vector<int> out;
    for (int k : S)
      if (std::find(drop.begin(), drop.end(), k) == drop.end()) out.push_back(k);
    return out;
  };
  auto cap_or_zero = [&](const std::vector<int>& A, const std::vector<int>& B) {
    return B.empty() ? 0.0 : cap_Y(rc, A, B).value;
  };
  return 0.5 * (cap_or_zero({i}, rest({i})) + cap_or_zero({j}, rest({j})) - cap_or_zero({i, j}, rest({i, j})));
}

// Metastable sets on the lattice: states with F <= H - epsilon, labelled by the well their descent ends in.
inline std::vector<std::vector<int>> valley_states(const LatticeDomain& lat, const PotentialField& f,
                                                   const LandscapeStructure& ls) {
  std::vector<std::vector<int>> out(ls.M());
  for (int s = 0; s < lat.size(); ++s) {
    Vec x = lat.point(s);
    if (f.F(x) > ls.H - ls.epsilon) continue;
    int i = ls.classify(f, x);
    if (i >= 0) out[i].push_back(s);
  }
  for (int i = 0; i < ls.M(); ++i)
    if (out[i].empty()) throw Error("valley of well " + std::to_string(i) + " has no lattice point at N=" +
                                    std::to_string(lat.N));
  return out;
}

// Lattice versions of the designated minimum m_i and of the target set of well i.
inline int designated_state(const LatticeDomain& lat, const LandscapeStructure& ls, int i) {
  return nearest_lattice_point(ls.crit[ls.wells[i].designated].x, lat);
}

inline std::vector<int> target_states(const LatticeDomain& lat, const LandscapeStructure& ls, int i) {
  std::vector<int> out;
  for (int c : ls.targets[i]) out.push_back(nearest_lattice_point(ls.crit[c].x, lat));
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// log kappa_N = -log Z_N + (d/2 - 1) log(2 pi N) - N H, with log Z_N in true units.
inline double log_kappa(int N, int d, double H, double log_Z) {
  const double two_pi = 2 * boost::math::constants::pi<double>();
  return -log_Z + (0.5 * d - 1) * std::log(two_pi * N) - N * H;
}

inline double log_beta(int N, double theta) {
  return std::log(2 * boost::math::constants::pi<double>() * N) + theta * N;
}

// Natural logs of the closed-form predictions at one N.
struct PredictionSet {
  int N = 0;
  double log_kappa = 0;
  std::vector<double> log_mass;   // mu_N(E^i)
  std::vector<Mat> log_rate;      // per level m: r_N^{(m)}(i,j), -inf unless i in T_m and j in S_m
  std::vector<double> log_ek;     // E_{m_i}[H_{targets of i}]; NaN for wells that do not move at any level
  std::vector<int> level;         // depth class of each well

  // log of kappa_N cap_Y(A, B)
  double log_capacity(const ReducedChain& rc, const std::vector<int>& A, const std::vector<int>& B) const {
    return log_kappa + std::log(cap_Y(rc, A, B).value);
  }
};

inline PredictionSet predictions(const ReducedChain& rc, int N, int d, double log_Z) {
  PredictionSet p;
  p.N = N;
  const double two_pi = 2 * boost::math::constants::pi<double>();
  const int M = rc.M();
  p.log_kappa = log_kappa(N, d, rc.H, log_Z);
  for (int i = 0; i < M; ++i)
    p.log_mass.push_back(0.5 * d * std::log(two_pi * N) - N * rc.h[i] + std::log(rc.nu[i]) - log_Z);
  p.level.assign(M, -1);
  for (size_t m = 0; m < rc.T.size(); ++m)
    for (int i : rc.T[m]) p.level[i] = static_cast<int>(m);
  p.log_ek.assign(M, std::numeric_limits<double>::quiet_NaN());
  const double ninf = -std::numeric_limits<double>::infinity();
  for (size_t m = 0; m < rc.T.size(); ++m) {
    Mat lr = Mat::Constant(M, M, ninf);
    const auto& S = rc.S_tail[m];
    for (int i : rc.T[m]) {
      double csum = 0;
      for (int j : S) {
        if (j == i) continue;
        double c = c_m(rc, S, i, j);
        csum += c;
        if (c > 0) lr(i, j) = -N * (rc.H - rc.h[i]) - std::log(two_pi * N) + std::log(c) - std::log(rc.nu[i]);
      }
      if (csum > 0) p.log_ek[i] = std::log(rc.nu[i]) + log_beta(N, rc.theta[m]) - std::log(csum);
    }
    p.log_rate.push_back(std::move(lr));
  }
  return p;
}

// Two-well Eyring-Kramers form 2 pi N / mu sqrt(-det H_sigma / det H_m) e^{N dF} e^{dG}, as a log.
inline double log_eyring_kramers(const PotentialField& f, const SaddleAnalysis& sa, const Vec& m, int N) {
  Mat Hm = f.hess(m);
  double dH = Hm.determinant();
  if (!(dH > 0)) throw Error("Hessian at the minimum is not positive definite");
  const double two_pi = 2 * boost::math::constants::pi<double>();
  return std::log(two_pi * N / sa.mu) + 0.5 * std::log(-sa.H.determinant() / dH) + N * (sa.F_sigma - f.F(m)) +
         (sa.G_sigma - f.G(m));
}

}  // namespace metastab
