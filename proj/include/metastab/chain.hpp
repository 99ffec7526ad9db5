#pragma once

#include <algorithm>
#include <memory>
#include <random>
#include <vector>

#include <Eigen/Sparse>

#include "metastab/common.hpp"
#include "metastab/landscape.hpp"
#include "metastab/lattice.hpp"

namespace metastab {

// One translated cycle gamma_x^N together with its (shifted) log-conductance.
struct Translate {
  int cycle = 0;
  long base = 0;              // grid index of x
  std::vector<int> states;    // x + z_j / N for j = 0..L-1
  double logc = 0;            // -N * Fbar_N(x) + shift
};

// Cycle generator over a lattice. All logs are relative to
// shift = N * min F_N so that the largest weight is exactly one.
struct Generator {
  std::shared_ptr<const LatticeDomain> lat;
  int N = 0;
  bool barycentric = false;   // rates through F_N(x + zbar/N) instead of Fbar_N(x)
  std::vector<double> FN;     // F_N per state
  std::vector<double> logw;   // -N F_N + shift per state
  double shift = 0;
  std::vector<Translate> translates;
  int max_cycle_length = 0;

  int size() const { return static_cast<int>(FN.size()); }
  bool reversible() const {
    for (const auto& c : lat->cycles)
      if (c.L() != 2) return false;
    return true;
  }
};

inline Generator build_generator(std::shared_ptr<const LatticeDomain> lat, const PotentialField& f,
                                 bool barycentric = false) {
  if (lat->d != f.d) throw Error("lattice and potential dimensions differ");
  Generator g;
  g.lat = lat;
  g.N = lat->N;
  g.barycentric = barycentric;
  const int n = lat->size();
  g.FN.resize(n);
  double mn = 1e300;
  for (int s = 0; s < n; ++s) {
    g.FN[s] = f.FN(lat->point(s), g.N);
    if (!std::isfinite(g.FN[s])) throw Error("F_N is not finite at a lattice state");
    mn = std::min(mn, g.FN[s]);
  }
  g.shift = g.N * mn;
  g.logw.resize(n);
  for (int s = 0; s < n; ++s) g.logw[s] = -g.N * g.FN[s] + g.shift;
  for (size_t c = 0; c < lat->cycles.size(); ++c) {
    const Cycle& cy = lat->cycles[c];
    g.max_cycle_length = std::max(g.max_cycle_length, cy.L());
    Vec zbar = cy.barycenter();
    for (long base : lat->hat[c]) {
      Translate t;
      t.cycle = static_cast<int>(c);
      t.base = base;
      double fbar = 0;
      for (int j = 0; j < cy.L(); ++j) {
        int s = lat->cycle_state(static_cast<int>(c), base, j);
        t.states.push_back(s);
        fbar += g.FN[s];
      }
      fbar /= cy.L();
      if (barycentric) fbar = f.FN(lat->grid_point(base) + zbar / double(g.N), g.N);
      t.logc = -g.N * fbar + g.shift;
      g.translates.push_back(std::move(t));
    }
  }
  return g;
}

// General continuous-time chain: off-diagonal jump rates plus a stationary weight.
// Weights are stored shifted: true e^{-N F_N(x)} = w(x) e^{-shift}.
template <class Real>
struct MarkovChain {
  using SpMat = Eigen::SparseMatrix<Real, Eigen::RowMajor>;
  int n = 0;
  SpMat R;
  std::vector<Real> w;
  Real Z = Real(0);
  double shift = 0;

  Real mu(int x) const { return w[x] / Z; }
  Func<Real> mu_vec() const {
    Func<Real> m(n);
    for (int x = 0; x < n; ++x) m[x] = w[x] / Z;
    return m;
  }
  // log of the true normalizer sum_x e^{-N F_N(x)}
  double log_Z() const { return log_of(Z) - shift; }

  Func<Real> exit_rates() const {
    Func<Real> l = Func<Real>::Zero(n);
    for (int x = 0; x < n; ++x)
      for (typename SpMat::InnerIterator it(R, x); it; ++it) l[x] += it.value();
    return l;
  }
  Real rate(int x, int y) const { return R.coeff(x, y); }
};

template <class Real>
inline Real translate_weight(const Translate& t) {
  return exp_of(Real(t.logc));
}

template <class Real>
inline MarkovChain<Real> to_chain(const Generator& g, bool adjoint = false) {
  MarkovChain<Real> ch;
  ch.n = g.size();
  ch.shift = g.shift;
  ch.w.resize(ch.n);
  ch.Z = Real(0);
  for (int s = 0; s < ch.n; ++s) {
    ch.w[s] = exp_of(Real(g.logw[s]));
    ch.Z += ch.w[s];
  }
  std::vector<Eigen::Triplet<Real>> trip;
  for (const auto& t : g.translates) {
    const int L = static_cast<int>(t.states.size());
    Real c = translate_weight<Real>(t);
    for (int j = 0; j < L; ++j) {
      int from = t.states[j];
      int to = adjoint ? t.states[(j - 1 + L) % L] : t.states[(j + 1) % L];
      trip.emplace_back(from, to, c / ch.w[from]);
    }
  }
  ch.R.resize(ch.n, ch.n);
  ch.R.setFromTriplets(trip.begin(), trip.end());
  ch.R.makeCompressed();
  return ch;
}

// mu-adjoint: R*(x, y) = w(y) R(y, x) / w(x).
template <class Real>
inline MarkovChain<Real> adjoint_chain(const MarkovChain<Real>& c) {
  MarkovChain<Real> a = c;
  std::vector<Eigen::Triplet<Real>> trip;
  for (int x = 0; x < c.n; ++x)
    for (typename MarkovChain<Real>::SpMat::InnerIterator it(c.R, x); it; ++it)
      trip.emplace_back(static_cast<int>(it.col()), x, c.w[x] * it.value() / c.w[it.col()]);
  a.R.setZero();
  a.R.resize(c.n, c.n);
  a.R.setFromTriplets(trip.begin(), trip.end());
  a.R.makeCompressed();
  return a;
}

// Generator (L + L*) / 2.
template <class Real>
inline MarkovChain<Real> symmetrized(const MarkovChain<Real>& c) {
  MarkovChain<Real> a = adjoint_chain(c);
  MarkovChain<Real> s = c;
  s.R = (c.R + a.R) * Real(0.5);
  s.R.prune(Real(0));
  s.R.makeCompressed();
  return s;
}

// (L f)(x) = sum_y R(x, y) (f(y) - f(x)).
template <class Real>
inline Func<Real> apply_L(const MarkovChain<Real>& c, const Func<Real>& f) {
  Func<Real> out = Func<Real>::Zero(c.n);
  for (int x = 0; x < c.n; ++x) {
    Real s(0);
    for (typename MarkovChain<Real>::SpMat::InnerIterator it(c.R, x); it; ++it)
      s += it.value() * (f[it.col()] - f[x]);
    out[x] = s;
  }
  return out;
}

template <class Real>
inline Real inner_mu(const MarkovChain<Real>& c, const Func<Real>& f, const Func<Real>& g) {
  Real s(0);
  for (int x = 0; x < c.n; ++x) s += c.w[x] * f[x] * g[x];
  return s / c.Z;
}

// Dirichlet form 1/2 sum_{x,y} mu(x) R(x,y) (f(y) - f(x))^2 of a stationary chain.
template <class Real>
inline Real chain_dirichlet(const MarkovChain<Real>& c, const Func<Real>& f) {
  Real s(0);
  for (int x = 0; x < c.n; ++x)
    for (typename MarkovChain<Real>::SpMat::InnerIterator it(c.R, x); it; ++it) {
      Real d = f[it.col()] - f[x];
      s += c.w[x] * it.value() * d * d;
    }
  return s / (Real(2) * c.Z);
}

// Cycle decomposition of the Dirichlet form restricted to a subset of translates.
// An empty selection means every translate.
template <class Real>
inline Real dirichlet_form(const Generator& g, const MarkovChain<Real>& c, const Func<Real>& f,
                           const std::vector<int>* translates = nullptr) {
  auto one = [&](const Translate& t) {
    Real s(0);
    const int L = static_cast<int>(t.states.size());
    for (int i = 0; i < L; ++i) {
      Real d = f[t.states[(i + 1) % L]] - f[t.states[i]];
      s += d * d;
    }
    return translate_weight<Real>(t) * s;
  };
  Real total(0);
  if (translates) {
    for (int i : *translates) total += one(g.translates[i]);
  } else {
    for (const auto& t : g.translates) total += one(t);
  }
  return total / (Real(2) * c.Z);
}

// ||mu^T Q||_inf relative to max_x mu(x) lambda(x).
template <class Real>
inline double stationarity_residual(const MarkovChain<Real>& c) {
  Func<Real> flux = Func<Real>::Zero(c.n);
  Func<Real> lam = c.exit_rates();
  Real scale(0);
  for (int x = 0; x < c.n; ++x) {
    Real out = c.w[x] * lam[x];
    if (out > scale) scale = out;
    flux[x] -= out;
    for (typename MarkovChain<Real>::SpMat::InnerIterator it(c.R, x); it; ++it)
      flux[it.col()] += c.w[x] * it.value();
  }
  Real mx(0);
  for (int x = 0; x < c.n; ++x)
    if (abs_of(flux[x]) > mx) mx = abs_of(flux[x]);
  return to_double(Real(mx / scale));
}

// <f, -L h>^2 / (D(f) D(h)); bounded by 4 L^2 for a cycle generator.
template <class Real>
inline double sector_ratio(const MarkovChain<Real>& c, const Func<Real>& f, const Func<Real>& h) {
  Real df = chain_dirichlet(c, f), dh = chain_dirichlet(c, h);
  if (df <= Real(0) || dh <= Real(0)) throw Error("sector ratio needs functions with positive Dirichlet form");
  Real ip = -inner_mu(c, f, apply_L(c, h));
  return to_double(Real(ip * ip / (df * dh)));
}

// Macroscopic drift b(x) = -sum_j e^{(z_j - zbar) . grad F(x)} (z_{j+1} - z_j);
// the adjoint uses z_{j-1} - z_j. Several cycles add up.
inline Vec drift(const PotentialField& f, const std::vector<Cycle>& cycles, const Vec& x, bool adjoint = false) {
  Vec g = f.grad(x);
  Vec b = Vec::Zero(f.d);
  for (const auto& c : cycles) {
    Vec zbar = c.barycenter();
    for (int j = 0; j < c.L(); ++j) {
      Vec zj = c.vertex(j);
      Vec step = adjoint ? Vec(c.vertex(j - 1) - zj) : Vec(c.vertex(j + 1) - zj);
      b -= std::exp((zj - zbar).dot(g)) * step;
    }
  }
  return b;
}

inline Vec drift(const PotentialField& f, const Cycle& c, const Vec& x, bool adjoint = false) {
  return drift(f, std::vector<Cycle>{c}, x, adjoint);
}

template <class Real>
inline Func<Real> random_function(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Func<Real> f(n);
  for (int i = 0; i < n; ++i) f[i] = Real(nd(rng));
  return f;
}

}  // namespace metastab
