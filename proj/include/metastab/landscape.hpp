#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "metastab/common.hpp"

namespace metastab {

// Axis-aligned closed box [lo_k, hi_k].
struct Box {
  std::vector<double> lo, hi;

  int dim() const { return static_cast<int>(lo.size()); }
  bool contains(const Vec& x, double tol = 0.0) const {
    for (int k = 0; k < dim(); ++k)
      if (x[k] < lo[k] - tol || x[k] > hi[k] + tol) return false;
    return true;
  }
  double diameter() const {
    double s = 0;
    for (int k = 0; k < dim(); ++k) s += (hi[k] - lo[k]) * (hi[k] - lo[k]);
    return std::sqrt(s);
  }
};

// Multivariate polynomial with analytic first and second derivatives.
class Polynomial {
 public:
  struct Term {
    double coef;
    std::vector<int> pow;
  };

  Polynomial() = default;
  explicit Polynomial(int d) : d_(d) {}
  Polynomial(int d, std::vector<Term> terms) : d_(d), terms_(std::move(terms)) {
    for (const auto& t : terms_)
      if (static_cast<int>(t.pow.size()) != d_)
        throw Error("polynomial term has wrong number of exponents");
  }

  int dim() const { return d_; }
  const std::vector<Term>& terms() const { return terms_; }
  bool is_zero() const { return terms_.empty(); }

  double value(const Vec& x) const {
    double s = 0;
    for (const auto& t : terms_) {
      double p = t.coef;
      for (int k = 0; k < d_; ++k) p *= ipow(x[k], t.pow[k]);
      s += p;
    }
    return s;
  }

  Vec gradient(const Vec& x) const {
    Vec g = Vec::Zero(d_);
    for (const auto& t : terms_) {
      for (int j = 0; j < d_; ++j) {
        if (t.pow[j] == 0) continue;
        double p = t.coef * t.pow[j] * ipow(x[j], t.pow[j] - 1);
        for (int k = 0; k < d_; ++k)
          if (k != j) p *= ipow(x[k], t.pow[k]);
        g[j] += p;
      }
    }
    return g;
  }

  Mat hessian(const Vec& x) const {
    Mat h = Mat::Zero(d_, d_);
    for (const auto& t : terms_) {
      for (int i = 0; i < d_; ++i) {
        for (int j = i; j < d_; ++j) {
          double p = t.coef;
          if (i == j) {
            if (t.pow[i] < 2) continue;
            p *= t.pow[i] * (t.pow[i] - 1) * ipow(x[i], t.pow[i] - 2);
          } else {
            if (t.pow[i] == 0 || t.pow[j] == 0) continue;
            p *= t.pow[i] * ipow(x[i], t.pow[i] - 1) * t.pow[j] * ipow(x[j], t.pow[j] - 1);
          }
          for (int k = 0; k < d_; ++k)
            if (k != i && k != j) p *= ipow(x[k], t.pow[k]);
          h(i, j) += p;
          if (i != j) h(j, i) += p;
        }
      }
    }
    return h;
  }

 private:
  static double ipow(double x, int k) {
    double r = 1;
    for (int i = 0; i < k; ++i) r *= x;
    return r;
  }

  int d_ = 0;
  std::vector<Term> terms_;
};

// Smooth landscape F plus limiting perturbation G on a bounded domain.
// The perturbation sequence is the constant one, so F_N = F + G/N.
struct PotentialField {
  int d = 1;
  std::string name;
  std::function<double(const Vec&)> F;
  std::function<Vec(const Vec&)> grad;
  std::function<Mat(const Vec&)> hess;
  std::function<double(const Vec&)> G;
  Box box;
  std::function<bool(const Vec&)> inside;  // optional; empty means the whole box

  double FN(const Vec& x, double N) const { return F(x) + G(x) / N; }
  bool contains(const Vec& x, double tol = 1e-12) const {
    if (!box.contains(x, tol)) return false;
    return !inside || inside(x);
  }
};

inline PotentialField polynomial_field(std::string name, Polynomial F, Polynomial G, Box box) {
  if (F.dim() != box.dim()) throw Error("potential dimension does not match domain box");
  if (G.dim() == 0) G = Polynomial(F.dim());
  if (G.dim() != F.dim()) throw Error("perturbation dimension does not match potential");
  PotentialField f;
  f.d = F.dim();
  f.name = std::move(name);
  f.F = [F](const Vec& x) { return F.value(x); };
  f.grad = [F](const Vec& x) { return F.gradient(x); };
  f.hess = [F](const Vec& x) { return F.hessian(x); };
  f.G = [G](const Vec& x) { return G.value(x); };
  f.box = std::move(box);
  return f;
}

struct BuiltinPotential {
  std::string name;
  std::string formula;
  Polynomial F;
  Box box;
};

inline std::vector<BuiltinPotential> builtin_potentials() {
  using T = Polynomial::Term;
  return {
      {"double_well_1d", "x^4/4 - x^2/2", Polynomial(1, {T{0.25, {4}}, T{-0.5, {2}}}),
       Box{{-1.6}, {1.6}}},
      {"triple_well_1d", "x^2 (x^2 - 1)^2", Polynomial(1, {T{1.0, {6}}, T{-2.0, {4}}, T{1.0, {2}}}),
       Box{{-1.2}, {1.2}}},
      {"double_well_2d", "x^4/4 - x^2/2 + y^2/2",
       Polynomial(2, {T{0.25, {4, 0}}, T{-0.5, {2, 0}}, T{0.5, {0, 2}}}),
       Box{{-1.4, -0.6}, {1.4, 0.6}}},
  };
}

inline PotentialField builtin_field(const std::string& name) {
  for (const auto& b : builtin_potentials())
    if (b.name == name) return polynomial_field(b.name, b.F, Polynomial(b.F.dim()), b.box);
  throw Error("unknown builtin potential '" + name + "'");
}

struct FieldCheck {
  double max_asymmetry = 0;   // relative to the Hessian norm
  int boundary_samples = 0;
  int boundary_violations = 0;  // sampled face points with grad F . n <= 0
};

// Samples Hessian symmetry on a grid and the outward-gradient condition on box faces.
inline FieldCheck check_field(const PotentialField& f, int per_axis = 9) {
  FieldCheck out;
  const int d = f.d;
  std::vector<int> idx(d, 0);
  auto point = [&](const std::vector<int>& i) {
    Vec x(d);
    for (int k = 0; k < d; ++k) x[k] = f.box.lo[k] + (f.box.hi[k] - f.box.lo[k]) * i[k] / (per_axis - 1);
    return x;
  };
  while (true) {
    Vec x = point(idx);
    Mat h = f.hess(x);
    double nrm = std::max(h.norm(), 1e-300);
    out.max_asymmetry = std::max(out.max_asymmetry, (h - h.transpose()).norm() / nrm);
    bool face = false;
    for (int k = 0; k < d; ++k) face |= (idx[k] == 0 || idx[k] == per_axis - 1);
    if (face && (!f.inside || f.inside(x))) {
      Vec g = f.grad(x);
      for (int k = 0; k < d; ++k) {
        if (idx[k] == 0) {
          ++out.boundary_samples;
          if (-g[k] <= 0) ++out.boundary_violations;
        } else if (idx[k] == per_axis - 1) {
          ++out.boundary_samples;
          if (g[k] <= 0) ++out.boundary_violations;
        }
      }
    }
    int k = 0;
    while (k < d && ++idx[k] == per_axis) idx[k++] = 0;
    if (k == d) break;
  }
  return out;
}

enum class CriticalKind { Minimum, Saddle, Other };

inline const char* to_string(CriticalKind k) {
  switch (k) {
    case CriticalKind::Minimum: return "minimum";
    case CriticalKind::Saddle: return "saddle";
    default: return "other";
  }
}

struct CriticalPoint {
  Vec x;
  double value = 0;
  CriticalKind kind = CriticalKind::Other;
  Vec eigenvalues;  // ascending
};

inline bool lex_less(const Vec& a, const Vec& b) {
  for (int k = 0; k < a.size(); ++k) {
    if (a[k] < b[k] - 1e-12) return true;
    if (a[k] > b[k] + 1e-12) return false;
  }
  return false;
}

namespace detail {

// Damped Newton on grad F = 0. Iterates until no further decrease, so that a degenerate
// root (linear Newton convergence) is polished far enough to expose its zero eigenvalue.
inline bool newton_refine(const PotentialField& f, Vec& x, double tol = 1e-12, int max_iter = 200) {
  Vec g = f.grad(x);
  double gn = g.norm();
  for (int it = 0; it < max_iter && gn > 0; ++it) {
    g = f.grad(x);
    Mat h = f.hess(x);
    Vec step = h.fullPivLu().solve(g);
    if (!step.allFinite()) return false;
    double t = 1.0;
    bool improved = false;
    for (int ls = 0; ls < 40; ++ls) {
      Vec y = x - t * step;
      double yn = f.grad(y).norm();
      if (yn < gn) {
        x = y;
        gn = yn;
        improved = true;
        break;
      }
      t *= 0.5;
    }
    if (!improved) break;
  }
  return gn <= std::max(tol, 1e-10);
}

}  // namespace detail

// Cell scan for gradient sign changes followed by Newton refinement.
inline std::vector<CriticalPoint> find_critical_points(const PotentialField& f, int seeds_per_axis,
                                                       std::vector<std::string>* warnings = nullptr) {
  if (seeds_per_axis < 8) throw Error("seeds_per_axis must be at least 8");
  const int d = f.d, S = seeds_per_axis;
  long nodes = 1;
  for (int k = 0; k < d; ++k) nodes *= (S + 1);
  std::vector<Vec> G(nodes);
  auto node_point = [&](long id) {
    Vec x(d);
    for (int k = 0; k < d; ++k) {
      long i = id % (S + 1);
      id /= (S + 1);
      x[k] = f.box.lo[k] + (f.box.hi[k] - f.box.lo[k]) * double(i) / S;
    }
    return x;
  };
  for (long id = 0; id < nodes; ++id) G[id] = f.grad(node_point(id));

  std::vector<Vec> found;
  int failures = 0;
  std::vector<int> c(d, 0);
  const int corners = 1 << d;
  while (true) {
    bool flagged = true;
    for (int j = 0; j < d && flagged; ++j) {
      double lo = 1e300, hi = -1e300;
      for (int m = 0; m < corners; ++m) {
        long id = 0, mul = 1;
        for (int k = 0; k < d; ++k) {
          id += (c[k] + ((m >> k) & 1)) * mul;
          mul *= (S + 1);
        }
        lo = std::min(lo, G[id][j]);
        hi = std::max(hi, G[id][j]);
      }
      flagged = lo <= 0 && hi >= 0;
    }
    if (flagged) {
      Vec x(d);
      for (int k = 0; k < d; ++k) x[k] = f.box.lo[k] + (f.box.hi[k] - f.box.lo[k]) * (c[k] + 0.5) / S;
      if (detail::newton_refine(f, x) && f.contains(x, 1e-9)) {
        bool dup = false;
        for (const auto& y : found) dup |= (x - y).norm() <= 1e-6;
        if (!dup) found.push_back(x);
      } else {
        ++failures;
      }
    }
    int k = 0;
    while (k < d && ++c[k] == S) c[k++] = 0;
    if (k == d) break;
  }
  if (failures > 0 && warnings) {
    std::ostringstream os;
    os << failures << " flagged cell(s) did not converge to a critical point inside the domain";
    warnings->push_back(os.str());
  }

  std::sort(found.begin(), found.end(), lex_less);
  std::vector<CriticalPoint> out;
  for (const auto& x : found) {
    Mat h = f.hess(x);
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (h + h.transpose()));
    Vec ev = es.eigenvalues();
    for (int k = 0; k < d; ++k)
      if (std::abs(ev[k]) <= 1e-8) throw Error("degenerate critical point");
    CriticalPoint cp;
    cp.x = x;
    cp.value = f.F(x);
    cp.eigenvalues = ev;
    int neg = 0;
    for (int k = 0; k < d; ++k) neg += ev[k] < 0;
    cp.kind = neg == 0 ? CriticalKind::Minimum : (neg == 1 ? CriticalKind::Saddle : CriticalKind::Other);
    out.push_back(cp);
  }
  return out;
}

// RK4 integration of x' = -grad F. Returns the index into `minima` of the minimum
// whose capture ball is reached, or -1 if the trajectory leaves the domain.
inline int descend(const PotentialField& f, Vec x, const std::vector<CriticalPoint>& crit,
                   const std::vector<int>& minima, Vec* endpoint = nullptr) {
  const double h = 1e-3 * f.box.diameter();
  std::vector<double> radius(minima.size(), 1e300);
  for (size_t a = 0; a < minima.size(); ++a) {
    for (size_t b = 0; b < crit.size(); ++b) {
      if (static_cast<int>(b) == minima[a]) continue;
      radius[a] = std::min(radius[a], 0.1 * (crit[b].x - crit[minima[a]].x).norm());
    }
    radius[a] = std::min(radius[a], 0.05 * f.box.diameter());
  }
  auto vel = [&](const Vec& y) {
    Vec g = -f.grad(y);
    double n = g.norm() * h;
    if (n > 0.01 * f.box.diameter()) g *= 0.01 * f.box.diameter() / n;
    return g;
  };
  for (int step = 0; step < 2000000; ++step) {
    for (size_t a = 0; a < minima.size(); ++a) {
      if ((x - crit[minima[a]].x).norm() < radius[a]) {
        if (endpoint) *endpoint = x;
        return static_cast<int>(a);
      }
    }
    if (!f.contains(x, 1e-9)) return -1;
    Vec k1 = vel(x), k2 = vel(x + 0.5 * h * k1), k3 = vel(x + 0.5 * h * k2), k4 = vel(x + h * k3);
    x += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return -1;
}

struct SaddlePairing {
  int crit = -1;     // index into LandscapeStructure::crit
  int well_a = -1;   // smaller well index; u1 points toward it
  int well_b = -1;
  Vec u1;            // unit unstable direction of Hess F, oriented toward well_a
};

struct Well {
  std::vector<int> minima;   // crit indices
  std::vector<int> deepest;  // crit indices of minima at the well's lowest value
  int designated = -1;       // lexicographically smallest deepest minimum
  double h = 0;              // depth value F(m_i)
};

struct LandscapeStructure {
  double H = 0;
  double epsilon = 0;
  std::vector<CriticalPoint> crit;
  std::vector<int> minima;          // crit indices of all local minima
  std::vector<Well> wells;
  std::vector<int> well_of_minimum; // per entry of `minima`: well index or -1 (above H)
  std::vector<SaddlePairing> saddles;  // saddles at height H
  std::vector<double> theta;
  std::vector<std::vector<int>> T, S_tail;
  std::vector<std::vector<int>> targets;  // crit indices of M_i

  int M() const { return static_cast<int>(wells.size()); }

  std::vector<int> saddle_set(int i, int j) const {
    if (i > j) std::swap(i, j);
    std::vector<int> out;
    for (size_t s = 0; s < saddles.size(); ++s)
      if (saddles[s].well_a == i && saddles[s].well_b == j) out.push_back(static_cast<int>(s));
    return out;
  }

  // Well label of a point by steepest descent; -1 if it descends outside every well.
  int classify(const PotentialField& f, const Vec& x) const {
    int a = descend(f, x, crit, minima);
    return a < 0 ? -1 : well_of_minimum[a];
  }
};

struct DepthPartition {
  std::vector<double> theta;
  std::vector<std::vector<int>> T, S_tail;
};

inline DepthPartition depth_partition(const std::vector<double>& theta_hat) {
  DepthPartition p;
  std::vector<double> sorted = theta_hat;
  std::sort(sorted.begin(), sorted.end());
  for (double t : sorted)
    if (p.theta.empty() || t > p.theta.back() + 1e-9) p.theta.push_back(t);
  p.T.resize(p.theta.size());
  for (int i = 0; i < static_cast<int>(theta_hat.size()); ++i)
    for (size_t m = 0; m < p.theta.size(); ++m)
      if (std::abs(theta_hat[i] - p.theta[m]) <= 1e-9) p.T[m].push_back(i);
  p.S_tail.resize(p.theta.size());
  for (size_t m = 0; m < p.theta.size(); ++m)
    for (size_t k = m; k < p.theta.size(); ++k)
      p.S_tail[m].insert(p.S_tail[m].end(), p.T[k].begin(), p.T[k].end());
  for (auto& s : p.S_tail) std::sort(s.begin(), s.end());
  return p;
}

inline DepthPartition depth_partition(const LandscapeStructure& ls) {
  std::vector<double> th;
  for (const auto& w : ls.wells) th.push_back(ls.H - w.h);
  return depth_partition(th);
}

inline double auto_saddle_height(const std::vector<CriticalPoint>& crit) {
  double H = -1e300;
  for (const auto& c : crit)
    if (c.kind == CriticalKind::Saddle) H = std::max(H, c.value);
  if (H == -1e300) throw Error("no saddle points found");
  return H;
}

// Half the gap between H and the largest critical value strictly below it.
inline double auto_epsilon(const std::vector<CriticalPoint>& crit, double H) {
  double below = -1e300;
  for (const auto& c : crit)
    if (c.value < H - 1e-9) below = std::max(below, c.value);
  if (below == -1e300) throw Error("no critical value below the saddle height");
  return 0.5 * (H - below);
}

inline LandscapeStructure build_landscape(const PotentialField& f, double H, double epsilon,
                                          const std::vector<CriticalPoint>& crit) {
  LandscapeStructure ls;
  ls.H = H;
  ls.epsilon = epsilon;
  ls.crit = crit;
  if (!(epsilon > 0)) throw Error("epsilon must be positive");
  bool any = false;
  for (const auto& c : crit) {
    if (c.kind == CriticalKind::Saddle && std::abs(c.value - H) <= 1e-9) any = true;
    if (c.value > H - epsilon && c.value < H - 1e-9)
      throw Error("critical value inside (H - epsilon, H); choose a smaller epsilon");
  }
  if (!any) throw Error("no saddle point at height H");

  for (int i = 0; i < static_cast<int>(crit.size()); ++i)
    if (crit[i].kind == CriticalKind::Minimum) ls.minima.push_back(i);

  auto unstable = [&](int c) {
    Eigen::SelfAdjointEigenSolver<Mat> es(f.hess(crit[c].x));
    Vec u = es.eigenvectors().col(0);
    return u;
  };
  auto pair_of = [&](int c, const Vec& u) {
    const double delta = 1e-3;
    int a = descend(f, crit[c].x + delta * u, crit, ls.minima);
    int b = descend(f, crit[c].x - delta * u, crit, ls.minima);
    return std::make_pair(a, b);
  };

  // Union minima below H that are joined by saddles lower than H.
  const int nm = static_cast<int>(ls.minima.size());
  std::vector<int> parent(nm);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> root = [&](int x) { return parent[x] == x ? x : parent[x] = root(parent[x]); };
  for (int c = 0; c < static_cast<int>(crit.size()); ++c) {
    if (crit[c].kind != CriticalKind::Saddle || crit[c].value >= H - 1e-9) continue;
    auto [a, b] = pair_of(c, unstable(c));
    if (a >= 0 && b >= 0) parent[root(a)] = root(b);
  }
  std::map<int, std::vector<int>> classes;
  for (int a = 0; a < nm; ++a)
    if (crit[ls.minima[a]].value < H - 1e-9) classes[root(a)].push_back(a);
  std::vector<std::vector<int>> groups;
  for (auto& [r, g] : classes) groups.push_back(g);
  // Order wells by their lexicographically smallest minimum.
  std::sort(groups.begin(), groups.end(), [&](const auto& x, const auto& y) {
    return lex_less(crit[ls.minima[x.front()]].x, crit[ls.minima[y.front()]].x);
  });
  ls.well_of_minimum.assign(nm, -1);
  for (size_t w = 0; w < groups.size(); ++w) {
    Well well;
    double h = 1e300;
    for (int a : groups[w]) {
      ls.well_of_minimum[a] = static_cast<int>(w);
      well.minima.push_back(ls.minima[a]);
      h = std::min(h, crit[ls.minima[a]].value);
    }
    for (int c : well.minima)
      if (crit[c].value <= h + 1e-9) well.deepest.push_back(c);
    well.designated = well.deepest.front();  // minima are stored in lexicographic order
    well.h = h;
    ls.wells.push_back(well);
  }

  for (int c = 0; c < static_cast<int>(crit.size()); ++c) {
    if (crit[c].kind != CriticalKind::Saddle || std::abs(crit[c].value - H) > 1e-9) continue;
    Vec u = unstable(c);
    auto [a, b] = pair_of(c, u);
    int wa = a >= 0 ? ls.well_of_minimum[a] : -1;
    int wb = b >= 0 ? ls.well_of_minimum[b] : -1;
    if (wa < 0 || wb < 0) continue;  // saddle on the rim of the domain
    if (wa == wb) throw Error("degenerate saddle pairing");
    SaddlePairing sp;
    sp.crit = c;
    sp.well_a = std::min(wa, wb);
    sp.well_b = std::max(wa, wb);
    sp.u1 = (wa == sp.well_a) ? u : Vec(-u);
    ls.saddles.push_back(sp);
  }
  if (ls.saddles.empty()) throw Error("no saddle at height H separates two wells");

  auto dp = depth_partition(ls);
  ls.theta = dp.theta;
  ls.T = dp.T;
  ls.S_tail = dp.S_tail;

  ls.targets.resize(ls.wells.size());
  for (size_t i = 0; i < ls.wells.size(); ++i) {
    double fi = crit[ls.wells[i].designated].value;
    for (int a = 0; a < nm; ++a)
      if (ls.well_of_minimum[a] != static_cast<int>(i) && crit[ls.minima[a]].value <= fi + 1e-9)
        ls.targets[i].push_back(ls.minima[a]);
  }
  return ls;
}

// nu_i = sum over deepest minima of e^{-G(m)} / sqrt(det Hess F(m)).
inline std::vector<double> well_weights(const LandscapeStructure& ls, const PotentialField& f) {
  std::vector<double> nu;
  for (const auto& w : ls.wells) {
    double s = 0;
    for (int c : w.deepest) {
      Mat h = f.hess(ls.crit[c].x);
      Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (h + h.transpose()));
      if (es.eigenvalues().minCoeff() <= 0) throw Error("Hessian at a well minimum is not positive definite");
      s += std::exp(-f.G(ls.crit[c].x)) / std::sqrt(h.determinant());
    }
    nu.push_back(s);
  }
  return nu;
}

}  // namespace metastab
