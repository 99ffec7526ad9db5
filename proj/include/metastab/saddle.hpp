#pragma once

#include <complex>
#include <limits>
#include <sstream>
#include <vector>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <boost/math/constants/constants.hpp>
#include <boost/math/special_functions/erf.hpp>

#include "metastab/chain.hpp"
#include "metastab/landscape.hpp"
#include "metastab/lattice.hpp"

namespace metastab {

// A = sum over cycles of sum_i (z_i - z_{i+1}) z_i^T. Its symmetric part is
// positive definite for any generating family.
inline Mat cycle_matrix_A(const std::vector<Cycle>& cycles) {
  if (cycles.empty()) throw Error("cycle list is empty");
  const int d = cycles.front().dim();
  Mat A = Mat::Zero(d, d);
  for (const auto& c : cycles) {
    if (c.dim() != d) throw Error("cycles have different dimensions");
    for (int i = 0; i < c.L(); ++i) A += (c.vertex(i) - c.vertex(i + 1)) * c.vertex(i).transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (A + A.transpose()));
  if (es.eigenvalues().minCoeff() <= 1e-12)
    throw Error("internal consistency: symmetric part of the cycle matrix is not positive definite");
  return A;
}

struct InertiaCheck {
  bool ok = false;
  int negative_real = 0;        // eigenvalues with Re < 0 and Im = 0
  int nonreal_negative = 0;     // eigenvalues with Re <= 0 that are not real
  double det = 0;
  double min_other_real = 0;    // smallest real part among the remaining eigenvalues
  std::vector<std::complex<double>> eigenvalues;
};

// One real negative eigenvalue, negative determinant, and positive real part
// for the other eigenvalues of A H.
inline InertiaCheck check_inertia(const Mat& A, const Mat& H) {
  InertiaCheck out;
  Mat M = A * H;
  Eigen::EigenSolver<Mat> es(M, false);
  if (es.info() != Eigen::Success) return out;
  const double scale = std::max(1.0, M.norm());
  out.det = M.determinant();
  out.min_other_real = std::numeric_limits<double>::infinity();
  bool used = false;
  for (int k = 0; k < M.rows(); ++k) {
    std::complex<double> e = es.eigenvalues()[k];
    out.eigenvalues.push_back(e);
    bool real = std::abs(e.imag()) <= 1e-10 * scale;
    if (real && e.real() < 0) {
      ++out.negative_real;
      if (!used) {
        used = true;
        continue;
      }
    } else if (e.real() <= 0) {
      ++out.nonreal_negative;
    }
    out.min_other_real = std::min(out.min_other_real, e.real());
  }
  out.ok = out.negative_real == 1 && out.nonreal_negative == 0 && out.det < 0 && out.min_other_real > 0;
  return out;
}

struct SaddleResiduals {
  double vHv = 0;         // |v H^-1 v + 1/alpha| relative
  double det_half = 0;    // |det(H + alpha v v^T)| / |det H|
  double det_full = 0;    // |det(H + 2 alpha v v^T) + det H| / |det H|
  double min_eig_full = 0;  // smallest eigenvalue of H + 2 alpha v v^T
  double null_space = 0;  // |(H + alpha v v^T) H^-1 v| / (|H| |H^-1 v|)
  double eq02 = 0;        // v_1^2/lambda_1 against sum_k v_k^2/lambda_k + 1/alpha
  double eigen = 0;       // |(M^T + mu) v| / |M|
};

struct SaddleAnalysis {
  Vec sigma;
  double F_sigma = 0, G_sigma = 0;
  Mat H;
  Vec lambda;   // lambda_1 = -(negative eigenvalue), then lambda_2..lambda_d
  Mat U;        // columns u_1..u_d; u_1 oriented toward well_a
  Mat A, M;
  double mu = 0, alpha = 0, omega = 0;
  Vec v;
  double mu_star = 0, alpha_star = 0;
  Vec v_star;
  int well_a = -1, well_b = -1;
  SaddleResiduals res, res_star;
  double jacobian_error = 0;   // max |Db(sigma) - M| by central differences
  double jacobian_star_error = 0;
  std::vector<std::complex<double>> eig_M;

  double det_H() const { return H.determinant(); }
  // alpha for a rescaled direction: alpha v v^T is the invariant object,
  // so alpha(c v) = alpha(v) / c^2.
  static double alpha_for(double mu, const Mat& A, const Vec& w) { return mu / w.dot(A * w); }
};

namespace detail {

// Real eigenvalue of M with negative real part; errors unless it is unique.
inline double negative_eigenvalue(const Mat& M, std::vector<std::complex<double>>* all = nullptr) {
  Eigen::EigenSolver<Mat> es(M, false);
  if (es.info() != Eigen::Success) throw Error("eigen-solver failure at saddle");
  const double scale = std::max(1.0, M.norm());
  int count = 0;
  double val = 0;
  for (int k = 0; k < M.rows(); ++k) {
    std::complex<double> e = es.eigenvalues()[k];
    if (all) all->push_back(e);
    if (e.real() < 0) {
      if (std::abs(e.imag()) > 1e-10 * scale) throw Error("saddle matrix has a non-real eigenvalue with negative real part");
      ++count;
      val = e.real();
    }
  }
  if (count != 1) throw Error("saddle matrix must have exactly one negative eigenvalue (mu not simple)");
  return -val;
}

// Unit vector spanning the (numerical) null space of K.
inline Vec null_vector(const Mat& K) {
  Eigen::JacobiSVD<Mat> svd(K, Eigen::ComputeFullV);
  Vec s = svd.singularValues();
  const int d = static_cast<int>(K.cols());
  if (d > 1 && s[d - 2] <= 1e-8 * std::max(1.0, s[0])) throw Error("negative eigenvalue of the saddle matrix is not simple");
  return svd.matrixV().col(d - 1).normalized();
}

inline SaddleResiduals residuals(const Mat& H, const Mat& M, const Vec& v, double alpha, double mu, const Vec& lambda,
                                 const Mat& U) {
  SaddleResiduals r;
  const int d = static_cast<int>(H.rows());
  Mat Hinv = H.inverse();
  double dH = std::abs(H.determinant());
  double vHv = v.dot(Hinv * v);
  r.vHv = rel_diff(vHv, -1.0 / alpha);
  Mat half = H + alpha * v * v.transpose();
  Mat full = H + 2 * alpha * v * v.transpose();
  r.det_half = std::abs(half.determinant()) / dH;
  r.det_full = std::abs(full.determinant() + H.determinant()) / dH;
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (full + full.transpose()));
  r.min_eig_full = es.eigenvalues().minCoeff();
  Vec w = Hinv * v;
  r.null_space = (half * w).norm() / (H.norm() * w.norm());
  double lhs = 0, rhs = 1.0 / alpha;
  for (int k = 0; k < d; ++k) {
    double vk = v.dot(U.col(k));
    if (k == 0)
      lhs = vk * vk / lambda[0];
    else
      rhs += vk * vk / lambda[k];
  }
  r.eq02 = rel_diff(lhs, rhs);
  r.eigen = (M.transpose() * v + mu * v).norm() / M.norm();
  return r;
}

}  // namespace detail

// Central-difference Jacobian of the drift at x.
inline Mat drift_jacobian(const PotentialField& f, const std::vector<Cycle>& cycles, const Vec& x, bool adjoint,
                          double h) {
  const int d = f.d;
  Mat J(d, d);
  for (int k = 0; k < d; ++k) {
    Vec e = Vec::Zero(d);
    e[k] = h;
    J.col(k) = (drift(f, cycles, x + e, adjoint) - drift(f, cycles, x - e, adjoint)) / (2 * h);
  }
  return J;
}

// `orient` fixes the sign of u_1 (it should point toward the first well);
// without it the first nonzero component of u_1 is made positive.
inline SaddleAnalysis analyze_saddle(const PotentialField& f, const Vec& sigma, const std::vector<Cycle>& cycles,
                                     const Vec* orient = nullptr, double fd_step = 1e-4) {
  SaddleAnalysis sa;
  const int d = f.d;
  sa.sigma = sigma;
  sa.F_sigma = f.F(sigma);
  sa.G_sigma = f.G(sigma);
  sa.H = f.hess(sigma);
  sa.H = 0.5 * (sa.H + sa.H.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(sa.H);
  Vec ev = es.eigenvalues();
  if (!(ev[0] < 0) || (d > 1 && !(ev[1] > 0))) throw Error("point is not a non-degenerate saddle");
  sa.U = es.eigenvectors();
  sa.lambda = ev;
  sa.lambda[0] = -ev[0];
  if (orient) {
    if (sa.U.col(0).dot(*orient) < 0) sa.U.col(0) *= -1;
  } else {
    for (int k = 0; k < d; ++k)
      if (std::abs(sa.U(k, 0)) > 1e-12) {
        if (sa.U(k, 0) < 0) sa.U.col(0) *= -1;
        break;
      }
  }
  sa.A = cycle_matrix_A(cycles);
  sa.M = sa.A * sa.H;
  sa.mu = detail::negative_eigenvalue(sa.M, &sa.eig_M);
  auto direction = [&](const Mat& K) {
    Vec v = detail::null_vector(K);
    double s = v.dot(sa.U.col(0));
    if (std::abs(s) <= 1e-12) throw Error("eigenvector v is orthogonal to u_1");
    return s < 0 ? Vec(-v) : v;
  };
  Mat I = Mat::Identity(d, d);
  sa.v = direction(sa.M.transpose() + sa.mu * I);
  sa.alpha = SaddleAnalysis::alpha_for(sa.mu, sa.A, sa.v);
  // The adjoint cycles have matrix A^T, hence M* = A^T H.
  Mat At = sa.A.transpose();
  Mat Ms = At * sa.H;
  sa.mu_star = detail::negative_eigenvalue(Ms);
  sa.v_star = direction(Ms.transpose() + sa.mu_star * I);
  sa.alpha_star = SaddleAnalysis::alpha_for(sa.mu_star, At, sa.v_star);
  if (!(sa.alpha > 0) || !(sa.alpha_star > 0)) throw Error("alpha must be positive");
  sa.omega = sa.mu * std::exp(-sa.G_sigma) / std::sqrt(-sa.H.determinant());
  sa.res = detail::residuals(sa.H, sa.M, sa.v, sa.alpha, sa.mu, sa.lambda, sa.U);
  sa.res_star = detail::residuals(sa.H, Ms, sa.v_star, sa.alpha_star, sa.mu_star, sa.lambda, sa.U);
  sa.jacobian_error = (drift_jacobian(f, cycles, sigma, false, fd_step) - sa.M).cwiseAbs().maxCoeff();
  sa.jacobian_star_error = (drift_jacobian(f, cycles, sigma, true, fd_step) - Ms).cwiseAbs().maxCoeff();
  return sa;
}

inline SaddleAnalysis analyze_saddle(const PotentialField& f, const LandscapeStructure& ls, int saddle,
                                     const std::vector<Cycle>& cycles) {
  const SaddlePairing& sp = ls.saddles.at(saddle);
  SaddleAnalysis sa = analyze_saddle(f, ls.crit[sp.crit].x, cycles, &sp.u1);
  sa.well_a = sp.well_a;
  sa.well_b = sp.well_b;
  return sa;
}

// Translates whose cycle meets the set, the union of those cycles, and the difference.
inline std::vector<int> core_of(const Generator& g, const std::vector<char>& set) {
  std::vector<int> out;
  for (int t = 0; t < static_cast<int>(g.translates.size()); ++t)
    for (int s : g.translates[t].states)
      if (set[s]) {
        out.push_back(t);
        break;
      }
  return out;
}

inline std::vector<char> closure_of(const Generator& g, const std::vector<int>& core) {
  std::vector<char> out(g.size(), 0);
  for (int t : core)
    for (int s : g.translates[t].states) out[s] = 1;
  return out;
}

inline int count_of(const std::vector<char>& m) { return static_cast<int>(std::count(m.begin(), m.end(), 1)); }

struct MesoBoxes {
  double eps = 0;
  double level = 0;  // H + lambda_1 eps^2 / 4
  std::vector<char> C, B, closure, boundary, d0, d1, d2, unclassified;
  std::vector<int> core;
  std::vector<char> Bhat, closure_hat, dhat1, dhat2;
  std::vector<int> core_hat;
  double min_F_dstar = std::numeric_limits<double>::infinity();  // over the i >= 2 faces of C
};

inline MesoBoxes mesoscopic_sets(const SaddleAnalysis& sa, const Generator& g, const PotentialField& f) {
  const LatticeDomain& lat = *g.lat;
  const int n = g.size(), d = lat.d;
  MesoBoxes mb;
  mb.eps = std::pow(double(g.N), -0.4);
  const double l1 = sa.lambda[0];
  mb.level = sa.F_sigma + 0.25 * l1 * mb.eps * mb.eps;
  mb.C.assign(n, 0);
  mb.B.assign(n, 0);
  mb.Bhat.assign(n, 0);
  std::vector<double> Fv(n), p1(n);
  std::vector<char> face(n, 0);  // outside C only through some i >= 2 coordinate
  for (int s = 0; s < n; ++s) {
    Vec y = lat.point(s) - sa.sigma;
    Fv[s] = f.F(lat.point(s));
    p1[s] = y.dot(sa.U.col(0));
    bool inC = std::abs(p1[s]) <= mb.eps, inChat = true;
    for (int k = 1; k < d; ++k) {
      double pk = std::abs(y.dot(sa.U.col(k)));
      if (pk > std::sqrt(2 * l1 / sa.lambda[k]) * mb.eps) {
        inC = false;
        face[s] = 1;
      }
      if (!(pk < std::sqrt(l1 / (2.0 * (d - 1) * sa.lambda[k])) * mb.eps)) inChat = false;
    }
    mb.C[s] = inC;
    mb.B[s] = inC && Fv[s] <= mb.level;
    mb.Bhat[s] = mb.B[s] && inChat;
  }
  if (count_of(mb.B) == 0) throw Error("N too small for mesoscopic analysis");
  mb.core = core_of(g, mb.B);
  mb.closure = closure_of(g, mb.core);
  mb.boundary.assign(n, 0);
  mb.d0.assign(n, 0);
  mb.d1.assign(n, 0);
  mb.d2.assign(n, 0);
  mb.unclassified.assign(n, 0);
  for (int s = 0; s < n; ++s) {
    if (!mb.closure[s] || mb.B[s]) continue;
    mb.boundary[s] = 1;
    if (Fv[s] > mb.level)
      mb.d0[s] = 1;
    else if (p1[s] > mb.eps)
      mb.d1[s] = 1;
    else if (p1[s] < -mb.eps)
      mb.d2[s] = 1;
    else
      mb.unclassified[s] = 1;
  }
  std::vector<int> coreC = core_of(g, mb.C);
  std::vector<char> clC = closure_of(g, coreC);
  for (int s = 0; s < n; ++s)
    if (clC[s] && !mb.C[s] && face[s]) mb.min_F_dstar = std::min(mb.min_F_dstar, Fv[s]);
  mb.core_hat = core_of(g, mb.Bhat);
  mb.closure_hat = closure_of(g, mb.core_hat);
  mb.dhat1.assign(n, 0);
  mb.dhat2.assign(n, 0);
  for (int s = 0; s < n; ++s) {
    if (!mb.closure_hat[s] || mb.Bhat[s]) continue;
    (p1[s] >= 0 ? mb.dhat1 : mb.dhat2)[s] = 1;
  }
  return mb;
}

// V_N(x) = Phi(sqrt(alpha N) (x - sigma) . v); the adjoint uses alpha*, v*.
template <class Real = double>
inline Real vn_eval(const SaddleAnalysis& sa, int N, const Vec& x, bool adjoint = false) {
  const Vec& v = adjoint ? sa.v_star : sa.v;
  double a = adjoint ? sa.alpha_star : sa.alpha;
  Real t = sqrt_of(Real(a) * Real(N)) * Real((x - sa.sigma).dot(v));
  return boost::math::erfc(-t / sqrt_of(Real(2))) / Real(2);
}

template <class Real = double>
inline Func<Real> vn(const SaddleAnalysis& sa, const Generator& g, bool adjoint = false) {
  Func<Real> out(g.size());
  for (int s = 0; s < g.size(); ++s) out[s] = vn_eval<Real>(sa, g.N, g.lat->point(s), adjoint);
  return out;
}

// kappa_N = Z^-1 (2 pi N)^{d/2 - 1} e^{-N H} expressed in the chain's shifted units.
template <class Real>
inline Real kappa(const MarkovChain<Real>& c, int d, int N, double H) {
  const double two_pi = 2 * boost::math::constants::pi<double>();
  return exp_of(Real(c.shift - N * H + (0.5 * d - 1) * std::log(two_pi * N))) / c.Z;
}

struct ResidualProfile {
  double statistic = 0;       // max over B of |L V_N| e^{alpha N (y.v)^2 / 2} sqrt(N) / eps^2
  double at_saddle = 0;       // |L V_N| at the lattice point nearest sigma, over its exit rate
  double boundary_exponent = 0;  // max log[e^{-N(Fbar_N - H)} (1 - V_N)^2] / (N eps^2) near the first boundary piece
};

template <class Real>
inline ResidualProfile vn_residual_profile(const Generator& g, const MarkovChain<Real>& c, const SaddleAnalysis& sa,
                                            const MesoBoxes& mb) {
  ResidualProfile out;
  Func<Real> V = vn<Real>(sa, g);
  Func<Real> LV = apply_L(c, V);
  Func<Real> lam = c.exit_rates();
  const double eps2 = mb.eps * mb.eps;
  for (int s = 0; s < g.size(); ++s) {
    if (!mb.B[s]) continue;
    double yv = (g.lat->point(s) - sa.sigma).dot(sa.v);
    double lg = log_of(abs_of(LV[s])) + 0.5 * sa.alpha * g.N * yv * yv + 0.5 * std::log(double(g.N)) - std::log(eps2);
    out.statistic = std::max(out.statistic, std::exp(lg));
  }
  int s0 = nearest_lattice_point(sa.sigma, *g.lat);
  out.at_saddle = to_double(Real(abs_of(LV[s0]) / lam[s0]));
  out.boundary_exponent = -std::numeric_limits<double>::infinity();
  for (int t : mb.core) {
    const Translate& tr = g.translates[t];
    // logc = -N Fbar_N + shift
    double expo = -(g.shift - tr.logc) + g.N * sa.F_sigma;
    for (int s : tr.states) {
      if (!mb.d1[s]) continue;
      Real one_minus = Real(1) - V[s];
      double val = expo + 2 * log_of(one_minus);
      out.boundary_exponent = std::max(out.boundary_exponent, val / (g.N * eps2));
    }
  }
  return out;
}

struct LocalDirichlet {
  double ratio = 0;          // D_N(V_N; core B) / (kappa omega)
  double gaussian_ratio = 0; // lattice Gaussian sum over its asymptotic value
};

template <class Real>
inline LocalDirichlet local_dirichlet(const Generator& g, const MarkovChain<Real>& c, const SaddleAnalysis& sa,
                                      const MesoBoxes& mb) {
  LocalDirichlet out;
  const int d = g.lat->d;
  Func<Real> V = vn<Real>(sa, g);
  Real D = dirichlet_form(g, c, V, &mb.core);
  Real k = kappa(c, d, g.N, sa.F_sigma);
  out.ratio = to_double(Real(D / (k * Real(sa.omega))));
  Mat K = sa.H + 2 * sa.alpha * sa.v * sa.v.transpose();
  double sum = 0;
  for (int t : mb.core) {
    if (g.translates[t].cycle != 0) continue;
    Vec y = g.lat->grid_point(g.translates[t].base) - sa.sigma;
    sum += std::exp(-0.5 * g.N * y.dot(K * y));
  }
  const double two_pi = 2 * boost::math::constants::pi<double>();
  out.gaussian_ratio = sum / (std::pow(two_pi * g.N, 0.5 * d) / std::sqrt(-sa.H.determinant()));
  return out;
}

}  // namespace metastab
