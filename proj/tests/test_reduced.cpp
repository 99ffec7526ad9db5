#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "metastab/ptheory.hpp"
#include "metastab/reduced.hpp"

using namespace metastab;

namespace {

constexpr double kPi = 3.14159265358979323846;

LandscapeStructure landscape(const PotentialField& f) {
  auto crit = find_critical_points(f, 16);
  double H = auto_saddle_height(crit);
  return build_landscape(f, H, auto_epsilon(crit, H), crit);
}

ReducedChain reduced_of(const PotentialField& f, const LandscapeStructure& ls, const std::vector<Cycle>& cycles) {
  std::vector<SaddleAnalysis> sas;
  for (int s = 0; s < static_cast<int>(ls.saddles.size()); ++s) sas.push_back(analyze_saddle(f, ls, s, cycles));
  return reduced_chain(ls, sas, well_weights(ls, f));
}

// Absorption probabilities by repeated first-step analysis on the jump chain.
Vec first_step_oracle(const Mat& omega, const std::vector<int>& A, const std::vector<int>& B) {
  const int M = static_cast<int>(omega.rows());
  std::vector<int> role(M, 0);
  for (int a : A) role[a] = 1;
  for (int b : B) role[b] = 2;
  Vec q = Vec::Zero(M);
  for (int a : A) q[a] = 1;
  for (int it = 0; it < 200000; ++it) {
    Vec nq = q;
    for (int i = 0; i < M; ++i) {
      if (role[i]) continue;
      double tot = omega.row(i).sum(), s = 0;
      for (int j = 0; j < M; ++j) s += omega(i, j) * q[j];
      nq[i] = tot > 0 ? s / tot : 0.0;
    }
    double change = (nq - q).cwiseAbs().maxCoeff();
    q = nq;
    if (change == 0) break;
  }
  return q;
}

Mat random_omega(int M, std::mt19937_64& rng, double p_zero = 0.0) {
  std::uniform_real_distribution<double> u(0.1, 2.0), coin(0, 1);
  Mat w = Mat::Zero(M, M);
  for (int i = 0; i < M; ++i)
    for (int j = i + 1; j < M; ++j)
      if (coin(rng) >= p_zero) w(i, j) = w(j, i) = u(rng);
  return w;
}

}  // namespace

TEST(Reduced, ChainIsReversibleWithOmegaConductances) {
  std::mt19937_64 rng(5);
  auto rc = reduced_from_omega(random_omega(4, rng));
  Vec mu = rc.mu();
  Mat r = rc.rates();
  EXPECT_NEAR(mu.sum(), 1.0, 1e-15);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      EXPECT_NEAR(mu[i] * r(i, j), mu[j] * r(j, i), 1e-14);
      if (i != j) EXPECT_NEAR(mu[i] * r(i, j), rc.omega(i, j), 1e-14);
    }
}

TEST(Reduced, RejectsAsymmetricOmega) {
  Mat w(2, 2);
  w << 0, 1, 2, 0;
  EXPECT_THROW(reduced_from_omega(w), Error);
}

TEST(Reduced, CapacityToTheRestIsRowSum) {
  std::mt19937_64 rng(11);
  auto rc = reduced_from_omega(random_omega(5, rng));
  for (int i = 0; i < 5; ++i) {
    std::vector<int> rest;
    for (int k = 0; k < 5; ++k)
      if (k != i) rest.push_back(k);
    EXPECT_NEAR(cap_Y(rc, {i}, rest).value, rc.omega_i(i), 1e-13);
  }
}

TEST(Reduced, TwoWellsAndSeriesConductance) {
  Mat w2(2, 2);
  w2 << 0, 0.7, 0.7, 0;
  EXPECT_NEAR(cap_Y(reduced_from_omega(w2), {0}, {1}).value, 0.7, 1e-15);

  Mat w3 = Mat::Zero(3, 3);
  w3(0, 1) = w3(1, 0) = w3(1, 2) = w3(2, 1) = 1.3;
  auto c = cap_Y(reduced_from_omega(w3), {0}, {2});
  EXPECT_NEAR(c.value, 0.65, 1e-15);
  EXPECT_NEAR(c.q[1], 0.5, 1e-15);
}

TEST(Reduced, BruteForceHitProbabilities) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 40; ++trial) {
    const int M = 3 + trial % 2;
    auto rc = reduced_from_omega(random_omega(M, rng));
    std::vector<int> A{0}, B{M - 1};
    if (trial % 3 == 0) A.push_back(1);
    auto c = cap_Y(rc, A, B);
    Vec oracle = first_step_oracle(rc.omega, A, B);
    for (int i = 0; i < M; ++i) {
      EXPECT_NEAR(c.q[i], oracle[i], 1e-12) << "trial " << trial;
      EXPECT_GE(c.q[i], -1e-15);
      EXPECT_LE(c.q[i], 1 + 1e-15);
    }
    // Both flux expressions agree with the Dirichlet form.
    EXPECT_NEAR(c.flux_A, c.value, 1e-12 * c.value);
    EXPECT_NEAR(c.flux_B, c.value, 1e-12 * c.value);
    EXPECT_NEAR(cap_Y(rc, B, A).value, c.value, 1e-12 * c.value);
  }
}

TEST(Reduced, CapacityMonotoneInA) {
  std::mt19937_64 rng(8);
  auto rc = reduced_from_omega(random_omega(4, rng));
  EXPECT_LE(cap_Y(rc, {0}, {3}).value, cap_Y(rc, {0, 1}, {3}).value + 1e-15);
  EXPECT_LE(cap_Y(rc, {0, 1}, {3}).value, cap_Y(rc, {0, 1, 2}, {3}).value + 1e-15);
}

TEST(Reduced, DisconnectedGivesZeroAndFlag) {
  Mat w = Mat::Zero(4, 4);
  w(0, 1) = w(1, 0) = 1;
  w(2, 3) = w(3, 2) = 1;
  auto c = cap_Y(reduced_from_omega(w), {0}, {3});
  EXPECT_EQ(c.value, 0.0);
  EXPECT_TRUE(c.disconnected);
  EXPECT_FALSE(cap_Y(reduced_from_omega(w), {0}, {1}).disconnected);
}

TEST(Reduced, BadSetsAreErrors) {
  Mat w = Mat::Zero(3, 3);
  w(0, 1) = w(1, 0) = 1;
  auto rc = reduced_from_omega(w);
  EXPECT_THROW(cap_Y(rc, {0}, {0}), Error);
  EXPECT_THROW(cap_Y(rc, {}, {1}), Error);
  EXPECT_THROW(cap_Y(rc, {0}, {5}), Error);
  EXPECT_THROW(c_m(rc, {0, 1}, 0, 0), Error);
  EXPECT_THROW(c_m(rc, {0, 1}, 0, 2), Error);
}

TEST(Reduced, FirstLevelCmEqualsOmega) {
  std::mt19937_64 rng(3);
  auto rc = reduced_from_omega(random_omega(4, rng, 0.3));
  std::vector<int> S{0, 1, 2, 3};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      if (i != j) {
        EXPECT_NEAR(c_m(rc, S, i, j), rc.omega(i, j), 1e-13);
        EXPECT_NEAR(c_m(rc, S, i, j), c_m(rc, S, j, i), 1e-15);
      }
  Mat w2(2, 2);
  w2 << 0, 0.4, 0.4, 0;
  EXPECT_NEAR(c_m(reduced_from_omega(w2), {0, 1}, 0, 1), 0.4, 1e-15);
}

TEST(Reduced, CmMatchesTraceOfY) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    auto rc = reduced_from_omega(random_omega(5, rng, 0.2));
    std::vector<int> S{0, 2, 3};
    auto tr = trace_generator(rc.as_chain(), S);
    Vec mu = rc.mu();
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) {
        if (a == b) continue;
        double r = tr.chain.R.coeff(a, b);
        double expect = mu[S[a]] * r;
        EXPECT_NEAR(c_m(rc, S, S[a], S[b]), expect, 1e-12 * std::max(1.0, expect)) << "trial " << trial;
      }
  }
}

TEST(Reduced, TripleWellFromSaddles) {
  auto f = builtin_field("triple_well_1d");
  auto ls = landscape(f);
  ASSERT_EQ(ls.M(), 3);
  auto rc = reduced_of(f, ls, {cycle_1d({0, 1, 0})});
  const double w = std::sqrt(8.0 / 3.0);
  EXPECT_NEAR(rc.omega(0, 1), w, 1e-9);
  EXPECT_NEAR(rc.omega(1, 2), w, 1e-9);
  EXPECT_EQ(rc.omega(0, 2), 0.0);
  auto c = cap_Y(rc, {0}, {2});
  EXPECT_NEAR(c.value, w / 2, 1e-9);
  EXPECT_NEAR(c.q[1], 0.5, 1e-12);
  EXPECT_EQ(c_m(rc, {0, 1, 2}, 0, 2), 0.0);
  EXPECT_NEAR(c_m(rc, {0, 1, 2}, 1, 0), w, 1e-9);
}

TEST(Reduced, TripleWellJumpRatePrediction) {
  auto f = builtin_field("triple_well_1d");
  auto ls = landscape(f);
  auto rc = reduced_of(f, ls, {cycle_1d({0, 1, 0})});
  ASSERT_NEAR(rc.nu[1], 1 / std::sqrt(2.0), 1e-9);
  const int N = 50;
  auto p = predictions(rc, N, 1, 0.0);
  ASSERT_EQ(p.log_rate.size(), 1u);
  double expect = std::log(std::sqrt(8.0 / 3.0) / (1 / std::sqrt(2.0))) - N * 4.0 / 27.0 - std::log(2 * kPi * N);
  EXPECT_NEAR(p.log_rate[0](1, 0), expect, 1e-8);
  EXPECT_TRUE(std::isinf(p.log_rate[0](0, 2)));
}

TEST(Reduced, EyringKramersClosedForm) {
  auto f = builtin_field("double_well_1d");
  auto ls = landscape(f);
  for (auto [cyc, factor] : {std::pair{cycle_1d({0, 1, 0}), 1.0}, std::pair{cycle_1d({0, 1, 2, 0}), 3.0}}) {
    auto sa = analyze_saddle(f, ls, 0, {cyc});
    Vec m = ls.crit[ls.wells[0].designated].x;
    double ek = std::exp(log_eyring_kramers(f, sa, m, 40));
    EXPECT_NEAR(ek * factor, 3.914e6, 0.001e6);
    EXPECT_NEAR(ek * factor, 2 * kPi * 40 * std::sqrt(0.5) * std::exp(10.0), 1e-6 * ek);
    // The general mean-time prediction reduces to the same number.
    auto rc = reduced_chain(ls, {sa}, well_weights(ls, f));
    auto p = predictions(rc, 40, 1, 0.0);
    EXPECT_NEAR(p.log_ek[0], std::log(ek), 1e-9);
  }
}

TEST(Reduced, AbsorbingRowsAtDeeperLevels) {
  Mat w = Mat::Zero(3, 3);
  w(0, 1) = w(1, 0) = 0.5;
  w(1, 2) = w(2, 1) = 0.8;
  auto rc = reduced_from_omega(w, {1.0, 0.7, 0.9});
  rc.H = 0;
  rc.h = {-0.1, -0.3, -0.3};
  rc.theta = {0.1, 0.3};
  rc.T = {{0}, {1, 2}};
  rc.S_tail = {{0, 1, 2}, {1, 2}};
  auto p = predictions(rc, 30, 1, 0.0);
  ASSERT_EQ(p.log_rate.size(), 2u);
  for (int i : {1, 2})
    for (int j = 0; j < 3; ++j) EXPECT_TRUE(std::isinf(p.log_rate[0](i, j)) && p.log_rate[0](i, j) < 0);
  EXPECT_TRUE(std::isfinite(p.log_rate[0](0, 1)));
  EXPECT_TRUE(std::isinf(p.log_rate[0](0, 2)));
  // Second level: wells 1 and 2 with c_2(1,2) = omega(1,2) once well 0 is dropped.
  EXPECT_NEAR(p.log_rate[1](1, 2), -30 * 0.3 - std::log(2 * kPi * 30) + std::log(0.8 / 0.7), 1e-12);
  EXPECT_TRUE(std::isinf(p.log_rate[1](1, 0)));
  EXPECT_NEAR(p.log_ek[0], std::log(1.0) + std::log(2 * kPi * 30) + 3 - std::log(0.5), 1e-12);
}

TEST(Reduced, MassAndKappaLogs) {
  auto f = builtin_field("double_well_2d");
  auto ls = landscape(f);
  auto rc = reduced_of(f, ls, {make_cycle({{0, 0}, {1, 0}, {0, 0}}), make_cycle({{0, 0}, {0, 1}, {0, 0}})});
  auto p = predictions(rc, 20, 2, 1.5);
  EXPECT_NEAR(p.log_kappa, -1.5 + 0.0 - 20 * ls.H, 1e-12);
  EXPECT_NEAR(p.log_mass[0], std::log(2 * kPi * 20) - 20 * rc.h[0] + std::log(rc.nu[0]) - 1.5, 1e-12);
  EXPECT_NEAR(p.log_capacity(rc, {0}, {1}), p.log_kappa + std::log(rc.omega(0, 1)), 1e-12);
}

TEST(Reduced, ValleysOnTheLattice) {
  auto f = builtin_field("triple_well_1d");
  auto ls = landscape(f);
  auto lat = discretize(f, 40, {cycle_1d({0, 1, 0})});
  auto v = valley_states(lat, f, ls);
  ASSERT_EQ(v.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    for (int s : v[i]) EXPECT_LE(f.F(lat.point(s)), ls.H - ls.epsilon);
    int m = designated_state(lat, ls, i);
    EXPECT_NE(std::find(v[i].begin(), v[i].end(), m), v[i].end());
  }
  // Targets of the middle well are the outer minima.
  auto t = target_states(lat, ls, 1);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_NEAR(lat.point(t[0])[0], -1.0, 1e-12);
  EXPECT_NEAR(lat.point(t[1])[0], 1.0, 1e-12);
}

TEST(Reduced, DoubleWellCapacityPredictionConverges) {
  auto f = builtin_field("double_well_1d");
  auto ls = landscape(f);
  std::vector<Cycle> cyc{cycle_1d({0, 1, 2, 0})};
  auto rc = reduced_of(f, ls, cyc);
  std::vector<double> err;
  for (int N : {50, 100, 200}) {
    auto lat = std::make_shared<LatticeDomain>(discretize(f, N, cyc));
    auto gen = build_generator(lat, f);
    auto ch = to_chain<double>(gen);
    auto v = valley_states(*lat, f, ls);
    double exact = std::log(capacity(ch, v[0], v[1]));
    double pred = predictions(rc, N, 1, ch.log_Z()).log_capacity(rc, {0}, {1});
    err.push_back(std::abs(std::exp(exact - pred) - 1));
  }
  EXPECT_LT(err[2], err[0]);
  EXPECT_LT(err[2], 0.15);
}
