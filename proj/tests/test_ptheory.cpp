#include <gtest/gtest.h>

#include <random>

#include "metastab/ptheory.hpp"

using namespace metastab;

namespace {

struct Built {
  std::shared_ptr<LatticeDomain> lat;
  Generator gen;
  MarkovChain<double> chain, adj;
};

Built build(const PotentialField& f, int N, std::vector<Cycle> cycles) {
  Built b;
  b.lat = std::make_shared<LatticeDomain>(discretize(f, N, cycles));
  b.gen = build_generator(b.lat, f);
  b.chain = to_chain<double>(b.gen);
  b.adj = to_chain<double>(b.gen, true);
  return b;
}

std::vector<int> states_where(const Built& b, const std::function<bool(double)>& pred) {
  std::vector<int> out;
  for (int s = 0; s < b.chain.n; ++s)
    if (pred(b.lat->point(s)[0])) out.push_back(s);
  return out;
}

// Dense oracle: first-step analysis by a dense solve, independent of the sparse code path.
Mat dense_rates(const MarkovChain<double>& c) { return Mat(Eigen::SparseMatrix<double>(c.R)); }

Vec dense_hit(const MarkovChain<double>& c, const std::vector<int>& A, const std::vector<int>& B) {
  Mat R = dense_rates(c);
  const int n = c.n;
  Mat K = Mat::Zero(n, n);
  Vec rhs = Vec::Zero(n);
  std::vector<char> a = list_to_mask(A, n), bb = list_to_mask(B, n);
  for (int x = 0; x < n; ++x) {
    if (a[x] || bb[x]) {
      K(x, x) = 1;
      rhs[x] = a[x] ? 1 : 0;
      continue;
    }
    double lam = R.row(x).sum();
    for (int y = 0; y < n; ++y) K(x, y) = -R(x, y) / lam;
    K(x, x) += 1;
  }
  return K.fullPivLu().solve(rhs);
}

// cap = sum_{x in A} mu(x) lambda(x) P_x[H_B < H_A^+] with jump probabilities.
double dense_cap(const MarkovChain<double>& c, const std::vector<int>& A, const std::vector<int>& B) {
  Vec V = dense_hit(c, A, B);
  Mat R = dense_rates(c);
  double s = 0;
  for (int x : A) {
    double lam = R.row(x).sum(), esc = 0;
    for (int y = 0; y < c.n; ++y) esc += R(x, y) / lam * (1 - V[y]);
    s += c.mu(x) * lam * esc;
  }
  return s;
}

PotentialField ring_field() {
  using T = Polynomial::Term;
  return polynomial_field("ring", Polynomial(1, {T{1.0, {2}}, T{0.4, {1}}}), Polynomial(), Box{{0.0}, {0.5}});
}

}  // namespace

TEST(Ptheory, ComplementBoundaryGivesIndicator) {
  auto b = build(builtin_field("double_well_1d"), 8, {cycle_1d({0, 1, 0})});
  std::vector<int> A = {3, 4}, B;
  for (int s = 0; s < b.chain.n; ++s)
    if (s != 3 && s != 4) B.push_back(s);
  auto V = hitting_probability(b.chain, A, B);
  for (int s = 0; s < b.chain.n; ++s) EXPECT_EQ(V[s], (s == 3 || s == 4) ? 1.0 : 0.0);
}

TEST(Ptheory, ThreeStateRingMatchesFirstStepOracle) {
  auto b = build(ring_field(), 4, {cycle_1d({0, 1, 2, 0})});
  ASSERT_EQ(b.chain.n, 3);
  auto h = equilibrium_potential(b.chain, b.adj, {0}, {2});
  // From state 1 the only move is to state 2.
  EXPECT_NEAR(h.V[1], 0.0, 1e-15);
  EXPECT_NEAR(h.Vs[1], 1.0, 1e-15);
  EXPECT_LE(rel_diff(h.cap, dense_cap(b.chain, {0}, {2})), 1e-13);
  EXPECT_LE(rel_diff(h.cap_star, dense_cap(b.adj, {0}, {2})), 1e-13);
  EXPECT_LE(rel_diff(h.cap, h.cap_ba), 1e-12);
}

TEST(Ptheory, CapacitySymmetriesDoubleWell) {
  auto f = builtin_field("double_well_1d");
  for (auto cyc : {cycle_1d({0, 1, 0}), cycle_1d({0, 1, 2, 0})}) {
    auto b = build(f, 16, {cyc});
    auto A = states_where(b, [](double x) { return x < -0.7; });
    auto B = states_where(b, [](double x) { return x > 0.7; });
    auto h = equilibrium_potential(b.chain, b.adj, A, B);
    EXPECT_LE(rel_diff(h.cap, h.cap_ba), 1e-9);
    EXPECT_LE(rel_diff(h.cap, h.cap_star), 1e-9);
    EXPECT_LE(rel_diff(h.cap, dense_cap(b.chain, A, B)), 1e-9);
    EXPECT_LE(harmonic_residual(b.chain, h.V, A, B), 1e-10);
    EXPECT_LE(harmonic_residual(b.adj, h.Vs, A, B), 1e-10);
    for (int s = 0; s < b.chain.n; ++s) {
      EXPECT_GE(h.V[s], -1e-12);
      EXPECT_LE(h.V[s], 1 + 1e-10);
    }
    // cap(A,B) equals the Dirichlet form of V, also without reversibility.
    EXPECT_LE(rel_diff(h.cap, chain_dirichlet(b.chain, h.V)), 1e-9);
    EXPECT_NEAR(h.nu.sum(), 1.0, 1e-10);
    EXPECT_NEAR(h.nu_star.sum(), 1.0, 1e-10);
  }
}

TEST(Ptheory, UnreachableComponentIsNamed) {
  // Two disjoint reversible pieces: a target in one leaves the other unable to reach it.
  MarkovChain<double> c;
  c.n = 4;
  c.w = {1, 1, 1, 1};
  c.Z = 4;
  std::vector<Eigen::Triplet<double>> t = {{0, 1, 1.0}, {1, 0, 1.0}, {2, 3, 1.0}, {3, 2, 1.0}};
  c.R.resize(4, 4);
  c.R.setFromTriplets(t.begin(), t.end());
  try {
    hitting_probability(c, {0}, {1});
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("component of 2"), std::string::npos);
  }
}

TEST(Ptheory, MeanHittingTimes) {
  using T = Polynomial::Term;
  auto f = polynomial_field("slope", Polynomial(1, {T{1.0, {1}}}), Polynomial(), Box{{0.0}, {0.25}});
  auto b = build(f, 4, {cycle_1d({0, 1, 0})});
  ASSERT_EQ(b.chain.n, 2);
  double a = b.chain.rate(0, 1);
  EXPECT_NEAR(a, std::exp(-0.5), 1e-15);
  EXPECT_LE(rel_diff(mean_hitting_time(b.chain, 0, {1}), 1 / a), 1e-14);
  EXPECT_EQ(mean_hitting_time(b.chain, 1, {1}), 0.0);

  auto b3 = build(ring_field(), 4, {cycle_1d({0, 1, 2, 0})});
  // E_0[H_2] = 1/R(0,1) + 1/R(1,2) on the one-way ring.
  EXPECT_LE(rel_diff(mean_hitting_time(b3.chain, 0, {2}), 1 / b3.chain.rate(0, 1) + 1 / b3.chain.rate(1, 2)), 1e-14);
}

TEST(Ptheory, ExpectedRewardAndHarmonicMeasureIdentity) {
  auto f = builtin_field("double_well_1d");
  auto b = build(f, 16, {cycle_1d({0, 1, 2, 0})});
  auto A = states_where(b, [](double x) { return x < -0.7; });
  auto B = states_where(b, [](double x) { return x > 0.7; });
  Func<double> zero = Func<double>::Zero(b.chain.n), one = Func<double>::Ones(b.chain.n);
  Func<double> delta = Func<double>::Zero(b.chain.n);
  delta[A[2]] = 1;
  EXPECT_EQ(expected_reward(b.chain, delta, zero, B), 0.0);
  EXPECT_LE(rel_diff(expected_reward(b.chain, delta, one, B), mean_hitting_time(b.chain, A[2], B)), 1e-12);

  auto h = equilibrium_potential(b.chain, b.adj, A, B);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0, 1);
  for (int k = 0; k < 10; ++k) {
    Func<double> g(b.chain.n);
    for (int s = 0; s < b.chain.n; ++s) g[s] = u(rng);
    double lhs = expected_reward(b.chain, h.nu_star, g, B);
    double rhs = inner_mu(b.chain, g, h.Vs) / h.cap;
    EXPECT_LE(rel_diff(lhs, rhs), 1e-9);
  }
}

TEST(Ptheory, EquilibriumPotentialUpperBound) {
  auto b = build(builtin_field("double_well_1d"), 16, {cycle_1d({0, 1, 2, 0})});
  auto A = states_where(b, [](double x) { return x < -0.7; });
  auto B = states_where(b, [](double x) { return x > 0.7; });
  auto V = hitting_probability(b.chain, A, B);
  for (int x = 0; x < b.chain.n; x += 3) {
    if (V[x] == 1.0 || V[x] == 0.0) continue;
    double bound = capacity(b.chain, {x}, A) / capacity(b.chain, {x}, B);
    EXPECT_LE(V[x], bound * (1 + 1e-9));
  }
}

TEST(Ptheory, MonotonicityAndSectorComparison) {
  auto b = build(builtin_field("double_well_1d"), 16, {cycle_1d({0, 1, 2, 0})});
  auto A = states_where(b, [](double x) { return x < -0.9; });
  auto A2 = states_where(b, [](double x) { return x < -0.5; });
  auto B = states_where(b, [](double x) { return x > 0.7; });
  double c1 = capacity(b.chain, A, B), c2 = capacity(b.chain, A2, B);
  EXPECT_LE(c1, c2 * (1 + 1e-12));
  auto sym = symmetrized(b.chain);
  double cs = capacity(sym, A, B);
  EXPECT_LE(c1, 36 * cs);
  // Non-reversibility can only increase capacity relative to the symmetric part.
  EXPECT_GE(c1, cs * (1 - 1e-12));
}

TEST(Ptheory, TraceOnWholeSpaceIsIdentity) {
  auto b = build(builtin_field("double_well_1d"), 8, {cycle_1d({0, 1, 2, 0})});
  std::vector<int> all(b.chain.n);
  std::iota(all.begin(), all.end(), 0);
  auto tr = trace_generator(b.chain, all);
  EXPECT_LE((Eigen::SparseMatrix<double>(tr.chain.R) - Eigen::SparseMatrix<double>(b.chain.R)).norm(), 1e-15);
}

TEST(Ptheory, TraceOnThreeStateRing) {
  auto b = build(ring_field(), 4, {cycle_1d({0, 1, 2, 0})});
  auto tr = trace_generator(b.chain, {0, 2});
  const auto& R = b.chain;
  // The excursion through state 1 always ends at 2.
  EXPECT_LE(rel_diff(tr.chain.rate(0, 1), R.rate(0, 2) + R.rate(0, 1)), 1e-14);
  EXPECT_LE(rel_diff(tr.chain.rate(1, 0), R.rate(2, 0)), 1e-14);
  EXPECT_EQ(tr.max_clip, 0.0);

  auto rb = build(ring_field(), 4, {cycle_1d({0, 1, 0})});
  auto tr2 = trace_generator(rb.chain, {0, 2});
  double to2 = rb.chain.rate(1, 2) / (rb.chain.rate(1, 0) + rb.chain.rate(1, 2));
  EXPECT_LE(rel_diff(tr2.chain.rate(0, 1), rb.chain.rate(0, 1) * to2), 1e-14);
}

TEST(Ptheory, TraceStationaryMeasureIsRestriction) {
  auto b = build(builtin_field("double_well_1d"), 10, {cycle_1d({0, 1, 2, 0})});
  auto E = states_where(b, [](double x) { return std::abs(x) > 0.6; });
  auto tr = trace_generator(b.chain, E);
  EXPECT_LE(stationarity_residual(tr.chain), 1e-10);
  // Independent check with the dense left null vector.
  Mat R = dense_rates(tr.chain);
  Mat Q = R;
  for (int i = 0; i < Q.rows(); ++i) Q(i, i) = -R.row(i).sum();
  Eigen::FullPivLU<Mat> lu(Q.transpose());
  Vec pi = lu.kernel().col(0);
  pi /= pi.sum();
  double ZE = 0;
  for (int x : E) ZE += b.chain.w[x];
  for (size_t i = 0; i < E.size(); ++i) EXPECT_NEAR(pi[i], b.chain.w[E[i]] / ZE, 1e-10);
}

TEST(Ptheory, MeanJumpRates) {
  auto f = builtin_field("double_well_1d");
  auto b = build(f, 16, {cycle_1d({0, 1, 0})});
  auto E1 = states_where(b, [](double x) { return x < -0.7; });
  auto E2 = states_where(b, [](double x) { return x > 0.7; });
  auto jr = mean_jump_rates(b.chain, {E1, E2});
  EXPECT_EQ(jr.r(0, 0), 0.0);
  EXPECT_LE(rel_diff(jr.r(0, 1), jr.r(1, 0)), 1e-9);
  EXPECT_LE(rel_diff(jr.mass[0] * jr.lambda[0], capacity(b.chain, E1, E2)), 1e-8);

  // Against the full Schur complement.
  std::vector<int> E = E1;
  E.insert(E.end(), E2.begin(), E2.end());
  auto tr = trace_generator(b.chain, E);
  double s = 0, m = 0;
  for (size_t i = 0; i < E1.size(); ++i) {
    m += b.chain.w[E1[i]];
    for (size_t j = E1.size(); j < E.size(); ++j) s += b.chain.w[E1[i]] * tr.chain.rate(int(i), int(j));
  }
  EXPECT_LE(rel_diff(jr.r(0, 1), s / m), 1e-10);
}

TEST(Ptheory, CollapseSingletonIsRelabeling) {
  auto b = build(builtin_field("double_well_1d"), 8, {cycle_1d({0, 1, 2, 0})});
  auto cc = collapse(b.chain, {4});
  EXPECT_EQ(cc.chain.n, b.chain.n);
  for (int x = 0; x < b.chain.n; ++x)
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(b.chain.R, x); it; ++it)
      EXPECT_LE(rel_diff(cc.chain.rate(cc.map[x], cc.map[it.col()]), it.value()), 1e-14);
}

TEST(Ptheory, CollapsedChainIdentities) {
  auto f = builtin_field("double_well_1d");
  auto b = build(f, 16, {cycle_1d({0, 1, 2, 0})});
  auto E1 = states_where(b, [](double x) { return x < -0.7; });
  auto A = states_where(b, [](double x) { return x > 0.7; });
  auto cc = collapse(b.chain, E1);
  EXPECT_LE(stationarity_residual(cc.chain), 1e-12);
  double mass = 0;
  for (int x : E1) mass += b.chain.mu(x);
  EXPECT_LE(rel_diff(cc.chain.mu(cc.o), mass), 1e-14);
  EXPECT_LE(rel_diff(capacity(cc.chain, {cc.o}, map_set(cc, A)), capacity(b.chain, E1, A)), 1e-9);
  std::mt19937_64 rng(1);
  for (int k = 0; k < 100; ++k) {
    auto p = random_function<double>(cc.chain.n, rng), q = random_function<double>(cc.chain.n, rng);
    EXPECT_LE(sector_ratio(cc.chain, p, q), 36.0);
  }
}

TEST(Ptheory, CollapsedHitProbabilityOneStep) {
  // On the one-way ring, collapsing {0} and starting there, the walk reaches 1 before 2.
  auto b = build(ring_field(), 4, {cycle_1d({0, 1, 2, 0})});
  auto cc = collapse(b.chain, {0});
  EXPECT_DOUBLE_EQ(collapsed_hit_prob(cc, cc.o, {cc.map[1]}, {cc.map[2]}), 1.0);
  EXPECT_THROW(collapsed_hit_prob(cc, cc.o, {cc.o}, {cc.map[2]}), Error);
}

TEST(Ptheory, JumpProbabilityEqualsCollapsedHitOnTripleWell) {
  auto f = builtin_field("triple_well_1d");
  auto b = build(f, 16, {cycle_1d({0, 1, 2, 0})});
  auto E1 = states_where(b, [](double x) { return x < -0.85; });
  auto E2 = states_where(b, [](double x) { return std::abs(x) < 0.25; });
  auto E3 = states_where(b, [](double x) { return x > 0.85; });
  auto jr = mean_jump_rates(b.chain, {E1, E2, E3});
  auto cc = collapse(b.chain, E1);
  double p = collapsed_hit_prob(cc, cc.o, map_set(cc, E2), map_set(cc, E3));
  EXPECT_LE(rel_diff(jr.r(0, 1) / jr.lambda[0], p), 1e-8);
}

TEST(Ptheory, ExtendedPrecisionSolves) {
  auto f = builtin_field("double_well_1d");
  auto lat = std::make_shared<LatticeDomain>(discretize(f, 200, {cycle_1d({0, 1, 2, 0})}));
  auto gen = build_generator(lat, f);
  auto c = to_chain<Extended>(gen), a = to_chain<Extended>(gen, true);
  std::vector<int> A, B;
  for (int s = 0; s < c.n; ++s) {
    double x = lat->point(s)[0];
    if (x < -0.7) A.push_back(s);
    if (x > 0.7) B.push_back(s);
  }
  auto h = equilibrium_potential(c, a, A, B);
  // Capacities here are of order e^{-50}; all three agree far below double resolution.
  EXPECT_LE(rel_diff(h.cap, h.cap_ba), 1e-30);
  EXPECT_LE(rel_diff(h.cap, h.cap_star), 1e-30);
}
