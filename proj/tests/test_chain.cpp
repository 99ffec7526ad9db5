#include <gtest/gtest.h>

#include <map>
#include <random>

#include "metastab/chain.hpp"

using namespace metastab;

namespace {

struct Built {
  std::shared_ptr<LatticeDomain> lat;
  Generator gen;
  MarkovChain<double> chain, adj;
};

Built build(const PotentialField& f, int N, std::vector<Cycle> cycles, bool bary = false) {
  Built b;
  b.lat = std::make_shared<LatticeDomain>(discretize(f, N, cycles));
  b.gen = build_generator(b.lat, f, bary);
  b.chain = to_chain<double>(b.gen);
  b.adj = to_chain<double>(b.gen, true);
  return b;
}

PotentialField flat_1d() {
  return polynomial_field("flat", Polynomial(1), Polynomial(1), Box{{-1}, {1}});
}

double dw(double x) { return x * x * x * x / 4 - x * x / 2; }

}  // namespace

TEST(Chain, FlatPotentialHasUnitRates) {
  auto b = build(flat_1d(), 8, {cycle_1d({0, 1, 2, 0})});
  // Every translate contributes rate one to each of its edges.
  std::map<std::pair<int, int>, int> edges;
  for (const auto& t : b.gen.translates)
    for (int j = 0; j < 3; ++j) ++edges[{t.states[j], t.states[(j + 1) % 3]}];
  for (const auto& [e, k] : edges) EXPECT_NEAR(b.chain.rate(e.first, e.second), double(k), 1e-14);
  EXPECT_EQ(static_cast<long>(edges.size()), b.chain.R.nonZeros());
  std::vector<int> cover(b.chain.n, 0);
  for (const auto& t : b.gen.translates)
    for (int s : t.states) ++cover[s];
  auto lam = b.chain.exit_rates();
  for (int x = 0; x < b.chain.n; ++x) EXPECT_NEAR(lam[x], cover[x], 1e-14);
}

TEST(Chain, DoubleWellRateAtOrigin) {
  auto b = build(builtin_field("double_well_1d"), 8, {cycle_1d({0, 1, 0})});
  int s0 = b.lat->state_at({0}), s1 = b.lat->state_at({1});
  double fbar = 0.5 * (dw(0) + dw(0.125));
  EXPECT_NEAR(b.chain.rate(s0, s1), std::exp(-8 * (fbar - dw(0))), 1e-14);
  EXPECT_NEAR(b.chain.rate(s1, s0), std::exp(-8 * (fbar - dw(0.125))), 1e-14);
}

TEST(Chain, AdjointRunsCyclesBackwards) {
  auto b = build(builtin_field("double_well_1d"), 8, {cycle_1d({0, 1, 2, 0})});
  const auto& t = b.gen.translates[5];
  // Overlapping translates add up, so each edge carries at least this translate's rate R_j.
  for (int j = 0; j < 3; ++j) {
    int x = t.states[j], next = t.states[(j + 1) % 3], prev = t.states[(j + 2) % 3];
    double rj = std::exp(t.logc - b.gen.logw[x]);
    EXPECT_GE(b.chain.rate(x, next), rj * (1 - 1e-14));
    EXPECT_GE(b.adj.rate(x, prev), rj * (1 - 1e-14));
  }
  auto a2 = adjoint_chain(b.chain);
  EXPECT_LE((Eigen::SparseMatrix<double>(a2.R) - Eigen::SparseMatrix<double>(b.adj.R)).norm(), 1e-12 * b.adj.R.norm());
}

TEST(Chain, StationarityAndWeights) {
  auto f = builtin_field("double_well_1d");
  for (auto cyc : {cycle_1d({0, 1, 0}), cycle_1d({0, 1, 2, 0})}) {
    auto b = build(f, 16, {cyc});
    EXPECT_LE(stationarity_residual(b.chain), 1e-12);
    EXPECT_LE(stationarity_residual(b.adj), 1e-12);
  }
  auto b = build(f, 8, {cycle_1d({0, 1, 2, 0})});
  double Z = 0;
  for (int s = 0; s < b.chain.n; ++s) Z += std::exp(-8 * dw(b.lat->point(s)[0]));
  for (int s = 0; s < b.chain.n; ++s) EXPECT_NEAR(b.chain.mu(s), std::exp(-8 * dw(b.lat->point(s)[0])) / Z, 1e-14);
  EXPECT_NEAR(b.chain.log_Z(), std::log(Z), 1e-12);
}

TEST(Chain, TwoStateSymmetricIsUniform) {
  auto b = build(flat_1d(), 4, {cycle_1d({0, 1, 0})});
  for (int s = 1; s < b.chain.n; ++s) EXPECT_DOUBLE_EQ(b.chain.mu(s), b.chain.mu(0));
}

TEST(Chain, ReversibleIffLengthTwo) {
  auto f = builtin_field("double_well_1d");
  auto rev = build(f, 12, {cycle_1d({0, 1, 0})});
  EXPECT_TRUE(rev.gen.reversible());
  double worst = 0;
  for (int x = 0; x < rev.chain.n; ++x)
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(rev.chain.R, x); it; ++it) {
      double a = rev.chain.mu(x) * it.value(), c = rev.chain.mu(it.col()) * rev.chain.rate(it.col(), x);
      worst = std::max(worst, std::abs(a - c) / a);
    }
  EXPECT_LE(worst, 1e-12);
  auto nr = build(f, 12, {cycle_1d({0, 1, 2, 0})});
  EXPECT_FALSE(nr.gen.reversible());
  int x = nr.lat->state_at({0}), y = nr.lat->state_at({1});
  EXPECT_GT(nr.chain.rate(x, y), 0);
  EXPECT_EQ(nr.chain.rate(y, x), 0);
}

TEST(Chain, AdjointIsMuAdjoint) {
  auto b = build(builtin_field("double_well_1d"), 16, {cycle_1d({0, 1, 2, 0})});
  std::mt19937_64 rng(7);
  for (int k = 0; k < 20; ++k) {
    auto f = random_function<double>(b.chain.n, rng), h = random_function<double>(b.chain.n, rng);
    double lhs = inner_mu(b.chain, f, apply_L(b.adj, h));
    double rhs = inner_mu(b.chain, apply_L(b.chain, f), h);
    EXPECT_LE(rel_diff(lhs, rhs), 1e-12);
  }
}

TEST(Chain, DirichletFormIdentities) {
  auto b = build(builtin_field("double_well_1d"), 16, {cycle_1d({0, 1, 2, 0})});
  std::mt19937_64 rng(11);
  for (int k = 0; k < 20; ++k) {
    auto f = random_function<double>(b.chain.n, rng);
    double D = dirichlet_form(b.gen, b.chain, f);
    EXPECT_LE(rel_diff(D, -inner_mu(b.chain, f, apply_L(b.chain, f))), 1e-12);
    EXPECT_LE(rel_diff(D, -inner_mu(b.adj, f, apply_L(b.adj, f))), 1e-12);
    EXPECT_LE(rel_diff(D, chain_dirichlet(b.chain, f)), 1e-12);
  }
  EXPECT_EQ(dirichlet_form(b.gen, b.chain, Func<double>(Func<double>::Constant(b.chain.n, 3.0))), 0.0);
}

TEST(Chain, DirichletFormOnSubsetAddsUp) {
  auto b = build(builtin_field("double_well_1d"), 12, {cycle_1d({0, 1, 2, 0})});
  std::mt19937_64 rng(3);
  auto f = random_function<double>(b.chain.n, rng);
  std::vector<int> lo, hi;
  for (int i = 0; i < static_cast<int>(b.gen.translates.size()); ++i) (i % 2 ? lo : hi).push_back(i);
  EXPECT_LE(rel_diff(dirichlet_form(b.gen, b.chain, f, &lo) + dirichlet_form(b.gen, b.chain, f, &hi),
                     dirichlet_form(b.gen, b.chain, f)),
            1e-13);
}

TEST(Chain, SectorCondition) {
  auto f = builtin_field("double_well_1d");
  std::mt19937_64 rng(5);
  auto nr = build(f, 16, {cycle_1d({0, 1, 2, 0})});
  double worst = 0;
  for (int k = 0; k < 1000; ++k) {
    auto a = random_function<double>(nr.chain.n, rng), c = random_function<double>(nr.chain.n, rng);
    worst = std::max(worst, sector_ratio(nr.chain, a, c));
  }
  EXPECT_LE(worst, 36.0);
  auto a = random_function<double>(nr.chain.n, rng);
  EXPECT_NEAR(sector_ratio(nr.chain, a, a), 1.0, 1e-12);

  auto rev = build(f, 16, {cycle_1d({0, 1, 0})});
  for (int k = 0; k < 50; ++k) {
    auto p = random_function<double>(rev.chain.n, rng), q = random_function<double>(rev.chain.n, rng);
    EXPECT_LE(sector_ratio(rev.chain, p, q), 16.0);
    EXPECT_LE(rel_diff(inner_mu(rev.chain, p, apply_L(rev.chain, q)), inner_mu(rev.chain, q, apply_L(rev.chain, p))), 1e-12);
  }
  auto zero = Func<double>(Func<double>::Zero(rev.chain.n));
  EXPECT_THROW(sector_ratio(rev.chain, zero, a), Error);
}

TEST(Chain, DriftOneDimension) {
  auto f = builtin_field("double_well_1d");
  Vec x = Vec::Constant(1, 0.5);
  double fp = 0.125 - 0.5;
  Vec b = drift(f, cycle_1d({0, 1, 0}), x);
  EXPECT_NEAR(b[0], 2 * std::sinh(fp / 2), 1e-14);
  // x' = -b moves toward the minimum at 1.
  EXPECT_GT(-b[0], 0);
  Vec b3 = drift(f, cycle_1d({0, 1, 2, 0}), x), b3s = drift(f, cycle_1d({0, 1, 2, 0}), x, true);
  EXPECT_GT(std::abs(b3[0] - b3s[0]), 1e-3);
  EXPECT_NEAR(drift(f, cycle_1d({0, 1, 2, 0}), Vec::Zero(1))[0], 0.0, 1e-14);
}

TEST(Chain, DriftVanishesAtSaddle2d) {
  auto f = builtin_field("double_well_2d");
  Cycle c = make_cycle({{0, 0}, {0, 1}, {1, 1}, {0, 0}});
  EXPECT_LE(drift(f, c, Vec::Zero(2)).norm(), 1e-14);
  EXPECT_LE(drift(f, c, Vec::Zero(2), true).norm(), 1e-14);
}

TEST(Chain, MultipleCyclesSumGenerators) {
  auto f = builtin_field("double_well_2d");
  Cycle a = make_cycle({{0, 0}, {1, 0}, {0, 0}}), c = make_cycle({{0, 0}, {0, 1}, {0, 0}});
  auto both = build(f, 8, {a, c});
  EXPECT_TRUE(both.gen.reversible());
  EXPECT_LE(stationarity_residual(both.chain), 1e-12);
  std::mt19937_64 rng(2);
  auto h = random_function<double>(both.chain.n, rng);
  double total = dirichlet_form(both.gen, both.chain, h);
  std::vector<int> first, second;
  for (int i = 0; i < static_cast<int>(both.gen.translates.size()); ++i)
    (both.gen.translates[i].cycle == 0 ? first : second).push_back(i);
  EXPECT_LE(rel_diff(total, dirichlet_form(both.gen, both.chain, h, &first) + dirichlet_form(both.gen, both.chain, h, &second)), 1e-13);
}

TEST(Chain, BarycentricVariantStaysStationary) {
  auto b = build(builtin_field("double_well_1d"), 16, {cycle_1d({0, 1, 2, 0})}, true);
  EXPECT_LE(stationarity_residual(b.chain), 1e-12);
  auto plain = build(builtin_field("double_well_1d"), 16, {cycle_1d({0, 1, 2, 0})});
  EXPECT_NE(b.gen.translates[3].logc, plain.gen.translates[3].logc);
}

TEST(Chain, ExtendedPrecisionChain) {
  auto f = builtin_field("double_well_1d");
  auto lat = std::make_shared<LatticeDomain>(discretize(f, 200, {cycle_1d({0, 1, 2, 0})}));
  auto gen = build_generator(lat, f);
  auto ch = to_chain<Extended>(gen);
  EXPECT_LE(stationarity_residual(ch), 1e-60);
}
