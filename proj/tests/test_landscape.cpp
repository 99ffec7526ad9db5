#include <gtest/gtest.h>

#include "metastab/landscape.hpp"

using namespace metastab;

namespace {

LandscapeStructure auto_landscape(const PotentialField& f, int seeds = 16) {
  auto crit = find_critical_points(f, seeds);
  double H = auto_saddle_height(crit);
  return build_landscape(f, H, auto_epsilon(crit, H), crit);
}

}  // namespace

TEST(Landscape, DoubleWell1dCriticalPoints) {
  auto f = builtin_field("double_well_1d");
  auto crit = find_critical_points(f, 16);
  ASSERT_EQ(crit.size(), 3u);
  EXPECT_NEAR(crit[0].x[0], -1.0, 1e-12);
  EXPECT_NEAR(crit[1].x[0], 0.0, 1e-12);
  EXPECT_NEAR(crit[2].x[0], 1.0, 1e-12);
  EXPECT_EQ(crit[0].kind, CriticalKind::Minimum);
  EXPECT_EQ(crit[1].kind, CriticalKind::Saddle);
  EXPECT_NEAR(crit[0].value, -0.25, 1e-14);
  EXPECT_NEAR(crit[0].eigenvalues[0], 2.0, 1e-10);
  EXPECT_NEAR(crit[1].eigenvalues[0], -1.0, 1e-10);
  for (const auto& c : crit) EXPECT_LE(f.grad(c.x).norm(), 1e-10);
}

TEST(Landscape, DoubleWell2dCriticalPoints) {
  auto f = builtin_field("double_well_2d");
  auto crit = find_critical_points(f, 16);
  ASSERT_EQ(crit.size(), 3u);
  EXPECT_EQ(crit[1].kind, CriticalKind::Saddle);
  EXPECT_NEAR(crit[1].x.norm(), 0.0, 1e-12);
  EXPECT_NEAR(crit[1].eigenvalues[0], -1.0, 1e-10);
  EXPECT_NEAR(crit[1].eigenvalues[1], 1.0, 1e-10);
  EXPECT_NEAR(crit[0].eigenvalues[0], 1.0, 1e-10);
  EXPECT_NEAR(crit[0].eigenvalues[1], 2.0, 1e-10);
}

TEST(Landscape, TripleWellCriticalPoints) {
  auto f = builtin_field("triple_well_1d");
  auto crit = find_critical_points(f, 16);
  ASSERT_EQ(crit.size(), 5u);
  const double s = 1.0 / std::sqrt(3.0);
  std::vector<double> xs = {-1, -s, 0, s, 1};
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(crit[i].x[0], xs[i], 1e-12);
  EXPECT_NEAR(crit[1].value, 4.0 / 27.0, 1e-13);
  EXPECT_NEAR(crit[1].eigenvalues[0], -8.0 / 3.0, 1e-9);
  EXPECT_NEAR(crit[0].eigenvalues[0], 8.0, 1e-9);
  EXPECT_NEAR(crit[2].eigenvalues[0], 2.0, 1e-9);
}

TEST(Landscape, DoubledSeedsGiveSameCriticalSet) {
  for (const auto& name : {"double_well_1d", "triple_well_1d", "double_well_2d"}) {
    auto f = builtin_field(name);
    auto a = find_critical_points(f, 12), b = find_critical_points(f, 24);
    ASSERT_EQ(a.size(), b.size()) << name;
    for (size_t i = 0; i < a.size(); ++i) EXPECT_LE((a[i].x - b[i].x).norm(), 1e-9);
  }
}

TEST(Landscape, DegenerateCriticalPointIsRejected) {
  using T = Polynomial::Term;
  auto f = polynomial_field("quartic", Polynomial(1, {T{1.0, {4}}, T{0.3, {1}}, T{-0.3, {1}}}), Polynomial(), Box{{-1}, {1}});
  EXPECT_THROW(find_critical_points(f, 9), Error);
}

TEST(Landscape, FieldChecks) {
  for (const auto& b : builtin_potentials()) {
    auto fc = check_field(builtin_field(b.name));
    EXPECT_LE(fc.max_asymmetry, 1e-10);
    EXPECT_GT(fc.boundary_samples, 0);
    EXPECT_EQ(fc.boundary_violations, 0) << b.name;
  }
}

TEST(Landscape, DoubleWellStructure) {
  auto f = builtin_field("double_well_1d");
  auto crit = find_critical_points(f, 16);
  auto ls = build_landscape(f, 0.0, 0.05, crit);
  ASSERT_EQ(ls.M(), 2);
  ASSERT_EQ(ls.saddles.size(), 1u);
  EXPECT_EQ(ls.saddles[0].well_a, 0);
  EXPECT_EQ(ls.saddles[0].well_b, 1);
  // u1 points toward well 0, which holds the minimum at -1.
  EXPECT_LT(ls.saddles[0].u1[0], 0);
  EXPECT_DOUBLE_EQ(ls.wells[0].h, -0.25);
  ASSERT_EQ(ls.theta.size(), 1u);
  EXPECT_EQ(ls.T[0], (std::vector<int>{0, 1}));
  EXPECT_EQ(ls.classify(f, Vec::Constant(1, -0.3)), 0);
  EXPECT_EQ(ls.classify(f, Vec::Constant(1, 1.4)), 1);
}

TEST(Landscape, TripleWellStructure) {
  auto f = builtin_field("triple_well_1d");
  auto crit = find_critical_points(f, 16);
  auto ls = build_landscape(f, 4.0 / 27.0, 0.02, crit);
  ASSERT_EQ(ls.M(), 3);
  EXPECT_EQ(ls.saddle_set(0, 1).size(), 1u);
  EXPECT_EQ(ls.saddle_set(1, 2).size(), 1u);
  EXPECT_TRUE(ls.saddle_set(0, 2).empty());
  EXPECT_NEAR(ls.crit[ls.saddles[ls.saddle_set(0, 1)[0]].crit].x[0], -1 / std::sqrt(3.0), 1e-12);
  for (const auto& w : ls.wells) EXPECT_NEAR(w.h, 0.0, 1e-14);
  EXPECT_EQ(ls.theta.size(), 1u);
  // Every other minimum is as deep as m_i.
  EXPECT_EQ(ls.targets[1].size(), 2u);
}

TEST(Landscape, SaddleHeightBelowAllSaddlesIsAnError) {
  auto f = builtin_field("double_well_1d");
  auto crit = find_critical_points(f, 16);
  EXPECT_THROW(build_landscape(f, -0.1, 0.05, crit), Error);
}

TEST(Landscape, EpsilonGapViolation) {
  auto f = builtin_field("double_well_1d");
  auto crit = find_critical_points(f, 16);
  EXPECT_THROW(build_landscape(f, 0.0, 0.3, crit), Error);
}

TEST(Landscape, AutoEpsilonIsHalfGap) {
  auto f = builtin_field("triple_well_1d");
  auto crit = find_critical_points(f, 16);
  EXPECT_NEAR(auto_epsilon(crit, 4.0 / 27.0), 2.0 / 27.0, 1e-12);
}

TEST(Landscape, WellWeights) {
  auto f = builtin_field("double_well_1d");
  auto nu = well_weights(auto_landscape(f), f);
  EXPECT_NEAR(nu[0], 1 / std::sqrt(2.0), 1e-10);
  EXPECT_NEAR(nu[1], 1 / std::sqrt(2.0), 1e-10);

  auto t = builtin_field("triple_well_1d");
  auto nut = well_weights(auto_landscape(t), t);
  EXPECT_NEAR(nut[0], 1 / std::sqrt(8.0), 1e-9);
  EXPECT_NEAR(nut[1], 1 / std::sqrt(2.0), 1e-9);
  EXPECT_NEAR(nut[2], 1 / std::sqrt(8.0), 1e-9);
}

TEST(Landscape, WellWeightWithPerturbation) {
  using T = Polynomial::Term;
  auto base = builtin_potentials()[0];
  // G(x) = log 2 * (1 + x)/2 equals log 2 at x = 1 and vanishes at x = -1.
  Polynomial G(1, {T{std::log(2.0) / 2, {0}}, T{std::log(2.0) / 2, {1}}});
  auto f = polynomial_field("tilted", base.F, G, base.box);
  auto crit = find_critical_points(f, 16);
  auto ls = build_landscape(f, 0.0, 0.05, crit);
  auto nu = well_weights(ls, f);
  EXPECT_NEAR(nu[0], 1 / std::sqrt(2.0), 1e-10);
  EXPECT_NEAR(nu[1], 0.5 / std::sqrt(2.0), 1e-10);
}

TEST(Landscape, DepthPartition) {
  auto p = depth_partition(std::vector<double>{0.25, 0.25, 0.40});
  ASSERT_EQ(p.theta.size(), 2u);
  EXPECT_DOUBLE_EQ(p.theta[0], 0.25);
  EXPECT_EQ(p.T[0], (std::vector<int>{0, 1}));
  EXPECT_EQ(p.T[1], (std::vector<int>{2}));
  EXPECT_EQ(p.S_tail[0], (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(p.S_tail[1], (std::vector<int>{2}));
  auto single = depth_partition(std::vector<double>{0.1});
  EXPECT_EQ(single.T[0], (std::vector<int>{0}));
}

TEST(Landscape, SaddleDescentReachesPairedWells) {
  auto f = builtin_field("double_well_2d");
  auto ls = auto_landscape(f);
  for (const auto& sp : ls.saddles) {
    Vec s = ls.crit[sp.crit].x;
    EXPECT_EQ(ls.classify(f, s + 1e-3 * sp.u1), sp.well_a);
    EXPECT_EQ(ls.classify(f, s - 1e-3 * sp.u1), sp.well_b);
  }
}
