#include <gtest/gtest.h>

#include <algorithm>
#include <numbers>
#include <random>

#include "choquard/bubbles.hpp"
#include "choquard/diagnostics.hpp"
#include "oracles.hpp"

using namespace choquard;

namespace {

SolutionRecord record(double energy, Point beta) {
  SolutionRecord r;
  r.energy = energy;
  r.barycenter = beta;
  r.converged = true;
  return r;
}

// Same values on a grid whose origin is moved by v: an exact translation.
Field translated(const Field& u, const Point& v) {
  const Grid& g = *u.grid();
  Point origin = g.origin();
  for (int a = 0; a < 3; ++a) origin[a] += v[a];
  auto moved = std::make_shared<const Grid>(g.dim(), g.shape(), g.h(), origin, g.mask());
  return Field(moved, std::vector<double>(u.values().begin(), u.values().end()));
}

} // namespace

TEST(Barycenter, SymmetricFieldCentersOnSymmetryPoint) {
  const auto spec = DomainSpec::ball(2, {}, 1.0, 0.3);
  const auto g = build_grid(spec, 32);
  const auto u = Field::from_function(g, [](const Point& x) { return (1 - x[0] * x[0] - x[1] * x[1]) * (2 + x[0] * x[1]); });
  const auto b = barycenter(u);
  EXPECT_NEAR(b[0], 0.0, 1e-10);
  EXPECT_NEAR(b[1], 0.0, 1e-10);
}

TEST(Barycenter, TranslationCovarianceAndScaleInvariance) {
  const auto spec = DomainSpec::annulus(2, {}, 0.4, 1.0, 0.1);
  const auto g = build_grid(spec, 32);
  std::mt19937_64 rng(1);
  const auto u = oracle::random_field(g, rng, 0.0, 1.0);
  const auto b = barycenter(u);
  const Point v{3 * g->h()[0], -5 * g->h()[1], 0};
  const auto bt = barycenter(translated(u, v));
  for (int a = 0; a < 2; ++a) EXPECT_NEAR(bt[a], b[a] + v[a], 1e-12);
  for (double s : {1e-3, -2.0, 17.0}) {
    const auto bs = barycenter(u.scaled(s));
    for (int a = 0; a < 2; ++a) EXPECT_NEAR(bs[a], b[a], 1e-13);
  }
}

TEST(Barycenter, InsideConvexHullOfNodes) {
  std::mt19937_64 rng(2);
  const auto spec = DomainSpec::multi_hole(2, {}, 1.0, {{{-0.45, 0, 0}, 0.2}, {{0.45, 0, 0}, 0.2}}, 0.08);
  const auto g = build_grid(spec, 48);
  for (int t = 0; t < 10; ++t) {
    const auto b = barycenter(oracle::random_field(g, rng, -1.0, 1.0));
    EXPECT_LE(norm(b), 1.0);
  }
}

TEST(Barycenter, SeedBubbleSitsAtItsCenter) {
  const auto spec = DomainSpec::annulus(2, {}, 0.4, 1.0, 0.15);
  const auto g = build_grid(spec, 64);
  const auto pts = omega_r_minus_points(*g, spec, 3);
  for (double R : {8.0, 16.0})
    for (const auto& p : pts) {
      const auto b = barycenter(seed_bubble(g, spec, p, R, 3));
      EXPECT_LT(distance(b, p), 2 * g->h()[0]) << "R " << R;
    }
}

TEST(Barycenter, ZeroFieldIsAnError) {
  const auto g = build_grid(DomainSpec::ball(2, {}, 1.0, 0.3), 20);
  EXPECT_THROW(barycenter(Field(g)), ComputeError);
}

TEST(Dedup, IdenticalRecordsMerge) {
  const auto classes = dedup({record(1.0, {0.1, 0, 0}), record(1.0, {0.1, 0, 0}), record(1.0, {0.1, 0, 0})}, 1e-3, 0.05);
  ASSERT_EQ(classes.size(), 1u);
  EXPECT_EQ(classes[0].member_count(), 3u);
}

TEST(Dedup, SeparatedBarycentersStayApart) {
  const auto classes = dedup({record(1.0, {0, 0, 0}), record(1.0, {0.5, 0, 0})}, 1e-3, 0.05);
  EXPECT_EQ(classes.size(), 2u);
  const auto energy_split = dedup({record(1.0, {0, 0, 0}), record(1.5, {0, 0, 0})}, 1e-3, 0.05);
  EXPECT_EQ(energy_split.size(), 2u);
  EXPECT_LT(energy_split[0].energy(), energy_split[1].energy());
}

TEST(Dedup, PartitionInvariantUnderPermutation) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> e(1.0, 1.004), x(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<SolutionRecord> recs;
    for (int i = 0; i < 12; ++i) recs.push_back(record(e(rng), {std::round(x(rng) * 2) / 2, 0, 0}));
    const auto a = dedup(recs, 1e-3, 0.1);
    std::size_t total = 0;
    std::vector<int> seen(recs.size(), 0);
    for (const auto& c : a) {
      total += c.member_count();
      for (auto m : c.members) ++seen[m];
      double lowest = c.representative.energy;
      for (auto m : c.members) EXPECT_GE(recs[m].energy, lowest);
    }
    EXPECT_EQ(total, recs.size());
    for (int s : seen) EXPECT_EQ(s, 1);
    auto shuffled = recs;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto b = dedup(shuffled, 1e-3, 0.1);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].energy(), b[i].energy());
      EXPECT_EQ(a[i].barycenter, b[i].barycenter);
      EXPECT_EQ(a[i].member_count(), b[i].member_count());
    }
  }
}

TEST(Dedup, RejectsUnconvergedAndBadThresholds) {
  auto r = record(1.0, {});
  r.converged = false;
  EXPECT_THROW(dedup({r}, 1e-3, 0.1), ConfigError);
  EXPECT_THROW(dedup({record(1.0, {})}, 0.0, 0.1), ConfigError);
}

TEST(Localization, FlagsTranslatedField) {
  const auto spec = DomainSpec::ball(2, {}, 1.0, 0.1);
  const auto g = build_grid(spec, 32);
  const auto u = seed_bubble(g, DomainSpec::ball(2, {}, 1.0, 0.3), {}, 6.0, 3);
  auto rec = record(1.0, barycenter(u));
  auto moved = record(1.0, barycenter(translated(u, {1.5, 0, 0})));
  const auto classes = dedup({rec, moved}, 1e-3, 0.1, &spec);
  ASSERT_EQ(classes.size(), 2u);
  const auto report = barycenter_localization_check(classes, spec, 1.0, 0.1);
  EXPECT_EQ(report.checked.size(), 2u);
  ASSERT_EQ(report.violations.size(), 1u);
  EXPECT_NEAR(classes[report.violations[0]].barycenter[0], 1.5, 1e-12);
  EXPECT_FALSE(report.passed());
}

TEST(Localization, HighEnergyClassesAreNotChecked) {
  const auto spec = DomainSpec::ball(2, {}, 1.0, 0.1);
  const auto classes = dedup({record(1.0, {}), record(5.0, {3, 0, 0})}, 1e-3, 0.1, &spec);
  const auto report = barycenter_localization_check(classes, spec, 1.0, 0.1);
  EXPECT_EQ(report.checked.size(), 1u);
  EXPECT_TRUE(report.passed());
}

TEST(Verdict, CountsAgainstCategory) {
  const auto disk = DomainSpec::ball(2, {}, 1.0, 0.3);
  const auto ann = DomainSpec::annulus(2, {}, 0.4, 1.0, 0.1);
  const auto one = dedup({record(1.0, {})}, 1e-3, 0.1);
  EXPECT_EQ(multiplicity_verdict(one, disk, 1.0, 0.1).kind, VerdictKind::pass);
  const auto v = multiplicity_verdict(one, ann, 1.0, 0.1);
  EXPECT_EQ(v.kind, VerdictKind::inconclusive);
  EXPECT_FALSE(v.advice.empty());
  const auto two = dedup({record(1.0, {0.7, 0, 0}), record(1.0, {-0.7, 0, 0})}, 1e-3, 0.1);
  EXPECT_EQ(multiplicity_verdict(two, ann, 1.0, 0.1).kind, VerdictKind::pass);
  EXPECT_NEAR(max_angular_separation(two, {}), std::numbers::pi, 1e-15);
  EXPECT_EQ(to_string(VerdictKind::pass), "PASS");
}

TEST(EnergyDensity, SumsToGradientEnergy) {
  std::mt19937_64 rng(5);
  const auto g = build_grid(DomainSpec::annulus(2, {}, 0.4, 1.0, 0.1), 32);
  const auto u = oracle::random_field(g, rng, -1.0, 1.0);
  const auto rho = gradient_energy_density(u);
  double s = 0.0;
  for (double v : rho) s += v;
  EXPECT_NEAR(s, grad_sq_integral(u), 1e-10 * s);
}
