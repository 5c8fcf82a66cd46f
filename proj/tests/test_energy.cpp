#include <gtest/gtest.h>

#include <random>

#include "choquard/energy.hpp"
#include "choquard/experiments.hpp"
#include "oracles.hpp"

using namespace choquard;

namespace {

struct Setup {
  GridPtr grid;
  RieszKernel kernel;
  ChoquardParams params;
};

Setup disk_setup(double eps = 0.5, double lambda = 0.3, double res = 20) {
  const auto spec = DomainSpec::ball(2, {}, 1.0, 0.3);
  auto g = build_grid(spec, res);
  return {g, build_kernel(g, 1.0), ChoquardParams::from_eps(3, 1.0, lambda, eps)};
}

} // namespace

TEST(Params, ExponentsAndValidation) {
  EXPECT_DOUBLE_EQ(critical_exponent(3, 1.0), 5.0);
  EXPECT_DOUBLE_EQ(critical_exponent(4, 2.0), 3.0);
  const auto c = ChoquardParams::critical(4, 2.0, 0.0);
  EXPECT_TRUE(c.is_critical());
  EXPECT_DOUBLE_EQ(c.nehari_energy_factor(), 1.0 / 3.0);
  EXPECT_THROW(ChoquardParams::from_eps(3, 3.0, 0.0, 0.1), ParameterError);
  EXPECT_THROW(ChoquardParams::from_eps(3, 1.0, -1.0, 0.1), ParameterError);
  EXPECT_THROW(ChoquardParams::from_eps(2, 1.0, 0.0, 0.1), ParameterError);
  EXPECT_THROW(ChoquardParams::from_p(3, 1.0, 0.0, 6.0), ParameterError);
  EXPECT_THROW(ChoquardParams::from_p(3, 1.0, 0.0, 1.0), ParameterError);
}

TEST(DTerm, NonpositiveFieldGivesZero) {
  auto s = disk_setup();
  std::mt19937_64 rng(1);
  const auto u = oracle::random_field(s.grid, rng, -1.0, 0.0);
  EXPECT_EQ(d_term(u, s.params, s.kernel), 0.0);
}

TEST(DTerm, SingleImpulse) {
  auto s = disk_setup();
  std::vector<double> v(s.grid->interior_size(), 0.0);
  const double a = 1.7;
  v[123] = a;
  const Field u(s.grid, v);
  const double vol = s.grid->cell_volume();
  const double expect = vol * vol * std::pow(a, 2.0 * s.params.p) * s.kernel.singular_cell();
  EXPECT_NEAR(d_term(u, s.params, s.kernel), expect, 1e-12 * expect);
}

TEST(DTerm, MatchesBruteForceDoubleLoop) {
  const auto g = box_lattice(2, 12);
  const auto k = build_kernel(g, 1.3);
  std::mt19937_64 rng(2);
  for (double eps : {0.0, 0.4, 1.5}) {
    const auto params = ChoquardParams::from_eps(3, 1.3, 0.0, eps);
    for (int t = 0; t < 5; ++t) {
      const auto u = oracle::random_field(g, rng, -0.5, 1.0);
      const double ref = oracle::d_term(u, 1.3, k.singular_cell(), params.p);
      EXPECT_NEAR(d_term(u, params, k), ref, 1e-10 * ref);
    }
  }
}

TEST(Energy, IdentityAndZero) {
  auto s = disk_setup();
  const auto z = energy(Field(s.grid), s.params, s.kernel);
  EXPECT_EQ(z.value, 0.0);
  EXPECT_EQ(z.norm_lambda_sq, 0.0);
  EXPECT_EQ(z.d_term, 0.0);
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const auto u = oracle::random_field(s.grid, rng, -0.3, 2.0);
    const auto r = energy(u, s.params, s.kernel);
    EXPECT_NEAR(r.value, 0.5 * r.norm_lambda_sq - r.d_term / (2.0 * s.params.p), 1e-12 * std::abs(r.value));
    EXPECT_GE(r.d_term, 0.0);
    const double ref = oracle::energy(u, s.params.lambda, 1.0, s.kernel.singular_cell(), s.params.p);
    EXPECT_NEAR(r.value, ref, 1e-9 * std::abs(ref));
  }
}

TEST(Energy, OnNehariValueIsMultipleOfNorm) {
  auto s = disk_setup();
  std::mt19937_64 rng(4);
  for (int t = 0; t < 10; ++t) {
    const auto u = nehari_project(oracle::random_field(s.grid, rng, 0.0, 1.0), s.params, s.kernel);
    const auto r = energy(u, s.params, s.kernel);
    const double expect = (s.params.p - 1.0) / (2.0 * s.params.p) * r.norm_lambda_sq;
    EXPECT_NEAR(r.value, expect, 1e-10 * expect);
  }
}

TEST(Energy, CriticalCubicCaseIsOneThird) {
  const auto g = build_grid(DomainSpec::ball(3, {}, 1.0, 0.3), 9);
  const auto k = build_kernel(g, 2.0);
  const auto params = ChoquardParams::critical(4, 2.0, 0.0);
  ASSERT_DOUBLE_EQ(params.p, 3.0);
  std::mt19937_64 rng(5);
  const auto u = nehari_project(oracle::random_field(g, rng, 0.0, 1.0), params, k);
  const auto r = energy(u, params, k);
  EXPECT_NEAR(r.value, r.norm_lambda_sq / 3.0, 1e-12 * r.value);
}

TEST(Energy, CsvRow) {
  EXPECT_EQ(energy_csv_header(), "p,eps,value,norm_lambda_sq,d_term,nehari_residual,grad_norm");
  EnergyReport r;
  r.p = 4.5;
  const auto row = to_csv_row(r);
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), 6);
}

TEST(Gradient, CentralDifferenceOfEnergy) {
  for (double lambda : {0.0, 0.8}) {
    auto s = disk_setup(0.5, lambda, 16);
    std::mt19937_64 rng(6);
    for (int t = 0; t < 20; ++t) {
      const auto u = oracle::random_field(s.grid, rng, -0.3, 1.0);
      const auto phi = oracle::random_field(s.grid, rng, -1.0, 1.0);
      const double step = 1e-5;
      const double fd = (energy(u.plus_scaled(phi, step), s.params, s.kernel).value -
                         energy(u.plus_scaled(phi, -step), s.params, s.kernel).value) /
                        (2.0 * step);
      const double an = l2_inner(gradient(u, s.params, s.kernel), phi);
      EXPECT_NEAR(fd, an, 1e-6 * std::abs(an));
    }
  }
}

TEST(Gradient, NonpositiveAndZero) {
  auto s = disk_setup();
  std::mt19937_64 rng(7);
  const auto u = oracle::random_field(s.grid, rng, -1.0, 0.0);
  const auto g = gradient(u, s.params, s.kernel);
  const auto a = apply_operator(u, s.params.lambda);
  for (std::size_t c = 0; c < u.size(); ++c) EXPECT_EQ(g[c], a[c]);
  EXPECT_EQ(gradient(Field(s.grid), s.params, s.kernel).max_abs(), 0.0);
}

TEST(Projection, FixedPointScalingAndResidual) {
  auto s = disk_setup();
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  for (int t = 0; t < 20; ++t) {
    const auto u = oracle::random_field(s.grid, rng, -0.2, 1.0);
    const auto w = nehari_project(u, s.params, s.kernel);
    EXPECT_NEAR(t_projection(w, s.params, s.kernel), 1.0, 1e-12);
    const auto terms = energy_terms(w, s.params, s.kernel);
    EXPECT_LT(std::abs(terms.norm_lambda_sq - terms.d_term) / terms.norm_lambda_sq, 1e-12);
    const double su = scale(rng);
    EXPECT_NEAR(t_projection(u.scaled(su), s.params, s.kernel), t_projection(u, s.params, s.kernel) / su,
                1e-12 * t_projection(u, s.params, s.kernel) / su);
  }
}

TEST(Projection, UniqueAlongRays) {
  auto s = disk_setup();
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> scale(1e-3, 1e3);
  const auto u = oracle::random_field(s.grid, rng, 0.0, 1.0);
  const auto ref = nehari_project(u, s.params, s.kernel);
  for (int t = 0; t < 100; ++t) {
    const auto w = nehari_project(u.scaled(scale(rng)), s.params, s.kernel);
    for (std::size_t c = 0; c < w.size(); ++c) ASSERT_NEAR(w[c], ref[c], 1e-10 * ref.max_abs());
  }
}

TEST(Projection, BruteForceResidual) {
  const auto g = box_lattice(2, 12);
  const auto k = build_kernel(g, 1.0);
  const auto params = ChoquardParams::from_eps(3, 1.0, 0.5, 0.7);
  std::mt19937_64 rng(10);
  for (int t = 0; t < 5; ++t) {
    const auto w = nehari_project(oracle::random_field(g, rng, 0.0, 1.0), params, k);
    const double norm = grad_sq_integral(w) + params.lambda * l2_sq_integral(w);
    const double d = oracle::d_term(w, 1.0, k.singular_cell(), params.p);
    EXPECT_LT(std::abs(norm - d) / norm, 1e-10);
  }
}

TEST(Projection, NonpositiveIsAnError) {
  auto s = disk_setup();
  std::mt19937_64 rng(11);
  const auto u = oracle::random_field(s.grid, rng, -1.0, 0.0);
  try {
    (void)t_projection(u, s.params, s.kernel);
    FAIL();
  } catch (const ComputeError& e) {
    EXPECT_EQ(std::string(e.what()), "no Nehari projection for nonpositive u");
  }
}

TEST(Residual, SmallMultiplesArePositive) {
  auto s = disk_setup();
  std::mt19937_64 rng(12);
  const auto u = oracle::random_field(s.grid, rng, -0.5, 1.0);
  EXPECT_EQ(nehari_residual(Field(s.grid), s.params, s.kernel), 0.0);
  for (double t : {1e-1, 1e-2, 1e-3}) EXPECT_GT(nehari_residual(u.scaled(t), s.params, s.kernel), 0.0);
}

TEST(Holder, InterpolationBoundHolds) {
  const auto spec = DomainSpec::annulus(2, {}, 0.4, 1.0, 0.1);
  const auto g = build_grid(spec, 32);
  const auto k = build_kernel(g, 1.0);
  std::mt19937_64 rng(13);
  const auto crit = ChoquardParams::critical(3, 1.0, 0.0);
  const auto sub = ChoquardParams::from_eps(3, 1.0, 0.0, 0.2);
  for (int t = 0; t < 10; ++t) {
    const auto u = oracle::random_field(g, rng, 0.0, 2.0);
    const auto b = holder_interpolation_bound(u, sub, k);
    EXPECT_LE(b.lhs, b.rhs);
    const auto e = holder_interpolation_bound(u, crit, k);
    EXPECT_NEAR(e.lhs, e.rhs, 1e-12 * e.rhs);
  }
  const auto bump = Field::from_function(g, [](const Point& x) { return std::abs(x[0] - 0.7) < 0.1 ? 1.0 : 0.0; });
  const auto b = holder_interpolation_bound(bump, sub, k);
  EXPECT_LT(b.lhs, b.rhs);
}

TEST(Nehari, ProjectedNormBoundedBelow) {
  // Over a suite of projected fields, ||t u||^{2p-2} times the largest observed
  // ratio D/||u||^{2p} is at least 1.
  auto s = disk_setup(0.5, 0.0, 16);
  std::mt19937_64 rng(14);
  std::vector<Field> suite;
  for (int t = 0; t < 20; ++t) suite.push_back(oracle::random_field(s.grid, rng, 0.0, 1.0));
  suite.push_back(seed_bubble(s.grid, DomainSpec::ball(2, {}, 1.0, 0.3), {0, 0, 0}, 4.0, 3));
  double best = 0.0;
  for (const auto& u : suite) {
    const auto t = energy_terms(u, s.params, s.kernel);
    best = std::max(best, t.d_term / std::pow(t.norm_lambda_sq, s.params.p));
  }
  for (const auto& u : suite) {
    const auto w = nehari_project(u, s.params, s.kernel);
    const double n2 = h1_lambda_sq(w, 0.0);
    EXPECT_GT(n2, 0.0);
    EXPECT_GE(std::pow(n2, s.params.p - 1.0) * best, 1.0 - 1e-6);
  }
}
