#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "choquard/energy.hpp"
#include "choquard/error.hpp"
#include "choquard/grid.hpp"
#include "choquard/numeric.hpp"

namespace choquard {

/// Surface area of the unit sphere S^k in R^{k+1}.
inline double sphere_area(int k) {
  const double a = 0.5 * (k + 1);
  return 2.0 * std::pow(std::numbers::pi, a) / std::tgamma(a);
}

/// (N(N-2))^{(N-2)/4}
inline double bubble_normalization(int N) { return std::pow(N * (N - 2.0), (N - 2.0) / 4.0); }

struct BubbleSpec {
  int N = 3;
  double R = 1.0;
  Point a{};

  [[nodiscard]] double C_N() const { return bubble_normalization(N); }
  void validate() const {
    if (N < 3) throw ParameterError("bubble dimension must be >= 3");
    if (!(R > 0.0)) throw ParameterError("bubble rate R must be positive");
  }
};

/// U_{R,a} at distance rho from the center.
inline double bubble_radial(int N, double R, double rho) {
  return bubble_normalization(N) * std::pow(R / (1.0 + R * R * rho * rho), 0.5 * (N - 2.0));
}

inline double bubble_eval(const BubbleSpec& spec, const Point& x) {
  spec.validate();
  return bubble_radial(spec.N, spec.R, distance(x, spec.a));
}

/// 1 inside B_{r/2}(x0), 0 outside B_r(x0), cubic smoothstep in between.
inline double cutoff_chi(const Point& x, const Point& x0, double r) {
  if (!(r > 0.0)) throw ParameterError("cut-off radius must be positive");
  const double rho = distance(x, x0);
  if (rho <= 0.5 * r) return 1.0;
  if (rho >= r) return 0.0;
  const double tau = (rho - 0.5 * r) / (0.5 * r);
  return 1.0 - tau * tau * (3.0 - 2.0 * tau);
}

/// Cut-off bubble C R^{(n-2)/2} (1 + R^2 |x-x0|^2)^{-(N_eff-2)/2} chi, n the
/// grid dimension; the cut-off radius is the domain's r_margin.
inline Field seed_bubble(const GridPtr& grid, const DomainSpec& spec, const Point& x0, double R, int n_eff) {
  if (!(R > 0.0)) throw ParameterError("seed rate R must be positive");
  if (!in_omega_r_minus(spec, x0))
    throw ConfigError("seed center is closer than r_margin to the boundary; choose x0 in the inner set");
  const double r = spec.r_margin;
  const double amp = bubble_normalization(n_eff) * std::pow(R, 0.5 * (grid->dim() - 2.0));
  const double expo = -0.5 * (n_eff - 2.0);
  Field u = Field::from_function(grid, [&](const Point& x) {
    const double chi = cutoff_chi(x, x0, r);
    if (chi == 0.0) return 0.0;
    const double rho = distance(x, x0);
    return amp * std::pow(1.0 + R * R * rho * rho, expo) * chi;
  });
  if (u.max_abs() == 0.0) throw ConfigError("seed bubble has no support on the grid");
  return u;
}

namespace detail {

inline constexpr int radial_outer_levels = 24;
inline constexpr int radial_inner_levels = 36;

// Quadrature over [0, pi/2] in phi with r = tan(phi), graded toward infinity.
template <class F>
double integrate_compactified(F&& g, int q) {
  const auto& rule = gauss_legendre(q);
  CompensatedSum s;
  for (auto [a, b] : graded_panels_toward_end(0.0, 0.5 * std::numbers::pi, radial_outer_levels))
    s.add(integrate_panel(g, a, b, rule));
  return s.value();
}

// |S^{N-2}| int_0^pi sin^{N-2}(t) ((r-s)^2 + 4 r s sin^2(t/2))^{-mu/2} dt, with
// panels doubling away from the peak width |r-s|/sqrt(rs).
inline double angular_kernel(int N, double mu, double r, double s, const QuadratureRule& rule) {
  const double pi = std::numbers::pi;
  const double d2 = (r - s) * (r - s);
  auto g = [&](double t) {
    const double sh = std::sin(0.5 * t);
    return std::pow(std::sin(t), N - 2) * std::pow(d2 + 4.0 * r * s * sh * sh, -0.5 * mu);
  };
  double width = std::abs(r - s) / std::sqrt(r * s);
  width = std::clamp(width, 1e-15, pi);
  CompensatedSum acc;
  if (width > 0.25 * pi) {
    for (int k = 0; k < 4; ++k) acc.add(integrate_panel(g, k * 0.25 * pi, (k + 1) * 0.25 * pi, rule));
  } else {
    double lo = 0.0, hi = width;
    while (lo < pi) {
      acc.add(integrate_panel(g, lo, std::min(hi, pi), rule));
      lo = hi;
      hi *= 2.0;
    }
  }
  return sphere_area(N - 2) * acc.value();
}

} // namespace detail

/// |S^{n-1}| int_0^inf |v'(r)|^2 r^{n-1} dr for v = C_{N_eff} R^{(n-2)/2} (1+R^2 r^2)^{-(N_eff-2)/2}.
/// With n = N_eff = N this is the gradient energy of U_R on R^N.
inline double radial_grad_sq(int n, int n_eff, double R, int q) {
  const double amp = bubble_normalization(n_eff) * std::pow(R, 0.5 * (n - 2.0));
  auto g = [&](double phi) {
    const double r = std::tan(phi);
    const double sec2 = 1.0 + r * r;
    const double dv = amp * (n_eff - 2.0) * R * R * r * std::pow(1.0 + R * R * r * r, -0.5 * n_eff);
    return dv * dv * std::pow(r, n - 1) * sec2;
  };
  return sphere_area(n - 1) * detail::integrate_compactified(g, q);
}

/// int int f(|x|) f(|y|) |x-y|^{-mu} dx dy over R^N (N >= 2) for radial f, by
/// radial x radial x angular quadrature over the half psi < phi (r = tan phi).
template <class F>
double radial_double_integral(int N, double mu, F&& f, int q) {
  const auto& rule = gauss_legendre(q);
  auto weight = [&](double phi) {
    const double r = std::tan(phi);
    return f(r) * std::pow(r, N - 1) * (1.0 + r * r);
  };
  auto outer = [&](double phi) {
    const double r = std::tan(phi);
    auto inner = [&](double psi) { return weight(psi) * detail::angular_kernel(N, mu, r, std::tan(psi), rule); };
    CompensatedSum acc;
    for (auto [a, b] : graded_panels_toward_end(0.0, phi, detail::radial_inner_levels))
      acc.add(integrate_panel(inner, a, b, rule));
    return weight(phi) * acc.value();
  };
  return 2.0 * sphere_area(N - 1) * detail::integrate_compactified(outer, q);
}

/// D_{2mu*}(U_R) on R^N.
inline double radial_d_crit(int N, double mu, double R, int q) {
  const double crit = critical_exponent(N, mu);
  return radial_double_integral(N, mu, [&](double r) { return std::pow(bubble_radial(N, R, r), crit); }, q);
}

/// A radial function on R^N sampled at compactified quadrature nodes;
/// integrate() returns |S^{N-1}| int_0^inf f(r) r^{N-1} dr.
struct RadialProfile {
  int N = 3;
  std::vector<double> radii;
  std::vector<double> values;
  std::vector<double> weights;

  [[nodiscard]] double integrate() const {
    CompensatedSum s;
    for (std::size_t i = 0; i < values.size(); ++i) s.add(weights[i] * values[i]);
    return s.value();
  }
  [[nodiscard]] double r_max() const { return radii.empty() ? 0.0 : radii.back(); }
};

template <class F>
RadialProfile make_radial_profile(int N, F&& f, int q = 16) {
  RadialProfile p;
  p.N = N;
  const auto& rule = gauss_legendre(q);
  const double area = sphere_area(N - 1);
  for (auto [a, b] : graded_panels_toward_end(0.0, 0.5 * std::numbers::pi, detail::radial_outer_levels)) {
    const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
      const double r = std::tan(mid + half * rule.nodes[i]);
      p.radii.push_back(r);
      p.values.push_back(f(r));
      p.weights.push_back(area * half * rule.weights[i] * std::pow(r, N - 1) * (1.0 + r * r));
    }
  }
  return p;
}

inline RadialProfile radial_bubble_profile(int N, double R, int q = 16) {
  return make_radial_profile(N, [&](double r) { return bubble_radial(N, R, r); }, q);
}

struct CriticalConstants {
  int N = 3;
  double mu = 1.0;
  int quad_points = 0;
  double grad_U1_sq = 0.0;
  double d_crit_U1 = 0.0;
  double S_HL = 0.0;
  double m_star = 0.0;
  double t_star_U1 = 0.0;
  double refinement_change = 0.0;  // max relative change from q to 2q points

  [[nodiscard]] double two_mu_star() const { return critical_exponent(N, mu); }
  /// Exponent 2mu*/(2mu*-1) of S_HL in the m_star formula.
  [[nodiscard]] double m_star_exponent() const {
    const double q = two_mu_star();
    return q / (q - 1.0);
  }
};

inline CriticalConstants compute_critical_constants(int N, double mu, int quad_points) {
  if (N < 3) throw ParameterError("N must be >= 3");
  if (!(mu > 0.0 && mu < N)) throw ParameterError("mu must lie in (0, N)");
  if (quad_points < 2) throw ParameterError("quad_points must be >= 2");
  const double g1 = radial_grad_sq(N, N, 1.0, quad_points);
  const double d1 = radial_d_crit(N, mu, 1.0, quad_points);
  const double g2 = radial_grad_sq(N, N, 1.0, 2 * quad_points);
  const double d2 = radial_d_crit(N, mu, 1.0, 2 * quad_points);
  CriticalConstants c;
  c.N = N;
  c.mu = mu;
  c.quad_points = quad_points;
  c.refinement_change = std::max(std::abs(g2 - g1) / std::abs(g2), std::abs(d2 - d1) / std::abs(d2));
  if (!(c.refinement_change <= 1e-6)) {
    std::ostringstream os;
    os.precision(17);
    os << "radial quadrature did not converge for N=" << N << ", mu=" << mu << ": grad " << g1 << " vs " << g2
       << ", D " << d1 << " vs " << d2;
    throw ComputeError(os.str());
  }
  const double q = critical_exponent(N, mu);
  c.grad_U1_sq = g2;
  c.d_crit_U1 = d2;
  c.S_HL = g2 / std::pow(d2, (N - 2.0) / (2.0 * N - mu));
  c.m_star = (q - 1.0) / (2.0 * q) * std::pow(c.S_HL, q / (q - 1.0));
  c.t_star_U1 = std::pow(g2 / d2, 1.0 / (2.0 * q - 2.0));
  return c;
}

/// Cached per (N, mu, quad_points).
inline const CriticalConstants& critical_constants(int N, double mu, int quad_points = 8) {
  static std::mutex mutex;
  static std::map<std::tuple<int, double, int>, CriticalConstants> cache;
  const auto key = std::make_tuple(N, mu, quad_points);
  {
    std::lock_guard lock(mutex);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  const auto c = compute_critical_constants(N, mu, quad_points);
  std::lock_guard lock(mutex);
  return cache.emplace(key, c).first->second;
}

/// |grad - D| / grad for the unprojected U_1.
inline double bubble_nehari_defect(const CriticalConstants& c) {
  return std::abs(c.grad_U1_sq - c.d_crit_U1) / c.grad_U1_sq;
}

/// Scaled radius s with 99% of the whole-space gradient mass of the seed
/// profile inside B_s (profile at R = 1).
inline double gradient_mass_radius(int n, int n_eff, double fraction = 0.99, int q = 16) {
  const auto& rule = gauss_legendre(q);
  const double amp = bubble_normalization(n_eff);
  auto g = [&](double phi) {
    const double r = std::tan(phi);
    const double dv = amp * (n_eff - 2.0) * r * std::pow(1.0 + r * r, -0.5 * n_eff);
    return dv * dv * std::pow(r, n - 1) * (1.0 + r * r);
  };
  auto mass_to = [&](double phi_max) {
    CompensatedSum s;
    for (auto [a, b] : graded_panels_toward_end(0.0, phi_max, detail::radial_outer_levels))
      s.add(integrate_panel(g, a, b, rule));
    return s.value();
  };
  const double total = mass_to(0.5 * std::numbers::pi);
  double lo = 0.0, hi = 0.5 * std::numbers::pi;
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mass_to(mid) < fraction * total ? lo : hi) = mid;
  }
  return std::tan(0.5 * (lo + hi));
}

/// Seed rate putting 99% of the seed's gradient mass inside B_{r/2}, capped at
/// 0.25/h so the core spans a few grid cells.
inline double default_seed_R(const Grid& grid, const DomainSpec& spec, int n_eff) {
  const double s = gradient_mass_radius(grid.dim(), n_eff);
  return std::min(2.0 * s / spec.r_margin, 0.25 / grid.min_spacing());
}

} // namespace choquard
