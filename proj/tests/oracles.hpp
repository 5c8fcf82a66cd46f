#pragma once

// Brute-force reference computations for the test suite. They work on full
// row-major node arrays and share no code with the library kernels.

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "choquard/grid.hpp"

namespace oracle {

using choquard::Field;
using choquard::Grid;
using choquard::Point;

inline std::vector<double> full(const Field& u) {
  const Grid& g = *u.grid();
  std::vector<double> out(g.size(), 0.0);
  for (std::size_t n = 0; n < g.size(); ++n) out[n] = u.at_node(n);
  return out;
}

/// Cell average of |x|^{-mu} over a box of sides h by an m^dim midpoint subgrid.
inline double cell_average_subgrid(int dim, double h, double mu, int m = 64) {
  double sum = 0.0;
  const double s = h / m;
  const int mz = dim == 3 ? m : 1;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      for (int k = 0; k < mz; ++k) {
        const double x = -0.5 * h + (i + 0.5) * s, y = -0.5 * h + (j + 0.5) * s;
        const double z = dim == 3 ? -0.5 * h + (k + 0.5) * s : 0.0;
        sum += std::pow(x * x + y * y + z * z, -0.5 * mu);
      }
  return sum / (static_cast<double>(m) * m * mz);
}

/// 2D cell average of |x|^{-mu} over a square of side h in polar form:
/// 8/(2-mu) int_0^{pi/4} (h/(2 cos t))^{2-mu} dt / h^2, composite Simpson in t.
inline double cell_average_polar_2d(double h, double mu, int m = 2000) {
  const double b = std::numbers::pi / 4;
  auto f = [&](double t) { return std::pow(h / (2.0 * std::cos(t)), 2.0 - mu); };
  double s = f(0.0) + f(b);
  for (int i = 1; i < m; ++i) s += (i % 2 ? 4.0 : 2.0) * f(b * i / m);
  return 8.0 / (2.0 - mu) * s * b / (3.0 * m) / (h * h);
}

/// g(x_i) = vol * sum_j K(x_i - x_j) f(x_j) over all mask-true node pairs with
/// K(0) = k0 and K(d) = |d|^{-mu} otherwise.
inline std::vector<double> convolve(const Grid& g, double mu, double k0, const std::vector<double>& f) {
  std::vector<double> out(g.size(), 0.0);
  const double vol = g.cell_volume();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!g.mask(i)) continue;
    const Point xi = g.coords(i);
    long double acc = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (!g.mask(j) || f[j] == 0.0) continue;
      const double d = choquard::distance(xi, g.coords(j));
      acc += (i == j ? k0 : std::pow(d, -mu)) * f[j];
    }
    out[i] = vol * static_cast<double>(acc);
  }
  return out;
}

/// Double sum of (u+)^p(x_i) (u+)^p(x_j) K(x_i - x_j) vol^2.
inline double d_term(const Field& u, double mu, double k0, double p) {
  const Grid& g = *u.grid();
  auto f = full(u);
  for (double& v : f) v = v > 0.0 ? std::pow(v, p) : 0.0;
  const auto pot = convolve(g, mu, k0, f);
  long double s = 0.0;
  for (std::size_t n = 0; n < g.size(); ++n) s += f[n] * pot[n];
  return g.cell_volume() * static_cast<double>(s);
}

/// Sum over every lattice edge of the full array of (difference / h)^2 * vol.
inline double grad_sq(const Field& u) {
  const Grid& g = *u.grid();
  const auto f = full(u);
  long double s = 0.0;
  for (std::size_t n = 0; n < g.size(); ++n) {
    const auto ijk = g.multi_index(n);
    for (int a = 0; a < g.dim(); ++a) {
      if (ijk[a] + 1 >= g.shape()[a]) continue;
      const double d = (f[n + g.stride(a)] - f[n]) / g.h()[a];
      s += d * d;
    }
  }
  return g.cell_volume() * static_cast<double>(s);
}

/// Energy 1/2 ||u||^2 - D/(2p) from the brute-force pieces.
inline double energy(const Field& u, double lambda, double mu, double k0, double p) {
  long double l2 = 0.0;
  for (double v : u.values()) l2 += v * v;
  const double norm = grad_sq(u) + lambda * u.grid()->cell_volume() * static_cast<double>(l2);
  return 0.5 * norm - d_term(u, mu, k0, p) / (2.0 * p);
}

inline Field random_field(const choquard::GridPtr& g, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(g->interior_size());
  for (auto& x : v) x = dist(rng);
  return Field(g, std::move(v));
}

/// Sobolev constant N(N-2)/4 |S^N|^{2/N}.
inline double sobolev_constant(int N) {
  const double area = 2.0 * std::pow(std::numbers::pi, 0.5 * (N + 1)) / std::tgamma(0.5 * (N + 1));
  return N * (N - 2.0) / 4.0 * std::pow(area, 2.0 / N);
}

/// Sharp HLS constant for the diagonal case t = s = 2N/(2N - mu).
inline double hls_constant(int N, double mu) {
  return std::pow(std::numbers::pi, 0.5 * mu) * std::tgamma(0.5 * (N - mu)) / std::tgamma(N - 0.5 * mu) *
         std::pow(std::tgamma(0.5 * N) / std::tgamma(static_cast<double>(N)), -1.0 + mu / N);
}

/// Best constant S / C(N,mu)^{(N-2)/(2N-mu)}.
inline double s_hl(int N, double mu) {
  return sobolev_constant(N) / std::pow(hls_constant(N, mu), (N - 2.0) / (2.0 * N - mu));
}

inline double m_star(int N, double mu) {
  const double q = (2.0 * N - mu) / (N - 2.0);
  return (q - 1.0) / (2.0 * q) * std::pow(s_hl(N, mu), q / (q - 1.0));
}

} // namespace oracle
