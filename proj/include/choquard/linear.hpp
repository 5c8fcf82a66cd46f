#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "choquard/grid.hpp"

namespace choquard {

struct CgResult {
  int iterations = 0;
  double relative_residual = 0.0;
  bool converged = false;
};

/// Conjugate gradients for (-Delta + lambda) x = rhs on the masked lattice
/// (compact interior arrays). `x` holds the initial guess on entry.
inline CgResult solve_shifted_laplacian(const Grid& grid, double lambda, std::span<const double> rhs,
                                        std::span<double> x, double rel_tol = 1e-10, int max_iters = 5000) {
  const std::size_t n = rhs.size();
  auto dot = [n](std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
  };
  CgResult result;
  const double rhs_norm = std::sqrt(dot(rhs, rhs));
  if (rhs_norm == 0.0) {
    std::fill(x.begin(), x.end(), 0.0);
    result.converged = true;
    return result;
  }
  std::vector<double> r(n), p(n), q(n);
  apply_operator_compact(grid, x, lambda, q);
  for (std::size_t i = 0; i < n; ++i) r[i] = rhs[i] - q[i];
  p = r;
  double rr = dot(r, r);
  const double target = rel_tol * rhs_norm;
  int it = 0;
  while (std::sqrt(rr) > target && it < max_iters) {
    apply_operator_compact(grid, p, lambda, q);
    const double alpha = rr / dot(p, q);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * q[i];
    }
    const double rr_new = dot(r, r);
    const double beta = rr_new / rr;
    rr = rr_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
    ++it;
  }
  result.iterations = it;
  result.relative_residual = std::sqrt(rr) / rhs_norm;
  result.converged = std::sqrt(rr) <= target;
  return result;
}

/// w = (-Delta + lambda)^{-1} g, the H^1_lambda (Sobolev) representer of an L^2 field.
inline Field sobolev_representer(const Field& g, double lambda, double rel_tol = 1e-10) {
  std::vector<double> w(g.size(), 0.0);
  const auto res = solve_shifted_laplacian(*g.grid(), lambda, g.values(), w, rel_tol);
  if (!res.converged) throw ComputeError("conjugate gradients did not converge");
  return Field(g.grid(), std::move(w));
}

} // namespace choquard
