#pragma once

#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "choquard/error.hpp"
#include "choquard/grid.hpp"
#include "choquard/linear.hpp"
#include "choquard/riesz.hpp"

namespace choquard {

/// Upper critical exponent (2N - mu) / (N - 2).
inline double critical_exponent(int n_eff, double mu) { return (2.0 * n_eff - mu) / (n_eff - 2.0); }

/// Dimension used for exponent formulas on a grid of dimension `dim`. The
/// formulas need N >= 3, so 2D grids borrow N = 3.
inline int default_n_eff(int dim) { return dim < 3 ? 3 : dim; }

/// Instance of the functional: dimension for exponents, Riesz exponent mu,
/// mass lambda and power p = 2mu* - eps.
struct ChoquardParams {
  int n_eff = 3;
  double mu = 1.0;
  double lambda = 0.0;
  double p = 5.0;
  double eps = 0.0;

  static ChoquardParams from_eps(int n_eff, double mu, double lambda, double eps) {
    ChoquardParams c;
    c.n_eff = n_eff;
    c.mu = mu;
    c.lambda = lambda;
    c.eps = eps;
    c.validate_dimension();
    c.p = critical_exponent(n_eff, mu) - eps;
    c.validate();
    return c;
  }
  static ChoquardParams from_p(int n_eff, double mu, double lambda, double p) {
    ChoquardParams c;
    c.n_eff = n_eff;
    c.mu = mu;
    c.lambda = lambda;
    c.p = p;
    c.validate_dimension();
    c.eps = critical_exponent(n_eff, mu) - p;
    c.validate();
    return c;
  }
  static ChoquardParams critical(int n_eff, double mu, double lambda) { return from_eps(n_eff, mu, lambda, 0.0); }

  [[nodiscard]] double critical_p() const { return critical_exponent(n_eff, mu); }
  [[nodiscard]] bool is_critical() const { return eps == 0.0; }
  /// (p - 1) / (2p): energy per unit ||u||_lambda^2 on the Nehari manifold.
  [[nodiscard]] double nehari_energy_factor() const { return (p - 1.0) / (2.0 * p); }

  void validate() const {
    validate_dimension();
    require_nonnegative_lambda(lambda);
    if (!(p > 1.0)) throw ParameterError("p must exceed 1, got " + std::to_string(p));
    if (!(eps >= 0.0)) throw ParameterError("p must not exceed the critical exponent " + std::to_string(critical_p()));
  }

private:
  void validate_dimension() const {
    if (n_eff < 3) throw ParameterError("exponent dimension must be >= 3");
    if (!(mu > 0.0 && mu < n_eff))
      throw ParameterError("mu must lie in (0, " + std::to_string(n_eff) + "), got " + std::to_string(mu));
  }
};

inline void check_kernel(const RieszKernel& kernel, const Field& u, const ChoquardParams& params) {
  if (kernel.grid()->size() != u.grid()->size()) throw ConfigError("kernel grid does not match field grid");
  if (kernel.mu() != params.mu) throw ConfigError("kernel mu does not match parameters");
}

/// The pieces every energy-related quantity is assembled from.
struct EnergyTerms {
  double norm_lambda_sq = 0.0;       // ||u||_lambda^2
  double d_term = 0.0;               // double integral of (u+)^p (u+)^p / |x-y|^mu
  std::vector<double> power;         // (u+)^p per interior node
  std::vector<double> potential;     // K * (u+)^p per interior node
};

inline EnergyTerms energy_terms(const Field& u, const ChoquardParams& params, const RieszKernel& kernel) {
  check_kernel(kernel, u, params);
  EnergyTerms t;
  t.norm_lambda_sq = h1_lambda_sq(u, params.lambda);
  t.power.resize(u.size());
  bool any_positive = false;
  for (std::size_t c = 0; c < u.size(); ++c) {
    const double v = u[c];
    t.power[c] = v > 0.0 ? std::pow(v, params.p) : 0.0;
    any_positive = any_positive || v > 0.0;
  }
  t.potential.assign(u.size(), 0.0);
  if (!any_positive) return t;
  convolve_fft_compact(kernel, t.power, t.potential);
  CompensatedSum s;
  for (std::size_t c = 0; c < u.size(); ++c) s.add(t.power[c] * t.potential[c]);
  t.d_term = std::max(0.0, u.grid()->cell_volume() * s.value());
  return t;
}

inline double d_term(const Field& u, const ChoquardParams& params, const RieszKernel& kernel) {
  return energy_terms(u, params, kernel).d_term;
}

struct EnergyReport {
  double p = 0.0;
  double eps = 0.0;
  double value = 0.0;
  double norm_lambda_sq = 0.0;
  double d_term = 0.0;
  double nehari_residual = 0.0;
  double gradient_norm = std::numeric_limits<double>::quiet_NaN();
};

inline std::string energy_csv_header() { return "p,eps,value,norm_lambda_sq,d_term,nehari_residual,grad_norm"; }

inline std::string to_csv_row(const EnergyReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << r.p << ',' << r.eps << ',' << r.value << ',' << r.norm_lambda_sq << ',' << r.d_term << ','
     << r.nehari_residual << ',' << r.gradient_norm;
  return os.str();
}

inline Field gradient_from_terms(const Field& u, const ChoquardParams& params, const EnergyTerms& t) {
  std::vector<double> g(u.size());
  apply_operator_compact(*u.grid(), u.values(), params.lambda, g);
  for (std::size_t c = 0; c < u.size(); ++c)
    if (u[c] > 0.0) g[c] -= t.potential[c] * std::pow(u[c], params.p - 1.0);
  return Field(u.grid(), std::move(g));
}

/// L^2 representer of I'(u): (-Delta + lambda) u - (K * (u+)^p) (u+)^{p-1}.
inline Field gradient(const Field& u, const ChoquardParams& params, const RieszKernel& kernel) {
  return gradient_from_terms(u, params, energy_terms(u, params, kernel));
}

/// ||(-Delta+lambda)^{-1} g||_lambda = sqrt(<g, (-Delta+lambda)^{-1} g>).
inline double preconditioned_norm(const Field& g, double lambda) {
  const Field w = sobolev_representer(g, lambda);
  return std::sqrt(std::max(0.0, l2_inner(g, w)));
}

inline EnergyReport energy(const Field& u, const ChoquardParams& params, const RieszKernel& kernel,
                           bool with_gradient_norm = false) {
  const auto t = energy_terms(u, params, kernel);
  EnergyReport r;
  r.p = params.p;
  r.eps = params.eps;
  r.norm_lambda_sq = t.norm_lambda_sq;
  r.d_term = t.d_term;
  r.value = 0.5 * t.norm_lambda_sq - t.d_term / (2.0 * params.p);
  r.nehari_residual = t.norm_lambda_sq - t.d_term;
  if (with_gradient_norm) r.gradient_norm = preconditioned_norm(gradient_from_terms(u, params, t), params.lambda);
  return r;
}

/// G(u) = ||u||_lambda^2 - D_p(u+).
inline double nehari_residual(const Field& u, const ChoquardParams& params, const RieszKernel& kernel) {
  const auto t = energy_terms(u, params, kernel);
  return t.norm_lambda_sq - t.d_term;
}

/// Unique t > 0 with t u on the Nehari manifold: t^{2p-2} = ||u||_lambda^2 / D_p(u+),
/// evaluated in log space.
inline double t_projection_from_terms(double norm_lambda_sq, double d, double p) {
  if (!(d > 0.0)) throw ComputeError("no Nehari projection for nonpositive u");
  if (!(norm_lambda_sq > 0.0)) throw ComputeError("no Nehari projection for u = 0");
  return std::exp((std::log(norm_lambda_sq) - std::log(d)) / (2.0 * p - 2.0));
}

inline double t_projection(const Field& u, const ChoquardParams& params, const RieszKernel& kernel) {
  const auto t = energy_terms(u, params, kernel);
  return t_projection_from_terms(t.norm_lambda_sq, t.d_term, params.p);
}

inline Field nehari_project(const Field& u, const ChoquardParams& params, const RieszKernel& kernel) {
  return u.scaled(t_projection(u, params, kernel));
}

struct HolderBound {
  double lhs = 0.0;  // D_p(u+)
  double rhs = 0.0;  // D_{2mu*}(u+)^{p/2mu*} * C(Omega)^{eps/2mu*}
};

/// Both sides of the interpolation bound between D_p and the critical D_{2mu*},
/// with C(Omega) the double integral of |x-y|^{-mu} over Omega x Omega.
inline HolderBound holder_interpolation_bound(const Field& u, const ChoquardParams& params,
                                              const RieszKernel& kernel) {
  const auto crit = ChoquardParams::critical(params.n_eff, params.mu, params.lambda);
  HolderBound b;
  b.lhs = d_term(u, params, kernel);
  const double d_crit = d_term(u, crit, kernel);
  std::vector<double> ones(u.size(), 1.0), pot(u.size());
  convolve_fft_compact(kernel, ones, pot);
  const double c_omega = u.grid()->cell_volume() * compensated_sum(pot);
  const double q = crit.p;
  b.rhs = std::pow(d_crit, params.p / q) * std::pow(c_omega, params.eps / q);
  return b;
}

} // namespace choquard
