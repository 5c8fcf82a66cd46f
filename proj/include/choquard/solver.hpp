#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <exception>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "choquard/bubbles.hpp"
#include "choquard/diagnostics.hpp"
#include "choquard/energy.hpp"
#include "choquard/error.hpp"
#include "choquard/grid.hpp"
#include "choquard/linear.hpp"
#include "choquard/riesz.hpp"

namespace choquard {

struct SolverConfig {
  int max_iters = 2000;
  double grad_tol = 1e-5;      // relative preconditioned gradient norm
  double step_init = 1.0;
  double step_shrink = 0.5;
  int lbfgs_memory = 8;
  double armijo = 1e-4;        // sufficient-decrease constant
  double cg_tol = 1e-9;
  double seed_R = 0.0;         // 0: default_seed_R
  int seed_count = 4;
  double energy_rtol = 1e-3;
  double bary_dist = 4.0;      // in units of h
  double delta_factor = 0.1;   // localization margin delta = delta_factor * m_eps
  int threads = 0;             // 0: hardware concurrency
  int path_images = 8;
  int path_iters = 60;
  int path_climb_iters = 300;

  void validate() const {
    if (max_iters <= 0) throw ConfigError("max_iters must be positive");
    if (!(grad_tol > 0.0)) throw ConfigError("grad_tol must be > 0");
    if (!(step_init > 0.0)) throw ConfigError("step_init must be > 0");
    if (lbfgs_memory < 0) throw ConfigError("lbfgs_memory must be >= 0");
    if (!(step_shrink > 0.0 && step_shrink < 1.0)) throw ConfigError("step_shrink must lie in (0, 1)");
    if (!(armijo > 0.0 && armijo < 1.0)) throw ConfigError("armijo must lie in (0, 1)");
    if (!(cg_tol > 0.0)) throw ConfigError("cg_tol must be > 0");
    if (!(seed_R >= 0.0)) throw ConfigError("seed_R must be >= 0");
    if (seed_count < 0) throw ConfigError("seed_count must be >= 0");
    if (!(energy_rtol > 0.0) || !(bary_dist > 0.0)) throw ConfigError("dedup thresholds must be > 0");
    if (!(delta_factor > 0.0)) throw ConfigError("delta_factor must be > 0");
    if (threads < 0) throw ConfigError("threads must be >= 0");
    if (path_images < 1 || path_iters < 0 || path_climb_iters < 0)
      throw ConfigError("path_images must be >= 1, path_iters and path_climb_iters >= 0");
  }
};

namespace detail {

// A point on the Nehari manifold with its cached energy pieces.
struct NehariPoint {
  Field u;
  EnergyTerms terms;
  [[nodiscard]] double energy(const ChoquardParams& p) const { return p.nehari_energy_factor() * terms.norm_lambda_sq; }
};

inline NehariPoint project_point(Field v, const ChoquardParams& params, const RieszKernel& kernel) {
  v = v.positive_part();
  auto t = energy_terms(v, params, kernel);
  const double s = t_projection_from_terms(t.norm_lambda_sq, t.d_term, params.p);
  const double sp = std::pow(s, params.p);
  t.norm_lambda_sq *= s * s;
  for (auto& x : t.power) x *= sp;
  for (auto& x : t.potential) x *= sp;
  t.d_term *= sp * sp;
  return {v.scaled(s), std::move(t)};
}

inline double l2_dot(const Grid& g, std::span<const double> a, std::span<const double> b) {
  CompensatedSum s;
  for (std::size_t i = 0; i < a.size(); ++i) s.add(a[i] * b[i]);
  return g.cell_volume() * s.value();
}

inline SolutionRecord finish_record(const NehariPoint& pt, const ChoquardParams& params, int iterations,
                                    double grad_norm, bool converged, std::vector<double> history) {
  SolutionRecord r;
  r.field = pt.u;
  r.energy = pt.energy(params);
  r.eps = params.eps;
  r.iterations = iterations;
  r.final_grad_norm = grad_norm;
  r.nehari_rel_residual = std::abs(pt.terms.norm_lambda_sq - pt.terms.d_term) / pt.terms.norm_lambda_sq;
  r.min_value = *std::min_element(pt.u.values().begin(), pt.u.values().end());
  r.converged = converged;
  r.barycenter = barycenter(pt.u);
  r.energy_history = std::move(history);
  return r;
}

} // namespace detail

/// Descent on the Nehari manifold: u <- t(v) v with v = (u + alpha d)^+,
/// where d is the L-BFGS direction built from Sobolev gradients
/// w = (-Delta + lambda)^{-1} I'(u) in the H^1_lambda inner product. Armijo
/// backtracking on the energy; memory resets to steepest descent on failure.
inline SolutionRecord nehari_descent(const Field& seed, const ChoquardParams& params, const RieszKernel& kernel,
                                     const SolverConfig& config) {
  config.validate();
  params.validate();
  bool any_positive = false;
  for (double v : seed.values()) any_positive = any_positive || v > 0.0;
  if (!any_positive) throw ComputeError("descent seed has no positive part");
  const Grid& grid = *seed.grid();
  const std::size_t n = seed.size();

  struct Pair {
    std::vector<double> s, y, as, ay;  // as = A s, ay = A y = difference of L^2 gradients
    double rho;
  };
  std::deque<Pair> memory;

  auto cur = detail::project_point(seed, params, kernel);
  double e = cur.energy(params);
  std::vector<double> history{e};
  Field g = gradient_from_terms(cur.u, params, cur.terms);
  std::vector<double> w(n, 0.0);
  double rel = std::numeric_limits<double>::infinity();
  int it = 0;
  bool converged = false;
  for (;; ++it) {
    const auto cg = solve_shifted_laplacian(grid, params.lambda, g.values(), w, config.cg_tol);
    if (!cg.converged) throw ComputeError("preconditioner solve did not converge");
    const double gw = std::max(0.0, detail::l2_dot(grid, g.values(), w));
    rel = std::sqrt(gw / cur.terms.norm_lambda_sq);
    if (rel < config.grad_tol) {
      converged = true;
      break;
    }
    if (it >= config.max_iters) break;

    bool accepted = false, pushed = false;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      std::vector<double> d(w);
      if (!memory.empty()) {
        std::vector<double> a(memory.size());
        for (std::size_t i = memory.size(); i-- > 0;) {
          a[i] = memory[i].rho * detail::l2_dot(grid, memory[i].as, d);
          for (std::size_t c = 0; c < n; ++c) d[c] -= a[i] * memory[i].y[c];
        }
        const auto& last = memory.back();
        const double gamma = 1.0 / (last.rho * detail::l2_dot(grid, last.ay, last.y));
        for (auto& x : d) x *= gamma;
        for (std::size_t i = 0; i < memory.size(); ++i) {
          const double b = memory[i].rho * detail::l2_dot(grid, memory[i].ay, d);
          for (std::size_t c = 0; c < n; ++c) d[c] += (a[i] - b) * memory[i].s[c];
        }
      }
      for (auto& x : d) x = -x;
      const double slope = detail::l2_dot(grid, g.values(), d);
      if (!(slope < 0.0)) {
        memory.clear();
        continue;
      }
      double alpha = memory.empty() ? config.step_init : 1.0;
      while (alpha >= 1e-12) {
        std::vector<double> v(n);
        for (std::size_t c = 0; c < n; ++c) v[c] = std::max(0.0, cur.u[c] + alpha * d[c]);
        Field vf(cur.u.grid(), std::move(v));
        if (vf.max_abs() > 0.0) {
          auto next = detail::project_point(std::move(vf), params, kernel);
          const double e_next = next.energy(params);
          if (e_next <= e + config.armijo * alpha * slope) {
            Field g_next = gradient_from_terms(next.u, params, next.terms);
            Pair pr;
            pr.s.resize(n);
            pr.ay.resize(n);
            for (std::size_t c = 0; c < n; ++c) {
              pr.s[c] = next.u[c] - cur.u[c];
              pr.ay[c] = g_next[c] - g[c];
            }
            pr.as.resize(n);
            apply_operator_compact(grid, pr.s, params.lambda, pr.as);
            pr.y = w;  // completed after the next preconditioner solve
            const double sy = detail::l2_dot(grid, pr.s, pr.ay);
            cur = std::move(next);
            g = std::move(g_next);
            e = e_next;
            history.push_back(e);
            accepted = true;
            if (sy > 0.0) {
              pr.rho = 1.0 / sy;
              memory.push_back(std::move(pr));
              pushed = true;
            }
            break;
          }
        }
        alpha *= config.step_shrink;
      }
      if (!accepted) memory.clear();
    }
    if (!accepted) break;
    if (pushed) {
      // y = w_new - w_old: solve for the new Sobolev gradient now (the solve
      // at the top of the loop then starts converged).
      auto& back = memory.back();
      const auto cg2 = solve_shifted_laplacian(grid, params.lambda, g.values(), w, config.cg_tol);
      if (!cg2.converged) throw ComputeError("preconditioner solve did not converge");
      for (std::size_t c = 0; c < n; ++c) back.y[c] = w[c] - back.y[c];
    }
    while (static_cast<int>(memory.size()) > config.lbfgs_memory) memory.pop_front();
  }
  return detail::finish_record(cur, params, it, rel, converged, std::move(history));
}

struct MultistartResult {
  std::vector<SolutionRecord> records;  // one per seed, seed order
  std::vector<ClassSummary> classes;
  double m_eps = 0.0;
  double delta = 0.0;
  int unconverged = 0;
  double seed_R = 0.0;
};

namespace detail {

// Runs jobs[i] for every i on up to `threads` workers; results land by index.
template <class Job>
void run_indexed(std::size_t count, int threads, Job&& job) {
  int workers = threads > 0 ? threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  workers = static_cast<int>(std::min<std::size_t>(workers, count));
  std::vector<std::exception_ptr> errors(count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::vector<std::thread> pool;
  for (int wkr = 0; wkr < workers; ++wkr)
    pool.emplace_back([&, wkr] {
      for (std::size_t i = wkr; i < count; i += workers) {
        try {
          job(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline void classify(MultistartResult& r) {
  for (auto& c : r.classes)
    c.representative.classification =
        c.energy() < r.m_eps + r.delta ? Classification::low_energy : Classification::high_energy;
  for (auto& rec : r.records)
    rec.classification = rec.energy < r.m_eps + r.delta ? Classification::low_energy : Classification::high_energy;
}

} // namespace detail

/// Descents from explicit seeds, then dedup and classification.
inline MultistartResult multistart_from(const std::vector<Field>& seeds, const std::vector<std::optional<Point>>& origins,
                                        const DomainSpec& spec, const ChoquardParams& params,
                                        const RieszKernel& kernel, const SolverConfig& config) {
  MultistartResult out;
  out.records.resize(seeds.size());
  detail::run_indexed(seeds.size(), config.threads, [&](std::size_t i) {
    out.records[i] = nehari_descent(seeds[i], params, kernel, config);
    out.records[i].seed_origin = origins[i];
  });
  std::vector<SolutionRecord> good;
  for (const auto& r : out.records) {
    if (r.converged)
      good.push_back(r);
    else
      ++out.unconverged;
  }
  if (good.empty()) throw ComputeError("no descent converged (" + std::to_string(seeds.size()) + " seeds)");
  const double h = kernel.grid()->min_spacing();
  out.classes = dedup(good, config.energy_rtol, config.bary_dist * h, &spec);
  out.m_eps = out.classes.front().energy();
  out.delta = config.delta_factor * out.m_eps;
  detail::classify(out);
  return out;
}

/// One descent per seed bubble centered at the inner-set sample points.
inline MultistartResult multistart(const GridPtr& grid, const DomainSpec& spec, const ChoquardParams& params,
                                   const RieszKernel& kernel, const SolverConfig& config) {
  config.validate();
  if (config.seed_count < spec.declared_category())
    throw ConfigError("seed_count " + std::to_string(config.seed_count) + " is below the declared category " +
                      std::to_string(spec.declared_category()));
  const double R = config.seed_R > 0.0 ? config.seed_R : default_seed_R(*grid, spec, params.n_eff);
  const auto points = omega_r_minus_points(*grid, spec, config.seed_count);
  std::vector<Field> seeds;
  std::vector<std::optional<Point>> origins;
  for (const auto& x0 : points) {
    seeds.push_back(seed_bubble(grid, spec, x0, R, params.n_eff));
    origins.emplace_back(x0);
  }
  auto out = multistart_from(seeds, origins, spec, params, kernel, config);
  out.seed_R = R;
  return out;
}

struct PathResult {
  std::optional<SolutionRecord> candidate;
  bool collapsed = false;
  std::vector<double> path_energies;  // endpoints included
  std::size_t max_index = 0;
  std::string report;
};

namespace detail {

inline double lambda_dist(const Field& a, const Field& b, double lambda) {
  return std::sqrt(h1_lambda_sq(a.plus_scaled(b, -1.0), lambda));
}

// Redistribute interior images to equal H^1_lambda arclength, then project.
inline void reparametrize(std::vector<NehariPoint>& path, const ChoquardParams& params, const RieszKernel& kernel) {
  const std::size_t n = path.size();
  std::vector<double> s(n, 0.0);
  for (std::size_t k = 1; k < n; ++k) s[k] = s[k - 1] + lambda_dist(path[k].u, path[k - 1].u, params.lambda);
  if (!(s.back() > 0.0)) return;
  std::vector<Field> fields;
  for (std::size_t k = 1; k + 1 < n; ++k) {
    const double target = s.back() * static_cast<double>(k) / static_cast<double>(n - 1);
    std::size_t j = 1;
    while (j < n - 1 && s[j] < target) ++j;
    const double span = s[j] - s[j - 1];
    const double f = span > 0.0 ? (target - s[j - 1]) / span : 0.0;
    fields.push_back(path[j - 1].u.scaled(1.0 - f).plus_scaled(path[j].u, f));
  }
  for (std::size_t k = 1; k + 1 < n; ++k) path[k] = project_point(std::move(fields[k - 1]), params, kernel);
}

} // namespace detail

/// Mountain-pass search on the Nehari manifold between two records: a string
/// of projected images relaxed by Sobolev-gradient steps with arclength
/// reparametrization, then climbing-image refinement of the path maximum.
/// A candidate must exceed max(E_a, E_b) + margin.
inline PathResult path_minmax(const SolutionRecord& a, const SolutionRecord& b, const ChoquardParams& params,
                              const RieszKernel& kernel, const SolverConfig& config, double margin) {
  config.validate();
  const double h = kernel.grid()->min_spacing();
  const double scale = std::max(a.energy, b.energy);
  if (std::abs(a.energy - b.energy) <= config.energy_rtol * scale &&
      distance(a.barycenter, b.barycenter) < config.bary_dist * h)
    throw ConfigError("path_minmax needs two distinct solution classes");
  const Grid& grid = *kernel.grid();
  const int K = config.path_images;
  std::vector<detail::NehariPoint> path;
  path.push_back(detail::project_point(a.field, params, kernel));
  for (int k = 1; k <= K; ++k) {
    const double s = static_cast<double>(k) / (K + 1);
    path.push_back(detail::project_point(a.field.scaled(1.0 - s).plus_scaled(b.field, s), params, kernel));
  }
  path.push_back(detail::project_point(b.field, params, kernel));

  std::vector<std::vector<double>> w(path.size(), std::vector<double>(a.field.size(), 0.0));
  auto sobolev_step = [&](std::size_t k, double alpha, const std::vector<double>* tangent) {
    auto& pt = path[k];
    const Field g = gradient_from_terms(pt.u, params, pt.terms);
    solve_shifted_laplacian(grid, params.lambda, g.values(), w[k], config.cg_tol);
    std::vector<double> dir = w[k];
    if (tangent) {
      // Reflect the component along the path: climb along it, descend across.
      std::vector<double> at(dir.size());
      apply_operator_compact(grid, *tangent, params.lambda, at);
      const double proj = detail::l2_dot(grid, at, dir);
      for (std::size_t c = 0; c < dir.size(); ++c) dir[c] -= 2.0 * proj * (*tangent)[c];
    }
    const double gw = std::max(0.0, detail::l2_dot(grid, g.values(), w[k]));
    std::vector<double> v(dir.size());
    for (std::size_t c = 0; c < v.size(); ++c) v[c] = std::max(0.0, pt.u[c] - alpha * dir[c]);
    Field vf(pt.u.grid(), std::move(v));
    if (vf.max_abs() > 0.0) pt = detail::project_point(std::move(vf), params, kernel);
    return std::sqrt(gw / pt.terms.norm_lambda_sq);
  };

  for (int it = 0; it < config.path_iters; ++it) {
    for (std::size_t k = 1; k + 1 < path.size(); ++k) sobolev_step(k, 0.5 * config.step_init, nullptr);
    detail::reparametrize(path, params, kernel);
  }

  PathResult res;
  auto refresh = [&] {
    res.path_energies.clear();
    for (const auto& pt : path) res.path_energies.push_back(pt.energy(params));
    res.max_index = static_cast<std::size_t>(
        std::max_element(res.path_energies.begin(), res.path_energies.end()) - res.path_energies.begin());
  };
  refresh();
  const double end_max = std::max(res.path_energies.front(), res.path_energies.back());
  if (res.max_index == 0 || res.max_index + 1 == path.size() ||
      res.path_energies[res.max_index] <= end_max * (1.0 + config.energy_rtol)) {
    res.collapsed = true;
    res.report = "path maximum within energy tolerance of an endpoint; no saddle found";
    return res;
  }

  // Climbing image: ascend along the local path tangent, descend elsewhere.
  const std::size_t m = res.max_index;
  double rel = std::numeric_limits<double>::infinity();
  int iters = 0;
  std::vector<double> history;
  double alpha = 0.5 * config.step_init;
  for (; iters < config.path_climb_iters; ++iters) {
    Field tf = path[m + 1].u.plus_scaled(path[m - 1].u, -1.0);
    const double tn = std::sqrt(h1_lambda_sq(tf, params.lambda));
    if (!(tn > 0.0)) break;
    std::vector<double> tangent(tf.values().begin(), tf.values().end());
    for (auto& x : tangent) x /= tn;
    rel = sobolev_step(m, alpha, &tangent);
    history.push_back(path[m].energy(params));
    if (rel < config.grad_tol) break;
  }
  // Final stationarity measure at the returned point.
  {
    const Field g = gradient_from_terms(path[m].u, params, path[m].terms);
    std::vector<double> wf(g.size(), 0.0);
    solve_shifted_laplacian(grid, params.lambda, g.values(), wf, config.cg_tol);
    rel = std::sqrt(std::max(0.0, detail::l2_dot(grid, g.values(), wf)) / path[m].terms.norm_lambda_sq);
  }
  refresh();
  const double e_top = path[m].energy(params);
  const bool converged = rel < config.grad_tol;
  if (!converged || !(e_top > end_max + margin)) {
    res.collapsed = true;
    res.report = converged ? "climbing image converged below the required margin"
                           : "no saddle found at tolerance (climbing image did not converge)";
    return res;
  }
  auto rec = detail::finish_record(path[m], params, iters, rel, true, std::move(history));
  rec.classification = Classification::high_energy;
  res.candidate = std::move(rec);
  res.report = "candidate above both endpoints";
  return res;
}

struct SweepRow {
  double eps = 0.0;
  double m_eps = 0.0;
  Point barycenter{};
  double sup_norm = 0.0;
  int classes = 0;
  int unconverged = 0;
  bool ok = true;
  std::string error;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  MultistartResult last;  // run at the final eps
};

/// m_eps along a strictly decreasing eps list. The first eps runs the full
/// multistart; later ones restart from the previous class representatives.
inline SweepResult eps_sweep(const GridPtr& grid, const DomainSpec& spec, const ChoquardParams& base,
                             const RieszKernel& kernel, const std::vector<double>& eps_list,
                             const SolverConfig& config) {
  if (eps_list.empty()) throw ConfigError("eps_list is empty");
  const double crit = base.critical_p();
  for (std::size_t i = 0; i < eps_list.size(); ++i) {
    if (!(eps_list[i] > 0.0 && eps_list[i] < crit - 1.0))
      throw ConfigError("eps values must lie in (0, 2mu* - 1)");
    if (i > 0 && !(eps_list[i] < eps_list[i - 1])) throw ConfigError("eps_list must be strictly decreasing");
  }
  SweepResult out;
  std::vector<Field> seeds;
  std::vector<std::optional<Point>> origins;
  for (std::size_t i = 0; i < eps_list.size(); ++i) {
    const auto params = ChoquardParams::from_eps(base.n_eff, base.mu, base.lambda, eps_list[i]);
    SweepRow row;
    row.eps = eps_list[i];
    try {
      MultistartResult ms = seeds.empty() ? multistart(grid, spec, params, kernel, config)
                                          : multistart_from(seeds, origins, spec, params, kernel, config);
      const auto& best = ms.classes.front().representative;
      row.m_eps = ms.m_eps;
      row.barycenter = best.barycenter;
      row.sup_norm = best.field.max_abs();
      row.classes = static_cast<int>(ms.classes.size());
      row.unconverged = ms.unconverged;
      seeds.clear();
      origins.clear();
      for (const auto& c : ms.classes) {
        seeds.push_back(c.representative.field);
        origins.push_back(c.representative.seed_origin);
      }
      out.last = std::move(ms);
    } catch (const ComputeError& e) {
      row.ok = false;
      row.error = e.what();
    }
    out.rows.push_back(row);
  }
  return out;
}

} // namespace choquard
