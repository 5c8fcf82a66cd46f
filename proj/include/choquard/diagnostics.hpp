#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "choquard/error.hpp"
#include "choquard/grid.hpp"

namespace choquard {

/// Gradient-energy density per interior node. Each lattice edge carries
/// (difference/h)^2 * cell volume; an interior-interior edge is split evenly
/// between its endpoints, an edge to the exterior goes to its interior end.
inline std::vector<double> gradient_energy_density(const Field& u) {
  const Grid& g = *u.grid();
  std::vector<double> rho(u.size(), 0.0);
  const double vol = g.cell_volume();
  for (std::size_t c = 0; c < u.size(); ++c) {
    const auto& nb = g.neighbors(c);
    for (int a = 0; a < g.dim(); ++a) {
      const double w = vol / (g.h()[a] * g.h()[a]);
      const int fwd = nb[2 * a + 1];
      if (fwd >= 0) {
        const double d = u[fwd] - u[c];
        rho[c] += 0.5 * w * d * d;
        rho[fwd] += 0.5 * w * d * d;
      } else {
        rho[c] += w * u[c] * u[c];
      }
      if (nb[2 * a] < 0) rho[c] += w * u[c] * u[c];
    }
  }
  return rho;
}

/// beta(u) = int x |grad u|^2 / int |grad u|^2 with the discrete density above.
inline Point barycenter(const Field& u) {
  const auto rho = gradient_energy_density(u);
  CompensatedSum total;
  std::array<CompensatedSum, 3> moment;
  for (std::size_t c = 0; c < rho.size(); ++c) {
    if (rho[c] == 0.0) continue;
    const Point x = u.grid()->interior_coords(c);
    total.add(rho[c]);
    for (int a = 0; a < 3; ++a) moment[a].add(rho[c] * x[a]);
  }
  if (!(total.value() > 0.0)) throw ComputeError("barycenter of a zero field is undefined");
  Point b{};
  for (int a = 0; a < 3; ++a) b[a] = moment[a].value() / total.value();
  return b;
}

enum class Classification { low_energy, high_energy };

inline std::string to_string(Classification c) { return c == Classification::low_energy ? "low" : "high"; }

struct SolutionRecord {
  Field field;
  double energy = 0.0;
  Point barycenter{};
  double eps = 0.0;
  int iterations = 0;
  double final_grad_norm = 0.0;
  double nehari_rel_residual = 0.0;
  double min_value = 0.0;
  bool converged = false;
  std::optional<Point> seed_origin;  // empty: produced by path_minmax
  Classification classification = Classification::low_energy;
  std::vector<double> energy_history;

  [[nodiscard]] std::string origin_label() const {
    if (!seed_origin) return "path-minmax";
    std::ostringstream os;
    os.precision(6);
    os << '(' << (*seed_origin)[0] << ' ' << (*seed_origin)[1] << ' ' << (*seed_origin)[2] << ')';
    return os.str();
  }
};

struct ClassSummary {
  SolutionRecord representative;
  std::vector<std::size_t> members;  // indices into the dedup input
  Point barycenter{};
  bool in_omega_r_plus = true;

  [[nodiscard]] std::size_t member_count() const { return members.size(); }
  [[nodiscard]] double energy() const { return representative.energy; }
};

namespace detail {
inline std::size_t uf_find(std::vector<std::size_t>& parent, std::size_t i) {
  while (parent[i] != i) i = parent[i] = parent[parent[i]];
  return i;
}
} // namespace detail

/// Union-find over record pairs with |dE|/E < energy_rtol and |d beta| < bary_dist.
/// Classes come out ordered by representative energy, then barycenter.
inline std::vector<ClassSummary> dedup(const std::vector<SolutionRecord>& records, double energy_rtol,
                                       double bary_dist, const DomainSpec* spec = nullptr) {
  if (!(energy_rtol > 0.0) || !(bary_dist > 0.0)) throw ConfigError("dedup thresholds must be positive");
  for (const auto& r : records)
    if (!r.converged) throw ConfigError("dedup expects converged records only");
  const std::size_t n = records.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double scale = std::max(std::abs(records[i].energy), std::abs(records[j].energy));
      const bool close_e = std::abs(records[i].energy - records[j].energy) <= energy_rtol * scale;
      const bool close_b = distance(records[i].barycenter, records[j].barycenter) < bary_dist;
      if (close_e && close_b) parent[detail::uf_find(parent, j)] = detail::uf_find(parent, i);
    }
  auto better = [&](std::size_t a, std::size_t b) {
    if (records[a].energy != records[b].energy) return records[a].energy < records[b].energy;
    return records[a].barycenter < records[b].barycenter;
  };
  std::vector<std::vector<std::size_t>> groups;
  std::vector<long> slot(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t root = detail::uf_find(parent, i);
    if (slot[root] < 0) {
      slot[root] = static_cast<long>(groups.size());
      groups.emplace_back();
    }
    groups[slot[root]].push_back(i);
  }
  std::vector<ClassSummary> classes;
  for (auto& members : groups) {
    std::size_t rep = members.front();
    for (std::size_t m : members)
      if (better(m, rep)) rep = m;
    ClassSummary s;
    s.representative = records[rep];
    s.members = members;
    s.barycenter = records[rep].barycenter;
    if (spec) s.in_omega_r_plus = in_omega_r_plus(*spec, s.barycenter);
    classes.push_back(std::move(s));
  }
  std::sort(classes.begin(), classes.end(), [](const ClassSummary& a, const ClassSummary& b) {
    if (a.energy() != b.energy()) return a.energy() < b.energy();
    return a.barycenter < b.barycenter;
  });
  return classes;
}

/// Default localization margin: 0.1 * m_eps.
inline double default_delta(double m_eps) { return 0.1 * m_eps; }

struct LocalizationReport {
  std::vector<std::size_t> checked;     // class indices with energy < m_eps + delta
  std::vector<std::size_t> violations;  // of those, barycenter outside the outer set
  [[nodiscard]] bool passed() const { return violations.empty(); }
};

inline LocalizationReport barycenter_localization_check(const std::vector<ClassSummary>& classes,
                                                        const DomainSpec& spec, double m_eps, double delta) {
  LocalizationReport r;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (!(classes[i].energy() < m_eps + delta)) continue;
    r.checked.push_back(i);
    if (!in_omega_r_plus(spec, classes[i].barycenter)) r.violations.push_back(i);
  }
  return r;
}

enum class VerdictKind { pass, inconclusive };

inline std::string to_string(VerdictKind v) { return v == VerdictKind::pass ? "PASS" : "INCONCLUSIVE"; }

struct Verdict {
  VerdictKind kind = VerdictKind::inconclusive;
  int low_energy_classes = 0;
  int declared_category = 1;
  std::string advice;
};

/// PASS when the low-energy class count reaches the declared category. A
/// shortfall is reported as inconclusive, never as a failure.
inline Verdict multiplicity_verdict(const std::vector<ClassSummary>& classes, const DomainSpec& spec, double m_eps,
                                    double delta) {
  Verdict v;
  v.declared_category = spec.declared_category();
  for (const auto& c : classes)
    if (c.energy() < m_eps + delta) ++v.low_energy_classes;
  if (v.low_energy_classes >= v.declared_category) {
    v.kind = VerdictKind::pass;
  } else {
    v.kind = VerdictKind::inconclusive;
    v.advice = "found " + std::to_string(v.low_energy_classes) + " low-energy class(es) for category " +
               std::to_string(v.declared_category) + "; try more seeds or a finer grid";
  }
  return v;
}

/// Largest pairwise angle between class barycenters about `center` (2D plane).
inline double max_angular_separation(const std::vector<ClassSummary>& classes, const Point& center) {
  double best = 0.0;
  for (std::size_t i = 0; i < classes.size(); ++i)
    for (std::size_t j = i + 1; j < classes.size(); ++j) {
      const double ai = std::atan2(classes[i].barycenter[1] - center[1], classes[i].barycenter[0] - center[0]);
      const double aj = std::atan2(classes[j].barycenter[1] - center[1], classes[j].barycenter[0] - center[0]);
      double d = std::abs(ai - aj);
      if (d > std::numbers::pi) d = 2.0 * std::numbers::pi - d;
      best = std::max(best, d);
    }
  return best;
}

} // namespace choquard
