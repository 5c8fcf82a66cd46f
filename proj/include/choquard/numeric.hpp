#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <mutex>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

namespace choquard {

/// Neumaier-compensated accumulator. Summation order is the caller's loop
/// order, so results are reproducible for a fixed traversal.
class CompensatedSum {
public:
  void add(double x) noexcept {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  CompensatedSum& operator+=(double x) noexcept {
    add(x);
    return *this;
  }
  [[nodiscard]] double value() const noexcept { return sum_ + comp_; }

private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double compensated_sum(std::span<const double> xs) {
  CompensatedSum s;
  for (double x : xs) s.add(x);
  return s.value();
}

struct QuadratureRule {
  std::vector<double> nodes;   // on [-1, 1]
  std::vector<double> weights;
};

namespace detail {
inline QuadratureRule compute_gauss_legendre(int q) {
  QuadratureRule rule;
  rule.nodes.resize(q);
  rule.weights.resize(q);
  for (int i = 0; i < (q + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (q + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= q; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = q * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[i] = -x;
    rule.nodes[q - 1 - i] = x;
    rule.weights[i] = w;
    rule.weights[q - 1 - i] = w;
  }
  return rule;
}
} // namespace detail

/// Gauss-Legendre rule with q points on [-1, 1]; cached per q.
inline const QuadratureRule& gauss_legendre(int q) {
  static std::mutex mutex;
  static std::map<int, QuadratureRule> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(q);
  if (it == cache.end()) it = cache.emplace(q, detail::compute_gauss_legendre(q)).first;
  return it->second;
}

/// q-point Gauss-Legendre on [a, b].
template <class F>
double integrate_panel(F&& f, double a, double b, const QuadratureRule& rule) {
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (a + b);
  double s = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) s += rule.weights[i] * f(mid + half * rule.nodes[i]);
  return half * s;
}

/// Panels on [a, b] refined geometrically toward `b` (factor 2 per level).
inline std::vector<std::pair<double, double>> graded_panels_toward_end(double a, double b, int levels) {
  std::vector<std::pair<double, double>> panels;
  double lo = a;
  double width = 0.5 * (b - a);
  for (int k = 0; k < levels; ++k) {
    panels.emplace_back(lo, lo + width);
    lo += width;
    width *= 0.5;
  }
  panels.emplace_back(lo, b);
  return panels;
}

/// Panels on [a, b] refined geometrically toward `a`.
inline std::vector<std::pair<double, double>> graded_panels_toward_start(double a, double b, int levels) {
  auto panels = graded_panels_toward_end(a, b, levels);
  std::vector<std::pair<double, double>> out;
  out.reserve(panels.size());
  for (auto it = panels.rbegin(); it != panels.rend(); ++it)
    out.emplace_back(a + b - it->second, a + b - it->first);
  return out;
}

} // namespace choquard
