#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <memory>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "choquard/error.hpp"
#include "choquard/numeric.hpp"

namespace choquard {

/// Point in R^n, n <= 3; unused trailing components are zero.
using Point = std::array<double, 3>;

inline double distance(const Point& a, const Point& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

inline double norm(const Point& a) { return distance(a, Point{}); }

enum class DomainKind { ball, annulus, multi_hole, box };

inline std::string to_string(DomainKind k) {
  switch (k) {
    case DomainKind::ball: return "ball";
    case DomainKind::annulus: return "annulus";
    case DomainKind::multi_hole: return "multi_hole";
    case DomainKind::box: return "box";
  }
  return "?";
}

struct Ball {
  Point center{};
  double radius = 0.0;
};

/// Analytic description of a bounded domain together with the margin r used
/// for the inner set {d(x, dOmega) >= r} and outer set {d(x, Omega) <= r}.
struct DomainSpec {
  int dim = 2;
  DomainKind kind = DomainKind::ball;
  Point center{};
  double radius = 1.0;            // ball; outer ball of multi_hole
  double r_inner = 0.0;           // annulus
  double r_outer = 0.0;           // annulus
  std::vector<Ball> holes;        // multi_hole
  Point lower{}, upper{};         // box
  double r_margin = 0.0;

  static DomainSpec ball(int dim, Point center, double radius, double r_margin = -1.0) {
    DomainSpec s;
    s.dim = dim;
    s.kind = DomainKind::ball;
    s.center = center;
    s.radius = radius;
    s.finish(r_margin);
    return s;
  }
  static DomainSpec annulus(int dim, Point center, double r_inner, double r_outer, double r_margin = -1.0) {
    DomainSpec s;
    s.dim = dim;
    s.kind = DomainKind::annulus;
    s.center = center;
    s.r_inner = r_inner;
    s.r_outer = r_outer;
    s.finish(r_margin);
    return s;
  }
  static DomainSpec multi_hole(int dim, Point center, double radius, std::vector<Ball> holes,
                               double r_margin = -1.0) {
    DomainSpec s;
    s.dim = dim;
    s.kind = DomainKind::multi_hole;
    s.center = center;
    s.radius = radius;
    s.holes = std::move(holes);
    s.finish(r_margin);
    return s;
  }
  static DomainSpec box(int dim, Point lower, Point upper, double r_margin = -1.0) {
    DomainSpec s;
    s.dim = dim;
    s.kind = DomainKind::box;
    s.lower = lower;
    s.upper = upper;
    s.finish(r_margin);
    return s;
  }

  /// Lusternik-Schnirelmann category of the catalog shape (declared, not computed).
  [[nodiscard]] int declared_category() const {
    switch (kind) {
      case DomainKind::ball:
      case DomainKind::box: return 1;
      case DomainKind::annulus:
      case DomainKind::multi_hole: return 2;
    }
    return 1;
  }

  /// Signed distance: d(x, dOmega) for x in Omega, -d(x, Omega) outside.
  [[nodiscard]] double depth(const Point& x) const {
    switch (kind) {
      case DomainKind::ball: return radius - distance(x, center);
      case DomainKind::annulus: {
        const double r = distance(x, center);
        return std::min(r - r_inner, r_outer - r);
      }
      case DomainKind::multi_hole: {
        double d = radius - distance(x, center);
        for (const auto& hole : holes) d = std::min(d, distance(x, hole.center) - hole.radius);
        return d;
      }
      case DomainKind::box: {
        double inside = std::numeric_limits<double>::infinity();
        double outside_sq = 0.0;
        for (int a = 0; a < dim; ++a) {
          inside = std::min({inside, x[a] - lower[a], upper[a] - x[a]});
          const double excess = std::max({lower[a] - x[a], x[a] - upper[a], 0.0});
          outside_sq += excess * excess;
        }
        return outside_sq > 0.0 ? -std::sqrt(outside_sq) : inside;
      }
    }
    return 0.0;
  }

  [[nodiscard]] bool contains(const Point& x) const { return depth(x) > 0.0; }

  /// Axis-aligned bounding box of Omega.
  [[nodiscard]] std::pair<Point, Point> bounding_box() const {
    Point lo{}, hi{};
    const double r = kind == DomainKind::annulus ? r_outer : radius;
    for (int a = 0; a < dim; ++a) {
      if (kind == DomainKind::box) {
        lo[a] = lower[a];
        hi[a] = upper[a];
      } else {
        lo[a] = center[a] - r;
        hi[a] = center[a] + r;
      }
    }
    return {lo, hi};
  }

  /// Named length scales that must be resolved by the grid.
  [[nodiscard]] std::vector<std::pair<std::string, double>> features() const {
    std::vector<std::pair<std::string, double>> f;
    switch (kind) {
      case DomainKind::ball: f.emplace_back("ball diameter", 2.0 * radius); break;
      case DomainKind::annulus: f.emplace_back("annulus gap", r_outer - r_inner); break;
      case DomainKind::multi_hole:
        f.emplace_back("outer diameter", 2.0 * radius);
        for (std::size_t i = 0; i < holes.size(); ++i) {
          const auto& hi = holes[i];
          f.emplace_back("hole " + std::to_string(i) + " diameter", 2.0 * hi.radius);
          f.emplace_back("hole " + std::to_string(i) + " to outer boundary gap",
                         radius - distance(hi.center, center) - hi.radius);
          for (std::size_t j = i + 1; j < holes.size(); ++j)
            f.emplace_back("gap between holes " + std::to_string(i) + " and " + std::to_string(j),
                           distance(hi.center, holes[j].center) - hi.radius - holes[j].radius);
        }
        break;
      case DomainKind::box:
        for (int a = 0; a < dim; ++a) f.emplace_back("box side " + std::to_string(a), upper[a] - lower[a]);
        break;
    }
    return f;
  }

  [[nodiscard]] double smallest_feature() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& [name, len] : features()) m = std::min(m, len);
    return m;
  }

  /// Largest attainable depth; analytic where available, sampled otherwise.
  [[nodiscard]] double max_depth() const {
    switch (kind) {
      case DomainKind::ball: return radius;
      case DomainKind::annulus: return 0.5 * (r_outer - r_inner);
      case DomainKind::box: {
        double m = std::numeric_limits<double>::infinity();
        for (int a = 0; a < dim; ++a) m = std::min(m, 0.5 * (upper[a] - lower[a]));
        return m;
      }
      case DomainKind::multi_hole: break;
    }
    const auto [lo, hi] = bounding_box();
    const int samples = dim == 2 ? 400 : 80;
    double best = 0.0;
    Point x{};
    const int nz = dim == 3 ? samples : 1;
    for (int i = 0; i <= samples; ++i)
      for (int j = 0; j <= samples; ++j)
        for (int k = 0; k < nz + (dim == 3 ? 1 : 0); ++k) {
          x[0] = lo[0] + (hi[0] - lo[0]) * i / samples;
          x[1] = lo[1] + (hi[1] - lo[1]) * j / samples;
          if (dim == 3) x[2] = lo[2] + (hi[2] - lo[2]) * k / samples;
          best = std::max(best, depth(x));
        }
    return best;
  }

  void validate() const {
    if (dim != 2 && dim != 3) throw ConfigError("domain dimension must be 2 or 3, got " + std::to_string(dim));
    auto finite_point = [&](const Point& p) {
      for (int a = 0; a < dim; ++a)
        if (!std::isfinite(p[a])) return false;
      return true;
    };
    if (!finite_point(center)) throw ConfigError("domain center must be finite");
    switch (kind) {
      case DomainKind::ball:
        if (!(radius > 0.0)) throw ConfigError("ball radius must be positive");
        break;
      case DomainKind::annulus:
        if (!(r_inner > 0.0 && r_inner < r_outer))
          throw ConfigError("annulus requires 0 < r_inner < r_outer (got " + std::to_string(r_inner) + ", " +
                            std::to_string(r_outer) + ")");
        break;
      case DomainKind::multi_hole:
        if (!(radius > 0.0)) throw ConfigError("multi_hole outer radius must be positive");
        if (holes.empty()) throw ConfigError("multi_hole requires at least one hole");
        for (std::size_t i = 0; i < holes.size(); ++i) {
          if (!(holes[i].radius > 0.0)) throw ConfigError("hole radius must be positive");
          if (distance(holes[i].center, center) + holes[i].radius >= radius)
            throw ConfigError("hole " + std::to_string(i) + " is not strictly inside the outer ball");
          for (std::size_t j = i + 1; j < holes.size(); ++j)
            if (distance(holes[i].center, holes[j].center) <= holes[i].radius + holes[j].radius)
              throw ConfigError("holes " + std::to_string(i) + " and " + std::to_string(j) + " overlap");
        }
        break;
      case DomainKind::box:
        for (int a = 0; a < dim; ++a)
          if (!(upper[a] > lower[a])) throw ConfigError("box requires lower < upper on every axis");
        break;
    }
    if (!(r_margin > 0.0)) throw ConfigError("r_margin must be positive");
    if (r_margin > max_depth())
      throw ConfigError("inner set {d(x, boundary) >= r_margin} is empty; choose r_margin below " +
                        std::to_string(max_depth()));
  }

private:
  void finish(double margin) {
    r_margin = margin > 0.0 ? margin : 0.2 * smallest_feature();
    validate();
  }
};

/// Masked Cartesian lattice. Node (i,j,k) sits at origin + (i h0, j h1, k h2);
/// for dim == 2 the third axis has a single node. Mask-true nodes are stored
/// in ascending row-major order as the "interior" (compact) index space.
class Grid {
public:
  Grid(int dim, std::array<int, 3> shape, std::array<double, 3> h, Point origin, std::vector<std::uint8_t> mask)
      : dim_(dim), shape_(shape), h_(h), origin_(origin), mask_(std::move(mask)) {
    if (dim_ != 2 && dim_ != 3) throw ConfigError("grid dimension must be 2 or 3");
    if (dim_ == 2) {
      shape_[2] = 1;
      h_[2] = 1.0;
      origin_[2] = 0.0;
    }
    for (int a = 0; a < dim_; ++a) {
      if (shape_[a] < 3) throw ConfigError("grid needs at least 3 nodes per axis");
      if (!(h_[a] > 0.0)) throw ConfigError("grid spacing must be positive");
    }
    if (mask_.size() != size()) throw ConfigError("mask size does not match grid shape");
    compact_of_.assign(size(), -1);
    for (std::size_t n = 0; n < size(); ++n) {
      if (!mask_[n]) continue;
      const auto ijk = multi_index(n);
      for (int a = 0; a < dim_; ++a)
        if (ijk[a] == 0 || ijk[a] == shape_[a] - 1)
          throw ConfigError("mask touches the grid boundary; an exterior layer is required");
      compact_of_[n] = static_cast<int>(interior_.size());
      interior_.push_back(n);
    }
    neighbors_.resize(interior_.size());
    for (std::size_t c = 0; c < interior_.size(); ++c) {
      const std::size_t n = interior_[c];
      for (int a = 0; a < 3; ++a) {
        if (a >= dim_) {
          neighbors_[c][2 * a] = neighbors_[c][2 * a + 1] = -1;
          continue;
        }
        neighbors_[c][2 * a] = compact_of_[n - stride(a)];
        neighbors_[c][2 * a + 1] = compact_of_[n + stride(a)];
      }
    }
  }

  [[nodiscard]] int dim() const noexcept { return dim_; }
  [[nodiscard]] const std::array<int, 3>& shape() const noexcept { return shape_; }
  [[nodiscard]] const std::array<double, 3>& h() const noexcept { return h_; }
  [[nodiscard]] const Point& origin() const noexcept { return origin_; }
  [[nodiscard]] std::size_t size() const noexcept {
    return static_cast<std::size_t>(shape_[0]) * shape_[1] * shape_[2];
  }
  [[nodiscard]] std::size_t interior_size() const noexcept { return interior_.size(); }
  [[nodiscard]] bool mask(std::size_t node) const { return mask_[node] != 0; }
  [[nodiscard]] const std::vector<std::uint8_t>& mask() const noexcept { return mask_; }
  [[nodiscard]] const std::vector<std::size_t>& interior() const noexcept { return interior_; }
  [[nodiscard]] int compact_index(std::size_t node) const { return compact_of_[node]; }
  /// Compact neighbor indices (-x,+x,-y,+y,-z,+z); -1 marks an exterior node.
  [[nodiscard]] const std::array<int, 6>& neighbors(std::size_t c) const { return neighbors_[c]; }

  [[nodiscard]] double cell_volume() const noexcept {
    double v = 1.0;
    for (int a = 0; a < dim_; ++a) v *= h_[a];
    return v;
  }
  [[nodiscard]] double min_spacing() const noexcept {
    double m = h_[0];
    for (int a = 1; a < dim_; ++a) m = std::min(m, h_[a]);
    return m;
  }

  [[nodiscard]] std::size_t stride(int axis) const noexcept {
    if (axis == 0) return static_cast<std::size_t>(shape_[1]) * shape_[2];
    if (axis == 1) return static_cast<std::size_t>(shape_[2]);
    return 1;
  }
  [[nodiscard]] std::size_t index(int i, int j, int k = 0) const noexcept {
    return (static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k;
  }
  [[nodiscard]] std::array<int, 3> multi_index(std::size_t node) const noexcept {
    const int k = static_cast<int>(node % shape_[2]);
    const std::size_t rest = node / shape_[2];
    return {static_cast<int>(rest / shape_[1]), static_cast<int>(rest % shape_[1]), k};
  }
  [[nodiscard]] Point coords(std::size_t node) const noexcept {
    const auto ijk = multi_index(node);
    Point x{};
    for (int a = 0; a < dim_; ++a) x[a] = origin_[a] + ijk[a] * h_[a];
    return x;
  }
  [[nodiscard]] Point interior_coords(std::size_t c) const noexcept { return coords(interior_[c]); }

private:
  int dim_;
  std::array<int, 3> shape_;
  std::array<double, 3> h_;
  Point origin_;
  std::vector<std::uint8_t> mask_;
  std::vector<std::size_t> interior_;
  std::vector<int> compact_of_;
  std::vector<std::array<int, 6>> neighbors_;
};

using GridPtr = std::shared_ptr<const Grid>;

/// Discrete H_0^1 function: one value per mask-true node, zero elsewhere by
/// construction. Values are immutable once built.
class Field {
public:
  Field() = default;
  explicit Field(GridPtr grid) : grid_(std::move(grid)), values_(grid_->interior_size(), 0.0) {}
  Field(GridPtr grid, std::vector<double> interior_values)
      : grid_(std::move(grid)), values_(std::move(interior_values)) {
    if (values_.size() != grid_->interior_size()) throw ConfigError("field size does not match grid interior");
    for (double v : values_)
      if (!std::isfinite(v)) throw ComputeError("field value is not finite");
  }

  /// Samples f at every mask-true node.
  template <class F>
  static Field from_function(GridPtr grid, F&& f) {
    std::vector<double> v(grid->interior_size());
    for (std::size_t c = 0; c < v.size(); ++c) v[c] = f(grid->interior_coords(c));
    return Field(std::move(grid), std::move(v));
  }

  /// Takes full row-major node values; exterior entries are discarded.
  static Field from_full(GridPtr grid, std::span<const double> full) {
    if (full.size() != grid->size()) throw ConfigError("full field size does not match grid");
    std::vector<double> v(grid->interior_size());
    for (std::size_t c = 0; c < v.size(); ++c) v[c] = full[grid->interior()[c]];
    return Field(std::move(grid), std::move(v));
  }

  [[nodiscard]] const GridPtr& grid() const noexcept { return grid_; }
  [[nodiscard]] std::span<const double> values() const noexcept { return values_; }
  [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
  [[nodiscard]] double operator[](std::size_t c) const { return values_[c]; }
  [[nodiscard]] double at_node(std::size_t node) const {
    const int c = grid_->compact_index(node);
    return c < 0 ? 0.0 : values_[c];
  }
  [[nodiscard]] std::vector<double> full_values() const {
    std::vector<double> full(grid_->size(), 0.0);
    for (std::size_t c = 0; c < values_.size(); ++c) full[grid_->interior()[c]] = values_[c];
    return full;
  }

  [[nodiscard]] double max_abs() const {
    double m = 0.0;
    for (double v : values_) m = std::max(m, std::abs(v));
    return m;
  }

  [[nodiscard]] Field scaled(double s) const {
    auto v = values_;
    for (double& x : v) x *= s;
    return Field(grid_, std::move(v));
  }
  [[nodiscard]] Field positive_part() const {
    auto v = values_;
    for (double& x : v) x = std::max(x, 0.0);
    return Field(grid_, std::move(v));
  }
  /// this + s * other
  [[nodiscard]] Field plus_scaled(const Field& other, double s) const {
    check_same_grid(other);
    auto v = values_;
    for (std::size_t c = 0; c < v.size(); ++c) v[c] += s * other.values_[c];
    return Field(grid_, std::move(v));
  }
  [[nodiscard]] Field times(const Field& other) const {
    check_same_grid(other);
    auto v = values_;
    for (std::size_t c = 0; c < v.size(); ++c) v[c] *= other.values_[c];
    return Field(grid_, std::move(v));
  }
  void check_same_grid(const Field& other) const {
    if (grid_ != other.grid_ && grid_->size() != other.grid_->size())
      throw ConfigError("fields live on different grids");
  }

private:
  GridPtr grid_;
  std::vector<double> values_;
};

/// Builds the masked lattice for `spec` with spacing 1/resolution. Nodes are
/// aligned with integer multiples of h and one exterior layer pads every face.
inline GridPtr build_grid(const DomainSpec& spec, double resolution) {
  spec.validate();
  if (!(resolution > 0.0)) throw ConfigError("resolution must be positive");
  constexpr double min_nodes = 16.0;
  for (const auto& [name, len] : spec.features()) {
    const double nodes = len * resolution;
    if (nodes < min_nodes) {
      std::ostringstream msg;
      msg << "resolution " << resolution << " too coarse: " << name << " (" << len << ") spans " << nodes
          << " nodes, need at least " << min_nodes;
      throw ConfigError(msg.str());
    }
  }
  const double h = 1.0 / resolution;
  const auto [lo, hi] = spec.bounding_box();
  std::array<int, 3> shape{1, 1, 1};
  std::array<double, 3> spacing{h, h, 1.0};
  Point origin{};
  for (int a = 0; a < spec.dim; ++a) {
    const long first = static_cast<long>(std::floor(lo[a] / h + 1e-9)) - 1;
    const long last = static_cast<long>(std::ceil(hi[a] / h - 1e-9)) + 1;
    shape[a] = static_cast<int>(last - first + 1);
    origin[a] = first * h;
    spacing[a] = h;
  }
  const std::size_t total = static_cast<std::size_t>(shape[0]) * shape[1] * shape[2];
  std::vector<std::uint8_t> mask(total, 0);
  const double tol = 1e-12 * h;
  bool inner_nonempty = false;
  for (int i = 0; i < shape[0]; ++i)
    for (int j = 0; j < shape[1]; ++j)
      for (int k = 0; k < shape[2]; ++k) {
        Point x{origin[0] + i * h, origin[1] + j * h, spec.dim == 3 ? origin[2] + k * h : 0.0};
        const double d = spec.depth(x);
        const std::size_t n = (static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k;
        mask[n] = d > tol ? 1 : 0;
        if (d >= spec.r_margin) inner_nonempty = true;
      }
  if (!inner_nonempty)
    throw ConfigError("no grid node lies in the inner set {d(x, boundary) >= r_margin}; use a smaller r_margin");
  return std::make_shared<const Grid>(spec.dim, shape, spacing, origin, std::move(mask));
}

/// True iff dist(x, Omega) <= r_margin.
inline bool in_omega_r_plus(const DomainSpec& spec, const Point& x) { return spec.depth(x) >= -spec.r_margin; }

/// True iff d(x, dOmega) >= r_margin and x in Omega.
inline bool in_omega_r_minus(const DomainSpec& spec, const Point& x) { return spec.depth(x) >= spec.r_margin; }

/// `count` quasi-uniform grid points of the inner set. The first point is the
/// deepest node; each next point maximizes depth(x) * dist(x, chosen), which
/// spreads points apart while keeping them away from the boundary. Ties go to
/// the lowest node index.
inline std::vector<Point> omega_r_minus_points(const Grid& grid, const DomainSpec& spec, int count) {
  if (count < 0) throw ConfigError("point count must be non-negative");
  std::vector<Point> candidates;
  std::vector<double> depth;
  for (std::size_t c = 0; c < grid.interior_size(); ++c) {
    const Point x = grid.interior_coords(c);
    const double d = spec.depth(x);
    if (d >= spec.r_margin) {
      candidates.push_back(x);
      depth.push_back(d);
    }
  }
  if (candidates.empty())
    throw ConfigError("inner set {d(x, boundary) >= r_margin} has no grid nodes; use a smaller r_margin");
  if (static_cast<std::size_t>(count) > candidates.size())
    throw ConfigError("requested " + std::to_string(count) + " points but the inner set has only " +
                      std::to_string(candidates.size()) + " nodes");
  std::vector<Point> chosen;
  if (count == 0) return chosen;
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i)
    if (depth[i] > depth[best]) best = i;
  chosen.push_back(candidates[best]);
  std::vector<double> min_dist(candidates.size(), std::numeric_limits<double>::infinity());
  while (chosen.size() < static_cast<std::size_t>(count)) {
    const Point& last = chosen.back();
    best = 0;
    double best_score = -1.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      min_dist[i] = std::min(min_dist[i], distance(candidates[i], last));
      const double score = depth[i] * min_dist[i];
      if (score > best_score) {
        best_score = score;
        best = i;
      }
    }
    chosen.push_back(candidates[best]);
  }
  return chosen;
}

/// Midpoint quadrature over mask-true nodes: prod(h) * sum(values).
inline double integrate(const Field& f) {
  return f.grid()->cell_volume() * compensated_sum(f.values());
}

inline double l2_sq_integral(const Field& u) {
  CompensatedSum s;
  for (double v : u.values()) s.add(v * v);
  return u.grid()->cell_volume() * s.value();
}

inline double l2_inner(const Field& u, const Field& v) {
  u.check_same_grid(v);
  CompensatedSum s;
  for (std::size_t c = 0; c < u.size(); ++c) s.add(u[c] * v[c]);
  return u.grid()->cell_volume() * s.value();
}

/// |grad u|_2^2 as the sum of squared forward differences over every lattice
/// edge touching the interior (exterior values are zero).
inline double grad_sq_integral(const Field& u) {
  const Grid& g = *u.grid();
  CompensatedSum s;
  for (std::size_t c = 0; c < u.size(); ++c) {
    const auto& nb = g.neighbors(c);
    const double uc = u[c];
    double local = 0.0;
    for (int a = 0; a < g.dim(); ++a) {
      const double inv_h2 = 1.0 / (g.h()[a] * g.h()[a]);
      const int fwd = nb[2 * a + 1];
      const double df = fwd >= 0 ? u[fwd] - uc : -uc;
      local += df * df * inv_h2;
      if (nb[2 * a] < 0) local += uc * uc * inv_h2;
    }
    s.add(local);
  }
  return g.cell_volume() * s.value();
}

inline void require_nonnegative_lambda(double lambda) {
  if (!(lambda >= 0.0)) throw ParameterError("lambda must be >= 0, got " + std::to_string(lambda));
}

/// ||u||_lambda^2 = |grad u|_2^2 + lambda |u|_2^2.
inline double h1_lambda_sq(const Field& u, double lambda) {
  require_nonnegative_lambda(lambda);
  return grad_sq_integral(u) + lambda * l2_sq_integral(u);
}

/// (-Delta + lambda) on compact interior arrays; `out` must have the same size.
inline void apply_operator_compact(const Grid& g, std::span<const double> u, double lambda, std::span<double> out) {
  const int dim = g.dim();
  std::array<double, 3> inv_h2{};
  double diag = lambda;
  for (int a = 0; a < dim; ++a) {
    inv_h2[a] = 1.0 / (g.h()[a] * g.h()[a]);
    diag += 2.0 * inv_h2[a];
  }
  for (std::size_t c = 0; c < u.size(); ++c) {
    const auto& nb = g.neighbors(c);
    double acc = diag * u[c];
    for (int a = 0; a < dim; ++a) {
      double off = 0.0;
      if (nb[2 * a] >= 0) off += u[nb[2 * a]];
      if (nb[2 * a + 1] >= 0) off += u[nb[2 * a + 1]];
      acc -= off * inv_h2[a];
    }
    out[c] = acc;
  }
}

/// Second-order finite-difference (-Delta + lambda) u with Dirichlet zero exterior.
inline Field apply_operator(const Field& u, double lambda) {
  require_nonnegative_lambda(lambda);
  std::vector<double> out(u.size());
  apply_operator_compact(*u.grid(), u.values(), lambda, out);
  return Field(u.grid(), std::move(out));
}

// ---------------------------------------------------------------------------
// Field dump: "CHQF", u16 version, u32 n, u64 shape[n], f64 h[n],
// f64 origin[n], then prod(shape) f64 node values, all little-endian,
// row-major (last axis fastest).

inline constexpr std::uint16_t field_dump_version = 1;

struct FieldDump {
  int dim = 0;
  std::array<int, 3> shape{1, 1, 1};
  std::array<double, 3> h{1.0, 1.0, 1.0};
  Point origin{};
  std::vector<double> values;
};

namespace detail {
template <class T>
void put_le(std::ostream& os, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
  U bits;
  std::memcpy(&bits, &value, sizeof(T));
  char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  os.write(buf, sizeof(T));
}
template <class T>
T get_le(std::istream& is) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!is) throw ConfigError("truncated field dump");
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(buf[i]) << (8 * i);
  T value;
  std::memcpy(&value, &bits, sizeof(T));
  return value;
}
} // namespace detail

inline void write_field(std::ostream& os, const Field& f) {
  const Grid& g = *f.grid();
  os.write("CHQF", 4);
  detail::put_le<std::uint16_t>(os, field_dump_version);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(g.dim()));
  for (int a = 0; a < g.dim(); ++a) detail::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(g.shape()[a]));
  for (int a = 0; a < g.dim(); ++a) detail::put_le<double>(os, g.h()[a]);
  for (int a = 0; a < g.dim(); ++a) detail::put_le<double>(os, g.origin()[a]);
  for (double v : f.full_values()) detail::put_le<double>(os, v);
}

inline FieldDump read_field_dump(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "CHQF", 4) != 0) throw ConfigError("not a CHQF field dump");
  const auto version = detail::get_le<std::uint16_t>(is);
  if (version != field_dump_version) throw ConfigError("unsupported field dump version " + std::to_string(version));
  FieldDump d;
  d.dim = static_cast<int>(detail::get_le<std::uint32_t>(is));
  if (d.dim != 2 && d.dim != 3) throw ConfigError("field dump has invalid dimension");
  std::size_t total = 1;
  for (int a = 0; a < d.dim; ++a) {
    d.shape[a] = static_cast<int>(detail::get_le<std::uint64_t>(is));
    total *= static_cast<std::size_t>(d.shape[a]);
  }
  for (int a = 0; a < d.dim; ++a) d.h[a] = detail::get_le<double>(is);
  for (int a = 0; a < d.dim; ++a) d.origin[a] = detail::get_le<double>(is);
  d.values.resize(total);
  for (auto& v : d.values) v = detail::get_le<double>(is);
  return d;
}

/// Attaches a dump to `grid`, checking geometry and the zero-exterior invariant.
inline Field field_from_dump(GridPtr grid, const FieldDump& d) {
  if (d.dim != grid->dim()) throw ConfigError("field dump dimension does not match grid");
  for (int a = 0; a < d.dim; ++a) {
    if (d.shape[a] != grid->shape()[a]) throw ConfigError("field dump shape does not match grid");
    if (d.h[a] != grid->h()[a] || d.origin[a] != grid->origin()[a])
      throw ConfigError("field dump spacing/origin does not match grid");
  }
  for (std::size_t n = 0; n < d.values.size(); ++n)
    if (!grid->mask(n) && d.values[n] != 0.0) throw ConfigError("field dump has nonzero exterior value");
  return Field::from_full(std::move(grid), d.values);
}

} // namespace choquard
