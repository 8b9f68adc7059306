#pragma once

#include "hardpinn/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace hardpinn::geo {

using Vec2 = Eigen::Vector2d;

inline std::span<const double> as_span(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

/// Side flags for rectangles and intervals (an interval uses left/right).
enum Side : unsigned { left = 1U, right = 2U, bottom = 4U, top = 8U, all_sides = 15U };

struct Interval {
  double x0 = 0.0, x1 = 1.0;
};
struct Rectangle {
  double a1 = 0.0, a2 = 1.0, b1 = 0.0, b2 = 1.0;
};
/// Rectangle boundary minus one side.
struct HalfOpenRectangle {
  Rectangle rect;
  Side excluded = right;
};
struct Circle {
  Vec2 center = Vec2::Zero();
  double radius = 1.0;
};
struct Ball {
  Eigen::VectorXd center;
  double radius = 1.0;
};
/// Closed polygon, vertices in order (either orientation), last != first.
struct Polygon {
  std::vector<Vec2> vertices;
};

using Shape = std::variant<Interval, Rectangle, HalfOpenRectangle, Circle, Ball, Polygon>;

int dimension(const Shape& s);
void validate(const Shape& s);

/// Distance to the boundary of `s` with the conventions: circle |x-c|-r,
/// ball r-|x-c|, rectangle min of the side distances, polygon unsigned.
double exact_distance(const Shape& s, std::span<const double> x);

/// Sides making up the boundary of a rectangular shape or interval.
unsigned side_mask(const Shape& s);

enum class Role { outer, hole };

/// Named piece of the domain boundary: the boundary of `shape`, restricted to
/// `sides` for rectangles and intervals. Holes are traversed from outside.
struct Region {
  std::string name;
  Shape shape;
  Role role = Role::outer;
  unsigned sides = all_sides;
};

struct Domain {
  Shape outer;
  std::vector<Shape> holes;
  std::vector<Region> regions;

  int dim() const { return dimension(outer); }
  std::size_t region_index(const std::string& name) const;
  /// Checks shapes, hole placement and that every region lies on the boundary.
  void validate() const;
  /// Axis-aligned bounding box of the outer shape, (lo, hi).
  std::pair<Eigen::VectorXd, Eigen::VectorXd> bounding_box() const;
  bool contains(std::span<const double> x, double margin = 0.0) const;
};

// ---------------------------------------------------------------------------
// Polygon helpers (double only).

struct NearestEdge {
  std::size_t edge = 0;
  double t = 0.0;  // projection parameter in [0,1]
  double distance = 0.0;
};
NearestEdge nearest_edge(const Polygon& p, const Vec2& x);
bool point_in_polygon(const Polygon& p, const Vec2& x);
/// +1 for counter-clockwise vertex order, -1 otherwise.
double orientation(const Polygon& p);
/// Outward normal of edge k (from vertex k to k+1).
Vec2 edge_normal(const Polygon& p, std::size_t k);

// ---------------------------------------------------------------------------
// Differentiable distances and normals. `T` is double or ad::DualD.

namespace detail {

template <class T>
T norm(std::span<const T> v) {
  using std::sqrt;
  T s = v[0] * v[0];
  for (std::size_t i = 1; i < v.size(); ++i) s = s + v[i] * v[i];
  return sqrt(s);
}

template <class T>
T make_const(double v, const T& like) {
  if constexpr (std::is_same_v<T, double>) {
    (void)like;
    return v;
  } else {
    return T(v, like.size());
  }
}

template <class T>
const T& pick_min(const std::vector<T>& v) {
  std::size_t k = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (ad::value_of(v[i]) < ad::value_of(v[k])) k = i;
  }
  return v[k];
}

// Inside-positive distances to the selected sides, in left/right/bottom/top order.
template <class T>
std::vector<T> rect_side_distances(const Rectangle& r, unsigned sides, std::span<const T> x) {
  std::vector<T> out;
  if (sides & left) out.push_back(x[0] - r.a1);
  if (sides & right) out.push_back(r.a2 - x[0]);
  if (sides & bottom) out.push_back(x[1] - r.b1);
  if (sides & top) out.push_back(r.b2 - x[1]);
  return out;
}

// Signed polygon distance, positive outside. Linear in x near edge interiors
// so the derivative is defined on the boundary itself.
template <class T>
T polygon_signed_distance(const Polygon& p, std::span<const T> x) {
  const Vec2 xd(ad::value_of(x[0]), ad::value_of(x[1]));
  const NearestEdge ne = nearest_edge(p, xd);
  const std::size_t n = p.vertices.size();
  const Vec2& a = p.vertices[ne.edge];
  const Vec2& b = p.vertices[(ne.edge + 1) % n];
  if (ne.t > 0.0 && ne.t < 1.0) {
    const Vec2 nrm = edge_normal(p, ne.edge);
    return (x[0] - a.x()) * nrm.x() + (x[1] - a.y()) * nrm.y();
  }
  const Vec2& v = ne.t <= 0.0 ? a : b;
  using std::sqrt;
  const T dx = x[0] - v.x();
  const T dy = x[1] - v.y();
  const T d = sqrt(dx * dx + dy * dy);
  return point_in_polygon(p, xd) ? -d : d;
}

}  // namespace detail

/// Distance to the region, non-negative inside the domain and zero on the region.
template <class T>
T region_distance(const Region& r, std::span<const T> x) {
  using std::sqrt;
  const bool outer = r.role == Role::outer;
  return std::visit(
      [&](const auto& s) -> T {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Interval>) {
          std::vector<T> d;
          if (r.sides & left) d.push_back(x[0] - s.x0);
          if (r.sides & right) d.push_back(s.x1 - x[0]);
          if (d.empty()) throw std::invalid_argument("region " + r.name + ": no sides selected");
          return detail::pick_min(d);
        } else if constexpr (std::is_same_v<S, Rectangle> || std::is_same_v<S, HalfOpenRectangle>) {
          const Rectangle& rect = [&]() -> const Rectangle& {
            if constexpr (std::is_same_v<S, Rectangle>) return s;
            else return s.rect;
          }();
          const unsigned mask = r.sides & side_mask(s);
          if (!outer) throw std::invalid_argument("region " + r.name + ": rectangular holes are not supported");
          const auto d = detail::rect_side_distances(rect, mask, x);
          if (d.empty()) throw std::invalid_argument("region " + r.name + ": no sides selected");
          return detail::pick_min(d);
        } else if constexpr (std::is_same_v<S, Circle>) {
          const T dx = x[0] - s.center.x();
          const T dy = x[1] - s.center.y();
          const T rho = sqrt(dx * dx + dy * dy);
          return outer ? s.radius - rho : rho - s.radius;
        } else if constexpr (std::is_same_v<S, Ball>) {
          std::vector<T> diff;
          for (Eigen::Index i = 0; i < s.center.size(); ++i) diff.push_back(x[static_cast<std::size_t>(i)] - s.center(i));
          const T rho = detail::norm(std::span<const T>(diff));
          return outer ? s.radius - rho : rho - s.radius;
        } else {
          const T d = detail::polygon_signed_distance(s, x);
          return outer ? -d : d;
        }
      },
      r.shape);
}

/// Unit normal pointing out of the domain (into holes), extended to interior
/// points through the nearest boundary point of the region.
template <class T>
std::vector<T> region_normal(const Region& r, std::span<const T> x) {
  using std::sqrt;
  const double sign = r.role == Role::outer ? 1.0 : -1.0;
  return std::visit(
      [&](const auto& s) -> std::vector<T> {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Interval>) {
          const bool use_left = (r.sides & left) &&
                                (!(r.sides & right) || ad::value_of(x[0]) - s.x0 <= s.x1 - ad::value_of(x[0]));
          return {detail::make_const(sign * (use_left ? -1.0 : 1.0), x[0])};
        } else if constexpr (std::is_same_v<S, Rectangle> || std::is_same_v<S, HalfOpenRectangle>) {
          const Rectangle& rect = [&]() -> const Rectangle& {
            if constexpr (std::is_same_v<S, Rectangle>) return s;
            else return s.rect;
          }();
          const unsigned mask = r.sides & side_mask(s);
          const double px = ad::value_of(x[0]), py = ad::value_of(x[1]);
          double best = std::numeric_limits<double>::infinity();
          Vec2 n = Vec2::Zero();
          const auto consider = [&](unsigned side, double d, Vec2 dir) {
            if ((mask & side) && d < best) {
              best = d;
              n = dir;
            }
          };
          consider(left, px - rect.a1, Vec2(-1, 0));
          consider(right, rect.a2 - px, Vec2(1, 0));
          consider(bottom, py - rect.b1, Vec2(0, -1));
          consider(top, rect.b2 - py, Vec2(0, 1));
          return {detail::make_const(sign * n.x(), x[0]), detail::make_const(sign * n.y(), x[0])};
        } else if constexpr (std::is_same_v<S, Circle> || std::is_same_v<S, Ball>) {
          std::vector<T> diff;
          for (Eigen::Index i = 0; i < s.center.size(); ++i) diff.push_back(x[static_cast<std::size_t>(i)] - s.center(i));
          const T rho = detail::norm(std::span<const T>(diff));
          if (ad::value_of(rho) == 0.0) throw DomainError("normal undefined at the centre of " + r.name);
          for (auto& v : diff) v = v * (sign / rho);
          return diff;
        } else {
          const Vec2 xd(ad::value_of(x[0]), ad::value_of(x[1]));
          const NearestEdge ne = nearest_edge(s, xd);
          const std::size_t n = s.vertices.size();
          if ((ne.t > 0.0 && ne.t < 1.0) || ne.distance < 1e-12) {
            const Vec2 e = edge_normal(s, ne.edge);
            return {detail::make_const(sign * e.x(), x[0]), detail::make_const(sign * e.y(), x[0])};
          }
          const Vec2& v = ne.t <= 0.0 ? s.vertices[ne.edge] : s.vertices[(ne.edge + 1) % n];
          std::vector<T> diff{x[0] - v.x(), x[1] - v.y()};
          const T rho = detail::norm(std::span<const T>(diff));
          // Away from the vertex: outward from the polygon when outside it.
          const double out = point_in_polygon(s, xd) ? -1.0 : 1.0;
          for (auto& c : diff) c = c * (sign * out / rho);
          return diff;
        }
      },
      r.shape);
}

// ---------------------------------------------------------------------------
// Soft minima.

/// -(1/beta) log sum exp(-beta y_k), shifted by the minimum.
template <class T>
T soft_min(std::span<const T> y, double beta) {
  using std::exp;
  using std::log;
  if (y.empty()) throw std::invalid_argument("soft_min: empty input");
  if (!(beta > 0.0)) throw std::invalid_argument("soft_min: beta must be positive");
  const T m = detail::pick_min(std::vector<T>(y.begin(), y.end()));
  T s = exp((y[0] - m) * (-beta));
  for (std::size_t k = 1; k < y.size(); ++k) s = s + exp((y[k] - m) * (-beta));
  return m - log(s) * (1.0 / beta);
}
inline double soft_min(std::initializer_list<double> y, double beta) {
  return soft_min(std::span<const double>(y.begin(), y.size()), beta);
}

/// -(1/beta) log(1 - prod(1 - exp(-beta y_k))): zero whenever some y_k is zero,
/// between the LogSumExp soft-min and the exact minimum otherwise. Negative
/// inputs (rounding just outside the domain) are clamped to zero. Returns the
/// value and the partials with respect to each y_k.
std::pair<double, std::vector<double>> zero_preserving_min_partials(std::span<const double> y, double beta);

template <class T>
T zero_preserving_min(std::span<const T> y, double beta) {
  if (y.empty()) throw std::invalid_argument("zero_preserving_min: empty input");
  if (!(beta > 0.0)) throw std::invalid_argument("zero_preserving_min: beta must be positive");
  if constexpr (std::is_same_v<T, double>) {
    return zero_preserving_min_partials(y, beta).first;
  } else {
    std::vector<double> v;
    v.reserve(y.size());
    for (const auto& e : y) v.push_back(ad::value_of(e));
    const auto [value, partial] = zero_preserving_min_partials(v, beta);
    T r(value, y[0].size());
    for (std::size_t k = 0; k < y.size(); ++k) {
      for (std::size_t j = 0; j < r.size(); ++j) r.d[j] += partial[k] * y[k].d[j];
    }
    return r;
  }
}

/// Soft-min over the exact distances of all boundary regions.
double domain_distance(const Domain& d, std::span<const double> x, double beta = 4.0);

/// Independent stream seed derived from (seed, salt).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

// ---------------------------------------------------------------------------
// Sampling. Points are stored as columns.

struct BoundarySample {
  Eigen::MatrixXd points;
  Eigen::MatrixXd normals;
};

/// Uniform points in the domain. Balls are sampled directly; everything else
/// by rejection from the bounding box of the outer shape.
Eigen::MatrixXd sample_interior(const Domain& d, int n, std::uint64_t seed, int max_attempts = 1000000);

/// Uniform points on a region by arc length (2D) or area (spheres), with the
/// outward normals of the owning domain. Generated sequentially, so a sample
/// of size n is a prefix of any larger sample with the same seed.
BoundarySample sample_boundary(const Region& r, int n, std::uint64_t seed);

/// Uniform times in [0, horizon].
Eigen::VectorXd sample_times(int n, double horizon, std::uint64_t seed);

/// Minimum of the distance to region `region` over n_probe sample points on
/// each of the regions `others`. Returns +infinity when `others` is empty.
double estimate_min_distance(const Domain& d, std::size_t region, std::span<const std::size_t> others,
                             int n_probe, std::uint64_t seed);

/// Same, against every other region of the domain.
double estimate_min_offregion_distance(const Domain& d, std::size_t region, int n_probe, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Polygon input.

/// Two-column whitespace text, one vertex per line. A leading non-numeric
/// title line is skipped; a closing vertex equal to the first is dropped.
Polygon load_polygon(const std::filesystem::path& path);
Polygon parse_polygon(const std::string& text);

/// Symmetric NACA 4-digit section with closed trailing edge, chord [0,1],
/// `points_per_side` cosine-spaced stations per surface.
Polygon naca_symmetric(double thickness, int points_per_side);

}  // namespace hardpinn::geo
