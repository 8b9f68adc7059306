#include "hardpinn/geometry.hpp"

#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace hardpinn::geo {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  // splitmix64 finaliser
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

template <class... F>
struct overloaded : F... {
  using F::operator()...;
};

bool segments_intersect(const Vec2& p1, const Vec2& p2, const Vec2& q1, const Vec2& q2) {
  const auto cross = [](const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); };
  const double d1 = cross(q2 - q1, p1 - q1);
  const double d2 = cross(q2 - q1, p2 - q1);
  const double d3 = cross(p2 - p1, q1 - p1);
  const double d4 = cross(p2 - p1, q2 - p1);
  return ((d1 > 0) != (d2 > 0)) && ((d3 > 0) != (d4 > 0)) && d1 != 0 && d2 != 0 && d3 != 0 && d4 != 0;
}

const Rectangle* as_rectangle(const Shape& s) {
  if (const auto* r = std::get_if<Rectangle>(&s)) return r;
  if (const auto* h = std::get_if<HalfOpenRectangle>(&s)) return &h->rect;
  return nullptr;
}

Region whole(const Shape& s, Role role) { return Region{"", s, role, all_sides}; }

}  // namespace

int dimension(const Shape& s) {
  return std::visit(overloaded{[](const Interval&) { return 1; },
                               [](const Ball& b) { return static_cast<int>(b.center.size()); },
                               [](const auto&) { return 2; }},
                    s);
}

void validate(const Shape& s) {
  std::visit(overloaded{
                 [](const Interval& i) {
                   if (!(i.x0 < i.x1)) throw std::invalid_argument("interval: need x0 < x1");
                 },
                 [](const Rectangle& r) {
                   if (!(r.a1 < r.a2 && r.b1 < r.b2)) throw std::invalid_argument("rectangle: need a1 < a2 and b1 < b2");
                 },
                 [](const HalfOpenRectangle& h) {
                   if (!(h.rect.a1 < h.rect.a2 && h.rect.b1 < h.rect.b2)) {
                     throw std::invalid_argument("rectangle: need a1 < a2 and b1 < b2");
                   }
                   if (h.excluded != left && h.excluded != right && h.excluded != bottom && h.excluded != top) {
                     throw std::invalid_argument("half-open rectangle: excluded side must be a single side");
                   }
                 },
                 [](const Circle& c) {
                   if (!(c.radius > 0)) throw std::invalid_argument("circle: radius must be positive");
                 },
                 [](const Ball& b) {
                   if (!(b.radius > 0)) throw std::invalid_argument("ball: radius must be positive");
                   if (b.center.size() < 1) throw std::invalid_argument("ball: empty centre");
                 },
                 [](const Polygon& p) {
                   const std::size_t n = p.vertices.size();
                   if (n < 3) throw std::invalid_argument("polygon: need at least 3 vertices");
                   for (std::size_t i = 0; i < n; ++i) {
                     if ((p.vertices[i] - p.vertices[(i + 1) % n]).norm() == 0.0) {
                       throw std::invalid_argument("polygon: repeated vertex " + std::to_string(i));
                     }
                   }
                   for (std::size_t i = 0; i < n; ++i) {
                     for (std::size_t j = i + 2; j < n; ++j) {
                       if (i == 0 && j == n - 1) continue;
                       if (segments_intersect(p.vertices[i], p.vertices[i + 1], p.vertices[j],
                                              p.vertices[(j + 1) % n])) {
                         throw std::invalid_argument("polygon: edges " + std::to_string(i) + " and " +
                                                     std::to_string(j) + " intersect");
                       }
                     }
                   }
                 }},
             s);
}

unsigned side_mask(const Shape& s) {
  if (std::holds_alternative<Interval>(s)) return left | right;
  if (const auto* h = std::get_if<HalfOpenRectangle>(&s)) return all_sides & ~static_cast<unsigned>(h->excluded);
  return all_sides;
}

double exact_distance(const Shape& s, std::span<const double> x) {
  if (const auto* p = std::get_if<Polygon>(&s)) return nearest_edge(*p, Vec2(x[0], x[1])).distance;
  const Role role = std::holds_alternative<Circle>(s) ? Role::hole : Role::outer;
  return region_distance<double>(whole(s, role), x);
}

std::size_t Domain::region_index(const std::string& name) const {
  for (std::size_t i = 0; i < regions.size(); ++i) {
    if (regions[i].name == name) return i;
  }
  throw std::invalid_argument("unknown boundary region '" + name + "'");
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> Domain::bounding_box() const {
  using Box = std::pair<Eigen::VectorXd, Eigen::VectorXd>;
  return std::visit(
      overloaded{[](const Interval& i) -> Box {
                   return {Eigen::VectorXd::Constant(1, i.x0), Eigen::VectorXd::Constant(1, i.x1)};
                 },
                 [](const Rectangle& r) -> Box {
                   return {Eigen::Vector2d(r.a1, r.b1), Eigen::Vector2d(r.a2, r.b2)};
                 },
                 [](const HalfOpenRectangle& h) -> Box {
                   const auto& r = h.rect;
                   return {Eigen::Vector2d(r.a1, r.b1), Eigen::Vector2d(r.a2, r.b2)};
                 },
                 [](const Circle& c) -> Box {
                   const Eigen::VectorXd lo = c.center.array() - c.radius;
                   const Eigen::VectorXd hi = c.center.array() + c.radius;
                   return {lo, hi};
                 },
                 [](const Ball& b) -> Box {
                   const Eigen::VectorXd lo = b.center.array() - b.radius;
                   const Eigen::VectorXd hi = b.center.array() + b.radius;
                   return {lo, hi};
                 },
                 [](const Polygon& p) -> Box {
                   Eigen::VectorXd lo = p.vertices[0], hi = p.vertices[0];
                   for (const auto& v : p.vertices) {
                     lo = lo.cwiseMin(v);
                     hi = hi.cwiseMax(v);
                   }
                   return {lo, hi};
                 }},
      outer);
}

bool Domain::contains(std::span<const double> x, double margin) const {
  if (region_distance<double>(whole(outer, Role::outer), x) < margin) return false;
  for (const auto& h : holes) {
    if (!(region_distance<double>(whole(h, Role::hole), x) > margin)) return false;
  }
  return true;
}

void Domain::validate() const {
  geo::validate(outer);
  if (std::holds_alternative<HalfOpenRectangle>(outer)) {
    throw std::invalid_argument("domain: the outer shape must be closed");
  }
  const int d = dim();
  for (std::size_t k = 0; k < holes.size(); ++k) {
    geo::validate(holes[k]);
    if (dimension(holes[k]) != d) throw std::invalid_argument("domain: hole dimension mismatch");
    if (!std::holds_alternative<Circle>(holes[k]) && !std::holds_alternative<Polygon>(holes[k]) &&
        !std::holds_alternative<Ball>(holes[k])) {
      throw std::invalid_argument("domain: holes must be circles, balls or polygons");
    }
    const auto s = sample_boundary(whole(holes[k], Role::hole), 512, mix_seed(17, k));
    for (Eigen::Index j = 0; j < s.points.cols(); ++j) {
      const Eigen::VectorXd p = s.points.col(j);
      if (!(region_distance<double>(whole(outer, Role::outer), as_span(p)) > 0.0)) {
        throw std::invalid_argument("domain: hole " + std::to_string(k) + " is not strictly inside the outer shape");
      }
      for (std::size_t m = 0; m < holes.size(); ++m) {
        if (m != k && !(region_distance<double>(whole(holes[m], Role::hole), as_span(p)) > 0.0)) {
          throw std::invalid_argument("domain: holes " + std::to_string(k) + " and " + std::to_string(m) + " overlap");
        }
      }
    }
  }
  if (regions.empty()) throw std::invalid_argument("domain: no boundary regions");
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const Region& r = regions[i];
    if (r.name.empty()) throw std::invalid_argument("domain: unnamed boundary region");
    for (std::size_t j = 0; j < i; ++j) {
      if (regions[j].name == r.name) throw std::invalid_argument("domain: duplicate region '" + r.name + "'");
    }
    if (dimension(r.shape) != d) throw std::invalid_argument("region " + r.name + ": dimension mismatch");
    const auto s = sample_boundary(r, 64, mix_seed(29, i));
    for (Eigen::Index j = 0; j < s.points.cols(); ++j) {
      const Eigen::VectorXd p = s.points.col(j);
      double nearest = std::abs(region_distance<double>(whole(outer, Role::outer), as_span(p)));
      for (const auto& h : holes) nearest = std::min(nearest, std::abs(region_distance<double>(whole(h, Role::hole), as_span(p))));
      if (nearest > 1e-9) throw std::invalid_argument("region " + r.name + " does not lie on the domain boundary");
    }
  }
}

NearestEdge nearest_edge(const Polygon& p, const Vec2& x) {
  NearestEdge best;
  best.distance = std::numeric_limits<double>::infinity();
  const std::size_t n = p.vertices.size();
  for (std::size_t k = 0; k < n; ++k) {
    const Vec2& a = p.vertices[k];
    const Vec2 e = p.vertices[(k + 1) % n] - a;
    const double t = std::clamp((x - a).dot(e) / e.squaredNorm(), 0.0, 1.0);
    const double dist = (x - (a + t * e)).norm();
    if (dist < best.distance) best = NearestEdge{k, t, dist};
  }
  return best;
}

bool point_in_polygon(const Polygon& p, const Vec2& x) {
  bool inside = false;
  const std::size_t n = p.vertices.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2& a = p.vertices[i];
    const Vec2& b = p.vertices[j];
    if ((a.y() > x.y()) != (b.y() > x.y()) &&
        x.x() < (b.x() - a.x()) * (x.y() - a.y()) / (b.y() - a.y()) + a.x()) {
      inside = !inside;
    }
  }
  return inside;
}

double orientation(const Polygon& p) {
  double area = 0.0;
  const std::size_t n = p.vertices.size();
  for (std::size_t k = 0; k < n; ++k) {
    const Vec2& a = p.vertices[k];
    const Vec2& b = p.vertices[(k + 1) % n];
    area += a.x() * b.y() - b.x() * a.y();
  }
  return area >= 0.0 ? 1.0 : -1.0;
}

Vec2 edge_normal(const Polygon& p, std::size_t k) {
  const Vec2 e = p.vertices[(k + 1) % p.vertices.size()] - p.vertices[k];
  return orientation(p) * Vec2(e.y(), -e.x()).normalized();
}

std::pair<double, std::vector<double>> zero_preserving_min_partials(std::span<const double> y, double beta) {
  const std::size_t n = y.size();
  std::vector<double> e(n), q(n);
  double log_prod = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    e[k] = std::exp(-beta * std::max(y[k], 0.0));
    q[k] = 1.0 - e[k];
    log_prod += std::log1p(-e[k]);
  }
  const double one_minus_prod = -std::expm1(log_prod);
  const double value = -std::log(one_minus_prod) / beta;
  // dl/dy_k = e_k prod_{j != k} q_j / (1 - prod q), via prefix/suffix products.
  std::vector<double> prefix(n + 1, 1.0), suffix(n + 1, 1.0);
  for (std::size_t k = 0; k < n; ++k) prefix[k + 1] = prefix[k] * q[k];
  for (std::size_t k = n; k-- > 0;) suffix[k] = suffix[k + 1] * q[k];
  std::vector<double> partial(n);
  for (std::size_t k = 0; k < n; ++k) partial[k] = e[k] * prefix[k] * suffix[k + 1] / one_minus_prod;
  return {value, partial};
}

double domain_distance(const Domain& d, std::span<const double> x, double beta) {
  std::vector<double> dist;
  dist.reserve(d.regions.size());
  for (const auto& r : d.regions) dist.push_back(region_distance<double>(r, x));
  return soft_min(std::span<const double>(dist), beta);
}

Eigen::MatrixXd sample_interior(const Domain& d, int n, std::uint64_t seed, int max_attempts) {
  if (n < 1) throw std::invalid_argument("sample_interior: n must be >= 1");
  const int dim = d.dim();
  Eigen::MatrixXd out(dim, n);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto* ball = std::get_if<Ball>(&d.outer);
  const auto [lo, hi] = d.bounding_box();
  Eigen::VectorXd x(dim);
  int filled = 0;
  long attempts = 0;
  while (filled < n) {
    if (++attempts > static_cast<long>(max_attempts) + n) {
      throw std::runtime_error("sample_interior: rejection sampling failed after " + std::to_string(attempts - 1) +
                               " attempts");
    }
    if (ball != nullptr) {
      for (int i = 0; i < dim; ++i) x(i) = gauss(rng);
      const double r = ball->radius * std::pow(unif(rng), 1.0 / dim);
      x = ball->center + r * x / x.norm();
    } else {
      for (int i = 0; i < dim; ++i) x(i) = lo(i) + (hi(i) - lo(i)) * unif(rng);
    }
    if (d.contains(as_span(x), 0.0) && region_distance<double>(whole(d.outer, Role::outer), as_span(x)) > 0.0) {
      out.col(filled++) = x;
    }
  }
  return out;
}

BoundarySample sample_boundary(const Region& r, int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_boundary: n must be >= 1");
  const double sign = r.role == Role::outer ? 1.0 : -1.0;
  const int dim = dimension(r.shape);
  BoundarySample s{Eigen::MatrixXd(dim, n), Eigen::MatrixXd(dim, n)};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  if (const auto* iv = std::get_if<Interval>(&r.shape)) {
    const unsigned mask = r.sides & (left | right);
    if (mask == 0) throw std::invalid_argument("region " + r.name + ": no sides selected");
    for (int j = 0; j < n; ++j) {
      const bool use_left = mask == left || (mask != right && unif(rng) < 0.5);
      s.points(0, j) = use_left ? iv->x0 : iv->x1;
      s.normals(0, j) = sign * (use_left ? -1.0 : 1.0);
    }
  } else if (const Rectangle* rect = as_rectangle(r.shape)) {
    const unsigned mask = r.sides & side_mask(r.shape);
    struct Edge {
      Vec2 a, b, normal;
    };
    std::vector<Edge> edges;
    const double a1 = rect->a1, a2 = rect->a2, b1 = rect->b1, b2 = rect->b2;
    if (mask & left) edges.push_back({Vec2(a1, b1), Vec2(a1, b2), Vec2(-1, 0)});
    if (mask & right) edges.push_back({Vec2(a2, b1), Vec2(a2, b2), Vec2(1, 0)});
    if (mask & bottom) edges.push_back({Vec2(a1, b1), Vec2(a2, b1), Vec2(0, -1)});
    if (mask & top) edges.push_back({Vec2(a1, b2), Vec2(a2, b2), Vec2(0, 1)});
    if (edges.empty()) throw std::invalid_argument("region " + r.name + ": no sides selected");
    double total = 0.0;
    for (const auto& e : edges) total += (e.b - e.a).norm();
    for (int j = 0; j < n; ++j) {
      double u = unif(rng) * total;
      std::size_t k = 0;
      while (k + 1 < edges.size() && u >= (edges[k].b - edges[k].a).norm()) {
        u -= (edges[k].b - edges[k].a).norm();
        ++k;
      }
      const Edge& e = edges[k];
      const double len = (e.b - e.a).norm();
      s.points.col(j) = e.a + std::min(u / len, 1.0) * (e.b - e.a);
      s.normals.col(j) = sign * e.normal;
    }
  } else if (const auto* c = std::get_if<Circle>(&r.shape)) {
    for (int j = 0; j < n; ++j) {
      const double th = 2.0 * std::numbers::pi * unif(rng);
      const Vec2 dir(std::cos(th), std::sin(th));
      s.points.col(j) = c->center + c->radius * dir;
      s.normals.col(j) = sign * dir;
    }
  } else if (const auto* b = std::get_if<Ball>(&r.shape)) {
    Eigen::VectorXd g(dim);
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < dim; ++i) g(i) = gauss(rng);
      const Eigen::VectorXd dir = g / g.norm();
      s.points.col(j) = b->center + b->radius * dir;
      s.normals.col(j) = sign * dir;
    }
  } else {
    const auto& p = std::get<Polygon>(r.shape);
    const std::size_t m = p.vertices.size();
    std::vector<double> cum(m + 1, 0.0);
    for (std::size_t k = 0; k < m; ++k) cum[k + 1] = cum[k] + (p.vertices[(k + 1) % m] - p.vertices[k]).norm();
    for (int j = 0; j < n; ++j) {
      const double u = unif(rng) * cum[m];
      const auto it = std::upper_bound(cum.begin(), cum.end(), u);
      const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(it - cum.begin()) - 1, m - 1);
      const Vec2& a = p.vertices[k];
      const Vec2 e = p.vertices[(k + 1) % m] - a;
      const double t = std::clamp((u - cum[k]) / (cum[k + 1] - cum[k]), 0.0, 1.0);
      s.points.col(j) = a + t * e;
      s.normals.col(j) = sign * edge_normal(p, k);
    }
  }
  return s;
}

Eigen::VectorXd sample_times(int n, double horizon, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_times: n must be >= 1");
  if (!(horizon > 0)) throw std::invalid_argument("sample_times: horizon must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, horizon);
  Eigen::VectorXd t(n);
  for (int i = 0; i < n; ++i) t(i) = unif(rng);
  return t;
}

double estimate_min_distance(const Domain& d, std::size_t region, std::span<const std::size_t> others, int n_probe,
                             std::uint64_t seed) {
  if (n_probe < 1) throw std::invalid_argument("estimate_min_distance: n_probe must be >= 1");
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t o : others) {
    if (o == region) continue;
    const auto s = sample_boundary(d.regions[o], n_probe, mix_seed(seed, o));
    for (Eigen::Index j = 0; j < s.points.cols(); ++j) {
      const Eigen::VectorXd p = s.points.col(j);
      best = std::min(best, region_distance<double>(d.regions[region], as_span(p)));
    }
  }
  return best;
}

double estimate_min_offregion_distance(const Domain& d, std::size_t region, int n_probe, std::uint64_t seed) {
  std::vector<std::size_t> others;
  for (std::size_t i = 0; i < d.regions.size(); ++i) {
    if (i != region) others.push_back(i);
  }
  return estimate_min_distance(d, region, others, n_probe, seed);
}

Polygon parse_polygon(const std::string& text) {
  Polygon p;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  bool title_allowed = true;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    double x = 0, y = 0;
    std::string rest;
    if (!(ls >> x >> y) || (ls >> rest)) {
      if (title_allowed) {
        title_allowed = false;
        continue;
      }
      throw std::invalid_argument("polygon file line " + std::to_string(lineno) + ": expected two numbers");
    }
    title_allowed = false;
    p.vertices.emplace_back(x, y);
  }
  if (p.vertices.size() > 1 && (p.vertices.front() - p.vertices.back()).norm() == 0.0) p.vertices.pop_back();
  validate(Shape{p});
  return p;
}

Polygon load_polygon(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read polygon file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_polygon(ss.str());
}

Polygon naca_symmetric(double thickness, int points_per_side) {
  if (points_per_side < 3) throw std::invalid_argument("naca: need at least 3 points per side");
  if (!(thickness > 0 && thickness < 1)) throw std::invalid_argument("naca: thickness must be in (0,1)");
  const auto half = [&](double x) {
    return 5.0 * thickness *
           (0.2969 * std::sqrt(x) - 0.1260 * x - 0.3516 * x * x + 0.2843 * x * x * x - 0.1036 * x * x * x * x);
  };
  const int n = points_per_side;
  Polygon p;
  // Upper surface from the trailing edge to the leading edge, then the lower one back.
  for (int i = n; i >= 0; --i) {
    const double x = 0.5 * (1.0 - std::cos(std::numbers::pi * i / n));
    p.vertices.emplace_back(x, i == n ? 0.0 : half(x));
  }
  for (int i = 1; i < n; ++i) {
    const double x = 0.5 * (1.0 - std::cos(std::numbers::pi * i / n));
    p.vertices.emplace_back(x, -half(x));
  }
  validate(Shape{p});
  return p;
}

}  // namespace hardpinn::geo
