#include "hardpinn/boundary.hpp"

#include <cmath>
#include <numbers>

namespace hardpinn::bc {

ParamFn constant(double c) {
  return [c](std::span<const DualD> xt) { return DualD(c, xt.empty() ? 0 : xt[0].size()); };
}

double eval(const ParamFn& f, std::span<const double> xt) {
  std::vector<DualD> v;
  v.reserve(xt.size());
  for (double x : xt) v.emplace_back(x, std::size_t{0});
  return f(v).value;
}

BoundaryCondition BoundaryCondition::dirichlet(std::string region, int field, ParamFn g) {
  return {std::move(region), field, constant(1.0), constant(0.0), std::move(g)};
}

BoundaryCondition BoundaryCondition::neumann(std::string region, int field, ParamFn g) {
  return {std::move(region), field, constant(0.0), constant(1.0), std::move(g)};
}

BoundaryCondition BoundaryCondition::robin(std::string region, int field, ParamFn a, ParamFn b, ParamFn g) {
  return {std::move(region), field, std::move(a), std::move(b), std::move(g)};
}

BoundaryCondition BoundaryCondition::robin(std::string region, int field, double a, double b, double g) {
  return robin(std::move(region), field, constant(a), constant(b), constant(g));
}

Normalized<DualD> normalize(const BoundaryCondition& bc, std::span<const DualD> xt, std::span<const DualD> normal) {
  return normalize<DualD>(bc.a(xt), bc.b(xt), bc.g(xt), normal);
}

Normalized<double> normalize(const BoundaryCondition& bc, std::span<const double> xt, std::span<const double> normal) {
  return normalize<double>(eval(bc.a, xt), eval(bc.b, xt), eval(bc.g, xt), normal);
}

namespace {
void require_unit(const Eigen::VectorXd& n) {
  if (std::abs(n.norm() - 1.0) > 1e-10) {
    throw std::invalid_argument("null basis: normalised vector has norm " + std::to_string(n.norm()));
  }
}
}  // namespace

Eigen::MatrixXd householder_basis(const Eigen::VectorXd& n) {
  require_unit(n);
  Eigen::MatrixXd b = -n * n.transpose();
  b.diagonal().array() += 1.0;
  return b;
}

Eigen::MatrixXd cross2d_basis(const Eigen::VectorXd& n) {
  if (n.size() != 3) throw std::invalid_argument("cross2d basis needs a 3-vector");
  require_unit(n);
  Eigen::Matrix3d b;
  b.col(0) << 0, n(2), -n(1);
  b.col(1) << -n(2), 0, n(0);
  b.col(2) << n(1), -n(0), 0;
  return b;
}

Eigen::MatrixXd perp1d_basis(const Eigen::VectorXd& n) {
  if (n.size() != 2) throw std::invalid_argument("perp1d basis needs a 2-vector");
  require_unit(n);
  Eigen::MatrixXd b(2, 1);
  b << n(1), -n(0);
  return b;
}

Eigen::MatrixXd counterexample_basis(const Eigen::Vector3d& n) {
  Eigen::MatrixXd b(3, 2);
  b.col(0) << n(1), -n(0), 0;
  b.col(1) << n(2), 0, -n(0);
  return b;
}

Eigen::MatrixXd null_basis(BasisKind kind, const Eigen::VectorXd& n) {
  switch (kind) {
    case BasisKind::householder: return householder_basis(n);
    case BasisKind::cross2d: return cross2d_basis(n);
    case BasisKind::perp1d: return perp1d_basis(n);
  }
  throw std::invalid_argument("unknown basis kind");
}

Eigen::VectorXd general_solution(const Eigen::MatrixXd& basis, const Eigen::VectorXd& n, double g,
                                 const Eigen::VectorXd& v) {
  if (basis.cols() != v.size() || basis.rows() != n.size()) {
    throw std::invalid_argument("general_solution: basis shape mismatch");
  }
  return basis * v + n * g;
}

namespace {

DualD atan2(const DualD& y, const DualD& x) {
  DualD r(std::atan2(y.value, x.value), y.size());
  const double r2 = x.value * x.value + y.value * y.value;
  for (std::size_t k = 0; k < r.size(); ++k) r.d[k] = (x.value * y.d[k] - y.value * x.d[k]) / r2;
  return r;
}

}  // namespace

ParamFn extend_parameter_fn(std::vector<ParamSample> samples, IdwOptions options) {
  if (samples.empty()) throw std::invalid_argument("extend_parameter_fn: no samples");
  const auto dim = samples.front().x.size();
  for (const auto& s : samples) {
    if (s.x.size() != dim) throw std::invalid_argument("extend_parameter_fn: inconsistent sample dimensions");
  }
  const bool polar = options.coordinates == Coordinates::polar;
  if (polar && (dim != 2 || options.reference.size() != 2)) {
    throw std::invalid_argument("extend_parameter_fn: polar coordinates need 2D samples and a 2D reference");
  }
  if (!(options.power > 0)) throw std::invalid_argument("extend_parameter_fn: power must be positive");

  // Sample coordinates in the interpolation space.
  std::vector<Eigen::VectorXd> coords;
  for (const auto& s : samples) {
    if (polar) {
      const Eigen::Vector2d rel = s.x - options.reference;
      coords.push_back(Eigen::Vector2d(rel.norm(), std::atan2(rel.y(), rel.x())));
    } else {
      coords.push_back(s.x);
    }
  }

  return [samples = std::move(samples), coords = std::move(coords), options, polar, dim](std::span<const DualD> xt) {
    if (xt.size() < static_cast<std::size_t>(dim)) throw std::invalid_argument("extended parameter: point too short");
    const std::size_t width = xt[0].size();
    std::vector<DualD> c;
    if (polar) {
      const DualD dx = xt[0] - options.reference(0);
      const DualD dy = xt[1] - options.reference(1);
      const double rho = std::hypot(dx.value, dy.value);
      if (rho == 0.0) throw DomainError("extended parameter: query at the polar reference point");
      c.push_back(sqrt(dx * dx + dy * dy));
      c.push_back(atan2(dy, dx));
    } else {
      c.assign(xt.begin(), xt.begin() + static_cast<std::ptrdiff_t>(dim));
    }
    DualD num(0.0, width), den(0.0, width);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      DualD d2(0.0, width);
      for (std::size_t k = 0; k < c.size(); ++k) {
        DualD diff = c[k] - coords[i](static_cast<Eigen::Index>(k));
        if (polar && k == 1) {
          // Wrap the angular difference into (-pi, pi].
          diff.value = std::remainder(diff.value, 2.0 * std::numbers::pi);
        }
        d2 = d2 + diff * diff;
      }
      if (d2.value == 0.0) return DualD(samples[i].value, width);
      const DualD w = pow(d2, -0.5 * options.power);
      num = num + w * samples[i].value;
      den = den + w;
    }
    return num / den;
  };
}

}  // namespace hardpinn::bc
