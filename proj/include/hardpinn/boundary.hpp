#pragma once

#include "hardpinn/autodiff.hpp"

#include <Eigen/Core>

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace hardpinn::bc {

using ad::DualD;

/// Scalar function of (x[, t]). The time coordinate, when present, is last.
/// Evaluated on duals so that interior extensions carry their gradients.
using ParamFn = std::function<DualD(std::span<const DualD> xt)>;

ParamFn constant(double c);
double eval(const ParamFn& f, std::span<const double> xt);

/// a u_j + b (n . grad u_j) = g on the region.
struct BoundaryCondition {
  std::string region;
  int field = 0;
  ParamFn a, b, g;

  static BoundaryCondition dirichlet(std::string region, int field, ParamFn g);
  static BoundaryCondition neumann(std::string region, int field, ParamFn g);
  static BoundaryCondition robin(std::string region, int field, ParamFn a, ParamFn b, ParamFn g);
  static BoundaryCondition robin(std::string region, int field, double a, double b, double g);
};

template <class T>
struct Normalized {
  std::vector<T> n;  // (a, b n) / sqrt(a^2 + b^2)
  T g;               // g / sqrt(a^2 + b^2)
};

template <class T>
Normalized<T> normalize(const T& a, const T& b, const T& g, std::span<const T> normal) {
  using std::sqrt;
  const double av = ad::value_of(a), bv = ad::value_of(b);
  if (av == 0.0 && bv == 0.0) throw std::invalid_argument("normalize: a and b vanish simultaneously");
  const T inv = 1.0 / sqrt(a * a + b * b);
  Normalized<T> r;
  r.n.reserve(normal.size() + 1);
  r.n.push_back(a * inv);
  const T bs = b * inv;
  for (const auto& c : normal) r.n.push_back(bs * c);
  r.g = g * inv;
  return r;
}

Normalized<DualD> normalize(const BoundaryCondition& bc, std::span<const DualD> xt, std::span<const DualD> normal);
Normalized<double> normalize(const BoundaryCondition& bc, std::span<const double> xt, std::span<const double> normal);

/// I - n n^T. Requires |n| = 1 within 1e-10.
Eigen::MatrixXd householder_basis(const Eigen::VectorXd& n);
/// Three cross-product columns for d = 2 (rank 2 for every unit n).
Eigen::MatrixXd cross2d_basis(const Eigen::VectorXd& n);
/// The single column (n2, -n1) for d = 1.
Eigen::MatrixXd perp1d_basis(const Eigen::VectorXd& n);
/// Inadmissible two-column basis for a pure Neumann condition in 3D: it loses
/// rank wherever n1 = 0.
Eigen::MatrixXd counterexample_basis(const Eigen::Vector3d& n);

enum class BasisKind { householder, cross2d, perp1d };
Eigen::MatrixXd null_basis(BasisKind kind, const Eigen::VectorXd& n);

/// B v + n g with B = I - n n^T, evaluated as v - n (n.v - g). `C` is the
/// scalar of the constraint data, `V` that of the network output.
template <class C, class V>
std::vector<V> general_solution(std::span<const C> n, const C& g, std::span<const V> v) {
  if (n.size() != v.size()) throw std::invalid_argument("general_solution: width mismatch");
  V s = n[0] * v[0];
  for (std::size_t k = 1; k < n.size(); ++k) s = s + n[k] * v[k];
  const V excess = s - g;
  std::vector<V> out;
  out.reserve(v.size());
  for (std::size_t k = 0; k < n.size(); ++k) out.push_back(v[k] - n[k] * excess);
  return out;
}

/// B v + n g with an explicit basis matrix.
Eigen::VectorXd general_solution(const Eigen::MatrixXd& basis, const Eigen::VectorXd& n, double g,
                                 const Eigen::VectorXd& v);

// ---------------------------------------------------------------------------
// Extension of tabulated boundary data to the whole domain.

enum class Coordinates { identity, polar };

struct IdwOptions {
  Coordinates coordinates = Coordinates::identity;
  Eigen::VectorXd reference;  // polar origin (2D)
  double power = 2.0;
};

struct ParamSample {
  Eigen::VectorXd x;
  double value = 0.0;
};

/// Inverse-distance-weighted interpolation of the samples, in Cartesian or
/// polar-about-reference coordinates. Exact at the sample points.
ParamFn extend_parameter_fn(std::vector<ParamSample> samples, IdwOptions options = {});

}  // namespace hardpinn::bc
