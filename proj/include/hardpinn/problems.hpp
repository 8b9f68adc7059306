#pragma once

#include "hardpinn/autodiff.hpp"
#include "hardpinn/boundary.hpp"
#include "hardpinn/geometry.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hardpinn::problems {

using ad::Var;

struct Field {
  std::string name;
  bool extra = true;  // carries p = grad u as separate components
};

/// Component layout of one network output: per field u_j, followed by the
/// d components of p_j when the field carries extra fields.
struct Layout {
  int dim = 1;
  bool time = false;
  std::vector<bool> extra;

  int directions() const { return dim + (time ? 1 : 0); }
  int fields() const { return static_cast<int>(extra.size()); }
  int offset(int field) const;
  int width() const;
  int extra_offset(int field) const { return offset(field) + 1; }
};

/// Values and input derivatives of every component at one point, as tape
/// variables. `first` is component-major with `directions()` entries per
/// component; `second` holds diagonal second derivatives or is empty.
struct PointFields {
  const Layout* layout = nullptr;
  std::span<const double> x;
  double t = 0.0;
  std::span<const Var> value;
  std::span<const Var> first;
  std::span<const Var> second;

  Var component(int c) const { return value[static_cast<std::size_t>(c)]; }
  Var derivative(int c, int k) const;
  Var second_derivative(int c, int k) const;

  Var u(int j) const { return component(layout->offset(j)); }
  /// k-th input derivative of u_j (time is direction dim).
  Var du(int j, int k) const { return derivative(layout->offset(j), k); }
  Var dt(int j) const { return du(j, layout->dim); }
  /// p_jm when extra, else du_j/dx_m.
  Var grad(int j, int m) const;
  /// Laplacian of u_j: div p_j when extra, else the second derivatives.
  Var laplacian(int j) const;
  /// d p_jm / dx_k (extra fields only).
  Var dp(int j, int m, int k) const;
};

using ResidualFn = std::function<void(const PointFields&, std::vector<Var>& out)>;
using ExactFn = std::function<double(int field, std::span<const double> xt)>;

struct InitialCondition {
  int field = 0;
  bc::ParamFn f;  // of the spatial coordinates only
};

/// n . (u_{fields[0]}, u_{fields[1]}, ...) = g on a region.
struct SlipCondition {
  std::string region;
  std::vector<int> fields;
  bc::ParamFn g;
};

/// Values and first derivatives equal between two regions at matching times.
struct PeriodicPair {
  std::string first, second;
};

struct ProblemSpec {
  std::string name;
  geo::Domain domain;
  std::optional<double> horizon;
  std::vector<Field> fields;
  std::vector<bc::BoundaryCondition> bcs;
  std::vector<SlipCondition> slips;
  std::vector<InitialCondition> ics;
  std::optional<PeriodicPair> periodic;
  int n_residuals = 1;
  ResidualFn residual;
  ExactFn exact;
  std::map<std::string, double> constants;

  int dim() const { return domain.dim(); }
  bool time_dependent() const { return horizon.has_value(); }
  Layout layout(bool extra_fields = true) const;
  void validate() const;
};

struct BuiltinOptions {
  int dim = 10;                          // highdim_heat
  std::optional<std::string> polygon;    // airfoil_ns; NACA 0012 otherwise
};

ProblemSpec builtin(const std::string& name, const BuiltinOptions& options = {});
std::vector<std::string> builtin_names();

ProblemSpec poisson1d(double a = 2.0);
ProblemSpec battery_pack();
ProblemSpec airfoil_ns(const geo::Polygon& airfoil);
ProblemSpec highdim_heat(int d);
ProblemSpec schrodinger();
ProblemSpec robin_annulus();

// ---------------------------------------------------------------------------
// Metrics

struct ErrorStats {
  double mae = 0.0, mape = 0.0, wmape = 0.0;
};

struct SliceMetrics {
  std::string slice;                 // "all", "t=0", "t=0.5", "t=1", "average"
  std::vector<ErrorStats> fields;    // per field
};

struct Metrics {
  std::vector<std::string> field_names;
  std::vector<SliceMetrics> slices;
};

ErrorStats error_stats(std::span<const double> predicted, std::span<const double> truth);

/// Predicts every field (rows) at the columns of `xt`.
using Predictor = std::function<Eigen::MatrixXd(const Eigen::MatrixXd& xt)>;

/// Metrics on `n_test` spatial points. Time-dependent problems are evaluated
/// on the slices t = 0, T/2, T and on uniformly random times ("average").
Metrics evaluate_metrics(const ProblemSpec& problem, const Predictor& predict, const ExactFn& truth,
                         int n_test, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Reference tables

/// CSV with header x1..xd[,t] followed by one column per field.
struct ReferenceTable {
  std::vector<std::string> coordinate_names;
  std::vector<std::string> field_names;
  Eigen::MatrixXd coordinates;  // one column per row of the file
  Eigen::MatrixXd values;       // fields x rows

  /// Value at a stored point, else at the nearest stored point.
  double lookup(int field, std::span<const double> xt) const;
  std::optional<double> exact(int field, std::span<const double> xt) const;
  std::size_t nearest(std::span<const double> xt) const;
  ExactFn as_exact() const;
};

ReferenceTable load_reference(const std::filesystem::path& path, int coordinates);
ReferenceTable parse_reference(const std::string& text, int coordinates);
void save_reference(const std::filesystem::path& path, const ReferenceTable& table);

}  // namespace hardpinn::problems
