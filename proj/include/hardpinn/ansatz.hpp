#pragma once

#include "hardpinn/autodiff.hpp"
#include "hardpinn/boundary.hpp"
#include "hardpinn/network.hpp"
#include "hardpinn/problems.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace hardpinn::ansatz {

using ad::DualD;
using ad::DualV;
using ad::Var;

enum class Mode { hard, soft, soft_extra };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

/// Linear condition n~ . v = g~ on a group of output components, with n~ of
/// unit length. Built from a boundary condition (components u_j and p_j) or
/// a slip condition (the velocity fields). Components whose coefficient
/// vanishes on the whole region are left out of the group.
struct Constraint {
  std::string label;
  std::size_t region = 0;
  std::vector<int> components;
  std::function<bc::Normalized<DualD>(std::span<const DualD> xt, std::span<const DualD> normal)> data;
};

std::vector<Constraint> build_constraints(const problems::ProblemSpec& problem, const problems::Layout& layout,
                                          std::uint64_t seed);

struct Options {
  Mode mode = Mode::hard;
  double beta_s = 5.0;
  double beta_t = 10.0;
  double distance_beta = 4.0;  // sharpness of the soft-min composing distances
  int n_probe = 4096;          // samples per region for the hardness estimate
  std::vector<int> main_hidden{50, 50, 50, 50};
  std::vector<int> sub_hidden{20, 20, 20};
  bool second_order = false;   // plain soft mode only
  std::uint64_t seed = 0;
};

/// Constants of the hard-constraint ansatz at one point: everything except
/// the network outputs, with input derivatives.
struct PointConstants {
  std::vector<DualD> distance;   // l_s per component (constant 1 when unconstrained)
  std::vector<DualD> weight;     // exp(-alpha_i l_i) per constraint
  std::vector<std::vector<DualD>> normal;  // n~ per constraint, over its group
  std::vector<DualD> target;     // g~ per constraint
  DualD decay;                   // exp(-beta_t t)
  std::vector<DualD> initial;    // f_j per field (time-dependent only)
};

struct PointSet {
  Eigen::MatrixXd xt;  // (d [+1]) x N
  std::vector<PointConstants> constants;
  int size() const { return static_cast<int>(xt.cols()); }
};

/// Tape record of the components at a point set, plus what is needed to
/// pull adjoints back into the networks.
struct Recording {
  int points = 0;
  std::vector<Var> value, first, second;  // point-major
  std::vector<nn::MlpTrace> traces;
  std::vector<nn::BatchJet> jets;
  std::vector<std::int32_t> leaf_base;
};

struct ConstraintReport {
  std::string label;
  double max_residual = 0.0;     // max |n~ . v - g~| over the samples
  double other_bound = 0.0;      // sum over overlapping constraints of max |p~_k|
  double bound = 0.0;            // exp(-beta_s) * other_bound
};

class Ansatz {
 public:
  Ansatz(problems::ProblemSpec problem, Options options);

  const problems::ProblemSpec& problem() const { return problem_; }
  const Options& options() const { return options_; }
  const problems::Layout& layout() const { return layout_; }
  const std::vector<Constraint>& constraints() const { return constraints_; }
  const std::vector<double>& alpha() const { return alpha_; }
  /// Region minimum distances behind alpha (infinite without overlap).
  const std::vector<double>& min_distance() const { return min_distance_; }
  int order() const { return order_; }
  int directions() const { return layout_.directions(); }

  const std::vector<nn::MlpParams>& networks() const { return nets_; }
  std::vector<nn::MlpParams>& networks() { return nets_; }
  /// Index of the sub-network of each constraint, -1 when its null space is trivial.
  const std::vector<int>& subnet_of() const { return subnet_of_; }

  std::size_t parameter_count() const;
  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> theta);

  PointSet prepare(const Eigen::MatrixXd& xt) const;

  /// Components with first input derivatives at every point. With
  /// `spatial_only` the time blend with the initial condition is skipped.
  std::vector<std::vector<DualD>> evaluate(const PointSet& points, bool spatial_only = false) const;

  /// Field values (rows) at the columns of `xt`.
  Eigen::MatrixXd predict(const Eigen::MatrixXd& xt) const;

  /// Records the components at `points` onto the active tape.
  Recording record(const PointSet& points) const;
  /// Adds to `grad` the parameter gradient given tape adjoints.
  void backward(const Recording& rec, std::span<const double> adjoints, std::span<double> grad) const;

  /// Residual of every constraint at `n` boundary points of its region
  /// (spatial assembly, random times).
  std::vector<ConstraintReport> boundary_report(int n, std::uint64_t seed) const;

 private:
  template <class V>
  void assemble(const PointConstants& c, std::span<const V> main, const std::vector<std::vector<V>>& sub,
                bool blend, std::vector<V>& out) const;
  PointConstants point_constants(std::span<const double> xt) const;
  std::vector<std::vector<DualD>> general_solutions(const PointSet& points) const;

  problems::ProblemSpec problem_;
  Options options_;
  problems::Layout layout_;
  int order_ = 1;
  std::vector<Constraint> constraints_;
  std::vector<double> alpha_, min_distance_;
  std::vector<std::vector<std::size_t>> component_regions_;
  std::vector<nn::MlpParams> nets_;
  std::vector<int> subnet_of_;
};

}  // namespace hardpinn::ansatz
