#pragma once

#include "hardpinn/ansatz.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <limits>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hardpinn::train {

struct LossBreakdown {
  double pde = 0.0;          // mean over collocation points of the squared PDE residuals
  double equilibrium = 0.0;  // mean of |p_j - grad u_j|^2
  double bc = 0.0;           // soft modes: boundary and periodic groups
  double ic = 0.0;           // soft modes: initial condition group
  double total = 0.0;
  std::vector<std::pair<std::string, double>> groups;

  double physics() const { return pde + equilibrium; }
};

struct SampleSizes {
  int n_f = 1000;
  int n_b = 0;  // per boundary region (soft modes)
  int n_i = 0;  // initial points (soft modes)
};

/// Fixed training points with everything that does not depend on the
/// parameters evaluated up front.
struct TrainingData {
  ansatz::PointSet collocation;
  struct BoundaryBatch {
    std::string label;
    int field = 0;
    std::vector<int> fields;  // slip conditions
    ansatz::PointSet points;
    Eigen::MatrixXd normals;
    Eigen::VectorXd a, b, g;
  };
  std::vector<BoundaryBatch> boundary;
  std::optional<ansatz::PointSet> initial;
  Eigen::MatrixXd initial_values;  // fields x N_i
  std::optional<ansatz::PointSet> periodic_first, periodic_second;
};

TrainingData sample_training_data(const ansatz::Ansatz& a, const SampleSizes& sizes, std::uint64_t seed);

/// Full-batch loss and gradients. Hard mode uses only the PDE and
/// equilibrium sums; the soft modes add one group per boundary condition,
/// the initial condition and the periodic pair.
class Objective {
 public:
  Objective(ansatz::Ansatz& model, TrainingData data);

  /// Loss at `theta`. `grad` receives the gradient of the total and
  /// `grad_physics`, when non-empty, that of the PDE and equilibrium part.
  LossBreakdown evaluate(std::span<const double> theta, std::span<double> grad,
                         std::span<double> grad_physics = {});

  ansatz::Ansatz& model() { return model_; }
  const TrainingData& data() const { return data_; }
  std::size_t size() const { return model_.parameter_count(); }

 private:
  ansatz::Ansatz& model_;
  TrainingData data_;
  ad::Tape tape_;
  std::vector<double> adjoints_;
};

// ---------------------------------------------------------------------------
// Optimizers

struct Adam {
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<double> m, v;
  long step_count = 0;

  void step(std::span<double> theta, std::span<const double> grad);
};

/// Reduce-on-plateau schedule in "min" mode with a relative threshold.
struct Plateau {
  double factor = 0.5;
  int patience = 100;
  double threshold = 1e-4;
  double min_lr = 1e-6;
  double best = std::numeric_limits<double>::infinity();
  int bad_steps = 0;

  /// Returns the learning rate to use after observing `loss`.
  double update(double loss, double lr);
};

struct LbfgsOptions {
  int max_iters = 500;
  int memory = 50;
  double grad_tol = 1e-9;
  double rel_tol = 1e-12;
  bool strong_wolfe = false;
  int max_line_search = 40;
};

enum class LbfgsStop { gradient, relative_change, max_iters, line_search };
std::string to_string(LbfgsStop s);

struct LbfgsResult {
  int iterations = 0;
  LbfgsStop reason = LbfgsStop::max_iters;
  double value = 0.0;
};

/// f(theta, grad) returns the value and writes the gradient.
using ValueGrad = std::function<double(std::span<const double>, std::span<double>)>;

/// Two-loop L-BFGS with a backtracking Armijo (or strong Wolfe) line search.
/// `on_iteration(k, value)` runs after each accepted step.
LbfgsResult lbfgs(const ValueGrad& f, std::span<double> theta, const LbfgsOptions& options,
                  const std::function<void(int, double)>& on_iteration = {});

/// Thrown when a gradient or loss is not finite.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Gradient statistics

/// Population variance of the last `window` samples.
class MovingVariance {
 public:
  explicit MovingVariance(int window = 500);
  std::optional<double> push(double x);

 private:
  int window_;
  std::vector<double> ring_;
  std::size_t count_ = 0;
};

class MovingAverage {
 public:
  explicit MovingAverage(int window = 500);
  std::optional<double> push(double x);

 private:
  int window_;
  std::vector<double> ring_;
  std::size_t count_ = 0;
};

struct GradStats {
  explicit GradStats(int window = 500) : movvar(window), window(window) {}
  std::vector<double> mean_abs_grad;
  std::vector<std::optional<double>> movvar_series;
  MovingVariance movvar;
  int window;

  std::optional<double> record(double mean_abs);
  double coefficient_of_variation() const;
};

/// First index with a defined ratio: 2 (window - 1).
int ratio_warmup(int window = 500);

/// MovVar of each stream, smoothed by a moving average of the same window,
/// then original / extra-fields. Entries before the warmup are absent;
/// a vanishing smoothed variance yields nullopt (the sentinel).
std::vector<std::optional<double>> movvar_ratio(std::span<const double> original, std::span<const double> extra,
                                                int window = 500);

// ---------------------------------------------------------------------------
// Training schedule

struct Schedule {
  int adam_iters = 1000;
  double lr = 1e-3;
  bool plateau = true;
  Plateau scheduler;
  LbfgsOptions lbfgs;
  bool use_lbfgs = false;
  int stats_window = 500;
};

struct IterationRecord {
  int iteration = 0;
  std::string phase;  // adam | lbfgs
  double lr = 0.0;
  LossBreakdown loss;
  double mean_abs_grad = 0.0;
  std::optional<double> movvar;
  double wall_ms = 0.0;
};

struct TrainResult {
  int adam_iters = 0;
  int lbfgs_iters = 0;
  std::optional<LbfgsStop> lbfgs_stop;
  LossBreakdown final_loss;
  GradStats stats;
};

/// Adam (with optional plateau schedule) followed by optional L-BFGS. The
/// callback sees one record per iteration; the model ends at the last
/// accepted parameters.
TrainResult train(Objective& objective, const Schedule& schedule,
                  const std::function<void(const IterationRecord&)>& on_iteration = {});

double mean_abs(std::span<const double> v);

}  // namespace hardpinn::train
