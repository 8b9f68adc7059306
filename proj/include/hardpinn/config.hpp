#pragma once

#include "hardpinn/ansatz.hpp"
#include "hardpinn/training.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace hardpinn::cli {

/// Invalid configuration. The message starts with "<source>:<line>:" when
/// the offending entry can be located.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& message, int line = 0);
  int line() const { return line_; }

 private:
  int line_;
};

struct ProblemConfig {
  std::string name = "poisson1d";
  int dim = 10;                          // highdim_heat only
  std::optional<std::string> polygon;    // airfoil_ns only
  std::optional<std::string> reference;  // truth table when there is no closed form

  bool operator==(const ProblemConfig&) const = default;
};

struct RunConfig {
  ProblemConfig problem;
  ansatz::Mode mode = ansatz::Mode::hard;
  std::vector<int> main_hidden{50, 50, 50, 50};
  std::vector<int> sub_hidden{20, 20, 20};

  int n_f = 1000;
  std::optional<int> n_b, n_i;

  double beta_s = 5.0;
  double beta_t = 10.0;
  double distance_beta = 4.0;
  int n_probe = 4096;

  int adam_iters = 5000;
  double lr = 1e-3;
  bool plateau = true;
  double plateau_factor = 0.5;
  int plateau_patience = 100;
  double plateau_threshold = 1e-4;
  double plateau_min_lr = 1e-6;

  int lbfgs_iters = 0;
  int lbfgs_memory = 50;
  double lbfgs_grad_tol = 1e-9;
  double lbfgs_rel_tol = 1e-12;
  bool lbfgs_strong_wolfe = false;

  std::uint64_t seed = 0;
  std::string output_dir = "hardpinn_out";
  int n_test = 1000;
  std::uint64_t test_seed = 12345;
  int checkpoint_every = 0;
  int stats_window = 500;

  ansatz::Mode ablate_original = ansatz::Mode::soft;
  ansatz::Mode ablate_extra = ansatz::Mode::soft_extra;

  bool operator==(const RunConfig&) const = default;

  ansatz::Options ansatz_options() const;
  train::SampleSizes sample_sizes() const;
  train::Schedule schedule() const;
};

/// Parses and validates. `source` names the input in error messages.
RunConfig parse_config(const std::string& text, const std::string& source = "config");
RunConfig load_config(const std::string& path);
nlohmann::json to_json(const RunConfig& c);
std::string serialize(const RunConfig& c);

/// Checks mode against the point counts and the problem; `ablation` checks
/// the two ablation arms instead of `mode`. Throws ConfigError.
void validate(const RunConfig& c, bool ablation = false);

/// The problem named by the configuration.
problems::ProblemSpec make_problem(const ProblemConfig& p);

/// True when the residuals need second input derivatives without extra fields.
bool needs_second_derivatives(const problems::ProblemSpec& p);

}  // namespace hardpinn::cli
