#pragma once

#include "hardpinn/config.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

namespace hardpinn::cli {

/// Output directory of a run: $HARDPINN_OUTPUT_DIR when set, else the config's.
std::filesystem::path resolve_output_dir(const RunConfig& c);

struct RunOutcome {
  std::filesystem::path dir;
  train::TrainResult result;
  std::optional<problems::Metrics> metrics;
  std::vector<ansatz::ConstraintReport> boundary;  // hard mode only
  std::vector<double> alpha;
  std::vector<double> parameters;
};

/// Trains one configuration and writes into `dir`:
///   metrics.csv   per-iteration losses, mean |grad L_F| and MovVar
///   timing.csv    per-iteration wall-clock milliseconds
///   checkpoint.json, checkpoints/iter_<k>.json
///   summary.json  final losses, error tables, boundary residuals
RunOutcome run(const RunConfig& c, const std::filesystem::path& dir, std::ostream* log = nullptr);

struct AblationOutcome {
  RunOutcome original, extra;
  std::vector<std::optional<double>> ratio;  // from iteration ratio_warmup(window)
  int warmup = 0;
  double fraction_above_one = 0.0;           // over the defined samples
  double cv_original = 0.0, cv_extra = 0.0;
};

/// Trains both ablation arms into dir/original and dir/extra and writes
/// ratio.csv and ablation.json.
AblationOutcome ablate(const RunConfig& c, const std::filesystem::path& dir, std::ostream* log = nullptr);

struct SweepRow {
  double beta_s = 0.0, beta_t = 0.0;
  RunOutcome outcome;
};

/// One run per (beta_s, beta_t) cell, all with the config's seed, into
/// dir/cell_<i>_<j>; writes sweep.csv.
std::vector<SweepRow> sweep(const RunConfig& c, const std::vector<double>& beta_s, const std::vector<double>& beta_t,
                            const std::filesystem::path& dir, std::ostream* log = nullptr);

/// Network parameters of a checkpoint written by `run`, in ansatz order.
std::vector<double> load_parameters(const std::filesystem::path& checkpoint);

std::string format_double(double x);

}  // namespace hardpinn::cli
