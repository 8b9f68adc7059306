#include "hardpinn/runner.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

namespace hardpinn::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

fs::path resolve_output_dir(const RunConfig& c) {
  if (const char* env = std::getenv("HARDPINN_OUTPUT_DIR"); env != nullptr && *env != '\0') return env;
  return c.output_dir;
}

namespace {

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

json loss_json(const train::LossBreakdown& l) {
  json groups = json::object();
  for (const auto& [name, v] : l.groups) groups[name] = v;
  return {{"total", l.total}, {"pde", l.pde}, {"equilibrium", l.equilibrium}, {"bc", l.bc}, {"ic", l.ic},
          {"groups", groups}};
}

json checkpoint_json(const ansatz::Ansatz& a, const RunConfig& c) {
  json nets = json::array();
  const auto& sub = a.subnet_of();
  for (std::size_t n = 0; n < a.networks().size(); ++n) {
    std::uint64_t seed = c.seed;
    for (std::size_t i = 0; i < sub.size(); ++i) {
      if (sub[i] == static_cast<int>(n)) seed = geo::mix_seed(c.seed, i + 1);
    }
    nets.push_back(nn::to_json(a.networks()[n], seed));
  }
  return {{"problem", c.problem.name}, {"mode", ansatz::to_string(a.options().mode)}, {"seed", c.seed},
          {"config", to_json(c)}, {"networks", nets}};
}

json metrics_json(const problems::Metrics& m) {
  json slices = json::object();
  for (const auto& s : m.slices) {
    json fields = json::object();
    for (std::size_t f = 0; f < s.fields.size(); ++f) {
      fields[m.field_names[f]] = {{"mae", s.fields[f].mae}, {"mape", s.fields[f].mape}, {"wmape", s.fields[f].wmape}};
    }
    slices[s.slice] = fields;
  }
  return slices;
}

const problems::SliceMetrics& headline_slice(const problems::Metrics& m) {
  for (const auto& s : m.slices) {
    if (s.slice == "all" || s.slice == "average") return s;
  }
  return m.slices.back();
}

RunOutcome run_impl(const RunConfig& c, const fs::path& dir, std::ostream* log, bool ablation_arm) {
  auto problem = make_problem(c.problem);
  auto options = c.ansatz_options();
  options.second_order = ablation_arm && c.mode == ansatz::Mode::soft && needs_second_derivatives(problem);
  ansatz::Ansatz model(problem, options);
  train::Objective objective(model, train::sample_training_data(model, c.sample_sizes(), c.seed));

  fs::create_directories(dir);
  if (c.checkpoint_every > 0) fs::create_directories(dir / "checkpoints");
  std::ostringstream metrics, timing;
  timing << "iteration,wall_ms\n";
  bool header = false;
  const int total_iters = c.adam_iters + c.lbfgs_iters;
  const int log_every = std::max(1, total_iters / 10);

  const auto schedule = c.schedule();
  const auto result = train::train(objective, schedule, [&](const train::IterationRecord& r) {
    if (!header) {
      metrics << "iteration,phase,lr,total";
      for (const auto& [name, _] : r.loss.groups) metrics << ',' << name;
      metrics << ",bc,ic,mean_abs_grad,movvar\n";
      header = true;
    }
    metrics << r.iteration << ',' << r.phase << ',' << format_double(r.lr) << ',' << format_double(r.loss.total);
    for (const auto& [_, v] : r.loss.groups) metrics << ',' << format_double(v);
    metrics << ',' << format_double(r.loss.bc) << ',' << format_double(r.loss.ic) << ','
            << format_double(r.mean_abs_grad) << ',';
    if (r.movvar) metrics << format_double(*r.movvar);
    metrics << '\n';
    char ms[32];
    std::snprintf(ms, sizeof ms, "%.3f", r.wall_ms);
    timing << r.iteration << ',' << ms << '\n';
    if (c.checkpoint_every > 0 && (r.iteration + 1) % c.checkpoint_every == 0) {
      write_file(dir / "checkpoints" / ("iter_" + std::to_string(r.iteration + 1) + ".json"),
                 checkpoint_json(model, c).dump(1) + "\n");
    }
    if (log != nullptr && (r.iteration % log_every == 0 || r.iteration + 1 == total_iters)) {
      *log << "  [" << r.phase << "] iter " << r.iteration << "  loss " << r.loss.total << "  lr " << r.lr << '\n';
    }
  });
  write_file(dir / "metrics.csv", metrics.str());
  write_file(dir / "timing.csv", timing.str());
  write_file(dir / "checkpoint.json", checkpoint_json(model, c).dump(1) + "\n");

  RunOutcome out;
  out.dir = dir;
  out.result = result;
  out.alpha = model.alpha();
  out.parameters = model.parameters();

  problems::ExactFn truth = problem.exact;
  if (c.problem.reference) {
    const int coords = problem.dim() + (problem.time_dependent() ? 1 : 0);
    truth = problems::load_reference(*c.problem.reference, coords).as_exact();
  }
  if (truth) {
    out.metrics = problems::evaluate_metrics(
        problem, [&](const Eigen::MatrixXd& xt) { return model.predict(xt); }, truth, c.n_test, c.test_seed);
  }
  if (options.mode == ansatz::Mode::hard && !model.constraints().empty()) {
    out.boundary = model.boundary_report(c.n_test, c.test_seed);
  }

  json summary;
  summary["problem"] = problem.name;
  summary["mode"] = ansatz::to_string(options.mode);
  summary["seed"] = c.seed;
  summary["parameters"] = model.parameter_count();
  summary["adam_iters"] = result.adam_iters;
  summary["lbfgs_iters"] = result.lbfgs_iters;
  summary["lbfgs_stop"] = result.lbfgs_stop ? json(train::to_string(*result.lbfgs_stop)) : json(nullptr);
  summary["final_loss"] = loss_json(result.final_loss);
  summary["grad_cv"] = result.stats.coefficient_of_variation();
  summary["alpha"] = model.alpha();
  if (out.metrics) summary["metrics"] = metrics_json(*out.metrics);
  if (!out.boundary.empty()) {
    json b = json::array();
    for (const auto& r : out.boundary) {
      b.push_back({{"label", r.label}, {"max_residual", r.max_residual}, {"bound", r.bound}});
    }
    summary["boundary"] = b;
  }
  write_file(dir / "summary.json", summary.dump(2) + "\n");
  return out;
}

}  // namespace

RunOutcome run(const RunConfig& c, const fs::path& dir, std::ostream* log) {
  validate(c);
  return run_impl(c, dir, log, false);
}

AblationOutcome ablate(const RunConfig& c, const fs::path& dir, std::ostream* log) {
  validate(c, true);
  AblationOutcome out;
  RunConfig arm = c;
  arm.mode = c.ablate_original;
  if (log != nullptr) *log << "arm original (" << ansatz::to_string(arm.mode) << ")\n";
  out.original = run_impl(arm, dir / "original", log, true);
  arm.mode = c.ablate_extra;
  if (log != nullptr) *log << "arm extra (" << ansatz::to_string(arm.mode) << ")\n";
  out.extra = run_impl(arm, dir / "extra", log, true);

  const auto& a = out.original.result.stats.mean_abs_grad;
  const auto& b = out.extra.result.stats.mean_abs_grad;
  if (a.size() != b.size()) {
    throw std::runtime_error("ablation arms ran " + std::to_string(a.size()) + " and " + std::to_string(b.size()) +
                             " iterations");
  }
  out.warmup = train::ratio_warmup(c.stats_window);
  out.ratio = train::movvar_ratio(a, b, c.stats_window);
  out.cv_original = out.original.result.stats.coefficient_of_variation();
  out.cv_extra = out.extra.result.stats.coefficient_of_variation();

  std::ostringstream csv;
  csv << "iteration,ratio\n";
  int defined = 0, above = 0;
  for (std::size_t k = 0; k < out.ratio.size(); ++k) {
    csv << out.warmup + static_cast<int>(k) << ',';
    if (out.ratio[k]) {
      csv << format_double(*out.ratio[k]);
      ++defined;
      above += *out.ratio[k] > 1.0;
    }
    csv << '\n';
  }
  out.fraction_above_one = defined > 0 ? static_cast<double>(above) / defined : 0.0;
  write_file(dir / "ratio.csv", csv.str());
  json summary{{"original_mode", ansatz::to_string(c.ablate_original)},
               {"extra_mode", ansatz::to_string(c.ablate_extra)},
               {"window", c.stats_window},
               {"warmup", out.warmup},
               {"samples", out.ratio.size()},
               {"defined", defined},
               {"fraction_above_one", out.fraction_above_one},
               {"cv_original", out.cv_original},
               {"cv_extra", out.cv_extra}};
  write_file(dir / "ablation.json", summary.dump(2) + "\n");
  return out;
}

std::vector<SweepRow> sweep(const RunConfig& c, const std::vector<double>& beta_s, const std::vector<double>& beta_t,
                            const fs::path& dir, std::ostream* log) {
  if (beta_s.empty() || beta_t.empty()) throw ConfigError("sweep: the beta_s and beta_t lists must be non-empty");
  for (double b : beta_s) {
    if (!(b > 0.0)) throw ConfigError("sweep: beta_s values must be positive");
  }
  for (double b : beta_t) {
    if (!(b > 0.0)) throw ConfigError("sweep: beta_t values must be positive");
  }
  validate(c);
  std::vector<SweepRow> rows;
  std::ostringstream csv;
  bool header = false;
  for (std::size_t i = 0; i < beta_s.size(); ++i) {
    for (std::size_t j = 0; j < beta_t.size(); ++j) {
      RunConfig cell = c;
      cell.beta_s = beta_s[i];
      cell.beta_t = beta_t[j];
      if (log != nullptr) *log << "cell beta_s=" << beta_s[i] << " beta_t=" << beta_t[j] << '\n';
      SweepRow row{beta_s[i], beta_t[j],
                   run_impl(cell, dir / ("cell_" + std::to_string(i) + "_" + std::to_string(j)), log, false)};
      const auto& o = row.outcome;
      if (!header) {
        csv << "beta_s,beta_t,final_loss";
        if (o.metrics) {
          for (const auto& f : o.metrics->field_names) csv << ',' << f << "_mae," << f << "_mape," << f << "_wmape";
        }
        csv << ",max_boundary_residual\n";
        header = true;
      }
      csv << format_double(row.beta_s) << ',' << format_double(row.beta_t) << ','
          << format_double(o.result.final_loss.total);
      if (o.metrics) {
        for (const auto& e : headline_slice(*o.metrics).fields) {
          csv << ',' << format_double(e.mae) << ',' << format_double(e.mape) << ',' << format_double(e.wmape);
        }
      }
      double worst = 0.0;
      for (const auto& b : o.boundary) worst = std::max(worst, b.max_residual);
      csv << ',' << (o.boundary.empty() ? std::string() : format_double(worst)) << '\n';
      rows.push_back(std::move(row));
    }
  }
  write_file(dir / "sweep.csv", csv.str());
  return rows;
}

std::vector<double> load_parameters(const fs::path& checkpoint) {
  std::ifstream in(checkpoint);
  if (!in) throw std::runtime_error("cannot open " + checkpoint.string());
  const json j = json::parse(in);
  std::vector<double> theta;
  for (const auto& net : j.at("networks")) {
    const auto p = nn::params_from_json(net);
    theta.insert(theta.end(), p.flat().begin(), p.flat().end());
  }
  return theta;
}

}  // namespace hardpinn::cli
