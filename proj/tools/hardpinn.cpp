#include "hardpinn/runner.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

enum Exit { ok = 0, config_error = 1, runtime_error = 2 };

}  // namespace

int main(int argc, char** argv) {
  using namespace hardpinn;
  CLI::App app{"Hard-constraint PINN solver"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress output");

  std::string config_path;
  auto* run = app.add_subcommand("run", "Train one configuration");
  run->add_option("config", config_path, "Run configuration (JSON)")->required();

  auto* ablate = app.add_subcommand("ablate", "Extra-fields ablation: MovVar ratio of the two soft arms");
  ablate->add_option("config", config_path, "Run configuration (JSON)")->required();

  std::vector<double> beta_s, beta_t;
  auto* sweep = app.add_subcommand("sweep", "Hardness sweep over beta_s x beta_t");
  sweep->add_option("config", config_path, "Run configuration (JSON)")->required();
  sweep->add_option("--beta-s", beta_s, "Spatial hardness values")->expected(1, -1);
  sweep->add_option("--beta-t", beta_t, "Temporal hardness values")->expected(1, -1);

  auto* check = app.add_subcommand("check", "Validate a configuration and print its canonical form");
  check->add_option("config", config_path, "Run configuration (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? ok : config_error;
  }

  std::ostream* log = quiet ? nullptr : &std::cerr;
  try {
    const auto config = cli::load_config(config_path);
    const auto dir = cli::resolve_output_dir(config);
    if (*check) {
      std::cout << cli::serialize(config);
    } else if (*run) {
      const auto out = cli::run(config, dir, log);
      std::cout << "wrote " << out.dir.string() << '\n';
    } else if (*ablate) {
      const auto out = cli::ablate(config, dir, log);
      std::cout << "ratio > 1 for " << out.fraction_above_one * 100.0 << "% of " << out.ratio.size()
                << " samples; wrote " << dir.string() << '\n';
    } else if (*sweep) {
      if (beta_s.empty()) beta_s = {config.beta_s};
      if (beta_t.empty()) beta_t = {config.beta_t};
      const auto rows = cli::sweep(config, beta_s, beta_t, dir, log);
      std::cout << rows.size() << " cells; wrote " << (dir / "sweep.csv").string() << '\n';
    }
  } catch (const cli::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return config_error;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return runtime_error;
  }
  return ok;
}
