#include "hardpinn/runner.hpp"

#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

using namespace hardpinn;
using namespace hardpinn::cli;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("hardpinn_test_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int line_of(const std::string& text) {
  try {
    parse_config(text, "t.json");
  } catch (const ConfigError& e) {
    return e.line();
  }
  return -1;
}

RunConfig tiny_poisson() {
  RunConfig c;
  c.problem.name = "poisson1d";
  c.main_hidden = {8, 8};
  c.n_f = 16;
  c.adam_iters = 30;
  c.lr = 1e-2;
  c.n_test = 32;
  c.stats_window = 5;
  return c;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(HARDPINN_CLI) + " -q " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config defaults and shorthand") {
  const auto c = parse_config(R"({"problem": "poisson1d"})");
  CHECK(c == RunConfig{});
  CHECK(c.mode == ansatz::Mode::hard);
  const auto s = c.schedule();
  CHECK(s.scheduler.factor == 0.5);
  CHECK(s.scheduler.patience == 100);
  CHECK(s.lbfgs.memory == 50);
  CHECK_FALSE(s.use_lbfgs);
}

TEST_CASE("config round trip is the identity") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> I(1, 60);
  std::uniform_real_distribution<double> U(1e-4, 20.0);
  const std::vector<std::string> names{"poisson1d", "highdim_heat", "robin_annulus", "battery_pack"};
  for (int trial = 0; trial < 200; ++trial) {
    RunConfig c;
    c.problem.name = names[static_cast<std::size_t>(trial) % names.size()];
    c.problem.dim = I(rng) % 9 + 1;
    c.mode = trial % 3 == 0 ? ansatz::Mode::hard : ansatz::Mode::soft_extra;
    c.main_hidden.assign(static_cast<std::size_t>(I(rng) % 4 + 1), I(rng));
    c.sub_hidden.assign(static_cast<std::size_t>(I(rng) % 3), I(rng));
    c.n_f = I(rng);
    if (c.mode != ansatz::Mode::hard) {
      c.n_b = I(rng);
      c.n_i = I(rng);
    }
    c.beta_s = U(rng);
    c.beta_t = U(rng);
    c.distance_beta = U(rng);
    c.lr = U(rng) * 1e-3;
    c.plateau = trial % 2 == 0;
    c.plateau_factor = 0.1 + 0.8 * U(rng) / 20.0;
    c.plateau_threshold = U(rng) * 1e-5;
    c.lbfgs_iters = I(rng);
    c.lbfgs_rel_tol = U(rng) * 1e-13;
    c.lbfgs_strong_wolfe = trial % 5 == 0;
    c.seed = rng();
    c.test_seed = rng();
    c.output_dir = "out/run " + std::to_string(trial);
    c.checkpoint_every = I(rng);
    const auto text = serialize(c);
    const auto back = parse_config(text);
    CHECK(back == c);
    CHECK(serialize(back) == text);
  }
}

TEST_CASE("config errors carry line numbers") {
  CHECK(line_of("{\n  \"problem\": \"poisson1d\",\n  \"adam\": {\n    \"lrr\": 1\n  }\n}") == 4);
  CHECK(line_of("{\n  \"problem\": \"poisson1d\",\n  \"points\": {\"n_f\": 4,\n \"n_b\": 2}\n}") == 4);
  CHECK(line_of("{\n\n  \"problem\": \"poisson1d\",\n  \"mode\": \"firm\"\n}") == 4);
  CHECK(line_of("{\n  \"problem\": \"poisson1d\",\n  \"seed\": -3\n}") == 3);
  CHECK(line_of("{\n  \"problem\": \"poisson1d\",\n  \"network\": {\"main_hidden\": [\n 4,\n 0]}\n}") == 5);
  CHECK(line_of("{\n  \"problem\": \"poisson1d\"\n  \"seed\": 1\n}") == 3);
  CHECK(line_of("{\n  \"problem\": {\"name\": \"heat\"}\n}") == 2);
  CHECK(line_of("{\n  \"problem\": \"poisson1d\",\n  \"adam\": {\"plateau\": {\"factor\": 1.5}}\n}") == 3);
  CHECK(line_of("{\"mode\": \"hard\"}") == 1);

  try {
    parse_config("{\n  \"problem\": \"poisson1d\",\n  \"extra\": 1\n}", "cfg.json");
    FAIL("no error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).starts_with("cfg.json:3: unknown key 'extra'"));
  }
}

TEST_CASE("mode and point counts are validated together") {
  CHECK_THROWS_AS(parse_config(R"({"problem": "poisson1d", "points": {"n_i": 3}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"problem": "poisson1d", "mode": "soft_extra_fields"})"), ConfigError);
  CHECK_NOTHROW(parse_config(R"({"problem": "poisson1d", "mode": "soft_extra_fields", "points": {"n_b": 2}})"));
  CHECK_THROWS_AS(parse_config(R"({"problem": "highdim_heat", "mode": "soft_extra_fields", "points": {"n_b": 2}})"),
                  ConfigError);
  CHECK_NOTHROW(parse_config(
      R"({"problem": "highdim_heat", "mode": "soft_extra_fields", "points": {"n_b": 2, "n_i": 4}})"));
  // Second derivatives without extra fields are reserved for the ablation.
  const auto soft = R"({"problem": "poisson1d", "mode": "soft", "points": {"n_b": 2}})";
  CHECK_THROWS_AS(parse_config(soft), ConfigError);
  auto c = parse_config(R"({"problem": "poisson1d", "mode": "soft_extra_fields", "points": {"n_b": 2}})");
  CHECK_NOTHROW(validate(c, true));
  c.n_b.reset();
  CHECK_THROWS_AS(validate(c, true), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"problem": "schrodinger"})"), ConfigError);
  CHECK(needs_second_derivatives(problems::poisson1d()));
  CHECK(needs_second_derivatives(problems::schrodinger()));
}

TEST_CASE("runs are reproducible and write every artifact") {
  auto c = tiny_poisson();
  c.lbfgs_iters = 5;
  c.checkpoint_every = 10;
  const auto d1 = scratch("run1"), d2 = scratch("run2");
  const auto o1 = run(c, d1);
  const auto o2 = run(c, d2);
  for (const char* f : {"metrics.csv", "checkpoint.json", "summary.json", "checkpoints/iter_30.json"}) {
    CAPTURE(f);
    REQUIRE(fs::exists(d1 / f));
    CHECK(slurp(d1 / f) == slurp(d2 / f));
  }
  CHECK(fs::exists(d1 / "timing.csv"));
  CHECK(o1.parameters == o2.parameters);
  CHECK(load_parameters(d1 / "checkpoint.json") == o1.parameters);

  const auto csv = slurp(d1 / "metrics.csv");
  CHECK(csv.starts_with("iteration,phase,lr,total,pde,equilibrium,bc,ic,mean_abs_grad,movvar\n"));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + o1.result.adam_iters + o1.result.lbfgs_iters);
  const auto summary = nlohmann::json::parse(slurp(d1 / "summary.json"));
  CHECK(summary.at("metrics").contains("all"));
  CHECK(summary.at("boundary").size() == 2);
  CHECK(summary.at("final_loss").at("total").get<double>() == o1.result.final_loss.total);

  auto other = c;
  other.seed = 1;
  const auto d3 = scratch("run3");
  run(other, d3);
  CHECK(slurp(d1 / "metrics.csv") != slurp(d3 / "metrics.csv"));
}

TEST_CASE("time-dependent summary has per-slice MAPE") {
  RunConfig c;
  c.problem.name = "highdim_heat";
  c.problem.dim = 2;
  c.main_hidden = {8};
  c.sub_hidden = {4};
  c.n_f = 16;
  c.adam_iters = 3;
  c.n_test = 40;
  c.n_probe = 256;
  const auto d = scratch("heat");
  const auto out = run(c, d);
  const auto s = nlohmann::json::parse(slurp(d / "summary.json"));
  for (const char* slice : {"t=0", "t=0.5", "t=1", "average"}) {
    CAPTURE(slice);
    CHECK(s.at("metrics").at(slice).at("u").contains("mape"));
  }
  // The initial condition is embedded exactly.
  CHECK(s.at("metrics").at("t=0").at("u").at("mape").get<double>() < 1e-12);
}

TEST_CASE("ablation with identical arms has unit ratio") {
  auto c = tiny_poisson();
  c.mode = ansatz::Mode::soft_extra;
  c.n_b = 2;
  c.ablate_original = ansatz::Mode::soft_extra;
  c.ablate_extra = ansatz::Mode::soft_extra;
  const auto d = scratch("ablate_same");
  const auto out = ablate(c, d);
  REQUIRE(out.ratio.size() == static_cast<std::size_t>(30 - 8));
  for (const auto& r : out.ratio) CHECK((r.has_value() && *r == 1.0));
  CHECK(out.fraction_above_one == 0.0);
  CHECK(fs::exists(d / "ratio.csv"));
  CHECK(fs::exists(d / "original" / "metrics.csv"));

  c.ablate_original = ansatz::Mode::soft;
  const auto dm = scratch("ablate_mixed");
  const auto mixed = ablate(c, dm);
  CHECK(mixed.ratio.size() == static_cast<std::size_t>(30 - 8));
  const auto json = nlohmann::json::parse(slurp(dm / "ablation.json"));
  CHECK(json.at("warmup") == 8);
}

TEST_CASE("sweep runs one cell per pair with the same seed") {
  auto c = tiny_poisson();
  c.adam_iters = 5;
  const auto d = scratch("sweep");
  const auto rows = sweep(c, {1.0, 5.0}, {2.0, 10.0, 20.0}, d);
  CHECK(rows.size() == 6);
  const auto csv = slurp(d / "sweep.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
  CHECK(csv.starts_with("beta_s,beta_t,final_loss,u_mae,u_mape,u_wmape,max_boundary_residual\n"));

  // A single-cell grid at the config's hardness equals a plain run.
  const auto ds = scratch("sweep1"), dp = scratch("plain");
  const auto single = sweep(c, {5.0}, {10.0}, ds);
  const auto plain = run(c, dp);
  CHECK(single[0].outcome.parameters == plain.parameters);
  CHECK(slurp(ds / "cell_0_0" / "metrics.csv") == slurp(dp / "metrics.csv"));
  CHECK_THROWS_AS(sweep(c, {}, {1.0}, d), ConfigError);
}

TEST_CASE("output directory override") {
  RunConfig c;
  c.output_dir = "from_config";
  ::unsetenv("HARDPINN_OUTPUT_DIR");
  CHECK(resolve_output_dir(c) == "from_config");
  ::setenv("HARDPINN_OUTPUT_DIR", "/tmp/elsewhere", 1);
  CHECK(resolve_output_dir(c) == "/tmp/elsewhere");
  ::unsetenv("HARDPINN_OUTPUT_DIR");
}

TEST_CASE("command-line exit codes") {
  const auto d = scratch("exit");
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream(d / name) << text;
    return (d / name).string();
  };
  const auto good = write("good.json", R"({"problem": "poisson1d", "network": {"main_hidden": [4]},
    "points": {"n_f": 8}, "adam": {"iters": 2}, "evaluation": {"n_test": 8}, "output_dir": ")" +
                                           (d / "out").string() + "\"}");
  CHECK(run_cli("run " + good) == 0);
  CHECK(fs::exists(d / "out" / "summary.json"));
  CHECK(run_cli("check " + good) == 0);
  CHECK(run_cli("run " + write("bad.json", R"({"problem": "poisson1d", "points": {"n_b": 2}})")) == 1);
  CHECK(run_cli("run " + (d / "missing.json").string()) == 1);
  CHECK(run_cli("frobnicate") == 1);
  // A polygon file that does not exist fails at run time.
  CHECK(run_cli("run " + write("air.json", R"({"problem": {"name": "airfoil_ns", "polygon": ")" +
                                                (d / "nope.dat").string() + R"("}, "output_dir": ")" +
                                                (d / "air").string() + "\"}")) != 0);
  ::setenv("HARDPINN_OUTPUT_DIR", (d / "env").string().c_str(), 1);
  CHECK(run_cli("run " + good) == 0);
  ::unsetenv("HARDPINN_OUTPUT_DIR");
  CHECK(fs::exists(d / "env" / "metrics.csv"));
}
