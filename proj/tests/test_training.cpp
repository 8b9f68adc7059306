#include "hardpinn/training.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

using namespace hardpinn;
using namespace hardpinn::train;
using ansatz::Ansatz;
using ansatz::Mode;

namespace {

ansatz::Options small(Mode mode, std::uint64_t seed = 1) {
  ansatz::Options o;
  o.mode = mode;
  o.main_hidden = {10, 10};
  o.sub_hidden = {6};
  o.n_probe = 512;
  o.seed = seed;
  return o;
}

void randomize(Ansatz& a, std::uint64_t seed, double scale = 0.5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0.0, scale);
  auto theta = a.parameters();
  for (auto& t : theta) t = N(rng);
  a.set_parameters(theta);
}

double group(const LossBreakdown& l, const std::string& name) {
  for (const auto& [n, v] : l.groups) {
    if (n == name) return v;
  }
  FAIL("missing group " << name);
  return 0.0;
}

}  // namespace

TEST_CASE("hard Poisson loss matches a direct evaluation of the ansatz") {
  Ansatz a(problems::poisson1d(), small(Mode::hard));
  randomize(a, 3);
  Objective obj(a, sample_training_data(a, {.n_f = 64}, 5));
  const auto theta = a.parameters();
  std::vector<double> grad(theta.size()), grad_f(theta.size());
  const auto loss = obj.evaluate(theta, grad, grad_f);

  // Oracle: components u, p with first derivatives from the DualD path.
  const auto& pts = obj.data().collocation;
  const auto comps = a.evaluate(pts);
  double pde = 0, eq = 0;
  for (int p = 0; p < pts.size(); ++p) {
    const double x = pts.xt(0, p);
    const auto& u = comps[static_cast<std::size_t>(p)][0];
    const auto& q = comps[static_cast<std::size_t>(p)][1];
    const double r = q.d[0] + 4.0 * std::sin(2.0 * x);
    pde += r * r;
    eq += (q.value - u.d[0]) * (q.value - u.d[0]);
  }
  pde /= pts.size();
  eq /= pts.size();
  CHECK(loss.pde == doctest::Approx(pde).epsilon(1e-12));
  CHECK(loss.equilibrium == doctest::Approx(eq).epsilon(1e-12));
  CHECK(loss.total == doctest::Approx(pde + eq).epsilon(1e-12));
  CHECK(loss.groups.size() == 2);
  CHECK(loss.bc == 0.0);
  CHECK(grad == grad_f);
}

TEST_CASE("zero network on Poisson leaves only the source term") {
  Ansatz a(problems::poisson1d(), small(Mode::hard));
  std::vector<double> zero(a.parameter_count(), 0.0);
  a.set_parameters(zero);
  Objective obj(a, sample_training_data(a, {.n_f = 50}, 9));
  std::vector<double> grad(zero.size());
  const auto loss = obj.evaluate(zero, grad);
  double expected = 0;
  const auto& xt = obj.data().collocation.xt;
  for (int p = 0; p < xt.cols(); ++p) expected += 16.0 * std::sin(2.0 * xt(0, p)) * std::sin(2.0 * xt(0, p)) / 50;
  CHECK(loss.pde == doctest::Approx(expected).epsilon(1e-13));
  CHECK(loss.equilibrium == 0.0);
  CHECK(xt.minCoeff() > 0.0);
  CHECK(xt.maxCoeff() < 2.0 * std::numbers::pi);
}

TEST_CASE("soft Poisson loss adds boundary groups") {
  Ansatz a(problems::poisson1d(), small(Mode::soft_extra));
  randomize(a, 4);
  Objective obj(a, sample_training_data(a, {.n_f = 32, .n_b = 3}, 6));
  std::vector<double> grad(a.parameter_count());
  const auto loss = obj.evaluate(a.parameters(), grad);
  REQUIRE(obj.data().boundary.size() == 2);
  double left = 0, right = 0;
  const Eigen::MatrixXd l = a.predict(obj.data().boundary[0].points.xt);
  const Eigen::MatrixXd r = a.predict(obj.data().boundary[1].points.xt);
  CHECK(obj.data().boundary[0].points.xt.cwiseAbs().maxCoeff() == 0.0);
  CHECK(obj.data().boundary[1].points.xt.minCoeff() == doctest::Approx(2.0 * std::numbers::pi));
  for (int p = 0; p < 3; ++p) {
    left += l(0, p) * l(0, p) / 3;
    right += r(0, p) * r(0, p) / 3;
  }
  CHECK(group(loss, "bc:left:u") == doctest::Approx(left).epsilon(1e-12));
  CHECK(group(loss, "bc:right:u") == doctest::Approx(right).epsilon(1e-12));
  double sum = 0;
  for (const auto& [n, v] : loss.groups) sum += v;
  CHECK(loss.total == doctest::Approx(sum).epsilon(1e-12));
  CHECK(loss.bc == doctest::Approx(left + right).epsilon(1e-12));
}

TEST_CASE("loss group counts") {
  Ansatz soft(problems::battery_pack(), small(Mode::soft_extra));
  Objective so(soft, sample_training_data(soft, {.n_f = 8, .n_b = 2, .n_i = 4}, 1));
  std::vector<double> g(soft.parameter_count());
  const auto ls = so.evaluate(soft.parameters(), g);
  CHECK(ls.groups.size() == 21);
  CHECK(group(ls, "ic") >= 0.0);

  Ansatz hard(problems::battery_pack(), small(Mode::hard));
  Objective ho(hard, sample_training_data(hard, {.n_f = 8}, 1));
  std::vector<double> gh(hard.parameter_count());
  CHECK(ho.evaluate(hard.parameters(), gh).groups.size() == 2);

  Ansatz plain_schr(problems::schrodinger(), [] {
    auto o = small(Mode::soft);
    o.second_order = true;
    return o;
  }());
  Objective po(plain_schr, sample_training_data(plain_schr, {.n_f = 8, .n_b = 4, .n_i = 4}, 1));
  std::vector<double> gp(plain_schr.parameter_count());
  const auto lp = po.evaluate(plain_schr.parameters(), gp);
  // pde, ic, periodic value and derivative.
  CHECK(lp.groups.size() == 4);
  CHECK(group(lp, "periodic:value") >= 0.0);

  CHECK_THROWS_AS(sample_training_data(soft, {.n_f = 8, .n_b = 0, .n_i = 4}, 1), std::invalid_argument);
  CHECK_THROWS_AS(sample_training_data(soft, {.n_f = 8, .n_b = 2, .n_i = 0}, 1), std::invalid_argument);
}

TEST_CASE("loss gradients agree with central differences") {
  struct Case {
    problems::ProblemSpec problem;
    ansatz::Options options;
    SampleSizes sizes;
  };
  auto second = small(Mode::soft);
  second.second_order = true;
  const std::vector<Case> cases = {
      {problems::poisson1d(), small(Mode::hard), {.n_f = 16}},
      {problems::robin_annulus(), small(Mode::hard), {.n_f = 12}},
      {problems::highdim_heat(3), small(Mode::soft_extra), {.n_f = 8, .n_b = 4, .n_i = 4}},
      {problems::schrodinger(), second, {.n_f = 8, .n_b = 4, .n_i = 4}},
  };
  for (const auto& c : cases) {
    CAPTURE(c.problem.name);
    Ansatz a(c.problem, c.options);
    randomize(a, 11, 0.4);
    Objective obj(a, sample_training_data(a, c.sizes, 2));
    auto theta = a.parameters();
    std::vector<double> grad(theta.size()), grad_f(theta.size()), scratch(theta.size());
    obj.evaluate(theta, grad, grad_f);
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<std::size_t> pick(0, theta.size() - 1);
    for (int trial = 0; trial < 20; ++trial) {
      const auto i = pick(rng);
      const double h = 1e-6, t0 = theta[i];
      theta[i] = t0 + h;
      const auto fp = obj.evaluate(theta, scratch);
      theta[i] = t0 - h;
      const auto fm = obj.evaluate(theta, scratch);
      theta[i] = t0;
      const double fd = (fp.total - fm.total) / (2 * h);
      const double fd_f = (fp.physics() - fm.physics()) / (2 * h);
      CHECK(std::abs(fd - grad[i]) <= 1e-5 * std::max(1e-2, std::abs(fd)));
      CHECK(std::abs(fd_f - grad_f[i]) <= 1e-5 * std::max(1e-2, std::abs(fd_f)));
    }
  }
}

TEST_CASE("loss is invariant under permutation of the collocation points") {
  Ansatz a(problems::robin_annulus(), small(Mode::hard));
  randomize(a, 8);
  auto data = sample_training_data(a, {.n_f = 40}, 3);
  Objective obj(a, data);
  std::vector<double> g1(a.parameter_count()), g2(a.parameter_count());
  const double l1 = obj.evaluate(a.parameters(), g1).total;

  std::vector<int> perm(40);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(1));
  Eigen::MatrixXd xt(data.collocation.xt.rows(), 40);
  for (int i = 0; i < 40; ++i) xt.col(i) = data.collocation.xt.col(perm[static_cast<std::size_t>(i)]);
  data.collocation = a.prepare(xt);
  Objective shuffled(a, data);
  const double l2 = shuffled.evaluate(a.parameters(), g2).total;
  CHECK(l2 == doctest::Approx(l1).epsilon(1e-12));
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g2[i] == doctest::Approx(g1[i]).epsilon(1e-10).scale(1e-12));
}

TEST_CASE("sampling is deterministic in the seed") {
  Ansatz a(problems::battery_pack(), small(Mode::soft_extra));
  const auto d1 = sample_training_data(a, {.n_f = 20, .n_b = 5, .n_i = 5}, 7);
  const auto d2 = sample_training_data(a, {.n_f = 20, .n_b = 5, .n_i = 5}, 7);
  const auto d3 = sample_training_data(a, {.n_f = 20, .n_b = 5, .n_i = 5}, 8);
  CHECK(d1.collocation.xt == d2.collocation.xt);
  CHECK(d1.collocation.xt != d3.collocation.xt);
  CHECK(d1.initial->xt.row(2).cwiseAbs().maxCoeff() == 0.0);
  CHECK(d1.initial_values.isApproxToConstant(0.1));
  for (const auto& b : d1.boundary) CHECK(b.points.size() == 5);
}

TEST_CASE("Adam drives a quadratic to its minimum") {
  std::vector<double> theta{1.0, -2.0, 0.5};
  Adam adam;
  adam.lr = 0.05;
  for (int k = 0; k < 200; ++k) {
    std::vector<double> g(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) g[i] = 2 * theta[i];
    adam.step(theta, g);
  }
  for (double t : theta) CHECK(std::abs(t) < 1e-1);

  // First step moves each coordinate by lr in the descent direction.
  std::vector<double> x{3.0, -1.0};
  Adam first;
  first.lr = 0.01;
  first.step(x, std::vector<double>{6.0, -2e-3});
  CHECK(x[0] == doctest::Approx(2.99).epsilon(1e-9));
  CHECK(x[1] == doctest::Approx(-0.99).epsilon(1e-6));

  std::vector<double> bad{0.0};
  Adam nan_adam;
  CHECK_THROWS_AS(nan_adam.step(bad, std::vector<double>{std::nan("")}), NonFiniteError);
}

TEST_CASE("plateau schedule halves after patience bad steps") {
  Plateau p;
  p.patience = 3;
  double lr = 1e-3;
  lr = p.update(1.0, lr);
  CHECK(lr == 1e-3);
  for (int k = 0; k < 3; ++k) lr = p.update(1.0, lr);
  CHECK(lr == 1e-3);
  lr = p.update(1.0, lr);
  CHECK(lr == 5e-4);
  // Improvements below the relative threshold count as bad steps.
  lr = p.update(1.0 - 1e-5, lr);
  CHECK(p.bad_steps == 1);
  lr = p.update(0.5, lr);
  CHECK(p.bad_steps == 0);
  CHECK(p.best == 0.5);

  Plateau floor;
  floor.patience = 0;
  floor.min_lr = 1e-6;
  double small_lr = 1.5e-6;
  floor.update(1.0, small_lr);
  small_lr = floor.update(1.0, small_lr);
  CHECK(small_lr == 1e-6);
}

TEST_CASE("L-BFGS converges on smooth problems") {
  // Ill-conditioned quadratic.
  const ValueGrad quad = [](std::span<const double> x, std::span<double> g) {
    g[0] = 2 * (x[0] - 1);
    g[1] = 200 * (x[1] + 2);
    return (x[0] - 1) * (x[0] - 1) + 100 * (x[1] + 2) * (x[1] + 2);
  };
  std::vector<double> x{5.0, 5.0};
  int calls = 0;
  const auto r = lbfgs(quad, x, {.max_iters = 20}, [&](int, double) { ++calls; });
  CHECK(r.iterations <= 20);
  CHECK(calls == r.iterations);
  CHECK(std::abs(x[0] - 1) < 1e-10);
  CHECK(std::abs(x[1] + 2) < 1e-10);

  const ValueGrad rosen = [](std::span<const double> x, std::span<double> g) {
    const double a = 1 - x[0], b = x[1] - x[0] * x[0];
    g[0] = -2 * a - 400 * x[0] * b;
    g[1] = 200 * b;
    return a * a + 100 * b * b;
  };
  for (bool wolfe : {false, true}) {
    CAPTURE(wolfe);
    std::vector<double> y{-1.2, 1.0};
    const auto rr = lbfgs(rosen, y, {.max_iters = 500, .strong_wolfe = wolfe});
    CHECK(std::abs(y[0] - 1) < 1e-6);
    CHECK(std::abs(y[1] - 1) < 1e-6);
    CHECK(rr.reason != LbfgsStop::max_iters);
  }

  std::vector<double> z{0.0};
  const auto stopped = lbfgs(
      [](std::span<const double> v, std::span<double> g) {
        g[0] = 0.0;
        return v[0];
      },
      z, {});
  CHECK(stopped.reason == LbfgsStop::gradient);
  CHECK(stopped.iterations == 0);
}

TEST_CASE("moving variance matches a brute-force window") {
  std::mt19937_64 rng(5);
  std::lognormal_distribution<double> D(0.0, 1.0);
  std::vector<double> xs(60);
  for (auto& x : xs) x = D(rng);
  MovingVariance mv(7);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto got = mv.push(xs[i]);
    if (i < 6) {
      CHECK_FALSE(got.has_value());
      continue;
    }
    double mean = 0, var = 0;
    for (std::size_t j = i - 6; j <= i; ++j) mean += xs[j] / 7;
    for (std::size_t j = i - 6; j <= i; ++j) var += (xs[j] - mean) * (xs[j] - mean) / 7;
    REQUIRE(got.has_value());
    CHECK(*got == doctest::Approx(var).epsilon(1e-12));
  }
  CHECK_THROWS(MovingVariance(0));
}

TEST_CASE("MovVar ratio warmup, identity and sentinel") {
  CHECK(ratio_warmup(500) == 998);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::vector<double> a(40), b(40);
  for (auto& x : a) x = U(rng);
  for (auto& x : b) x = 3.0 * U(rng);

  const auto same = movvar_ratio(a, a, 5);
  REQUIRE(same.size() == 40 - 8);
  for (const auto& r : same) {
    REQUIRE(r.has_value());
    CHECK(*r == doctest::Approx(1.0).epsilon(1e-14));
  }
  // Scaling a stream by c scales its variance by c^2.
  std::vector<double> scaled(a);
  for (auto& x : scaled) x *= 2.0;
  for (const auto& r : movvar_ratio(scaled, a, 5)) CHECK(*r == doctest::Approx(4.0).epsilon(1e-12));

  const std::vector<double> flat(40, 0.25);
  for (const auto& r : movvar_ratio(a, flat, 5)) CHECK_FALSE(r.has_value());
  CHECK(movvar_ratio(a, b, 500).empty());
  CHECK_THROWS(movvar_ratio(a, std::vector<double>(3), 5));

  GradStats s(4);
  for (double x : {1.0, 1.0, 1.0, 1.0}) s.record(x);
  CHECK(s.coefficient_of_variation() == 0.0);
  CHECK(*s.movvar_series.back() == 0.0);
  s.record(3.0);
  // Whole run {1,1,1,1,3}: mean 1.4, population std 0.8.
  CHECK(s.coefficient_of_variation() == doctest::Approx(0.8 / 1.4).epsilon(1e-12));
}

TEST_CASE("training reduces the Poisson loss and is reproducible") {
  auto run = [] {
    Ansatz a(problems::poisson1d(), small(Mode::hard, 3));
    Objective obj(a, sample_training_data(a, {.n_f = 32}, 1));
    Schedule s;
    s.adam_iters = 100;
    s.lr = 1e-2;
    s.stats_window = 10;
    s.use_lbfgs = true;
    s.lbfgs.max_iters = 20;
    std::vector<IterationRecord> log;
    const auto result = train::train(obj, s, [&](const IterationRecord& r) { log.push_back(r); });
    return std::make_tuple(result.final_loss.total, log, a.parameters(), result);
  };
  const auto [final1, log1, theta1, result1] = run();
  const auto [final2, log2, theta2, result2] = run();
  REQUIRE(log1.size() == static_cast<std::size_t>(result1.adam_iters + result1.lbfgs_iters));
  CHECK(result1.adam_iters == 100);
  CHECK(result1.lbfgs_iters > 0);
  CHECK(final1 < 0.5 * log1.front().loss.total);
  CHECK(log1[99].loss.total < log1.front().loss.total);
  CHECK(log1.back().phase == "lbfgs");
  CHECK(log1.back().loss.total == doctest::Approx(final1).epsilon(1e-12));
  CHECK(result1.stats.mean_abs_grad.size() == log1.size());
  CHECK_FALSE(log1[8].movvar.has_value());
  CHECK(log1[9].movvar.has_value());
  CHECK(theta1 == theta2);
  CHECK(final1 == final2);
  for (std::size_t i = 0; i < log1.size(); ++i) CHECK(log1[i].loss.total == log2[i].loss.total);
}
