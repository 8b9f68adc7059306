#include "hardpinn/problems.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>

using namespace hardpinn;
using namespace hardpinn::problems;

namespace {

// Component values and input derivatives written by hand, fed to a residual
// function through tape variables.
struct Jet {
  std::vector<double> value, first, second;
};

std::vector<double> residuals(const ProblemSpec& p, const Layout& layout, const Jet& jet,
                              std::vector<double> xt) {
  ad::Tape tape;
  ad::ActiveTape active(tape);
  std::vector<Var> v, f, s;
  for (double a : jet.value) v.push_back(tape.variable(a));
  for (double a : jet.first) f.push_back(tape.variable(a));
  for (double a : jet.second) s.push_back(tape.variable(a));
  PointFields pf;
  pf.layout = &layout;
  pf.x = std::span<const double>(xt.data(), static_cast<std::size_t>(layout.dim));
  pf.t = layout.time ? xt.back() : 0.0;
  pf.value = v;
  pf.first = f;
  pf.second = s;
  std::vector<Var> out;
  p.residual(pf, out);
  std::vector<double> r;
  for (auto o : out) r.push_back(o.value());
  return r;
}

// u = exp(|x|^2/2 + c t) with p = grad u, in extra-field layout.
Jet gaussian_jet(const std::vector<double>& x, int d, bool time, double c, double t) {
  double r2 = 0;
  for (int m = 0; m < d; ++m) r2 += x[m] * x[m];
  const double u = std::exp(0.5 * r2 + c * t);
  const int K = d + (time ? 1 : 0);
  Jet j;
  j.value.push_back(u);
  for (int m = 0; m < d; ++m) j.value.push_back(x[m] * u);
  j.first.assign(static_cast<std::size_t>((1 + d) * K), 0.0);
  for (int k = 0; k < d; ++k) j.first[k] = x[k] * u;
  if (time) j.first[d] = c * u;
  for (int m = 0; m < d; ++m) {
    for (int k = 0; k < d; ++k) j.first[(1 + m) * K + k] = ((m == k) ? u : 0.0) + x[m] * x[k] * u;
    if (time) j.first[(1 + m) * K + d] = c * x[m] * u;
  }
  return j;
}

}  // namespace

TEST_CASE("layout offsets follow the field order") {
  Layout l{2, false, {true, true, false}};
  CHECK(l.width() == 7);
  CHECK(l.offset(0) == 0);
  CHECK(l.offset(1) == 3);
  CHECK(l.offset(2) == 6);
  CHECK(l.directions() == 2);
  Layout plain{1, true, {false, false}};
  CHECK(plain.width() == 2);
  CHECK(plain.directions() == 2);
}

TEST_CASE("every builtin validates") {
  for (const auto& name : builtin_names()) {
    CAPTURE(name);
    BuiltinOptions opt;
    opt.dim = 4;
    const auto p = builtin(name, opt);
    CHECK_NOTHROW(p.validate());
  }
  CHECK_THROWS_AS(builtin("nope"), std::invalid_argument);
  CHECK_THROWS_AS(highdim_heat(0), std::invalid_argument);
}

TEST_CASE("poisson residual vanishes on sin(2x) in both formulations") {
  const auto p = poisson1d();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(0.0, std::numbers::pi);
  for (int i = 0; i < 50; ++i) {
    const double x = U(rng);
    const double u = std::sin(2 * x), ux = 2 * std::cos(2 * x), uxx = -4 * std::sin(2 * x);
    const auto extra = p.layout(true);
    auto r = residuals(p, extra, {{u, ux}, {ux, uxx}, {}}, {x});
    CHECK(std::abs(r[0]) <= 1e-12 * 4);
    const auto plain = p.layout(false);
    r = residuals(p, plain, {{u}, {ux}, {uxx}}, {x});
    CHECK(std::abs(r[0]) <= 1e-12 * 4);
  }
  // Zero fields leave the source term a^2 sin(ax).
  const auto r = residuals(p, p.layout(true), {{0, 0}, {0, 0}, {}}, {0.3});
  CHECK(r[0] == doctest::Approx(4 * std::sin(0.6)).epsilon(1e-15));
  CHECK(p.exact(0, std::vector<double>{0.3}) == std::sin(0.6));
}

TEST_CASE("second derivatives are refused when unavailable") {
  const auto p = poisson1d();
  CHECK_THROWS_AS(residuals(p, p.layout(false), {{0.0}, {0.0}, {}}, {0.3}), std::logic_error);
}

TEST_CASE("high-dimensional heat residual vanishes on the analytic solution") {
  for (int d : {1, 2, 5, 10}) {
    CAPTURE(d);
    const auto p = highdim_heat(d);
    const auto layout = p.layout(true);
    std::mt19937_64 rng(d);
    std::normal_distribution<double> N;
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (int i = 0; i < 20; ++i) {
      std::vector<double> x(d);
      double r = 0;
      for (auto& v : x) v = N(rng), r += v * v;
      const double scale = std::pow(U(rng), 1.0 / d) / std::sqrt(r);
      for (auto& v : x) v *= scale;
      const double t = U(rng);
      auto xt = x;
      xt.push_back(t);
      const auto jet = gaussian_jet(x, d, true, 1.0, t);
      const auto res = residuals(p, layout, jet, xt);
      CHECK(std::abs(res[0]) <= 1e-12 * jet.value[0]);
      CHECK(p.exact(0, xt) == doctest::Approx(jet.value[0]).epsilon(1e-14));
    }
    // Neumann data equals the solution on the unit sphere; the initial value is its t = 0 slice.
    std::vector<ad::DualD> xt(d + 1, ad::DualD(0.0, std::size_t{0}));
    xt[0].value = 1.0;
    xt[d].value = 0.25;
    CHECK(p.bcs[0].g(xt).value == doctest::Approx(std::exp(0.75)));
    CHECK(p.ics[0].f(std::span<const ad::DualD>(xt).first(d)).value == doctest::Approx(std::exp(0.5)));
  }
}

TEST_CASE("robin annulus data matches the manufactured solution") {
  const auto p = robin_annulus();
  const auto layout = p.layout(true);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> A(0, 2 * std::numbers::pi), R(0.5, 1.0);
  for (int i = 0; i < 50; ++i) {
    const double th = A(rng), r = R(rng);
    const std::vector<double> x{r * std::cos(th), r * std::sin(th)};
    const auto jet = gaussian_jet(x, 2, false, 0.0, 0.0);
    CHECK(std::abs(residuals(p, layout, jet, x)[0]) <= 1e-12 * 4);
  }
  // a u + b n.grad u = g on both circles, n outward from the annulus.
  for (double th : {0.0, 1.0, 2.5, 4.0}) {
    for (int which = 0; which < 2; ++which) {
      const double r = which == 0 ? 1.0 : 0.5;
      const double sgn = which == 0 ? 1.0 : -1.0;
      const std::vector<double> x{r * std::cos(th), r * std::sin(th)};
      const double u = std::exp(0.5 * r * r);
      const double n_grad = sgn * r * u;
      CHECK(bc::eval(p.bcs[which].g, x) == doctest::Approx(u + n_grad).epsilon(1e-14));
    }
  }
}

TEST_CASE("uniform flow satisfies the airfoil residuals and its far-field data") {
  const auto p = airfoil_ns(geo::naca_symmetric(0.12, 60));
  const auto layout = p.layout(true);
  REQUIRE(layout.width() == 7);
  Jet j;
  j.value = {1, 0, 0, 0, 0, 0, 1};
  j.first.assign(14, 0.0);
  CHECK(residuals(p, layout, j, {0.5, 0.5}) == std::vector<double>{0, 0, 0});
  // A linear shear u1 = y, p const: convective term vanishes, so does the
  // diffusion and divergence.
  j.value = {0.3, 0, 1, 0, 0, 0, 1};
  j.first[1] = 1.0;  // du1/dy
  const auto r = residuals(p, layout, j, {0.5, 0.3});
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == 0.0);
  // Pressure gradient enters the momentum balance with unit weight.
  j = {};
  j.value.assign(7, 0.0);
  j.first.assign(14, 0.0);
  j.first[12] = 2.0;
  CHECK(residuals(p, layout, j, {0.5, 0.3})[0] == 2.0);
}

TEST_CASE("schrodinger residuals respect conjugation symmetry") {
  const auto p = schrodinger();
  const auto layout = p.layout(true);
  REQUIRE(layout.width() == 4);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> N;
  for (int i = 0; i < 100; ++i) {
    Jet j;
    for (int c = 0; c < 4; ++c) j.value.push_back(N(rng));
    for (int c = 0; c < 8; ++c) j.first.push_back(N(rng));
    const std::vector<double> xt{N(rng), std::abs(N(rng))};
    const auto r = residuals(p, layout, j, xt);
    // h -> conj(h) with t -> -t: im and its x-derivatives flip, every time
    // derivative of re flips, time derivatives of im keep their sign.
    Jet c = j;
    for (int k = 2; k < 4; ++k) c.value[k] = -c.value[k];
    for (int comp = 0; comp < 4; ++comp) {
      const bool im = comp >= 2;
      if (im) c.first[comp * 2] = -c.first[comp * 2];
      else c.first[comp * 2 + 1] = -c.first[comp * 2 + 1];
    }
    const auto rc = residuals(p, layout, c, {xt[0], -xt[1]});
    CHECK(rc[0] == doctest::Approx(r[0]).epsilon(1e-13));
    CHECK(rc[1] == doctest::Approx(-r[1]).epsilon(1e-13));
  }
  // sech initial profile.
  std::vector<ad::DualD> x{ad::lift_input(0.7, 0, 1)};
  const auto f = p.ics[0].f(x);
  CHECK(f.value == doctest::Approx(2.0 / std::cosh(0.7)).epsilon(1e-15));
  CHECK(f.d[0] == doctest::Approx(-2.0 * std::tanh(0.7) / std::cosh(0.7)).epsilon(1e-14));
}

TEST_CASE("battery pack wiring") {
  const auto p = battery_pack();
  CHECK(p.domain.regions.size() == 18);
  CHECK(p.bcs.size() == 18);
  CHECK(p.domain.holes.size() == 17);
  int cells = 0, pipes = 0;
  for (const auto& b : p.bcs) {
    const std::vector<double> x{0.0, 0.0, 0.5};
    CHECK(bc::eval(b.a, x) == 1.0);
    CHECK(bc::eval(b.b, x) == 1.0);
    const double g = bc::eval(b.g, x);
    const bool cell = b.region.starts_with("cell"), pipe = b.region.starts_with("pipe");
    cells += cell;
    pipes += pipe;
    CHECK(g == doctest::Approx(cell ? 5.0 : pipe ? 1.0 : 0.1));
  }
  CHECK(cells == 11);
  CHECK(pipes == 6);
  CHECK(p.time_dependent());
  CHECK(p.layout().width() == 3);
  CHECK(p.layout().directions() == 3);
  // Minimum clearance between features is positive (Assumption on disjoint boundaries).
  for (std::size_t i = 0; i < p.domain.regions.size(); ++i) {
    CHECK(geo::estimate_min_offregion_distance(p.domain, i, 256, 1) > 0.39);
  }
}

TEST_CASE("error statistics closed forms") {
  const std::vector<double> y{2.0, 2.0, 2.0, 2.0};
  const std::vector<double> yh{2.1, 2.1, 2.1, 2.1};
  const auto s = error_stats(yh, y);
  CHECK(s.mae == doctest::Approx(0.1));
  CHECK(s.mape == doctest::Approx(0.05));
  CHECK(s.wmape == doctest::Approx(0.05));
  const auto z = error_stats(y, y);
  CHECK(z.mae == 0.0);
  CHECK(z.mape == 0.0);
  CHECK(z.wmape == 0.0);
  // WMAPE stays finite near zero truth, unlike MAPE.
  const std::vector<double> t2{0.0, 1.0}, p2{0.5, 1.0};
  CHECK(error_stats(p2, t2).wmape == doctest::Approx(0.5));
  CHECK(std::isinf(error_stats(p2, t2).mape));
}

TEST_CASE("metrics of the exact solution vanish on every slice") {
  const auto p = highdim_heat(3);
  const Predictor exact = [&](const Eigen::MatrixXd& xt) {
    Eigen::MatrixXd out(1, xt.cols());
    for (Eigen::Index i = 0; i < xt.cols(); ++i) {
      const Eigen::VectorXd c = xt.col(i);
      out(0, i) = p.exact(0, geo::as_span(c));
    }
    return out;
  };
  const auto m = evaluate_metrics(p, exact, p.exact, 200, 4);
  REQUIRE(m.slices.size() == 4);
  CHECK(m.slices[0].slice == "t=0");
  CHECK(m.slices[3].slice == "average");
  for (const auto& s : m.slices) {
    CHECK(s.fields[0].mae == 0.0);
    CHECK(s.fields[0].wmape == 0.0);
  }
  const Predictor offset = [&](const Eigen::MatrixXd& xt) { return (exact(xt).array() + 0.01).matrix(); };
  const auto mo = evaluate_metrics(p, offset, p.exact, 200, 4);
  CHECK(mo.slices[1].fields[0].mae == doctest::Approx(0.01));
  const auto stationary = evaluate_metrics(poisson1d(), [](const Eigen::MatrixXd& x) {
    return Eigen::MatrixXd(x.array().unaryExpr([](double v) { return std::sin(2 * v); }));
  }, poisson1d().exact, 64, 1);
  REQUIRE(stationary.slices.size() == 1);
  CHECK(stationary.slices[0].fields[0].mae == 0.0);
  CHECK_THROWS_AS(evaluate_metrics(schrodinger(), exact, {}, 10, 1), std::invalid_argument);
}

TEST_CASE("reference tables round-trip and look up") {
  ReferenceTable t;
  t.coordinate_names = {"x1", "x2"};
  t.field_names = {"u", "v"};
  t.coordinates.resize(2, 5);
  t.values.resize(2, 5);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> N;
  for (int i = 0; i < 5; ++i) {
    t.coordinates(0, i) = N(rng);
    t.coordinates(1, i) = N(rng);
    t.values(0, i) = N(rng);
    t.values(1, i) = 0.1 * i;
  }
  const auto path = std::filesystem::temp_directory_path() / "hardpinn_reference_test.csv";
  save_reference(path, t);
  const auto r = load_reference(path, 2);
  std::filesystem::remove(path);
  CHECK(r.coordinate_names == t.coordinate_names);
  CHECK(r.field_names == t.field_names);
  CHECK(r.coordinates == t.coordinates);
  CHECK(r.values == t.values);
  for (int i = 0; i < 5; ++i) {
    const std::vector<double> q{t.coordinates(0, i), t.coordinates(1, i)};
    CHECK(r.lookup(0, q) == t.values(0, i));
    REQUIRE(r.exact(1, q).has_value());
    CHECK(*r.exact(1, q) == t.values(1, i));
  }
  // Midpoint of two stored points resolves to one of them, as a brute-force scan says.
  const std::vector<double> mid{0.5 * (t.coordinates(0, 1) + t.coordinates(0, 3)),
                                0.5 * (t.coordinates(1, 1) + t.coordinates(1, 3))};
  const auto idx = r.nearest(mid);
  double best = 1e300;
  std::size_t brute = 0;
  for (int i = 0; i < 5; ++i) {
    const double d = std::hypot(t.coordinates(0, i) - mid[0], t.coordinates(1, i) - mid[1]);
    if (d < best) best = d, brute = static_cast<std::size_t>(i);
  }
  CHECK(idx == brute);
  CHECK_FALSE(r.exact(0, mid).has_value());

  CHECK_THROWS_AS(parse_reference("x,u\n1,abc\n", 1), std::runtime_error);
  CHECK_THROWS_AS(parse_reference("x,u\n1,2,3\n", 1), std::runtime_error);
  CHECK_THROWS_AS(parse_reference("x\n1\n", 1), std::runtime_error);
  CHECK_THROWS_AS(parse_reference("x,u\n", 1), std::runtime_error);
}
