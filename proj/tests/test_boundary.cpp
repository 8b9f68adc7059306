#include "hardpinn/boundary.hpp"
#include "hardpinn/network.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <random>

using namespace hardpinn;
using namespace hardpinn::bc;

namespace {

Eigen::VectorXd random_unit(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = g(rng);
  return v / v.norm();
}

int numeric_rank(const Eigen::MatrixXd& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  int r = 0;
  for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i) r += svd.singularValues()(i) > 1e-10 ? 1 : 0;
  return r;
}

}  // namespace

TEST_CASE("normalize examples") {
  const std::vector<double> x{0.3, 0.4};
  const std::vector<double> n01{0.0, 1.0};
  const auto d = normalize(BoundaryCondition::dirichlet("r", 0, constant(2.5)), x, n01);
  CHECK(d.n == std::vector<double>{1.0, 0.0, 0.0});
  CHECK(d.g == 2.5);
  const auto nm = normalize(BoundaryCondition::neumann("r", 0, constant(0.0)), x, n01);
  CHECK(nm.n == std::vector<double>{0.0, 0.0, 1.0});
  CHECK(nm.g == 0.0);
  // k (n.p) = h (T_c - T) with h = k = 1, T_c = 5: T + n.p = 5.
  const std::vector<double> n10{1.0, 0.0};
  const auto rb = normalize(BoundaryCondition::robin("r", 0, 1.0, 1.0, 5.0), x, n10);
  CHECK(rb.n[0] == doctest::Approx(1 / std::sqrt(2.0)));
  CHECK(rb.n[1] == doctest::Approx(1 / std::sqrt(2.0)));
  CHECK(rb.n[2] == 0.0);
  CHECK(rb.g == doctest::Approx(5 / std::sqrt(2.0)));
  CHECK_THROWS_AS(normalize(BoundaryCondition::robin("r", 0, 0.0, 0.0, 1.0), x, n10), std::invalid_argument);
}

TEST_CASE("normalization is invariant under positive scaling") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-2.0, 2.0), lam(0.01, 100.0);
  for (int trial = 0; trial < 200; ++trial) {
    const double a = u(rng), b = u(rng), g = u(rng), l = lam(rng);
    const Eigen::VectorXd n = random_unit(3, rng);
    const std::span<const double> ns(n.data(), 3);
    const auto r1 = normalize<double>(a, b, g, ns);
    const auto r2 = normalize<double>(l * a, l * b, l * g, ns);
    for (int k = 0; k < 4; ++k) CHECK(r1.n[k] == doctest::Approx(r2.n[k]).epsilon(1e-14));
    CHECK(r1.g == doctest::Approx(r2.g).epsilon(1e-14));
    double norm2 = 0;
    for (double c : r1.n) norm2 += c * c;
    CHECK(norm2 == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("householder basis examples") {
  const Eigen::MatrixXd b1 = householder_basis(Eigen::Vector3d(1, 0, 0));
  CHECK(b1.isApprox(Eigen::Vector3d(0, 1, 1).asDiagonal().toDenseMatrix()));
  const Eigen::MatrixXd b2 = householder_basis(Eigen::Vector3d(1, 1, 0) / std::sqrt(2.0));
  Eigen::Matrix3d expected;
  expected << 0.5, -0.5, 0, -0.5, 0.5, 0, 0, 0, 1;
  CHECK((b2 - expected).cwiseAbs().maxCoeff() < 1e-15);
  CHECK_THROWS_AS(householder_basis(Eigen::Vector3d(1, 1, 0)), std::invalid_argument);
}

TEST_CASE("householder basis is a rank-d orthogonal projector") {
  std::mt19937_64 rng(7);
  for (int d : {1, 2, 3, 10}) {
    for (int trial = 0; trial < 500; ++trial) {
      const Eigen::VectorXd n = random_unit(d + 1, rng);
      const Eigen::MatrixXd b = householder_basis(n);
      CHECK((b * n).norm() <= 1e-12);
      CHECK((b * b - b).cwiseAbs().maxCoeff() <= 1e-12);
      CHECK((b - b.transpose()).cwiseAbs().maxCoeff() == 0.0);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(b);
      const auto ev = es.eigenvalues();  // ascending
      CHECK(std::abs(ev(0)) <= 1e-10);
      for (int k = 1; k <= d; ++k) CHECK(std::abs(ev(k) - 1.0) <= 1e-10);
    }
  }
}

TEST_CASE("low-dimensional bases stay admissible") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10000; ++trial) {
    const Eigen::VectorXd n = random_unit(3, rng);
    const Eigen::MatrixXd b = cross2d_basis(n);
    CHECK((n.transpose() * b).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK(numeric_rank(b) == 2);
  }
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::VectorXd n = random_unit(2, rng);
    const Eigen::MatrixXd b = perp1d_basis(n);
    CHECK(std::abs(n.dot(b.col(0))) <= 1e-15);
    CHECK(b.col(0).norm() == doctest::Approx(1.0));
  }
  // Axis-aligned normals, including the ones that break the counterexample.
  for (int k = 0; k < 3; ++k) CHECK(numeric_rank(cross2d_basis(Eigen::Vector3d::Unit(k))) == 2);
}

TEST_CASE("the counterexample basis degenerates where n1 = 0 but householder does not") {
  std::mt19937_64 rng(9);
  // Generic normals: both constructions span the 2D null space of n^T.
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Vector3d n = random_unit(3, rng);
    CHECK(numeric_rank(counterexample_basis(n)) == 2);
  }
  // Plane parallel to the x-axis: n1 = 0.
  const Eigen::Vector3d n(0.0, 0.6, 0.8);
  CHECK(numeric_rank(counterexample_basis(n)) == 1);
  Eigen::Vector4d nt;  // (a, b n) with a = 0, b = 1
  nt << 0.0, n;
  CHECK(numeric_rank(householder_basis(nt)) == 3);
}

TEST_CASE("general solution satisfies the boundary condition for any sub-network") {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  const auto spec = nn::MlpSpec::make(2, {16, 16}, 3);
  const BoundaryCondition conds[] = {
      BoundaryCondition::dirichlet("r", 0, [](std::span<const DualD> x) { return sin(x[0]) * x[1]; }),
      BoundaryCondition::neumann("r", 0, constant(-0.7)),
      BoundaryCondition::robin("r", 0, 1.0, 1.0, 5.0),
  };
  for (const auto& cond : conds) {
    for (int net = 0; net < 5; ++net) {
      const auto params = nn::init(spec, 100 + net);
      for (int p = 0; p < 100; ++p) {
        const double th = u(rng);
        const std::vector<double> x{2 * std::cos(th), 2 * std::sin(th)};
        const std::vector<double> n{std::cos(th), std::sin(th)};
        const auto nb = normalize(cond, x, n);
        const auto out = nn::forward(params, std::span<const double>(x));
        const auto sol = general_solution<double, double>(nb.n, nb.g, out);
        double dot = 0;
        for (int k = 0; k < 3; ++k) dot += nb.n[k] * sol[k];
        CHECK(std::abs(dot - nb.g) <= 1e-10);
        // Same thing through the explicit projector.
        const Eigen::Map<const Eigen::VectorXd> nv(nb.n.data(), 3), ov(out.data(), 3);
        const Eigen::VectorXd alt = general_solution(householder_basis(nv), nv, nb.g, ov);
        for (int k = 0; k < 3; ++k) CHECK(alt(k) == doctest::Approx(sol[k]).epsilon(1e-13));
      }
    }
    // Zero sub-network: the particular solution n g.
    const std::vector<double> zero(3, 0.0), x{1.0, 0.0}, n{1.0, 0.0};
    const auto nb = normalize(cond, x, n);
    const auto sol = general_solution<double, double>(nb.n, nb.g, zero);
    for (int k = 0; k < 3; ++k) CHECK(sol[k] == doctest::Approx(nb.n[k] * nb.g));
  }
}

TEST_CASE("inverse distance interpolation") {
  const ParamFn two = extend_parameter_fn({{Eigen::VectorXd::Constant(1, 0.0), 0.0}, {Eigen::VectorXd::Constant(1, 1.0), 1.0}});
  const std::vector<double> mid{0.5}, at{1.0}, q{0.25};
  CHECK(eval(two, mid) == doctest::Approx(0.5));
  CHECK(eval(two, at) == 1.0);
  // Closed form: w0 = 1/0.0625, w1 = 1/0.5625.
  CHECK(eval(two, q) == doctest::Approx((1 / 0.5625) / (1 / 0.0625 + 1 / 0.5625)));

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<ParamSample> samples, constant_samples;
  for (int i = 0; i < 30; ++i) {
    const double th = 2 * std::numbers::pi * i / 30.0;
    Eigen::Vector2d p(std::cos(th), 0.5 * std::sin(th));
    samples.push_back({p, std::sin(3 * th)});
    constant_samples.push_back({p, 4.25});
  }
  IdwOptions polar{Coordinates::polar, Eigen::Vector2d(0.1, 0.0), 2.0};
  const ParamFn f = extend_parameter_fn(samples, polar);
  const ParamFn c = extend_parameter_fn(constant_samples, polar);
  for (const auto& s : samples) CHECK(eval(f, std::vector<double>{s.x(0), s.x(1)}) == s.value);
  for (int t = 0; t < 50; ++t) {
    const std::vector<double> x{u(rng), u(rng)};
    CHECK(eval(c, x) == doctest::Approx(4.25).epsilon(1e-14));
    // Gradient of the extension against finite differences.
    const std::vector<DualD> xd{ad::lift_input(x[0], 0, 2), ad::lift_input(x[1], 1, 2)};
    const DualD v = f(xd);
    for (int k = 0; k < 2; ++k) {
      auto xp = x, xm = x;
      xp[k] += 1e-7;
      xm[k] -= 1e-7;
      CHECK(v.d[k] == doctest::Approx((eval(f, xp) - eval(f, xm)) / 2e-7).epsilon(1e-5));
    }
  }
}
