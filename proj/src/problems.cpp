#include "hardpinn/problems.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace hardpinn::problems {

using ad::DualD;
using bc::BoundaryCondition;
using bc::ParamFn;

int Layout::offset(int field) const {
  if (field < 0 || field >= fields()) throw std::out_of_range("layout: field index out of range");
  int off = 0;
  for (int j = 0; j < field; ++j) off += extra[static_cast<std::size_t>(j)] ? 1 + dim : 1;
  return off;
}

int Layout::width() const {
  int w = 0;
  for (bool e : extra) w += e ? 1 + dim : 1;
  return w;
}

Var PointFields::derivative(int c, int k) const {
  const int K = layout->directions();
  if (k < 0 || k >= K) throw std::out_of_range("point fields: derivative direction out of range");
  return first[static_cast<std::size_t>(c * K + k)];
}

Var PointFields::second_derivative(int c, int k) const {
  if (second.empty()) throw std::logic_error("residual requests a second derivative that is not available");
  return second[static_cast<std::size_t>(c * layout->directions() + k)];
}

Var PointFields::grad(int j, int m) const {
  if (layout->extra[static_cast<std::size_t>(j)]) return component(layout->extra_offset(j) + m);
  return du(j, m);
}

Var PointFields::laplacian(int j) const {
  const int d = layout->dim;
  Var s;
  for (int m = 0; m < d; ++m) {
    const Var term = layout->extra[static_cast<std::size_t>(j)] ? dp(j, m, m)
                                                                 : second_derivative(layout->offset(j), m);
    s = m == 0 ? term : s + term;
  }
  return s;
}

Var PointFields::dp(int j, int m, int k) const {
  if (!layout->extra[static_cast<std::size_t>(j)]) {
    throw std::logic_error("residual requests extra fields of a field without them");
  }
  return derivative(layout->extra_offset(j) + m, k);
}

Layout ProblemSpec::layout(bool extra_fields) const {
  Layout l;
  l.dim = dim();
  l.time = time_dependent();
  for (const auto& f : fields) l.extra.push_back(extra_fields && f.extra);
  return l;
}

void ProblemSpec::validate() const {
  domain.validate();
  const int n = static_cast<int>(fields.size());
  if (n == 0) throw std::invalid_argument(name + ": no fields");
  auto check_field = [&](int j) {
    if (j < 0 || j >= n) throw std::invalid_argument(name + ": field index out of range");
  };
  for (const auto& b : bcs) {
    domain.region_index(b.region);
    check_field(b.field);
  }
  for (const auto& s : slips) {
    domain.region_index(s.region);
    if (static_cast<int>(s.fields.size()) != dim()) {
      throw std::invalid_argument(name + ": slip condition needs one field per dimension");
    }
    for (int j : s.fields) check_field(j);
  }
  for (const auto& ic : ics) check_field(ic.field);
  if (!ics.empty() && !time_dependent()) throw std::invalid_argument(name + ": initial conditions need a horizon");
  if (periodic) {
    domain.region_index(periodic->first);
    domain.region_index(periodic->second);
  }
  if (!residual) throw std::invalid_argument(name + ": no residual function");
  if (n_residuals < 1) throw std::invalid_argument(name + ": no residuals");
}

namespace {

DualD norm_sq(std::span<const DualD> x, int d) {
  DualD s = x[0] * x[0];
  for (int m = 1; m < d; ++m) s = s + x[static_cast<std::size_t>(m)] * x[static_cast<std::size_t>(m)];
  return s;
}

double norm_sq(std::span<const double> x, int d) {
  double s = 0.0;
  for (int m = 0; m < d; ++m) s += x[static_cast<std::size_t>(m)] * x[static_cast<std::size_t>(m)];
  return s;
}

}  // namespace

ProblemSpec poisson1d(double a) {
  ProblemSpec p;
  p.name = "poisson1d";
  const double x1 = 2.0 * std::numbers::pi;
  p.domain.outer = geo::Interval{0.0, x1};
  p.domain.regions = {{"left", geo::Interval{0.0, x1}, geo::Role::outer, geo::left},
                      {"right", geo::Interval{0.0, x1}, geo::Role::outer, geo::right}};
  p.fields = {{"u", true}};
  p.bcs = {BoundaryCondition::dirichlet("left", 0, bc::constant(0.0)),
           BoundaryCondition::dirichlet("right", 0, bc::constant(0.0))};
  p.n_residuals = 1;
  p.residual = [a](const PointFields& f, std::vector<Var>& out) {
    out.push_back(f.laplacian(0) + a * a * std::sin(a * f.x[0]));
  };
  p.exact = [a](int, std::span<const double> xt) { return std::sin(a * xt[0]); };
  p.constants = {{"a", a}};
  return p;
}

ProblemSpec battery_pack() {
  constexpr double k = 1.0, h = 1.0, Ta = 0.1, Tc = 5.0, Tw = 1.0, T0 = 0.1;
  constexpr double rc = 1.0, rw = 0.4;
  ProblemSpec p;
  p.name = "battery_pack";
  p.horizon = 1.0;
  const geo::Rectangle box{-6.0, 6.0, -4.5, 4.5};
  p.domain.outer = box;
  p.domain.regions.push_back({"outer", box, geo::Role::outer, geo::all_sides});
  const std::vector<geo::Vec2> cells = {{-4.5, -3}, {-1.5, -3}, {1.5, -3}, {4.5, -3}, {-3, 0}, {0, 0},
                                        {3, 0},     {-4.5, 3},  {-1.5, 3}, {1.5, 3},  {4.5, 3}};
  const std::vector<geo::Vec2> pipes = {{-3, -2}, {0, -2}, {3, -2}, {-3, 2}, {0, 2}, {3, 2}};
  p.fields = {{"T", true}};
  p.bcs.push_back(BoundaryCondition::robin("outer", 0, h, k, h * Ta));
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const geo::Circle c{cells[i], rc};
    const std::string name = "cell" + std::to_string(i + 1);
    p.domain.holes.push_back(c);
    p.domain.regions.push_back({name, c, geo::Role::hole, geo::all_sides});
    p.bcs.push_back(BoundaryCondition::robin(name, 0, h, k, h * Tc));
  }
  for (std::size_t i = 0; i < pipes.size(); ++i) {
    const geo::Circle c{pipes[i], rw};
    const std::string name = "pipe" + std::to_string(i + 1);
    p.domain.holes.push_back(c);
    p.domain.regions.push_back({name, c, geo::Role::hole, geo::all_sides});
    p.bcs.push_back(BoundaryCondition::robin(name, 0, h, k, h * Tw));
  }
  p.ics = {{0, bc::constant(T0)}};
  p.n_residuals = 1;
  p.residual = [k](const PointFields& f, std::vector<Var>& out) { out.push_back(f.dt(0) - k * f.laplacian(0)); };
  p.constants = {{"k", k}, {"h", h}, {"T_a", Ta}, {"T_c", Tc}, {"T_w", Tw}, {"T_0", T0},
                 {"r_c", rc}, {"r_w", rw}, {"n_c", 11}, {"n_w", 6}};
  return p;
}

ProblemSpec airfoil_ns(const geo::Polygon& airfoil) {
  constexpr double nu = 1.0 / 50.0;
  ProblemSpec p;
  p.name = "airfoil_ns";
  const geo::Rectangle box{-1.0, 2.0, -1.0, 1.0};
  p.domain.outer = box;
  p.domain.holes = {airfoil};
  p.domain.regions = {
      {"gamma_star", box, geo::Role::outer, geo::left | geo::top | geo::bottom},
      {"outlet", box, geo::Role::outer, geo::right},
      {"airfoil", airfoil, geo::Role::hole, geo::all_sides},
  };
  p.fields = {{"u1", true}, {"u2", true}, {"p", false}};
  p.bcs = {BoundaryCondition::dirichlet("gamma_star", 0, bc::constant(1.0)),
           BoundaryCondition::dirichlet("gamma_star", 1, bc::constant(0.0)),
           BoundaryCondition::dirichlet("outlet", 2, bc::constant(1.0))};
  p.slips = {{"airfoil", {0, 1}, bc::constant(0.0)}};
  p.n_residuals = 3;
  p.residual = [nu](const PointFields& f, std::vector<Var>& out) {
    const Var u1 = f.u(0), u2 = f.u(1);
    for (int c = 0; c < 2; ++c) {
      const Var convect = u1 * f.grad(c, 0) + u2 * f.grad(c, 1);
      out.push_back(convect - nu * f.laplacian(c) + f.grad(2, c));
    }
    out.push_back(f.grad(0, 0) + f.grad(1, 1));
  };
  p.constants = {{"nu", nu}, {"u0_1", 1.0}, {"u0_2", 0.0}, {"p_outlet", 1.0}};
  return p;
}

ProblemSpec highdim_heat(int d) {
  if (d < 1) throw std::invalid_argument("highdim_heat: dimension must be at least 1");
  const double k = 1.0 / d;
  ProblemSpec p;
  p.name = "highdim_heat";
  p.horizon = 1.0;
  const geo::Ball ball{Eigen::VectorXd::Zero(d), 1.0};
  if (d == 1) {
    p.domain.outer = geo::Interval{-1.0, 1.0};
    p.domain.regions = {{"boundary", geo::Interval{-1.0, 1.0}, geo::Role::outer, geo::left | geo::right}};
  } else if (d == 2) {
    p.domain.outer = geo::Circle{geo::Vec2::Zero(), 1.0};
    p.domain.regions = {{"boundary", geo::Circle{geo::Vec2::Zero(), 1.0}, geo::Role::outer, geo::all_sides}};
  } else {
    p.domain.outer = ball;
    p.domain.regions = {{"boundary", ball, geo::Role::outer, geo::all_sides}};
  }
  p.fields = {{"u", true}};
  const ParamFn g = [d](std::span<const DualD> xt) {
    return exp(0.5 * norm_sq(xt, d) + xt[static_cast<std::size_t>(d)]);
  };
  p.bcs = {BoundaryCondition::neumann("boundary", 0, g)};
  p.ics = {{0, [d](std::span<const DualD> x) { return exp(0.5 * norm_sq(x, d)); }}};
  p.n_residuals = 1;
  p.residual = [d, k](const PointFields& f, std::vector<Var>& out) {
    const double r2 = norm_sq(f.x, d);
    const double source = -k * r2 * std::exp(0.5 * r2 + f.t);
    out.push_back(f.dt(0) - k * f.laplacian(0) - source);
  };
  p.exact = [d](int, std::span<const double> xt) {
    return std::exp(0.5 * norm_sq(xt, d) + xt[static_cast<std::size_t>(d)]);
  };
  p.constants = {{"d", d}, {"k", k}};
  return p;
}

ProblemSpec schrodinger() {
  ProblemSpec p;
  p.name = "schrodinger";
  p.horizon = std::numbers::pi / 2.0;
  p.domain.outer = geo::Interval{-5.0, 5.0};
  p.domain.regions = {{"left", geo::Interval{-5.0, 5.0}, geo::Role::outer, geo::left},
                      {"right", geo::Interval{-5.0, 5.0}, geo::Role::outer, geo::right}};
  p.fields = {{"re", true}, {"im", true}};
  p.ics = {{0, [](std::span<const DualD> x) { return 4.0 / (exp(x[0]) + exp(-x[0])); }},
           {1, bc::constant(0.0)}};
  p.periodic = PeriodicPair{"left", "right"};
  p.n_residuals = 2;
  p.residual = [](const PointFields& f, std::vector<Var>& out) {
    const Var re = f.u(0), im = f.u(1);
    const Var mod2 = re * re + im * im;
    out.push_back(0.5 * f.laplacian(0) - f.dt(1) + mod2 * re);
    out.push_back(0.5 * f.laplacian(1) + f.dt(0) + mod2 * im);
  };
  p.constants = {{"x0", -5.0}, {"x1", 5.0}, {"T", std::numbers::pi / 2.0}};
  return p;
}

ProblemSpec robin_annulus() {
  ProblemSpec p;
  p.name = "robin_annulus";
  const geo::Circle outer{geo::Vec2::Zero(), 1.0};
  const geo::Circle inner{geo::Vec2::Zero(), 0.5};
  p.domain.outer = outer;
  p.domain.holes = {inner};
  p.domain.regions = {{"outer", outer, geo::Role::outer, geo::all_sides},
                      {"inner", inner, geo::Role::hole, geo::all_sides}};
  p.fields = {{"u", true}};
  // u = exp(|x|^2 / 2): n.grad u = |x| u outside, -|x| u on the hole.
  const ParamFn g_outer = [](std::span<const DualD> x) {
    const DualD r2 = norm_sq(x, 2);
    return (1.0 + sqrt(r2)) * exp(0.5 * r2);
  };
  const ParamFn g_inner = [](std::span<const DualD> x) {
    const DualD r2 = norm_sq(x, 2);
    return (1.0 - sqrt(r2)) * exp(0.5 * r2);
  };
  p.bcs = {BoundaryCondition::robin("outer", 0, bc::constant(1.0), bc::constant(1.0), g_outer),
           BoundaryCondition::robin("inner", 0, bc::constant(1.0), bc::constant(1.0), g_inner)};
  p.n_residuals = 1;
  p.residual = [](const PointFields& f, std::vector<Var>& out) {
    const double r2 = norm_sq(f.x, 2);
    out.push_back(f.laplacian(0) - (2.0 + r2) * std::exp(0.5 * r2));
  };
  p.exact = [](int, std::span<const double> xt) { return std::exp(0.5 * norm_sq(xt, 2)); };
  p.constants = {{"r_inner", 0.5}, {"r_outer", 1.0}, {"a", 1.0}, {"b", 1.0}};
  return p;
}

std::vector<std::string> builtin_names() {
  return {"poisson1d", "battery_pack", "airfoil_ns", "highdim_heat", "schrodinger", "robin_annulus"};
}

ProblemSpec builtin(const std::string& name, const BuiltinOptions& options) {
  if (name == "poisson1d") return poisson1d();
  if (name == "battery_pack") return battery_pack();
  if (name == "airfoil_ns") {
    return airfoil_ns(options.polygon ? geo::load_polygon(*options.polygon) : geo::naca_symmetric(0.12, 120));
  }
  if (name == "highdim_heat") return highdim_heat(options.dim);
  if (name == "schrodinger") return schrodinger();
  if (name == "robin_annulus") return robin_annulus();
  throw std::invalid_argument("unknown problem '" + name + "'");
}

// ---------------------------------------------------------------------------
// Metrics

ErrorStats error_stats(std::span<const double> predicted, std::span<const double> truth) {
  if (predicted.size() != truth.size() || truth.empty()) {
    throw std::invalid_argument("error_stats: size mismatch or empty input");
  }
  ErrorStats s;
  double abs_sum = 0.0, truth_sum = 0.0, rel_sum = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double e = std::abs(predicted[i] - truth[i]);
    abs_sum += e;
    truth_sum += std::abs(truth[i]);
    rel_sum += e / std::abs(truth[i]);
  }
  const auto n = static_cast<double>(truth.size());
  s.mae = abs_sum / n;
  s.mape = rel_sum / n;
  s.wmape = abs_sum / truth_sum;
  return s;
}

namespace {

SliceMetrics slice_metrics(const std::string& label, const ProblemSpec& problem, const Predictor& predict,
                           const ExactFn& truth, const Eigen::MatrixXd& xt) {
  const Eigen::MatrixXd pred = predict(xt);
  const auto n_fields = static_cast<int>(problem.fields.size());
  if (pred.rows() != n_fields || pred.cols() != xt.cols()) {
    throw std::invalid_argument("evaluate_metrics: predictor returned the wrong shape");
  }
  SliceMetrics s;
  s.slice = label;
  std::vector<double> p(static_cast<std::size_t>(xt.cols())), y(p.size());
  for (int j = 0; j < n_fields; ++j) {
    for (Eigen::Index i = 0; i < xt.cols(); ++i) {
      const Eigen::VectorXd col = xt.col(i);
      p[static_cast<std::size_t>(i)] = pred(j, i);
      y[static_cast<std::size_t>(i)] = truth(j, geo::as_span(col));
    }
    s.fields.push_back(error_stats(p, y));
  }
  return s;
}

}  // namespace

Metrics evaluate_metrics(const ProblemSpec& problem, const Predictor& predict, const ExactFn& truth,
                         int n_test, std::uint64_t seed) {
  if (!truth) throw std::invalid_argument("evaluate_metrics: no truth available for " + problem.name);
  Metrics m;
  for (const auto& f : problem.fields) m.field_names.push_back(f.name);
  const Eigen::MatrixXd x = geo::sample_interior(problem.domain, n_test, seed);
  if (!problem.time_dependent()) {
    m.slices.push_back(slice_metrics("all", problem, predict, truth, x));
    return m;
  }
  const double T = *problem.horizon;
  const int d = problem.dim();
  Eigen::MatrixXd xt(d + 1, x.cols());
  xt.topRows(d) = x;
  for (const auto& [label, frac] : std::vector<std::pair<std::string, double>>{{"t=0", 0.0}, {"t=0.5", 0.5}, {"t=1", 1.0}}) {
    xt.row(d).setConstant(frac * T);
    m.slices.push_back(slice_metrics(label, problem, predict, truth, xt));
  }
  xt.row(d) = geo::sample_times(static_cast<int>(x.cols()), T, seed ^ 0x9e3779b97f4a7c15ULL).transpose();
  m.slices.push_back(slice_metrics("average", problem, predict, truth, xt));
  return m;
}

// ---------------------------------------------------------------------------
// Reference tables

std::size_t ReferenceTable::nearest(std::span<const double> xt) const {
  if (coordinates.cols() == 0) throw std::logic_error("reference table is empty");
  if (static_cast<Eigen::Index>(xt.size()) != coordinates.rows()) {
    throw std::invalid_argument("reference lookup: coordinate count mismatch");
  }
  const Eigen::Map<const Eigen::VectorXd> q(xt.data(), static_cast<Eigen::Index>(xt.size()));
  Eigen::Index best = 0;
  (coordinates.colwise() - q).colwise().squaredNorm().minCoeff(&best);
  return static_cast<std::size_t>(best);
}

std::optional<double> ReferenceTable::exact(int field, std::span<const double> xt) const {
  const auto i = nearest(xt);
  for (Eigen::Index k = 0; k < coordinates.rows(); ++k) {
    if (coordinates(k, static_cast<Eigen::Index>(i)) != xt[static_cast<std::size_t>(k)]) return std::nullopt;
  }
  return values(field, static_cast<Eigen::Index>(i));
}

double ReferenceTable::lookup(int field, std::span<const double> xt) const {
  if (field < 0 || field >= values.rows()) throw std::out_of_range("reference lookup: no such field");
  return values(field, static_cast<Eigen::Index>(nearest(xt)));
}

ExactFn ReferenceTable::as_exact() const {
  return [table = *this](int field, std::span<const double> xt) { return table.lookup(field, xt); };
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  return out;
}

}  // namespace

ReferenceTable parse_reference(const std::string& text, int n_coordinates) {
  std::stringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("reference: empty file");
  const auto header = split_csv(line);
  if (n_coordinates < 1 || static_cast<int>(header.size()) <= n_coordinates) {
    throw std::runtime_error("reference: header needs " + std::to_string(n_coordinates) +
                             " coordinate columns and at least one field");
  }
  ReferenceTable t;
  t.coordinate_names.assign(header.begin(), header.begin() + n_coordinates);
  t.field_names.assign(header.begin() + n_coordinates, header.end());
  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw std::runtime_error("reference line " + std::to_string(lineno) + ": expected " +
                               std::to_string(header.size()) + " columns");
    }
    std::vector<double> row;
    for (const auto& c : cells) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(c, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != c.size() || c.empty()) {
        throw std::runtime_error("reference line " + std::to_string(lineno) + ": malformed number '" + c + "'");
      }
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("reference: no data rows");
  const auto n = static_cast<Eigen::Index>(rows.size());
  t.coordinates.resize(n_coordinates, n);
  t.values.resize(static_cast<Eigen::Index>(t.field_names.size()), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    for (int k = 0; k < n_coordinates; ++k) t.coordinates(k, i) = r[static_cast<std::size_t>(k)];
    for (Eigen::Index f = 0; f < t.values.rows(); ++f) {
      t.values(f, i) = r[static_cast<std::size_t>(n_coordinates + f)];
    }
  }
  return t;
}

ReferenceTable load_reference(const std::filesystem::path& path, int n_coordinates) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open reference file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_reference(ss.str(), n_coordinates);
}

void save_reference(const std::filesystem::path& path, const ReferenceTable& table) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write reference file " + path.string());
  out << std::setprecision(17);
  bool first = true;
  for (const auto& n : table.coordinate_names) out << (first ? "" : ",") << n, first = false;
  for (const auto& n : table.field_names) out << "," << n;
  out << "\n";
  for (Eigen::Index i = 0; i < table.coordinates.cols(); ++i) {
    for (Eigen::Index k = 0; k < table.coordinates.rows(); ++k) out << (k ? "," : "") << table.coordinates(k, i);
    for (Eigen::Index f = 0; f < table.values.rows(); ++f) out << "," << table.values(f, i);
    out << "\n";
  }
}

}  // namespace hardpinn::problems
