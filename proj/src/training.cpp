#include "hardpinn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace hardpinn::train {

using ad::Var;
using ansatz::Mode;
using ansatz::PointSet;
using ansatz::Recording;

double mean_abs(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += std::abs(x);
  return s / static_cast<double>(v.size());
}

namespace {

Eigen::MatrixXd with_times(const Eigen::MatrixXd& x, const std::optional<double>& horizon, int n,
                           std::uint64_t seed, std::optional<double> fixed = {}) {
  if (!horizon) return x;
  Eigen::MatrixXd xt(x.rows() + 1, x.cols());
  xt.topRows(x.rows()) = x;
  if (fixed) xt.row(x.rows()).setConstant(*fixed);
  else xt.row(x.rows()) = geo::sample_times(n, *horizon, seed).transpose();
  return xt;
}

std::vector<double> column(const Eigen::MatrixXd& m, Eigen::Index c) {
  return std::vector<double>(m.col(c).data(), m.col(c).data() + m.rows());
}

}  // namespace

TrainingData sample_training_data(const ansatz::Ansatz& a, const SampleSizes& sizes, std::uint64_t seed) {
  const auto& p = a.problem();
  const int d = p.dim();
  if (sizes.n_f < 1) throw std::invalid_argument("N_f must be positive");
  TrainingData data;
  const Eigen::MatrixXd xf = geo::sample_interior(p.domain, sizes.n_f, geo::mix_seed(seed, 1));
  data.collocation = a.prepare(with_times(xf, p.horizon, sizes.n_f, geo::mix_seed(seed, 2)));
  if (a.options().mode == Mode::hard) return data;

  const bool needs_boundary = !p.bcs.empty() || !p.slips.empty() || p.periodic.has_value();
  if (needs_boundary && sizes.n_b < 1) throw std::invalid_argument("soft modes need N_b boundary points");
  auto boundary_points = [&](const std::string& region, std::uint64_t salt) {
    const auto s = geo::sample_boundary(p.domain.regions[p.domain.region_index(region)], sizes.n_b,
                                        geo::mix_seed(seed, salt));
    return std::make_pair(s, with_times(s.points, p.horizon, sizes.n_b, geo::mix_seed(seed, salt + 1)));
  };
  for (std::size_t i = 0; i < p.bcs.size(); ++i) {
    const auto& bcond = p.bcs[i];
    auto [s, xt] = boundary_points(bcond.region, 100 + 2 * i);
    TrainingData::BoundaryBatch b;
    b.label = bcond.region + ":" + p.fields[static_cast<std::size_t>(bcond.field)].name;
    b.field = bcond.field;
    b.normals = s.normals;
    b.a.resize(xt.cols());
    b.b.resize(xt.cols());
    b.g.resize(xt.cols());
    for (Eigen::Index k = 0; k < xt.cols(); ++k) {
      const auto c = column(xt, k);
      b.a(k) = bc::eval(bcond.a, c);
      b.b(k) = bc::eval(bcond.b, c);
      b.g(k) = bc::eval(bcond.g, c);
    }
    b.points = a.prepare(xt);
    data.boundary.push_back(std::move(b));
  }
  for (std::size_t i = 0; i < p.slips.size(); ++i) {
    const auto& slip = p.slips[i];
    auto [s, xt] = boundary_points(slip.region, 300 + 2 * i);
    TrainingData::BoundaryBatch b;
    b.label = slip.region + ":slip";
    b.fields = slip.fields;
    b.normals = s.normals;
    b.g.resize(xt.cols());
    for (Eigen::Index k = 0; k < xt.cols(); ++k) b.g(k) = bc::eval(slip.g, column(xt, k));
    b.points = a.prepare(xt);
    data.boundary.push_back(std::move(b));
  }
  if (p.time_dependent() && !p.ics.empty()) {
    if (sizes.n_i < 1) throw std::invalid_argument("soft modes need N_i initial points");
    const Eigen::MatrixXd xi = geo::sample_interior(p.domain, sizes.n_i, geo::mix_seed(seed, 3));
    data.initial = a.prepare(with_times(xi, p.horizon, sizes.n_i, 0, 0.0));
    data.initial_values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p.fields.size()), xi.cols());
    for (Eigen::Index k = 0; k < xi.cols(); ++k) {
      const auto c = column(xi, k);
      for (const auto& ic : p.ics) data.initial_values(ic.field, k) = bc::eval(ic.f, c);
    }
  }
  if (p.periodic) {
    auto [s1, x1] = boundary_points(p.periodic->first, 400);
    auto [s2, x2] = boundary_points(p.periodic->second, 400);
    if (p.time_dependent()) x2.row(d) = x1.row(d);
    data.periodic_first = a.prepare(x1);
    data.periodic_second = a.prepare(x2);
  }
  return data;
}

Objective::Objective(ansatz::Ansatz& model, TrainingData data) : model_(model), data_(std::move(data)) {}

namespace {

struct Accumulator {
  ad::Tape& tape;
  Var sum;
  explicit Accumulator(ad::Tape& t) : tape(t), sum(t.variable(0.0)) {}
  void add_square(Var r) { sum = sum + r * r; }
};

}  // namespace

LossBreakdown Objective::evaluate(std::span<const double> theta, std::span<double> grad,
                                  std::span<double> grad_physics) {
  model_.set_parameters(theta);
  const auto& layout = model_.layout();
  const auto& problem = model_.problem();
  const auto S = static_cast<std::size_t>(layout.width());
  const auto K = static_cast<std::size_t>(layout.directions());
  const bool soft = model_.options().mode != Mode::hard;

  tape_.clear();
  LossBreakdown loss;
  std::vector<Recording> recs;
  Var physics, total;
  {
    ad::ActiveTape active(tape_);
    auto fields_at = [&](const Recording& rec, const PointSet& ps, int p) {
      problems::PointFields f;
      f.layout = &layout;
      const auto up = static_cast<std::size_t>(p);
      f.x = std::span<const double>(ps.xt.col(p).data(), static_cast<std::size_t>(layout.dim));
      f.t = layout.time ? ps.xt(layout.dim, p) : 0.0;
      f.value = std::span<const Var>(rec.value).subspan(up * S, S);
      f.first = std::span<const Var>(rec.first).subspan(up * S * K, S * K);
      if (!rec.second.empty()) f.second = std::span<const Var>(rec.second).subspan(up * S * K, S * K);
      return f;
    };
    auto mean = [&](Var sum, int n) { return sum * (1.0 / n); };

    recs.push_back(model_.record(data_.collocation));
    const int nf = data_.collocation.size();
    Accumulator pde(tape_), eq(tape_);
    std::vector<Var> res;
    bool any_extra = false;
    for (int p = 0; p < nf; ++p) {
      const auto f = fields_at(recs[0], data_.collocation, p);
      res.clear();
      problem.residual(f, res);
      if (static_cast<int>(res.size()) != problem.n_residuals) {
        throw std::logic_error(problem.name + ": residual function returned the wrong count");
      }
      for (auto r : res) pde.add_square(r);
      for (int j = 0; j < layout.fields(); ++j) {
        if (!layout.extra[static_cast<std::size_t>(j)]) continue;
        any_extra = true;
        for (int m = 0; m < layout.dim; ++m) {
          eq.add_square(f.component(layout.extra_offset(j) + m) - f.derivative(layout.offset(j), m));
        }
      }
    }
    const Var pde_mean = mean(pde.sum, nf);
    const Var eq_mean = mean(eq.sum, nf);
    physics = pde_mean + eq_mean;
    total = physics;
    loss.groups.emplace_back("pde", tape_.value(pde_mean));
    if (any_extra) {
      loss.groups.emplace_back("equilibrium", tape_.value(eq_mean));
    }
    loss.pde = tape_.value(pde_mean);
    loss.equilibrium = tape_.value(eq_mean);

    if (soft) {
      auto add_group = [&](const std::string& name, Var value, double& bucket) {
        total = total + value;
        const double v = tape_.value(value);
        bucket += v;
        loss.groups.emplace_back(name, v);
      };
      for (const auto& b : data_.boundary) {
        recs.push_back(model_.record(b.points));
        const auto& rec = recs.back();
        Accumulator acc(tape_);
        for (int p = 0; p < b.points.size(); ++p) {
          const auto f = fields_at(rec, b.points, p);
          if (b.fields.empty()) {
            Var r = b.a(p) * f.u(b.field) - b.g(p);
            for (int m = 0; m < layout.dim; ++m) r = r + (b.b(p) * b.normals(m, p)) * f.grad(b.field, m);
            acc.add_square(r);
          } else {
            Var r = f.u(b.fields[0]) * b.normals(0, p) - b.g(p);
            for (std::size_t m = 1; m < b.fields.size(); ++m) {
              r = r + f.u(b.fields[m]) * b.normals(static_cast<Eigen::Index>(m), p);
            }
            acc.add_square(r);
          }
        }
        add_group("bc:" + b.label, mean(acc.sum, b.points.size()), loss.bc);
      }
      if (data_.initial) {
        recs.push_back(model_.record(*data_.initial));
        const auto& rec = recs.back();
        Accumulator acc(tape_);
        for (int p = 0; p < data_.initial->size(); ++p) {
          const auto f = fields_at(rec, *data_.initial, p);
          for (const auto& ic : problem.ics) acc.add_square(f.u(ic.field) - data_.initial_values(ic.field, p));
        }
        add_group("ic", mean(acc.sum, data_.initial->size()), loss.ic);
      }
      if (data_.periodic_first) {
        recs.push_back(model_.record(*data_.periodic_first));
        recs.push_back(model_.record(*data_.periodic_second));
        const auto& r1 = recs[recs.size() - 2];
        const auto& r2 = recs.back();
        Accumulator value(tape_), slope(tape_);
        const int n = data_.periodic_first->size();
        for (int p = 0; p < n; ++p) {
          const auto f1 = fields_at(r1, *data_.periodic_first, p);
          const auto f2 = fields_at(r2, *data_.periodic_second, p);
          for (int j = 0; j < layout.fields(); ++j) {
            value.add_square(f1.u(j) - f2.u(j));
            slope.add_square(f1.du(j, 0) - f2.du(j, 0));
          }
        }
        add_group("periodic:value", mean(value.sum, n), loss.bc);
        add_group("periodic:derivative", mean(slope.sum, n), loss.bc);
      }
    }
    loss.total = tape_.value(total);
  }
  tape_.finalize();
  if (!std::isfinite(loss.total)) throw NonFiniteError("loss is not finite (" + std::to_string(loss.total) + ")");

  auto sweep = [&](Var root, std::span<double> out, std::size_t n_recs) {
    std::fill(out.begin(), out.end(), 0.0);
    tape_.adjoints(root, adjoints_);
    for (std::size_t r = 0; r < n_recs; ++r) model_.backward(recs[r], adjoints_, out);
    for (double g : out) {
      if (!std::isfinite(g)) throw NonFiniteError("gradient is not finite");
    }
  };
  if (!grad.empty()) sweep(total, grad, recs.size());
  if (!grad_physics.empty()) {
    if (!soft && !grad.empty()) std::copy(grad.begin(), grad.end(), grad_physics.begin());
    else sweep(physics, grad_physics, 1);
  }
  return loss;
}

// ---------------------------------------------------------------------------

void Adam::step(std::span<double> theta, std::span<const double> grad) {
  if (m.empty()) {
    m.assign(theta.size(), 0.0);
    v.assign(theta.size(), 0.0);
  }
  if (m.size() != theta.size() || grad.size() != theta.size()) throw std::invalid_argument("adam: size mismatch");
  ++step_count;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    if (!std::isfinite(g)) throw NonFiniteError("adam: gradient is not finite");
    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
    const double mh = m[i] / bc1;
    const double vh = v[i] / bc2;
    theta[i] -= lr * mh / (std::sqrt(vh) + eps);
  }
}

double Plateau::update(double loss, double lr) {
  if (loss < best * (1.0 - threshold)) {
    best = loss;
    bad_steps = 0;
  } else {
    ++bad_steps;
  }
  if (bad_steps > patience) {
    bad_steps = 0;
    const double reduced = std::max(lr * factor, min_lr);
    if (lr - reduced > 1e-8) return reduced;
  }
  return lr;
}

std::string to_string(LbfgsStop s) {
  switch (s) {
    case LbfgsStop::gradient: return "gradient";
    case LbfgsStop::relative_change: return "relative_change";
    case LbfgsStop::max_iters: return "max_iters";
    case LbfgsStop::line_search: return "line_search";
  }
  return "?";
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double x : a) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

LbfgsResult lbfgs(const ValueGrad& f, std::span<double> theta, const LbfgsOptions& o,
                  const std::function<void(int, double)>& on_iteration) {
  const std::size_t n = theta.size();
  std::vector<double> x(theta.begin(), theta.end()), g(n), d(n), x_new(n), g_new(n);
  std::deque<std::vector<double>> S, Y;
  std::deque<double> rho;
  constexpr double c1 = 1e-4, c2 = 0.9;

  LbfgsResult result;
  double fx = f(x, g);
  if (!std::isfinite(fx)) throw NonFiniteError("lbfgs: initial loss is not finite");
  result.value = fx;
  if (max_abs(g) < o.grad_tol) {
    result.reason = LbfgsStop::gradient;
    return result;
  }

  auto evaluate_at = [&](double t) {
    for (std::size_t i = 0; i < n; ++i) x_new[i] = x[i] + t * d[i];
    const double v = f(x_new, g_new);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  for (int k = 1; k <= o.max_iters; ++k) {
    // Two-loop recursion.
    for (std::size_t i = 0; i < n; ++i) d[i] = -g[i];
    std::vector<double> alpha(S.size());
    for (std::size_t j = S.size(); j-- > 0;) {
      alpha[j] = rho[j] * dot(S[j], d);
      for (std::size_t i = 0; i < n; ++i) d[i] -= alpha[j] * Y[j][i];
    }
    if (!S.empty()) {
      const double gamma = dot(S.back(), Y.back()) / dot(Y.back(), Y.back());
      for (auto& e : d) e *= gamma;
    }
    for (std::size_t j = 0; j < S.size(); ++j) {
      const double beta = rho[j] * dot(Y[j], d);
      for (std::size_t i = 0; i < n; ++i) d[i] += (alpha[j] - beta) * S[j][i];
    }
    double gtd = dot(g, d);
    if (!(gtd < 0.0)) {
      S.clear(), Y.clear(), rho.clear();
      for (std::size_t i = 0; i < n; ++i) d[i] = -g[i];
      gtd = dot(g, d);
    }
    double t = S.empty() ? std::min(1.0, 1.0 / std::accumulate(g.begin(), g.end(), 0.0,
                                                             [](double s, double e) { return s + std::abs(e); }))
                         : 1.0;

    bool accepted = false;
    double f_new = 0.0;
    if (!o.strong_wolfe) {
      for (int ls = 0; ls < o.max_line_search; ++ls) {
        f_new = evaluate_at(t);
        if (f_new <= fx + c1 * t * gtd) {
          accepted = true;
          break;
        }
        t *= 0.5;
      }
    } else {
      // Bracketing then bisection zoom.
      double lo = 0.0, hi = std::numeric_limits<double>::infinity(), f_lo = fx;
      for (int ls = 0; ls < o.max_line_search; ++ls) {
        f_new = evaluate_at(t);
        if (f_new > fx + c1 * t * gtd || (ls > 0 && f_new >= f_lo)) {
          hi = t;
        } else {
          const double gd = dot(g_new, d);
          if (std::abs(gd) <= -c2 * gtd) {
            accepted = true;
            break;
          }
          if (gd >= 0.0) hi = lo;
          lo = t;
          f_lo = f_new;
        }
        t = std::isinf(hi) ? 2.0 * t : 0.5 * (lo + hi);
      }
      if (!accepted && lo > 0.0) {
        f_new = evaluate_at(lo);
        accepted = f_new <= fx + c1 * lo * gtd;
      }
    }
    if (!accepted) {
      // Restore the last accepted point as the objective's current state.
      fx = f(x, g);
      result.reason = LbfgsStop::line_search;
      break;
    }

    std::vector<double> s(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = x_new[i] - x[i];
      y[i] = g_new[i] - g[i];
    }
    const double ys = dot(y, s);
    if (ys > 1e-10) {
      if (static_cast<int>(S.size()) == o.memory) S.pop_front(), Y.pop_front(), rho.pop_front();
      S.push_back(std::move(s));
      Y.push_back(std::move(y));
      rho.push_back(1.0 / ys);
    }
    const double change = std::abs(fx - f_new) / std::max(std::abs(fx), std::numeric_limits<double>::min());
    x.swap(x_new);
    g.swap(g_new);
    fx = f_new;
    result.iterations = k;
    result.value = fx;
    if (on_iteration) on_iteration(k, fx);
    if (max_abs(g) < o.grad_tol) {
      result.reason = LbfgsStop::gradient;
      break;
    }
    if (change < o.rel_tol) {
      result.reason = LbfgsStop::relative_change;
      break;
    }
    result.reason = LbfgsStop::max_iters;
  }
  result.value = fx;
  std::copy(x.begin(), x.end(), theta.begin());
  return result;
}

// ---------------------------------------------------------------------------

MovingVariance::MovingVariance(int window) : window_(window) {
  if (window < 1) throw std::invalid_argument("moving variance: window must be positive");
  ring_.resize(static_cast<std::size_t>(window));
}

std::optional<double> MovingVariance::push(double x) {
  ring_[count_ % ring_.size()] = x;
  ++count_;
  if (count_ < ring_.size()) return std::nullopt;
  const double mean = std::accumulate(ring_.begin(), ring_.end(), 0.0) / window_;
  double ss = 0.0;
  for (double e : ring_) ss += (e - mean) * (e - mean);
  return ss / window_;
}

MovingAverage::MovingAverage(int window) : window_(window) {
  if (window < 1) throw std::invalid_argument("moving average: window must be positive");
  ring_.resize(static_cast<std::size_t>(window));
}

std::optional<double> MovingAverage::push(double x) {
  ring_[count_ % ring_.size()] = x;
  ++count_;
  if (count_ < ring_.size()) return std::nullopt;
  return std::accumulate(ring_.begin(), ring_.end(), 0.0) / window_;
}

std::optional<double> GradStats::record(double mean_abs_value) {
  mean_abs_grad.push_back(mean_abs_value);
  auto v = movvar.push(mean_abs_value);
  movvar_series.push_back(v);
  return v;
}

double GradStats::coefficient_of_variation() const {
  if (mean_abs_grad.empty()) return 0.0;
  const double n = static_cast<double>(mean_abs_grad.size());
  const double mean = std::accumulate(mean_abs_grad.begin(), mean_abs_grad.end(), 0.0) / n;
  double ss = 0.0;
  for (double e : mean_abs_grad) ss += (e - mean) * (e - mean);
  return mean == 0.0 ? 0.0 : std::sqrt(ss / n) / mean;
}

int ratio_warmup(int window) { return 2 * (window - 1); }

std::vector<std::optional<double>> movvar_ratio(std::span<const double> original, std::span<const double> extra,
                                                int window) {
  if (original.size() != extra.size()) throw std::invalid_argument("movvar_ratio: series lengths differ");
  MovingVariance vo(window), ve(window);
  MovingAverage ao(window), ae(window);
  std::vector<std::optional<double>> out;
  const auto warm = static_cast<std::size_t>(ratio_warmup(window));
  for (std::size_t i = 0; i < original.size(); ++i) {
    std::optional<double> so, se;
    if (auto v = vo.push(original[i])) so = ao.push(*v);
    if (auto v = ve.push(extra[i])) se = ae.push(*v);
    if (i < warm) continue;
    if (so && se && *so > 0.0 && *se > 0.0) out.emplace_back(*so / *se);
    else out.emplace_back(std::nullopt);
  }
  return out;
}

// ---------------------------------------------------------------------------

TrainResult train(Objective& objective, const Schedule& schedule,
                  const std::function<void(const IterationRecord&)>& on_iteration) {
  using clock = std::chrono::steady_clock;
  auto& model = objective.model();
  std::vector<double> theta = model.parameters();
  const std::size_t n = theta.size();
  std::vector<double> grad(n), grad_f(n);
  TrainResult result;
  result.stats = GradStats(schedule.stats_window);

  Adam adam;
  adam.lr = schedule.lr;
  Plateau plateau = schedule.scheduler;
  double lr = schedule.lr;
  int iteration = 0;
  for (; iteration < schedule.adam_iters; ++iteration) {
    const auto start = clock::now();
    IterationRecord rec;
    rec.iteration = iteration;
    rec.phase = "adam";
    rec.lr = lr;
    rec.loss = objective.evaluate(theta, grad, grad_f);
    rec.mean_abs_grad = mean_abs(grad_f);
    rec.movvar = result.stats.record(rec.mean_abs_grad);
    adam.lr = lr;
    adam.step(theta, grad);
    if (schedule.plateau) lr = plateau.update(rec.loss.total, lr);
    rec.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - start).count();
    if (on_iteration) on_iteration(rec);
  }
  result.adam_iters = iteration;

  if (schedule.use_lbfgs && schedule.lbfgs.max_iters > 0) {
    LossBreakdown last;
    auto last_start = clock::now();
    const ValueGrad f = [&](std::span<const double> x, std::span<double> g) {
      last = objective.evaluate(x, g, grad_f);
      return last.total;
    };
    const auto res = lbfgs(f, theta, schedule.lbfgs, [&](int k, double) {
      IterationRecord rec;
      rec.iteration = iteration + k - 1;
      rec.phase = "lbfgs";
      rec.lr = 0.0;
      rec.loss = last;
      rec.mean_abs_grad = mean_abs(grad_f);
      rec.movvar = result.stats.record(rec.mean_abs_grad);
      const auto now = clock::now();
      rec.wall_ms = std::chrono::duration<double, std::milli>(now - last_start).count();
      last_start = now;
      if (on_iteration) on_iteration(rec);
    });
    result.lbfgs_iters = res.iterations;
    result.lbfgs_stop = res.reason;
  }
  model.set_parameters(theta);
  result.final_loss = objective.evaluate(theta, grad);
  return result;
}

}  // namespace hardpinn::train
