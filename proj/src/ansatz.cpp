#include "hardpinn/ansatz.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <set>
#include <stdexcept>

namespace hardpinn::ansatz {

using problems::Layout;
using problems::ProblemSpec;

std::string to_string(Mode m) {
  switch (m) {
    case Mode::hard: return "hard";
    case Mode::soft: return "soft";
    case Mode::soft_extra: return "soft_extra_fields";
  }
  return "?";
}

Mode mode_from_string(const std::string& s) {
  if (s == "hard") return Mode::hard;
  if (s == "soft") return Mode::soft;
  if (s == "soft_extra_fields") return Mode::soft_extra;
  throw std::invalid_argument("unknown mode '" + s + "' (expected hard, soft or soft_extra_fields)");
}

namespace {

std::vector<DualD> lift_all(std::span<const double> xt, int K) {
  std::vector<DualD> v;
  v.reserve(xt.size());
  for (int k = 0; k < K; ++k) v.push_back(ad::lift_input(xt[static_cast<std::size_t>(k)], k, K));
  return v;
}

// Whether a coefficient function vanishes on every probe point of a region.
std::pair<bool, bool> probe_coefficients(const ProblemSpec& p, const bc::BoundaryCondition& b, std::size_t region,
                                         std::uint64_t seed) {
  const auto s = geo::sample_boundary(p.domain.regions[region], 64, seed);
  Eigen::VectorXd times;
  if (p.time_dependent()) times = geo::sample_times(64, *p.horizon, geo::mix_seed(seed, 1));
  bool a_used = false, b_used = false;
  std::vector<double> xt;
  for (Eigen::Index i = 0; i < s.points.cols(); ++i) {
    xt.assign(s.points.col(i).data(), s.points.col(i).data() + s.points.rows());
    if (p.time_dependent()) xt.push_back(times(i));
    a_used = a_used || bc::eval(b.a, xt) != 0.0;
    b_used = b_used || bc::eval(b.b, xt) != 0.0;
  }
  return {a_used, b_used};
}

}  // namespace

std::vector<Constraint> build_constraints(const ProblemSpec& problem, const Layout& layout, std::uint64_t seed) {
  std::vector<Constraint> out;
  const int d = layout.dim;
  for (std::size_t i = 0; i < problem.bcs.size(); ++i) {
    const auto& b = problem.bcs[i];
    Constraint c;
    c.region = problem.domain.region_index(b.region);
    c.label = b.region + ":" + problem.fields[static_cast<std::size_t>(b.field)].name;
    const auto [a_used, b_used] = probe_coefficients(problem, b, c.region, geo::mix_seed(seed, 7000 + i));
    if (!a_used && !b_used) throw std::invalid_argument(c.label + ": a and b vanish on the whole region");
    std::vector<std::size_t> keep;
    if (a_used) {
      c.components.push_back(layout.offset(b.field));
      keep.push_back(0);
    }
    if (b_used) {
      if (!layout.extra[static_cast<std::size_t>(b.field)]) {
        throw std::invalid_argument(c.label + ": a derivative condition needs extra fields for '" +
                                    problem.fields[static_cast<std::size_t>(b.field)].name + "'");
      }
      for (int m = 0; m < d; ++m) {
        c.components.push_back(layout.extra_offset(b.field) + m);
        keep.push_back(static_cast<std::size_t>(1 + m));
      }
    }
    c.data = [b, keep](std::span<const DualD> xt, std::span<const DualD> normal) {
      auto full = bc::normalize(b, xt, normal);
      bc::Normalized<DualD> r;
      r.g = full.g;
      for (auto k : keep) r.n.push_back(full.n[k]);
      return r;
    };
    out.push_back(std::move(c));
  }
  for (const auto& s : problem.slips) {
    Constraint c;
    c.region = problem.domain.region_index(s.region);
    c.label = s.region + ":slip";
    for (int j : s.fields) c.components.push_back(layout.offset(j));
    c.data = [g = s.g](std::span<const DualD> xt, std::span<const DualD> normal) {
      bc::Normalized<DualD> r;
      r.n.assign(normal.begin(), normal.end());
      r.g = g(xt);
      return r;
    };
    out.push_back(std::move(c));
  }
  return out;
}

Ansatz::Ansatz(ProblemSpec problem, Options options)
    : problem_(std::move(problem)), options_(std::move(options)) {
  problem_.validate();
  const bool extra = options_.mode != Mode::soft;
  layout_ = problem_.layout(extra);
  if (options_.second_order && options_.mode != Mode::soft) {
    throw std::invalid_argument("second-order input derivatives are only available in plain soft mode");
  }
  order_ = options_.second_order ? 2 : 1;
  const int K = layout_.directions();
  const int S = layout_.width();

  nets_.push_back(nn::init(nn::MlpSpec::make(K, options_.main_hidden, S), options_.seed));

  if (options_.mode != Mode::hard) return;
  if (problem_.periodic) throw std::invalid_argument(problem_.name + ": periodic conditions need a soft mode");
  if (!(options_.beta_s > 0.0)) throw std::invalid_argument("beta_s must be positive");
  if (problem_.time_dependent() && !(options_.beta_t > 0.0)) throw std::invalid_argument("beta_t must be positive");

  constraints_ = build_constraints(problem_, layout_, options_.seed);
  component_regions_.assign(static_cast<std::size_t>(S), {});
  for (const auto& c : constraints_) {
    for (int s : c.components) {
      auto& regions = component_regions_[static_cast<std::size_t>(s)];
      if (std::find(regions.begin(), regions.end(), c.region) == regions.end()) regions.push_back(c.region);
    }
  }

  for (std::size_t i = 0; i < constraints_.size(); ++i) {
    const auto& ci = constraints_[i];
    std::vector<std::size_t> others;
    for (std::size_t k = 0; k < constraints_.size(); ++k) {
      if (k == i) continue;
      const auto& ck = constraints_[k];
      const bool shares = std::any_of(ck.components.begin(), ck.components.end(), [&](int s) {
        return std::find(ci.components.begin(), ci.components.end(), s) != ci.components.end();
      });
      if (!shares) continue;
      if (ck.region == ci.region) {
        throw std::invalid_argument(ci.label + " and " + ck.label +
                                    " constrain the same components on the same region");
      }
      if (std::find(others.begin(), others.end(), ck.region) == others.end()) others.push_back(ck.region);
    }
    std::sort(others.begin(), others.end());
    const double m = geo::estimate_min_distance(problem_.domain, ci.region, others, options_.n_probe,
                                                geo::mix_seed(options_.seed, 9000 + i));
    if (!(m > 0.0)) throw std::invalid_argument(ci.label + ": zero distance to an overlapping boundary");
    min_distance_.push_back(m);
    alpha_.push_back(std::isinf(m) ? 0.0 : options_.beta_s / m);

    if (ci.components.size() >= 2) {
      subnet_of_.push_back(static_cast<int>(nets_.size()));
      const auto spec = nn::MlpSpec::make(K, options_.sub_hidden, static_cast<int>(ci.components.size()));
      nets_.push_back(nn::init(spec, geo::mix_seed(options_.seed, i + 1)));
    } else {
      subnet_of_.push_back(-1);
    }
  }
}

std::size_t Ansatz::parameter_count() const {
  std::size_t n = 0;
  for (const auto& net : nets_) n += net.size();
  return n;
}

std::vector<double> Ansatz::parameters() const {
  std::vector<double> theta;
  theta.reserve(parameter_count());
  for (const auto& net : nets_) theta.insert(theta.end(), net.flat().begin(), net.flat().end());
  return theta;
}

void Ansatz::set_parameters(std::span<const double> theta) {
  if (theta.size() != parameter_count()) throw std::invalid_argument("set_parameters: wrong parameter count");
  std::size_t off = 0;
  for (auto& net : nets_) {
    std::copy_n(theta.begin() + static_cast<std::ptrdiff_t>(off), net.size(), net.flat().begin());
    off += net.size();
  }
}

PointConstants Ansatz::point_constants(std::span<const double> xt) const {
  const int K = layout_.directions();
  const int d = layout_.dim;
  const auto lifted = lift_all(xt, K);
  const std::span<const DualD> xt_dual(lifted);
  const auto x = xt_dual.first(static_cast<std::size_t>(d));
  PointConstants c;

  std::vector<std::optional<DualD>> region_distance(problem_.domain.regions.size());
  auto distance = [&](std::size_t r) -> const DualD& {
    if (!region_distance[r]) region_distance[r] = geo::region_distance<DualD>(problem_.domain.regions[r], x);
    return *region_distance[r];
  };

  for (std::size_t i = 0; i < constraints_.size(); ++i) {
    const auto& ci = constraints_[i];
    const auto& region = problem_.domain.regions[ci.region];
    const auto normal = geo::region_normal<DualD>(region, x);
    auto nd = ci.data(xt_dual, normal);
    c.normal.push_back(std::move(nd.n));
    c.target.push_back(nd.g);
    c.weight.push_back(alpha_[i] == 0.0 ? DualD(1.0, static_cast<std::size_t>(K))
                                        : exp(-alpha_[i] * distance(ci.region)));
  }
  for (const auto& regions : component_regions_) {
    if (regions.empty()) {
      c.distance.emplace_back(1.0, static_cast<std::size_t>(K));
      continue;
    }
    std::vector<DualD> ls;
    for (auto r : regions) ls.push_back(distance(r));
    c.distance.push_back(geo::zero_preserving_min<DualD>(ls, options_.distance_beta));
  }
  if (layout_.time) {
    c.decay = exp(-options_.beta_t * xt_dual[static_cast<std::size_t>(d)]);
    c.initial.assign(static_cast<std::size_t>(layout_.fields()), DualD(0.0, static_cast<std::size_t>(K)));
    for (const auto& ic : problem_.ics) c.initial[static_cast<std::size_t>(ic.field)] = ic.f(x);
  }
  return c;
}

PointSet Ansatz::prepare(const Eigen::MatrixXd& xt) const {
  if (xt.rows() != layout_.directions()) throw std::invalid_argument("prepare: points have the wrong dimension");
  PointSet ps;
  ps.xt = xt;
  if (options_.mode == Mode::hard) {
    ps.constants.reserve(static_cast<std::size_t>(xt.cols()));
    for (Eigen::Index p = 0; p < xt.cols(); ++p) {
      const Eigen::VectorXd col = xt.col(p);
      ps.constants.push_back(point_constants(geo::as_span(col)));
    }
  }
  return ps;
}

template <class V>
void Ansatz::assemble(const PointConstants& c, std::span<const V> main, const std::vector<std::vector<V>>& sub,
                      bool blend, std::vector<V>& out) const {
  const auto S = main.size();
  out.clear();
  out.reserve(S);
  for (std::size_t s = 0; s < S; ++s) {
    out.push_back(component_regions_[s].empty() ? main[s] : c.distance[s] * main[s]);
  }
  for (std::size_t i = 0; i < constraints_.size(); ++i) {
    const auto& grp = constraints_[i].components;
    if (subnet_of_[i] >= 0) {
      const auto& v = sub[static_cast<std::size_t>(subnet_of_[i])];
      const auto P = bc::general_solution<DualD, V>(c.normal[i], c.target[i], v);
      for (std::size_t q = 0; q < grp.size(); ++q) {
        auto& o = out[static_cast<std::size_t>(grp[q])];
        o = alpha_[i] == 0.0 ? o + P[q] : o + c.weight[i] * P[q];
      }
    } else {
      auto& o = out[static_cast<std::size_t>(grp[0])];
      o = o + c.weight[i] * (c.normal[i][0] * c.target[i]);
    }
  }
  if (blend && layout_.time) {
    const DualD keep = 1.0 - c.decay;
    for (const auto& ic : problem_.ics) {
      auto& o = out[static_cast<std::size_t>(layout_.offset(ic.field))];
      o = keep * o + c.initial[static_cast<std::size_t>(ic.field)] * c.decay;
    }
  }
}

std::vector<std::vector<DualD>> Ansatz::evaluate(const PointSet& points, bool spatial_only) const {
  const int K = layout_.directions();
  const int N = points.size();
  std::vector<nn::BatchJet> jets;
  for (const auto& net : nets_) jets.push_back(nn::forward_batch(net, points.xt, 1));
  auto jet_duals = [&](const nn::BatchJet& j, int p) {
    std::vector<DualD> v;
    for (Eigen::Index r = 0; r < j.data.rows(); ++r) {
      DualD e(j.value()(r, p), static_cast<std::size_t>(K));
      for (int k = 0; k < K; ++k) e.d[static_cast<std::size_t>(k)] = j.first(k)(r, p);
      v.push_back(std::move(e));
    }
    return v;
  };
  std::vector<std::vector<DualD>> out(static_cast<std::size_t>(N));
  std::vector<std::vector<DualD>> sub(nets_.size());
  for (int p = 0; p < N; ++p) {
    auto main = jet_duals(jets[0], p);
    if (options_.mode != Mode::hard) {
      out[static_cast<std::size_t>(p)] = std::move(main);
      continue;
    }
    for (std::size_t n = 1; n < nets_.size(); ++n) sub[n] = jet_duals(jets[n], p);
    assemble<DualD>(points.constants[static_cast<std::size_t>(p)], main, sub, !spatial_only,
                    out[static_cast<std::size_t>(p)]);
  }
  return out;
}

Eigen::MatrixXd Ansatz::predict(const Eigen::MatrixXd& xt) const {
  const auto comps = evaluate(prepare(xt));
  Eigen::MatrixXd out(layout_.fields(), xt.cols());
  for (Eigen::Index p = 0; p < xt.cols(); ++p) {
    for (int j = 0; j < layout_.fields(); ++j) {
      out(j, p) = comps[static_cast<std::size_t>(p)][static_cast<std::size_t>(layout_.offset(j))].value;
    }
  }
  return out;
}

Recording Ansatz::record(const PointSet& points) const {
  auto& tape = ad::Tape::active();
  const int K = layout_.directions();
  const int N = points.size();
  const int blocks = 1 + K * order_;
  Recording rec;
  rec.points = N;
  rec.traces.resize(nets_.size());
  for (std::size_t n = 0; n < nets_.size(); ++n) {
    rec.jets.push_back(nn::forward_batch(nets_[n], points.xt, order_, &rec.traces[n]));
    const auto& jet = rec.jets.back();
    rec.leaf_base.push_back(static_cast<std::int32_t>(tape.size()));
    const auto rows = jet.data.rows();
    for (int p = 0; p < N; ++p) {
      for (Eigen::Index r = 0; r < rows; ++r) {
        for (int b = 0; b < blocks; ++b) tape.variable(jet.data(r, static_cast<Eigen::Index>(b) * N + p));
      }
    }
  }
  auto leaf = [&](std::size_t n, int p, Eigen::Index r, int b) {
    const auto rows = rec.jets[n].data.rows();
    return Var(rec.leaf_base[n] + static_cast<std::int32_t>((p * rows + r) * blocks + b));
  };
  auto leaf_duals = [&](std::size_t n, int p) {
    std::vector<DualV> v;
    for (Eigen::Index r = 0; r < rec.jets[n].data.rows(); ++r) {
      ad::Tangents<Var> t;
      for (int k = 0; k < K; ++k) t.push_back(leaf(n, p, r, 1 + k));
      v.emplace_back(leaf(n, p, r, 0), std::move(t));
    }
    return v;
  };

  const auto S = static_cast<std::size_t>(layout_.width());
  rec.value.reserve(S * static_cast<std::size_t>(N));
  rec.first.reserve(S * static_cast<std::size_t>(N * K));
  std::vector<std::vector<DualV>> sub(nets_.size());
  std::vector<DualV> comps;
  for (int p = 0; p < N; ++p) {
    if (options_.mode != Mode::hard) {
      for (std::size_t s = 0; s < S; ++s) {
        const auto r = static_cast<Eigen::Index>(s);
        rec.value.push_back(leaf(0, p, r, 0));
        for (int k = 0; k < K; ++k) rec.first.push_back(leaf(0, p, r, 1 + k));
        if (order_ == 2) {
          for (int k = 0; k < K; ++k) rec.second.push_back(leaf(0, p, r, 1 + K + k));
        }
      }
      continue;
    }
    const auto main = leaf_duals(0, p);
    for (std::size_t n = 1; n < nets_.size(); ++n) sub[n] = leaf_duals(n, p);
    assemble<DualV>(points.constants[static_cast<std::size_t>(p)], main, sub, true, comps);
    for (const auto& c : comps) {
      rec.value.push_back(c.value);
      rec.first.insert(rec.first.end(), c.d.begin(), c.d.end());
    }
  }
  return rec;
}

void Ansatz::backward(const Recording& rec, std::span<const double> adjoints, std::span<double> grad) const {
  if (grad.size() != parameter_count()) throw std::invalid_argument("backward: gradient has the wrong length");
  const int K = layout_.directions();
  const int N = rec.points;
  const int blocks = 1 + K * order_;
  std::size_t off = 0;
  for (std::size_t n = 0; n < nets_.size(); ++n) {
    const auto rows = static_cast<int>(rec.jets[n].data.rows());
    auto adj = nn::BatchJet::zeros(rows, N, K, order_);
    const double* a = adjoints.data() + rec.leaf_base[n];
    for (int p = 0; p < N; ++p) {
      for (int r = 0; r < rows; ++r) {
        for (int b = 0; b < blocks; ++b) adj.data(r, static_cast<Eigen::Index>(b) * N + p) = *a++;
      }
    }
    nn::backward_batch(nets_[n], rec.traces[n], adj, grad.subspan(off, nets_[n].size()));
    off += nets_[n].size();
  }
}

std::vector<ConstraintReport> Ansatz::boundary_report(int n, std::uint64_t seed) const {
  if (options_.mode != Mode::hard) throw std::logic_error("boundary_report: only the hard-constraint ansatz embeds conditions");
  const int d = layout_.dim;
  const int K = layout_.directions();
  std::vector<ConstraintReport> out;
  for (std::size_t i = 0; i < constraints_.size(); ++i) {
    const auto& ci = constraints_[i];
    const auto s = geo::sample_boundary(problem_.domain.regions[ci.region], n, geo::mix_seed(seed, i));
    Eigen::MatrixXd xt(K, n);
    xt.topRows(d) = s.points;
    if (layout_.time) xt.row(d) = geo::sample_times(n, *problem_.horizon, geo::mix_seed(seed, 500 + i)).transpose();
    const auto ps = prepare(xt);
    const auto comps = evaluate(ps, true);

    std::vector<nn::BatchJet> jets;
    for (const auto& net : nets_) jets.push_back(nn::forward_batch(net, xt, 1));

    ConstraintReport rep;
    rep.label = ci.label;
    std::vector<double> other_max(constraints_.size(), 0.0);
    for (int p = 0; p < n; ++p) {
      const auto& c = ps.constants[static_cast<std::size_t>(p)];
      double dot = -c.target[i].value;
      for (std::size_t q = 0; q < ci.components.size(); ++q) {
        dot += c.normal[i][q].value * comps[static_cast<std::size_t>(p)][static_cast<std::size_t>(ci.components[q])].value;
      }
      rep.max_residual = std::max(rep.max_residual, std::abs(dot));
      for (std::size_t k = 0; k < constraints_.size(); ++k) {
        if (k == i) continue;
        const auto& ck = constraints_[k];
        double norm2 = 0.0;
        if (subnet_of_[k] >= 0) {
          const auto& j = jets[static_cast<std::size_t>(subnet_of_[k])];
          std::vector<double> v, nk;
          for (std::size_t q = 0; q < ck.components.size(); ++q) {
            v.push_back(j.value()(static_cast<Eigen::Index>(q), p));
            nk.push_back(c.normal[k][q].value);
          }
          const auto P = bc::general_solution<double, double>(nk, c.target[k].value, v);
          for (double e : P) norm2 += e * e;
        } else {
          const double e = c.normal[k][0].value * c.target[k].value;
          norm2 = e * e;
        }
        other_max[k] = std::max(other_max[k], std::sqrt(norm2));
      }
    }
    for (std::size_t k = 0; k < constraints_.size(); ++k) {
      if (k == i) continue;
      const auto& ck = constraints_[k];
      const bool shares = std::any_of(ck.components.begin(), ck.components.end(), [&](int s) {
        return std::find(ci.components.begin(), ci.components.end(), s) != ci.components.end();
      });
      if (shares) rep.other_bound += other_max[k];
    }
    rep.bound = std::exp(-options_.beta_s) * rep.other_bound;
    out.push_back(rep);
  }
  return out;
}

template void Ansatz::assemble<DualD>(const PointConstants&, std::span<const DualD>,
                                      const std::vector<std::vector<DualD>>&, bool, std::vector<DualD>&) const;
template void Ansatz::assemble<DualV>(const PointConstants&, std::span<const DualV>,
                                      const std::vector<std::vector<DualV>>&, bool, std::vector<DualV>&) const;

}  // namespace hardpinn::ansatz
