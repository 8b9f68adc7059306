#include "hardpinn/autodiff.hpp"

#include <string>

namespace hardpinn::ad {

namespace {
thread_local Tape* g_active = nullptr;
}

Var Tape::variable(double value) { return push(value, -1, 0.0); }

Var Tape::parameter(double value) {
  Var v = push(value, -1, 0.0);
  parameters_.push_back(v.index());
  return v;
}

void Tape::clear() {
  nodes_.clear();
  values_.clear();
  parameters_.clear();
  finalized_ = false;
}

void Tape::adjoints(Var root, std::vector<double>& out) const {
  if (!finalized_) throw std::logic_error("tape: reverse sweep requires a finalized tape");
  if (!root.valid() || static_cast<std::size_t>(root.index()) >= nodes_.size()) {
    throw std::out_of_range("tape: root is not a node of this tape");
  }
  out.assign(nodes_.size(), 0.0);
  out[static_cast<std::size_t>(root.index())] = 1.0;
  for (std::int32_t i = root.index(); i >= 0; --i) {
    const double adj = out[static_cast<std::size_t>(i)];
    if (adj == 0.0) continue;
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.lhs >= 0) out[static_cast<std::size_t>(n.lhs)] += n.dlhs * adj;
    if (n.rhs >= 0) out[static_cast<std::size_t>(n.rhs)] += n.drhs * adj;
  }
}

std::vector<double> Tape::adjoints(Var root) const {
  std::vector<double> out;
  adjoints(root, out);
  return out;
}

std::vector<double> Tape::gradient(Var root) const {
  const auto adj = adjoints(root);
  std::vector<double> g;
  g.reserve(parameters_.size());
  for (auto idx : parameters_) g.push_back(adj[static_cast<std::size_t>(idx)]);
  return g;
}

Tape& Tape::active() {
  if (g_active == nullptr) throw std::logic_error("tape: no active tape on this thread");
  return *g_active;
}

Tape* Tape::active_or_null() { return g_active; }

ActiveTape::ActiveTape(Tape& tape) : previous_(g_active) { g_active = &tape; }
ActiveTape::~ActiveTape() { g_active = previous_; }

DualD lift_input(double value, int direction, int n_directions) {
  if (n_directions < 1 || direction < 0 || direction >= n_directions) {
    throw std::out_of_range("lift_input: direction " + std::to_string(direction) +
                            " outside [0, " + std::to_string(n_directions) + ")");
  }
  DualD r(value, static_cast<std::size_t>(n_directions));
  r.d[static_cast<std::size_t>(direction)] = 1.0;
  return r;
}

DualV operator*(const DualD& a, const DualV& b) {
  detail::check_width(a.size(), b.size());
  auto& t = Tape::active();
  DualV r;
  const double bv = t.value(b.value);
  r.value = t.push(a.value * bv, b.value.index(), a.value);
  r.d.resize(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    // a.v * b.d_k + a.d_k * b.v
    const double ak = a.d[k];
    if (ak == 0.0) {
      r.d[k] = t.push(a.value * t.value(b.d[k]), b.d[k].index(), a.value);
    } else {
      r.d[k] = lincomb(a.value, b.d[k], ak, b.value);
    }
  }
  return r;
}

DualV operator+(const DualD& a, const DualV& b) {
  detail::check_width(a.size(), b.size());
  DualV r;
  r.value = b.value + a.value;
  r.d.resize(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    r.d[k] = a.d[k] == 0.0 ? b.d[k] : b.d[k] + a.d[k];
  }
  return r;
}

DualV operator-(const DualV& a, const DualD& b) {
  detail::check_width(a.size(), b.size());
  DualV r;
  r.value = a.value - b.value;
  r.d.resize(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    r.d[k] = b.d[k] == 0.0 ? a.d[k] : a.d[k] - b.d[k];
  }
  return r;
}

DualV operator-(const DualD& a, const DualV& b) { return -(b - a); }

}  // namespace hardpinn::ad
