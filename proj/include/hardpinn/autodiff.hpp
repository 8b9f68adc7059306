#pragma once

// Mixed-mode differentiation: forward-mode dual numbers for input
// derivatives, recorded onto a reverse-mode tape for parameter gradients.

#include <boost/container/small_vector.hpp>

#include <cmath>
#include <cstddef>
#include <concepts>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <type_traits>
#include <vector>

namespace hardpinn {

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

namespace ad {

class Tape;

/// Handle to a node of the tape that is active on the calling thread.
class Var {
 public:
  Var() = default;
  explicit Var(std::int32_t index) : index_(index) {}

  std::int32_t index() const { return index_; }
  bool valid() const { return index_ >= 0; }
  double value() const;

 private:
  std::int32_t index_ = -1;
};

/// Append-only record of scalar operations. Each node stores at most two
/// operands with their local partial derivatives; operands always precede
/// the node, so one backwards pass yields exact adjoints.
class Tape {
 public:
  struct Node {
    std::int32_t lhs = -1;
    std::int32_t rhs = -1;
    double dlhs = 0.0;
    double drhs = 0.0;
  };

  Var variable(double value);
  Var parameter(double value);

  Var push(double value, std::int32_t lhs, double dlhs) {
    return push(value, lhs, dlhs, -1, 0.0);
  }
  Var push(double value, std::int32_t lhs, double dlhs, std::int32_t rhs, double drhs) {
    if (finalized_) throw std::logic_error("tape: cannot record onto a finalized tape");
    nodes_.push_back(Node{lhs, rhs, dlhs, drhs});
    values_.push_back(value);
    return Var(static_cast<std::int32_t>(values_.size() - 1));
  }

  double value(Var v) const { return values_[static_cast<std::size_t>(v.index())]; }
  std::size_t size() const { return nodes_.size(); }
  std::span<const std::int32_t> parameters() const { return parameters_; }

  void finalize() { finalized_ = true; }
  bool finalized() const { return finalized_; }
  void clear();

  /// Reverse sweep seeded at `root`; `out` receives the adjoint of every node.
  void adjoints(Var root, std::vector<double>& out) const;
  std::vector<double> adjoints(Var root) const;

  /// d(root)/d(parameter) for every parameter slot, in registration order.
  std::vector<double> gradient(Var root) const;

  static Tape& active();
  static Tape* active_or_null();

 private:
  friend class ActiveTape;
  std::vector<Node> nodes_;
  std::vector<double> values_;
  std::vector<std::int32_t> parameters_;
  bool finalized_ = false;
};

/// Makes `tape` the recording target of the current thread for its lifetime.
class ActiveTape {
 public:
  explicit ActiveTape(Tape& tape);
  ~ActiveTape();
  ActiveTape(const ActiveTape&) = delete;
  ActiveTape& operator=(const ActiveTape&) = delete;

 private:
  Tape* previous_;
};

inline double Var::value() const { return Tape::active().value(*this); }

// ---------------------------------------------------------------------------
// Var arithmetic

inline Var operator+(Var a, Var b) {
  auto& t = Tape::active();
  return t.push(t.value(a) + t.value(b), a.index(), 1.0, b.index(), 1.0);
}
inline Var operator-(Var a, Var b) {
  auto& t = Tape::active();
  return t.push(t.value(a) - t.value(b), a.index(), 1.0, b.index(), -1.0);
}
inline Var operator*(Var a, Var b) {
  auto& t = Tape::active();
  const double av = t.value(a), bv = t.value(b);
  return t.push(av * bv, a.index(), bv, b.index(), av);
}
inline Var operator/(Var a, Var b) {
  auto& t = Tape::active();
  const double av = t.value(a), bv = t.value(b);
  if (bv == 0.0) throw DomainError("division by zero");
  return t.push(av / bv, a.index(), 1.0 / bv, b.index(), -av / (bv * bv));
}
inline Var operator-(Var a) {
  auto& t = Tape::active();
  return t.push(-t.value(a), a.index(), -1.0);
}
inline Var operator+(Var a, double s) {
  auto& t = Tape::active();
  return t.push(t.value(a) + s, a.index(), 1.0);
}
inline Var operator+(double s, Var a) { return a + s; }
inline Var operator-(Var a, double s) { return a + (-s); }
inline Var operator-(double s, Var a) {
  auto& t = Tape::active();
  return t.push(s - t.value(a), a.index(), -1.0);
}
inline Var operator*(Var a, double s) {
  auto& t = Tape::active();
  return t.push(t.value(a) * s, a.index(), s);
}
inline Var operator*(double s, Var a) { return a * s; }
inline Var operator/(Var a, double s) {
  if (s == 0.0) throw DomainError("division by zero");
  return a * (1.0 / s);
}
inline Var operator/(double s, Var a) {
  auto& t = Tape::active();
  const double av = t.value(a);
  if (av == 0.0) throw DomainError("division by zero");
  return t.push(s / av, a.index(), -s / (av * av));
}
inline Var& operator+=(Var& a, Var b) { return a = a + b; }
inline Var& operator-=(Var& a, Var b) { return a = a - b; }
inline Var& operator*=(Var& a, Var b) { return a = a * b; }

/// alpha*x + beta*y as a single node.
inline Var lincomb(double alpha, Var x, double beta, Var y) {
  auto& t = Tape::active();
  return t.push(alpha * t.value(x) + beta * t.value(y), x.index(), alpha, y.index(), beta);
}

inline Var tanh(Var a) {
  auto& t = Tape::active();
  const double y = std::tanh(t.value(a));
  return t.push(y, a.index(), 1.0 - y * y);
}
inline Var exp(Var a) {
  auto& t = Tape::active();
  const double y = std::exp(t.value(a));
  return t.push(y, a.index(), y);
}
inline Var log(Var a) {
  auto& t = Tape::active();
  const double v = t.value(a);
  if (!(v > 0.0)) throw DomainError("log of non-positive value");
  return t.push(std::log(v), a.index(), 1.0 / v);
}
inline Var sin(Var a) {
  auto& t = Tape::active();
  const double v = t.value(a);
  return t.push(std::sin(v), a.index(), std::cos(v));
}
inline Var cos(Var a) {
  auto& t = Tape::active();
  const double v = t.value(a);
  return t.push(std::cos(v), a.index(), -std::sin(v));
}
inline Var sqrt(Var a) {
  auto& t = Tape::active();
  const double v = t.value(a);
  if (!(v > 0.0)) throw DomainError("sqrt of non-positive value");
  const double y = std::sqrt(v);
  return t.push(y, a.index(), 0.5 / y);
}
inline Var pow(Var a, double e) {
  auto& t = Tape::active();
  const double v = t.value(a);
  if (v <= 0.0 && e != std::floor(e)) throw DomainError("pow of non-positive base");
  if (v == 0.0 && e < 1.0) throw DomainError("pow derivative undefined at zero");
  return t.push(std::pow(v, e), a.index(), e * std::pow(v, e - 1.0));
}

inline double value_of(double x) { return x; }
inline double value_of(Var x) { return x.value(); }

// ---------------------------------------------------------------------------
// Dual numbers

template <class T>
using Tangents = boost::container::small_vector<T, 12>;

/// Value plus derivatives along a fixed set of input directions.
template <class T>
struct Dual {
  T value{};
  Tangents<T> d;

  Dual() = default;
  Dual(T v, Tangents<T> tangents) : value(std::move(v)), d(std::move(tangents)) {}
  /// Constant with `n` zero tangents (arithmetic scalars only).
  Dual(T v, std::size_t n)
    requires(!std::is_same_v<T, Var>)
      : value(std::move(v)), d(n, T{}) {}

  std::size_t size() const { return d.size(); }
};

using DualD = Dual<double>;
using DualV = Dual<Var>;

template <class T>
struct is_dual : std::false_type {};
template <class T>
struct is_dual<Dual<T>> : std::true_type {};

template <class T>
double value_of(const Dual<T>& x) {
  return value_of(x.value);
}

/// Unit-seeded input: value with tangent e_direction.
DualD lift_input(double value, int direction, int n_directions);

namespace detail {
inline void check_width(std::size_t a, std::size_t b) {
  if (a != b) throw std::invalid_argument("dual: tangent width mismatch");
}
}  // namespace detail

// Same-type arithmetic.
template <class T>
Dual<T> operator+(const Dual<T>& a, const Dual<T>& b) {
  detail::check_width(a.size(), b.size());
  Dual<T> r;
  r.value = a.value + b.value;
  r.d.resize(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) r.d[k] = a.d[k] + b.d[k];
  return r;
}
template <class T>
Dual<T> operator-(const Dual<T>& a, const Dual<T>& b) {
  detail::check_width(a.size(), b.size());
  Dual<T> r;
  r.value = a.value - b.value;
  r.d.resize(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) r.d[k] = a.d[k] - b.d[k];
  return r;
}
template <class T>
Dual<T> operator*(const Dual<T>& a, const Dual<T>& b) {
  detail::check_width(a.size(), b.size());
  Dual<T> r;
  r.value = a.value * b.value;
  r.d.resize(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) r.d[k] = a.value * b.d[k] + a.d[k] * b.value;
  return r;
}
template <class T>
Dual<T> operator/(const Dual<T>& a, const Dual<T>& b) {
  detail::check_width(a.size(), b.size());
  if (value_of(b.value) == 0.0) throw DomainError("division by zero");
  Dual<T> r;
  r.value = a.value / b.value;
  r.d.resize(a.size());
  const T inv_b = 1.0 / b.value;
  for (std::size_t k = 0; k < a.size(); ++k) r.d[k] = (a.d[k] - r.value * b.d[k]) * inv_b;
  return r;
}
template <class T>
Dual<T> operator-(const Dual<T>& a) {
  Dual<T> r;
  r.value = -a.value;
  r.d.resize(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) r.d[k] = -a.d[k];
  return r;
}

// Dual with a non-double scalar that multiplies into its tangents (a Var
// weight against Dual<Var>, or against nested Dual<Dual<Var>>).
template <class S, class T>
  requires(!std::is_same_v<S, double> && !is_dual<S>::value) && requires(const S& s, const T& t) {
    { s * t } -> std::convertible_to<T>;
    { t + s } -> std::convertible_to<T>;
  }
Dual<T> operator*(const S& s, const Dual<T>& a) {
  Dual<T> r;
  r.value = s * a.value;
  r.d.resize(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) r.d[k] = s * a.d[k];
  return r;
}
template <class S, class T>
  requires(!std::is_same_v<S, double> && !is_dual<S>::value) && requires(const S& s, const T& t) {
    { t + s } -> std::convertible_to<T>;
  }
Dual<T> operator+(const Dual<T>& a, const S& s) {
  Dual<T> r = a;
  r.value = a.value + s;
  return r;
}

// Dual with a double constant.
template <class T>
Dual<T> operator+(const Dual<T>& a, double s) {
  Dual<T> r = a;
  r.value = a.value + s;
  return r;
}
template <class T>
Dual<T> operator+(double s, const Dual<T>& a) {
  return a + s;
}
template <class T>
Dual<T> operator-(const Dual<T>& a, double s) {
  return a + (-s);
}
template <class T>
Dual<T> operator-(double s, const Dual<T>& a) {
  return (-a) + s;
}
template <class T>
Dual<T> operator*(const Dual<T>& a, double s) {
  Dual<T> r;
  r.value = a.value * s;
  r.d.resize(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) r.d[k] = a.d[k] * s;
  return r;
}
template <class T>
Dual<T> operator*(double s, const Dual<T>& a) {
  return a * s;
}
template <class T>
Dual<T> operator/(const Dual<T>& a, double s) {
  if (s == 0.0) throw DomainError("division by zero");
  return a * (1.0 / s);
}
template <class T>
Dual<T> operator/(double s, const Dual<T>& a) {
  Dual<T> num(T(s), a.size());
  return num / a;
}

template <class T, class U>
Dual<T>& operator+=(Dual<T>& a, const U& b) {
  return a = a + b;
}
template <class T, class U>
Dual<T>& operator-=(Dual<T>& a, const U& b) {
  return a = a - b;
}
template <class T, class U>
Dual<T>& operator*=(Dual<T>& a, const U& b) {
  return a = a * b;
}

// Mixed: constant-in-parameters DualD against tape-recorded DualV. These
// fold each tangent into a single tape node.
DualV operator*(const DualD& a, const DualV& b);
inline DualV operator*(const DualV& a, const DualD& b) { return b * a; }
DualV operator+(const DualD& a, const DualV& b);
inline DualV operator+(const DualV& a, const DualD& b) { return b + a; }
DualV operator-(const DualV& a, const DualD& b);
DualV operator-(const DualD& a, const DualV& b);

// Elementary functions; chain rule on each tangent.
template <class T>
Dual<T> tanh(const Dual<T>& a) {
  using std::tanh;
  Dual<T> r;
  r.value = tanh(a.value);
  const T slope = 1.0 - r.value * r.value;
  r.d.resize(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) r.d[k] = a.d[k] * slope;
  return r;
}
template <class T>
Dual<T> exp(const Dual<T>& a) {
  using std::exp;
  Dual<T> r;
  r.value = exp(a.value);
  r.d.resize(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) r.d[k] = a.d[k] * r.value;
  return r;
}
template <class T>
Dual<T> log(const Dual<T>& a) {
  using std::log;
  if (!(value_of(a.value) > 0.0)) throw DomainError("log of non-positive value");
  Dual<T> r;
  r.value = log(a.value);
  const T inv = 1.0 / a.value;
  r.d.resize(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) r.d[k] = a.d[k] * inv;
  return r;
}
template <class T>
Dual<T> sin(const Dual<T>& a) {
  using std::cos;
  using std::sin;
  Dual<T> r;
  r.value = sin(a.value);
  const T c = cos(a.value);
  r.d.resize(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) r.d[k] = a.d[k] * c;
  return r;
}
template <class T>
Dual<T> cos(const Dual<T>& a) {
  using std::cos;
  using std::sin;
  Dual<T> r;
  r.value = cos(a.value);
  const T s = -sin(a.value);
  r.d.resize(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) r.d[k] = a.d[k] * s;
  return r;
}
template <class T>
Dual<T> sqrt(const Dual<T>& a) {
  using std::sqrt;
  const double v = value_of(a.value);
  if (v < 0.0) throw DomainError("sqrt of negative value");
  Dual<T> r;
  r.value = sqrt(a.value);
  r.d.resize(a.size());
  if (v == 0.0) {
    for (std::size_t k = 0; k < a.size(); ++k) {
      if (value_of(a.d[k]) != 0.0) throw DomainError("sqrt derivative undefined at zero");
      r.d[k] = a.d[k];
    }
    return r;
  }
  const T slope = 0.5 / r.value;
  for (std::size_t k = 0; k < a.size(); ++k) r.d[k] = a.d[k] * slope;
  return r;
}
template <class T>
Dual<T> pow(const Dual<T>& a, double e) {
  using std::pow;
  const double v = value_of(a.value);
  if (v <= 0.0 && e != std::floor(e)) throw DomainError("pow of non-positive base");
  Dual<T> r;
  r.value = pow(a.value, e);
  const T slope = e * pow(a.value, e - 1.0);
  r.d.resize(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) r.d[k] = a.d[k] * slope;
  return r;
}

/// Branch-selecting min; derivative follows the smaller operand.
template <class T>
Dual<T> min(const Dual<T>& a, const Dual<T>& b) {
  return value_of(b) < value_of(a) ? b : a;
}
inline Var min(Var a, Var b) { return b.value() < a.value() ? b : a; }

/// Exact forward-mode gradient of a scalar function of `x`.
template <class F>
std::vector<double> input_gradient(F&& f, std::span<const double> x) {
  const int n = static_cast<int>(x.size());
  std::vector<DualD> args;
  args.reserve(x.size());
  for (int k = 0; k < n; ++k) args.push_back(lift_input(x[static_cast<std::size_t>(k)], k, n));
  const DualD y = f(std::span<const DualD>(args));
  return std::vector<double>(y.d.begin(), y.d.end());
}

}  // namespace ad
}  // namespace hardpinn
