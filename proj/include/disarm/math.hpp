#pragma once

#include <Eigen/Core>

#include <cmath>
#include <concepts>
#include <limits>
#include <stdexcept>

namespace disarm {

// Scalar helpers. Everything here is templated on the scalar type so the
// same code serves double-precision training and long-double oracles.

template <std::floating_point Scalar>
inline Scalar sigmoid(Scalar x) {
  using std::exp;
  if (x >= Scalar(0)) {
    return Scalar(1) / (Scalar(1) + exp(-x));
  }
  const Scalar e = exp(x);
  return e / (Scalar(1) + e);
}

// log(1 + exp(x)) without overflow or loss of precision for large |x|.
template <std::floating_point Scalar>
inline Scalar softplus(Scalar x) {
  using std::abs;
  using std::exp;
  using std::log1p;
  using std::max;
  return max(x, Scalar(0)) + log1p(exp(-abs(x)));
}

// log sigma(x) = -softplus(-x)
template <std::floating_point Scalar>
inline Scalar log_sigmoid(Scalar x) {
  return -softplus(-x);
}

// log(exp(a) + exp(b)); exact when either argument is -inf.
template <std::floating_point Scalar>
inline Scalar log_add_exp(Scalar a, Scalar b) {
  using std::exp;
  using std::log1p;
  if (a == -std::numeric_limits<Scalar>::infinity()) return b;
  if (b == -std::numeric_limits<Scalar>::infinity()) return a;
  if (a < b) std::swap(a, b);
  return a + log1p(exp(b - a));
}

// log(exp(a) - exp(b)) for a >= b. Returns -inf when a == b.
template <std::floating_point Scalar>
inline Scalar log_diff_exp(Scalar a, Scalar b) {
  using std::exp;
  using std::expm1;
  using std::log;
  using std::log1p;
  if (b > a) throw std::domain_error("log_diff_exp: b > a");
  if (b == -std::numeric_limits<Scalar>::infinity()) return a;
  const Scalar d = b - a;
  if (d == Scalar(0)) return -std::numeric_limits<Scalar>::infinity();
  // Two branches keep the relative error small on both ends of d.
  if (d > -Scalar(0.6931471805599453)) return a + log(-expm1(d));
  return a + log1p(-exp(d));
}

template <typename Derived>
inline typename Derived::Scalar log_sum_exp(const Eigen::DenseBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  using std::exp;
  using std::log;
  if (x.size() == 0) return -std::numeric_limits<Scalar>::infinity();
  const Scalar m = x.maxCoeff();
  if (!std::isfinite(static_cast<double>(m))) return m;
  Scalar s(0);
  for (Eigen::Index i = 0; i < x.size(); ++i) s += exp(x(i) - m);
  return m + log(s);
}

template <typename Derived>
inline typename Derived::Scalar log_mean_exp(const Eigen::DenseBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  if (x.size() == 0) throw std::invalid_argument("log_mean_exp: empty input");
  return log_sum_exp(x) - std::log(static_cast<Scalar>(x.size()));
}

// Elementwise versions for Eigen expressions.

template <typename Derived>
inline auto sigmoid(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return sigmoid(v); });
}

template <typename Derived>
inline auto softplus(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return softplus(v); });
}

template <typename Derived>
inline auto log_sigmoid(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return log_sigmoid(v); });
}

template <typename Derived>
inline bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.allFinite();
}

}  // namespace disarm
