#pragma once

// Temperature softmax and the information measures built on it. Everything
// here is a pure function templated on the Eigen scalar; logs are natural.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace cqkd {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Softmax temperature; always strictly positive and finite.
class Temperature {
 public:
  explicit Temperature(double tau) : tau_(tau) {
    if (!(tau > 0.0) || !std::isfinite(tau)) {
      throw std::invalid_argument("temperature must be positive and finite, got " +
                                  std::to_string(tau));
    }
  }

  double value() const { return tau_; }

 private:
  double tau_;
};

/// Floor applied to probabilities inside logarithms.
template <typename Scalar>
inline constexpr Scalar kProbEpsilon = Scalar(1e-12);

/// Allowed deviation of a probability vector's sum from one.
template <typename Scalar>
inline constexpr Scalar kProbSumTolerance = std::is_same_v<Scalar, float> ? Scalar(1e-3) : Scalar(1e-9);

namespace detail {

template <typename Derived>
void check_logits(const Eigen::MatrixBase<Derived>& z) {
  if (z.size() < 2) {
    throw std::invalid_argument("logit vector needs at least 2 entries");
  }
  if (!z.allFinite()) {
    throw std::invalid_argument("logit vector has non-finite entries");
  }
}

template <typename Derived>
void check_index(const Eigen::MatrixBase<Derived>& v, Eigen::Index y) {
  if (y < 0 || y >= v.size()) {
    throw std::invalid_argument("class index " + std::to_string(y) + " out of range [0, " +
                                std::to_string(v.size()) + ")");
  }
}

}  // namespace detail

/// Throws std::invalid_argument unless p is a valid probability vector.
template <typename Derived>
void check_probabilities(const Eigen::MatrixBase<Derived>& p) {
  using Scalar = typename Derived::Scalar;
  if (p.size() < 2) {
    throw std::invalid_argument("probability vector needs at least 2 entries");
  }
  if (!p.allFinite() || (p.array() < Scalar(0)).any()) {
    throw std::invalid_argument("probability vector has negative or non-finite entries");
  }
  const Scalar sum = p.sum();
  if (std::abs(sum - Scalar(1)) > kProbSumTolerance<Scalar>) {
    throw std::invalid_argument("probability vector sums to " + std::to_string(sum));
  }
}

/// Index of the largest entry; ties go to the lowest index.
template <typename Derived>
Eigen::Index argmax(const Eigen::MatrixBase<Derived>& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return best;
}

template <typename Derived>
Vector<typename Derived::Scalar> softmax_tau(const Eigen::MatrixBase<Derived>& z, Temperature tau) {
  using Scalar = typename Derived::Scalar;
  detail::check_logits(z);
  const Scalar inv_tau = Scalar(1.0 / tau.value());
  Vector<Scalar> p = ((z.array() - z.maxCoeff()) * inv_tau).exp().matrix();
  p /= p.sum();
  return p;
}

/// Column-wise softmax_tau over a K x batch logit matrix.
template <typename Derived>
Matrix<typename Derived::Scalar> softmax_tau_columns(const Eigen::MatrixBase<Derived>& z, Temperature tau) {
  using Scalar = typename Derived::Scalar;
  Matrix<Scalar> p(z.rows(), z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) p.col(j) = softmax_tau(z.col(j), tau);
  return p;
}

/// Vector-Jacobian product of softmax_tau: (dp/dz)^T * upstream.
template <typename DerivedZ, typename DerivedU>
Vector<typename DerivedZ::Scalar> softmax_tau_jacobian_vp(const Eigen::MatrixBase<DerivedZ>& z,
                                                         Temperature tau,
                                                         const Eigen::MatrixBase<DerivedU>& upstream) {
  using Scalar = typename DerivedZ::Scalar;
  if (upstream.size() != z.size()) {
    throw std::invalid_argument("upstream length does not match logits");
  }
  const Vector<Scalar> p = softmax_tau(z, tau);
  const Scalar inner = p.dot(upstream);
  return (p.array() * (upstream.array() - inner)).matrix() * Scalar(1.0 / tau.value());
}

/// Shannon entropy in nats, with 0 ln 0 = 0.
template <typename Derived>
typename Derived::Scalar entropy(const Eigen::MatrixBase<Derived>& p) {
  using Scalar = typename Derived::Scalar;
  check_probabilities(p);
  Scalar h = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) > Scalar(0)) h -= p(i) * std::log(p(i));
  }
  return h;
}

/// -ln p_y for a one-hot target at class y.
template <typename Derived>
typename Derived::Scalar cross_entropy(Eigen::Index y, const Eigen::MatrixBase<Derived>& p) {
  using Scalar = typename Derived::Scalar;
  detail::check_index(p, y);
  check_probabilities(p);
  return -std::log(std::max(p(y), kProbEpsilon<Scalar>));
}

/// Gradient of cross_entropy with respect to p.
template <typename Derived>
Vector<typename Derived::Scalar> cross_entropy_grad(Eigen::Index y, const Eigen::MatrixBase<Derived>& p) {
  using Scalar = typename Derived::Scalar;
  detail::check_index(p, y);
  Vector<Scalar> g = Vector<Scalar>::Zero(p.size());
  g(y) = Scalar(-1) / std::max(p(y), kProbEpsilon<Scalar>);
  return g;
}

/// KL(p || q) = sum_i p_i ln(p_i / q_i). p is the reference distribution.
template <typename DerivedP, typename DerivedQ>
typename DerivedP::Scalar kl_divergence(const Eigen::MatrixBase<DerivedP>& p,
                                        const Eigen::MatrixBase<DerivedQ>& q) {
  using Scalar = typename DerivedP::Scalar;
  if (p.size() != q.size()) {
    throw std::invalid_argument("kl_divergence: length mismatch");
  }
  check_probabilities(p);
  check_probabilities(q);
  Scalar d = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) > Scalar(0)) d += p(i) * std::log(p(i) / std::max(q(i), kProbEpsilon<Scalar>));
  }
  return d;
}

/// Gradient of KL(p || q) with respect to q.
template <typename DerivedP, typename DerivedQ>
Vector<typename DerivedP::Scalar> kl_divergence_grad_q(const Eigen::MatrixBase<DerivedP>& p,
                                                      const Eigen::MatrixBase<DerivedQ>& q) {
  using Scalar = typename DerivedP::Scalar;
  if (p.size() != q.size()) {
    throw std::invalid_argument("kl_divergence_grad_q: length mismatch");
  }
  return -(p.array() / q.array().max(kProbEpsilon<Scalar>)).matrix();
}

}  // namespace cqkd
