#pragma once

#include <Eigen/Core>

#include <cmath>
#include <numbers>
#include <string>

#include "umrl/numerics/error.hpp"
#include "umrl/numerics/rng.hpp"

namespace umrl {

/// Lower clamp applied before taking the log of a probability.
inline constexpr double kLogFloor = 1e-12;

inline double safe_log(double p) { return std::log(std::max(p, kLogFloor)); }

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> log_softmax(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& logits) {
  const Scalar m = logits.maxCoeff();
  const Scalar lse = m + std::log((logits.array() - m).exp().sum());
  return (logits.array() - lse).matrix();
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> softmax(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& logits) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> e = (logits.array() - logits.maxCoeff()).exp().matrix();
  return e / e.sum();
}

template <typename Scalar = double>
class Categorical {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  explicit Categorical(Vector logits)
      : logits_(std::move(logits)), log_probs_(log_softmax<Scalar>(logits_)), probs_(log_probs_.array().exp().matrix()) {}

  Index size() const { return logits_.size(); }
  const Vector& logits() const { return logits_; }
  const Vector& probs() const { return probs_; }
  const Vector& log_probs() const { return log_probs_; }

  Scalar log_prob(Index action) const {
    check(action);
    return log_probs_[action];
  }

  Scalar entropy() const {
    Scalar h = 0;
    for (Index k = 0; k < size(); ++k)
      if (probs_[k] > 0) h -= probs_[k] * log_probs_[k];
    return h;
  }

  /// Inverse-CDF draw from one uniform variate.
  Index sample(Rng& rng) const {
    const double u = rng.uniform();
    double c = 0.0;
    for (Index k = 0; k < size(); ++k) {
      c += static_cast<double>(probs_[k]);
      if (u < c) return k;
    }
    return size() - 1;
  }

  /// d log p(action) / d logits = onehot(action) - p.
  Vector log_prob_grad(Index action) const {
    check(action);
    Vector g = -probs_;
    g[action] += 1;
    return g;
  }

  /// d H / d logits_k = -p_k (log p_k + H).
  Vector entropy_grad() const {
    const Scalar h = entropy();
    return (-probs_.array() * (log_probs_.array() + h)).matrix();
  }

 private:
  void check(Index action) const {
    if (action < 0 || action >= size())
      throw DimensionError("categorical action " + std::to_string(action) + " out of range [0," +
                           std::to_string(size()) + ")");
  }

  Vector logits_;
  Vector log_probs_;
  Vector probs_;
};

template <typename Scalar = double>
class DiagGaussian {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  DiagGaussian(Vector mean, Vector log_std) : mean_(std::move(mean)), log_std_(std::move(log_std)) {
    if (mean_.size() != log_std_.size())
      throw DimensionError("gaussian: mean and log_std lengths differ");
  }

  Index dim() const { return mean_.size(); }
  const Vector& mean() const { return mean_; }
  const Vector& log_std() const { return log_std_; }

  Vector sample(Rng& rng) const {
    Vector a(dim());
    for (Index i = 0; i < dim(); ++i) a[i] = mean_[i] + std::exp(log_std_[i]) * static_cast<Scalar>(rng.normal());
    return a;
  }

  Scalar log_prob(const Vector& action) const {
    check(action);
    const auto z = ((action - mean_).array() / log_std_.array().exp());
    return -0.5 * z.square().sum() - log_std_.sum() -
           static_cast<Scalar>(0.5 * std::log(2.0 * std::numbers::pi)) * static_cast<Scalar>(dim());
  }

  Scalar entropy() const {
    return log_std_.sum() + static_cast<Scalar>(0.5 * (1.0 + std::log(2.0 * std::numbers::pi))) * static_cast<Scalar>(dim());
  }

  Vector log_prob_grad_mean(const Vector& action) const {
    check(action);
    return ((action - mean_).array() / (2.0 * log_std_.array()).exp()).matrix();
  }

  Vector log_prob_grad_log_std(const Vector& action) const {
    check(action);
    return (((action - mean_).array() / log_std_.array().exp()).square() - 1.0).matrix();
  }

 private:
  void check(const Vector& action) const {
    if (action.size() != dim())
      throw DimensionError("gaussian action has length " + std::to_string(action.size()) + ", expected " +
                           std::to_string(dim()));
  }

  Vector mean_;
  Vector log_std_;
};

}  // namespace umrl
