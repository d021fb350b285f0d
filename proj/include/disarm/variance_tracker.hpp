#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace disarm {

inline constexpr double kVarianceDecay = 0.999;

// Exponential moving averages of g and g^2 for one parameter group.
// Both moments are bias-corrected by 1 - decay^t before use.
class VarianceTracker {
 public:
  explicit VarianceTracker(double decay = kVarianceDecay) : decay_(decay) {
    if (!(decay > 0.0 && decay < 1.0)) throw std::invalid_argument("VarianceTracker: decay must lie in (0, 1)");
  }

  void update(const Eigen::Ref<const Eigen::VectorXd>& g) {
    if (updates_ == 0) {
      m1_ = Eigen::VectorXd::Zero(g.size());
      m2_ = Eigen::VectorXd::Zero(g.size());
    } else if (g.size() != m1_.size()) {
      throw std::invalid_argument("VarianceTracker: gradient size changed");
    }
    m1_ = decay_ * m1_ + (1.0 - decay_) * g;
    m2_ = decay_ * m2_ + (1.0 - decay_) * g.cwiseProduct(g);
    ++updates_;
  }

  // Per-parameter variance, clamped at zero.
  Eigen::VectorXd variance() const {
    if (updates_ == 0) return {};
    const double c = 1.0 - std::pow(decay_, static_cast<double>(updates_));
    const Eigen::VectorXd mean = m1_ / c;
    return (m2_ / c - mean.cwiseProduct(mean)).cwiseMax(0.0);
  }

  // Variance averaged over parameters.
  double mean_variance() const {
    if (updates_ == 0) return 0.0;
    return variance().mean();
  }

  std::uint64_t updates() const { return updates_; }
  double decay() const { return decay_; }

 private:
  double decay_;
  std::uint64_t updates_ = 0;
  Eigen::VectorXd m1_;
  Eigen::VectorXd m2_;
};

}  // namespace disarm
