#pragma once

#include <Eigen/Core>

#include "disarm/bernoulli.hpp"
#include "disarm/objective.hpp"
#include "disarm/rng.hpp"

namespace disarm {

// Mixture weight between the antithetic coupling (beta = 1) and two
// independent draws (beta = 0).
class InterpolationConfig {
 public:
  explicit InterpolationConfig(double beta);
  double beta() const { return beta_; }

 private:
  double beta_;
};

// ---------------------------------------------------------------------------
// Kernels on precomputed objective values. These never touch f, so callers
// that batch their objective evaluations (the VAE code) share the exact same
// arithmetic as the ObjectiveFunction entry points below.

// (f(b) - baseline) (b - sigma(alpha))
Eigen::VectorXd reinforce_partials(const LogitParameterVector& logits, const Bits& b,
                                   double f_b, double baseline);

// 1/2 [(f(b) - f(b~)) (b - sigma) + (f(b~) - f(b)) (b~ - sigma)]
Eigen::VectorXd loo_partials(const LogitParameterVector& logits, const Bits& b,
                             const Bits& b_tilde, double f_b, double f_b_tilde);

// 1/2 (f(b) - f(b~)) (2u - 1)
Eigen::VectorXd arm_partials(const Eigen::VectorXd& u, double f_b, double f_b_tilde);

// 1/2 (f(b) - f(b~)) (-1)^{b~_i} 1{b_i != b~_i} sigma(|alpha_i|)
Eigen::VectorXd disarm_partials(const LogitParameterVector& logits, const Bits& b,
                                const Bits& b_tilde, double f_b, double f_b_tilde);

// Posterior probability that (b, b~) came from the antithetic component of the
// beta-mixture. The mixture indicator is shared by all dimensions, so the
// joint likelihoods are products of the per-dimension tables; they are
// accumulated in log space.
double antithetic_posterior(const LogitParameterVector& logits, const Bits& b,
                            const Bits& b_tilde, double beta);

Eigen::VectorXd interpolated_partials(const LogitParameterVector& logits, const Bits& b,
                                      const Bits& b_tilde, double f_b, double f_b_tilde,
                                      double beta);

// ---------------------------------------------------------------------------
// Estimators. Each evaluates f exactly as many times as objective_evals says.

GradientEstimate reinforce_baseline(const LogitParameterVector& logits, ObjectiveFunction& f,
                                    double baseline, Rng& rng);

// Two independent draws, each centred by the other's value.
GradientEstimate reinforce_loo(const LogitParameterVector& logits, ObjectiveFunction& f, Rng& rng);
GradientEstimate reinforce_loo(const LogitParameterVector& logits, ObjectiveFunction& f,
                               const Bits& b, const Bits& b_tilde);

GradientEstimate arm(const LogitParameterVector& logits, ObjectiveFunction& f,
                     const AntitheticPair& pair);

GradientEstimate disarm(const LogitParameterVector& logits, ObjectiveFunction& f,
                        const AntitheticPair& pair);

// Samples the mixture component, then the pair from that component.
GradientEstimate interpolated(const LogitParameterVector& logits, ObjectiveFunction& f,
                              const InterpolationConfig& config, Rng& rng);
GradientEstimate interpolated(const LogitParameterVector& logits, ObjectiveFunction& f,
                              const InterpolationConfig& config, const Bits& b,
                              const Bits& b_tilde);

}  // namespace disarm

namespace disarm {

struct EstimatorOptions {
  double beta = 0.5;      // interpolated
  double baseline = 0.0;  // reinforce
};

// Dispatch by id; arm and disarm consume the rng identically, so on one
// stream they see the same pair.
GradientEstimate estimate(EstimatorId id, const LogitParameterVector& logits, ObjectiveFunction& f,
                          Rng& rng, const EstimatorOptions& options = {});

}  // namespace disarm
