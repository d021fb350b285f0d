#include "disarm/estimators.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "disarm/math.hpp"

namespace disarm {

InterpolationConfig::InterpolationConfig(double beta) : beta_(beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) {
    throw std::invalid_argument("InterpolationConfig: beta must lie in [0, 1]");
  }
}

namespace {

void check_dims(const LogitParameterVector& logits, const Bits& b, const Bits& b_tilde) {
  if (b.size() != logits.dim() || b_tilde.size() != logits.dim()) {
    throw std::invalid_argument("estimator: sample/logit dimension mismatch");
  }
}

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log q^A(b_i, b~_i) for the antithetic joint of one dimension. The agreeing
// cell on the side of the mode has mass |2p - 1| = tanh(|alpha| / 2), the
// other agreeing cell is impossible, and each disagreeing cell has mass
// min(p, 1 - p) = sigma(-|alpha|).
double log_antithetic_cell(double alpha, bool b, bool b_tilde) {
  if (b != b_tilde) return log_sigmoid(-std::abs(alpha));
  const bool mode_is_one = alpha >= 0.0;  // p >= 0.5
  if (b != mode_is_one) return kNegInf;
  return std::log(std::tanh(0.5 * std::abs(alpha)));
}

double log_independent_cell(double alpha, bool b, bool b_tilde) {
  return (b ? log_sigmoid(alpha) : log_sigmoid(-alpha)) +
         (b_tilde ? log_sigmoid(alpha) : log_sigmoid(-alpha));
}

}  // namespace

Eigen::VectorXd reinforce_partials(const LogitParameterVector& logits, const Bits& b,
                                   double f_b, double baseline) {
  return (f_b - baseline) * score(logits, b);
}

Eigen::VectorXd loo_partials(const LogitParameterVector& logits, const Bits& b,
                             const Bits& b_tilde, double f_b, double f_b_tilde) {
  check_dims(logits, b, b_tilde);
  const Eigen::VectorXd p = logits.probabilities();
  const double diff = f_b - f_b_tilde;
  return 0.5 * (diff * (to_real(b) - p) - diff * (to_real(b_tilde) - p));
}

Eigen::VectorXd arm_partials(const Eigen::VectorXd& u, double f_b, double f_b_tilde) {
  return (0.5 * (f_b - f_b_tilde)) * (2.0 * u.array() - 1.0).matrix();
}

Eigen::VectorXd disarm_partials(const LogitParameterVector& logits, const Bits& b,
                                const Bits& b_tilde, double f_b, double f_b_tilde) {
  check_dims(logits, b, b_tilde);
  const double half_diff = 0.5 * (f_b - f_b_tilde);
  Eigen::VectorXd g(logits.dim());
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    g(i) = half_diff * conditional_score_expectation(logits[i], b(i) != 0, b_tilde(i) != 0);
  }
  return g;
}

double antithetic_posterior(const LogitParameterVector& logits, const Bits& b,
                            const Bits& b_tilde, double beta) {
  check_dims(logits, b, b_tilde);
  double log_a = beta > 0.0 ? std::log(beta) : kNegInf;
  double log_i = beta < 1.0 ? std::log1p(-beta) : kNegInf;
  for (Eigen::Index d = 0; d < logits.dim(); ++d) {
    const bool bd = b(d) != 0;
    const bool td = b_tilde(d) != 0;
    log_a += log_antithetic_cell(logits[d], bd, td);
    log_i += log_independent_cell(logits[d], bd, td);
  }
  const double log_norm = log_add_exp(log_a, log_i);
  // Only reachable when both components assign zero mass; fall back on the prior.
  if (log_norm == kNegInf) return beta;
  if (log_a == kNegInf) return 0.0;
  return std::exp(log_a - log_norm);
}

Eigen::VectorXd interpolated_partials(const LogitParameterVector& logits, const Bits& b,
                                      const Bits& b_tilde, double f_b, double f_b_tilde,
                                      double beta) {
  const double post = antithetic_posterior(logits, b, b_tilde, beta);
  return post * disarm_partials(logits, b, b_tilde, f_b, f_b_tilde) +
         (1.0 - post) * loo_partials(logits, b, b_tilde, f_b, f_b_tilde);
}

GradientEstimate reinforce_baseline(const LogitParameterVector& logits, ObjectiveFunction& f,
                                    double baseline, Rng& rng) {
  const Bits b = sample_bernoulli(logits, rng);
  const double f_b = f(b);
  return {reinforce_partials(logits, b, f_b, baseline), EstimatorId::reinforce, 1};
}

GradientEstimate reinforce_loo(const LogitParameterVector& logits, ObjectiveFunction& f,
                               Rng& rng) {
  const Bits b = sample_bernoulli(logits, rng);
  const Bits b_tilde = sample_bernoulli(logits, rng);
  return reinforce_loo(logits, f, b, b_tilde);
}

GradientEstimate reinforce_loo(const LogitParameterVector& logits, ObjectiveFunction& f,
                               const Bits& b, const Bits& b_tilde) {
  check_dims(logits, b, b_tilde);
  const double f_b = f(b);
  const double f_t = f(b_tilde);
  return {loo_partials(logits, b, b_tilde, f_b, f_t), EstimatorId::reinforce_loo, 2};
}

GradientEstimate arm(const LogitParameterVector& logits, ObjectiveFunction& f,
                     const AntitheticPair& pair) {
  check_dims(logits, pair.b, pair.b_tilde);
  if (pair.u.size() != logits.dim()) {
    throw std::invalid_argument("arm: uniform/logit dimension mismatch");
  }
  const double f_b = f(pair.b);
  const double f_t = f(pair.b_tilde);
  return {arm_partials(pair.u, f_b, f_t), EstimatorId::arm, 2};
}

GradientEstimate disarm(const LogitParameterVector& logits, ObjectiveFunction& f,
                        const AntitheticPair& pair) {
  check_dims(logits, pair.b, pair.b_tilde);
  const double f_b = f(pair.b);
  const double f_t = f(pair.b_tilde);
  return {disarm_partials(logits, pair.b, pair.b_tilde, f_b, f_t), EstimatorId::disarm, 2};
}

GradientEstimate interpolated(const LogitParameterVector& logits, ObjectiveFunction& f,
                              const InterpolationConfig& config, Rng& rng) {
  const bool antithetic = rng.uniform() < config.beta();
  if (antithetic) {
    const AntitheticPair pair = sample_antithetic(logits, rng);
    return interpolated(logits, f, config, pair.b, pair.b_tilde);
  }
  const Bits b = sample_bernoulli(logits, rng);
  const Bits b_tilde = sample_bernoulli(logits, rng);
  return interpolated(logits, f, config, b, b_tilde);
}

GradientEstimate interpolated(const LogitParameterVector& logits, ObjectiveFunction& f,
                              const InterpolationConfig& config, const Bits& b,
                              const Bits& b_tilde) {
  check_dims(logits, b, b_tilde);
  const double f_b = f(b);
  const double f_t = f(b_tilde);
  return {interpolated_partials(logits, b, b_tilde, f_b, f_t, config.beta()),
          EstimatorId::interpolated, 2};
}

}  // namespace disarm

namespace disarm {

GradientEstimate estimate(EstimatorId id, const LogitParameterVector& logits, ObjectiveFunction& f,
                          Rng& rng, const EstimatorOptions& options) {
  switch (id) {
    case EstimatorId::reinforce:
      return reinforce_baseline(logits, f, options.baseline, rng);
    case EstimatorId::reinforce_loo:
      return reinforce_loo(logits, f, rng);
    case EstimatorId::arm:
      return arm(logits, f, sample_antithetic(logits, rng));
    case EstimatorId::disarm:
      return disarm(logits, f, sample_antithetic(logits, rng));
    case EstimatorId::interpolated:
      return interpolated(logits, f, InterpolationConfig(options.beta), rng);
    default:
      throw std::invalid_argument("estimator '" + std::string(to_string(id)) +
                                  "' needs a multi-sample objective");
  }
}

}  // namespace disarm
