#include "disarm/multisample.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "disarm/math.hpp"

namespace disarm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLn2 = 0.6931471805599453;

}  // namespace

MultiSampleBatch make_multisample_batch(const LogitParameterVector& logits, Eigen::Index pair_count,
                                        ObjectiveFunction& log_weight, Rng& rng) {
  if (pair_count < 1) throw std::invalid_argument("multisample batch: K must be >= 1");
  MultiSampleBatch batch;
  batch.pairs.reserve(static_cast<std::size_t>(pair_count));
  for (Eigen::Index k = 0; k < pair_count; ++k) {
    batch.pairs.push_back(sample_antithetic(logits, rng));
  }
  batch.log_w.resize(2 * pair_count);
  for (Eigen::Index k = 0; k < pair_count; ++k) {
    batch.log_w(k) = log_weight(batch.pairs[static_cast<std::size_t>(k)].b);
  }
  for (Eigen::Index k = 0; k < pair_count; ++k) {
    batch.log_w(pair_count + k) = log_weight(batch.pairs[static_cast<std::size_t>(k)].b_tilde);
  }
  validate(batch, logits);
  return batch;
}

void validate(const MultiSampleBatch& batch, const LogitParameterVector& logits) {
  if (batch.pairs.empty()) throw std::invalid_argument("multisample batch: no pairs");
  if (batch.log_w.size() != 2 * batch.pair_count()) {
    throw std::invalid_argument("multisample batch: log_w must hold 2K entries");
  }
  if (!batch.log_w.allFinite()) {
    throw std::invalid_argument("multisample batch: non-finite log weight");
  }
  for (const auto& pair : batch.pairs) {
    if (pair.b.size() != logits.dim() || pair.b_tilde.size() != logits.dim()) {
      throw std::invalid_argument("multisample batch: pair/logit dimension mismatch");
    }
  }
}

double multi_sample_bound(const Eigen::Ref<const Eigen::VectorXd>& log_w) {
  if (log_w.size() == 0) throw std::invalid_argument("multi_sample_bound: empty input");
  return log_mean_exp(log_w);
}

Eigen::VectorXd leave_one_out_log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& log_w) {
  const Eigen::Index n = log_w.size();
  Eigen::VectorXd out(n);
  if (n == 0) return out;
  if (n == 1) {
    out(0) = kNegInf;
    return out;
  }
  const double total = log_sum_exp(log_w);
  for (Eigen::Index k = 0; k < n; ++k) {
    // Subtracting a term that holds more than half the mass loses digits.
    if (total - log_w(k) > kLn2) {
      out(k) = log_diff_exp(total, log_w(k));
    } else {
      double m = kNegInf;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j != k) m = std::max(m, log_w(j));
      }
      double s = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j != k) s += std::exp(log_w(j) - m);
      }
      out(k) = m + std::log(s);
    }
  }
  return out;
}

Eigen::VectorXd vimco_signals(const Eigen::Ref<const Eigen::VectorXd>& log_w) {
  const Eigen::Index n = log_w.size();
  if (n < 2) throw std::invalid_argument("vimco: needs at least 2 samples");
  const double bound = multi_sample_bound(log_w);
  const Eigen::VectorXd loo = leave_one_out_log_sum_exp(log_w);
  const double log_n_minus_1 = std::log(static_cast<double>(n - 1));
  Eigen::VectorXd signals(n);
  for (Eigen::Index k = 0; k < n; ++k) signals(k) = bound - (loo(k) - log_n_minus_1);
  return signals;
}

GradientEstimate vimco(const LogitParameterVector& logits,
                       const Eigen::Ref<const Eigen::VectorXd>& log_w,
                       const std::vector<Bits>& samples) {
  if (static_cast<Eigen::Index>(samples.size()) != log_w.size()) {
    throw std::invalid_argument("vimco: one log weight per sample required");
  }
  if (!log_w.allFinite()) throw std::invalid_argument("vimco: non-finite log weight");
  const Eigen::VectorXd signals = vimco_signals(log_w);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(logits.dim());
  for (std::size_t k = 0; k < samples.size(); ++k) {
    g += signals(static_cast<Eigen::Index>(k)) * score(logits, samples[k]);
  }
  return {std::move(g), EstimatorId::vimco, samples.size()};
}

Eigen::VectorXd disarm_multisample_signals(const Eigen::Ref<const Eigen::VectorXd>& log_w_trunk,
                                           const Eigen::Ref<const Eigen::VectorXd>& log_w_antithetic) {
  const Eigen::Index k_pairs = log_w_trunk.size();
  if (k_pairs < 1 || log_w_antithetic.size() != k_pairs) {
    throw std::invalid_argument("disarm_multisample: mismatched weight halves");
  }
  const double log_k = std::log(static_cast<double>(k_pairs));
  const Eigen::VectorXd ctx_trunk = leave_one_out_log_sum_exp(log_w_trunk);
  const Eigen::VectorXd ctx_anti = leave_one_out_log_sum_exp(log_w_antithetic);

  Eigen::VectorXd signals(k_pairs);
  for (Eigen::Index k = 0; k < k_pairs; ++k) {
    const double wb = log_w_trunk(k);
    const double wt = log_w_antithetic(k);
    const double f_trunk_b = log_add_exp(ctx_trunk(k), wb) - log_k;
    const double f_trunk_t = log_add_exp(ctx_trunk(k), wt) - log_k;
    const double f_anti_b = log_add_exp(ctx_anti(k), wb) - log_k;
    const double f_anti_t = log_add_exp(ctx_anti(k), wt) - log_k;
    signals(k) = 0.25 * ((f_trunk_b - f_trunk_t) + (f_anti_b - f_anti_t));
  }
  return signals;
}

GradientEstimate disarm_multisample(const LogitParameterVector& logits,
                                    const MultiSampleBatch& batch) {
  validate(batch, logits);
  const Eigen::VectorXd signals =
      disarm_multisample_signals(batch.log_w_trunk(), batch.log_w_antithetic());
  Eigen::VectorXd g = Eigen::VectorXd::Zero(logits.dim());
  for (Eigen::Index k = 0; k < batch.pair_count(); ++k) {
    const auto& pair = batch.pairs[static_cast<std::size_t>(k)];
    for (Eigen::Index i = 0; i < logits.dim(); ++i) {
      g(i) += signals(k) *
              conditional_score_expectation(logits[i], pair.b(i) != 0, pair.b_tilde(i) != 0);
    }
  }
  return {std::move(g), EstimatorId::disarm_multisample,
          static_cast<std::size_t>(batch.log_w.size())};
}

}  // namespace disarm
