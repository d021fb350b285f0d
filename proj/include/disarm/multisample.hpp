#pragma once

#include <Eigen/Core>

#include <vector>

#include "disarm/bernoulli.hpp"
#include "disarm/objective.hpp"
#include "disarm/rng.hpp"

namespace disarm {

// K antithetic pairs drawn against one set of logits, with the 2K log
// importance weights evaluated once. log_w holds w(b^1..b^K) followed by
// w(b~^1..b~^K).
struct MultiSampleBatch {
  std::vector<AntitheticPair> pairs;
  Eigen::VectorXd log_w;

  Eigen::Index pair_count() const { return static_cast<Eigen::Index>(pairs.size()); }
  auto log_w_trunk() const { return log_w.head(pair_count()); }
  auto log_w_antithetic() const { return log_w.tail(pair_count()); }
};

// Draws K pairs and evaluates log_weight on all 2K samples.
MultiSampleBatch make_multisample_batch(const LogitParameterVector& logits, Eigen::Index pair_count,
                                        ObjectiveFunction& log_weight, Rng& rng);

// Throws when log_w is empty or non-finite, or the pair layout disagrees.
void validate(const MultiSampleBatch& batch, const LogitParameterVector& logits);

// log (1/n) sum_k exp(log_w_k)
double multi_sample_bound(const Eigen::Ref<const Eigen::VectorXd>& log_w);

// Entry k is log sum_{j != k} exp(log_w_j). Uses one global log-sum-exp and a
// log-diff-exp per entry, recomputing directly when the excluded term carries
// most of the mass.
Eigen::VectorXd leave_one_out_log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& log_w);

// Per-sample learning signals log mean(w) - log mean(w_{-k}).
Eigen::VectorXd vimco_signals(const Eigen::Ref<const Eigen::VectorXd>& log_w);

GradientEstimate vimco(const LogitParameterVector& logits,
                       const Eigen::Ref<const Eigen::VectorXd>& log_w,
                       const std::vector<Bits>& samples);

// Four-term local signals, one per pair:
//   1/4 [f_{b^-k}(b^k) - f_{b^-k}(b~^k) + f_{b~^-k}(b^k) - f_{b~^-k}(b~^k)]
// with f_S(d) = log (1/K)(sum_{c in S} w(c) + w(d)).
Eigen::VectorXd disarm_multisample_signals(const Eigen::Ref<const Eigen::VectorXd>& log_w_trunk,
                                           const Eigen::Ref<const Eigen::VectorXd>& log_w_antithetic);

GradientEstimate disarm_multisample(const LogitParameterVector& logits,
                                    const MultiSampleBatch& batch);

}  // namespace disarm
