#include "disarm/bernoulli.hpp"

#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "disarm/math.hpp"

namespace disarm {

LogitParameterVector::LogitParameterVector(Eigen::VectorXd logits) : logits_(std::move(logits)) {
  if (logits_.size() == 0) {
    throw std::invalid_argument("LogitParameterVector: empty logits");
  }
  if (!logits_.allFinite()) {
    throw std::invalid_argument("LogitParameterVector: non-finite logit");
  }
}

Eigen::VectorXd LogitParameterVector::probabilities() const { return sigmoid(logits_); }

namespace {

constexpr std::array<std::pair<EstimatorId, std::string_view>, 8> kEstimatorNames{{
    {EstimatorId::reinforce, "reinforce"},
    {EstimatorId::reinforce_loo, "reinforce_loo"},
    {EstimatorId::arm, "arm"},
    {EstimatorId::disarm, "disarm"},
    {EstimatorId::interpolated, "interpolated"},
    {EstimatorId::vimco, "vimco"},
    {EstimatorId::disarm_multisample, "disarm_multisample"},
    {EstimatorId::exact, "exact"},
}};

}  // namespace

std::string_view to_string(EstimatorId id) {
  for (const auto& [key, name] : kEstimatorNames) {
    if (key == id) return name;
  }
  return "unknown";
}

EstimatorId estimator_from_string(std::string_view name) {
  for (const auto& [key, n] : kEstimatorNames) {
    if (n == name) return key;
  }
  throw std::invalid_argument("unknown estimator: " + std::string(name));
}

AntitheticPair antithetic_pair_from_uniforms(const LogitParameterVector& logits,
                                             Eigen::VectorXd u) {
  if (u.size() != logits.dim()) {
    throw std::invalid_argument("antithetic pair: uniform/logit dimension mismatch");
  }
  AntitheticPair pair;
  pair.b.resize(logits.dim());
  pair.b_tilde.resize(logits.dim());
  for (Eigen::Index i = 0; i < logits.dim(); ++i) {
    const double p = sigmoid(logits[i]);
    // Strict inequalities: u exactly on a threshold resolves to 0.
    pair.b(i) = static_cast<std::uint8_t>(1.0 - u(i) < p);
    pair.b_tilde(i) = static_cast<std::uint8_t>(u(i) < p);
  }
  pair.u = std::move(u);
  return pair;
}

AntitheticPair sample_antithetic(const LogitParameterVector& logits, Rng& rng) {
  Eigen::VectorXd u(logits.dim());
  for (Eigen::Index i = 0; i < u.size(); ++i) u(i) = rng.uniform();
  return antithetic_pair_from_uniforms(logits, std::move(u));
}

Bits sample_bernoulli(const LogitParameterVector& logits, Rng& rng) {
  Bits b(logits.dim());
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    b(i) = static_cast<std::uint8_t>(rng.uniform() < sigmoid(logits[i]));
  }
  return b;
}

double log_prob(const LogitParameterVector& logits, const Bits& b) {
  if (b.size() != logits.dim()) {
    throw std::invalid_argument("log_prob: dimension mismatch");
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    total += b(i) ? log_sigmoid(logits[i]) : log_sigmoid(-logits[i]);
  }
  return total;
}

double log_prob(const Eigen::Ref<const Eigen::VectorXd>& logits,
                const Eigen::Ref<const Eigen::VectorXd>& targets) {
  if (logits.size() != targets.size()) {
    throw std::invalid_argument("log_prob: dimension mismatch");
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    total += targets(i) * log_sigmoid(logits(i)) + (1.0 - targets(i)) * log_sigmoid(-logits(i));
  }
  return total;
}

Eigen::VectorXd score(const LogitParameterVector& logits, const Bits& b) {
  if (b.size() != logits.dim()) {
    throw std::invalid_argument("score: dimension mismatch");
  }
  // 1 - sigma(a) is taken as sigma(-a) so the b = 1 entries keep full
  // relative precision for large logits.
  Eigen::VectorXd s(b.size());
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    s(i) = b(i) ? sigmoid(-logits[i]) : -sigmoid(logits[i]);
  }
  return s;
}

double conditional_score_expectation(double alpha, bool b, bool b_tilde) {
  if (b == b_tilde) return 0.0;
  const double s = sigmoid(std::abs(alpha));
  return b_tilde ? -s : s;
}

namespace {

struct KahanSum {
  double sum = 0.0;
  double carry = 0.0;
  void add(double x) {
    const double y = x - carry;
    const double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }
};

}  // namespace

double enumerate_expectation(const LogitParameterVector& logits, ObjectiveFunction& f) {
  KahanSum acc;
  for_each_bit_pattern(logits.dim(), [&](const Bits& b) {
    acc.add(std::exp(log_prob(logits, b)) * f(b));
  });
  return acc.sum;
}

Eigen::VectorXd enumerate_exact_gradient(const LogitParameterVector& logits,
                                         ObjectiveFunction& f) {
  const Eigen::Index dim = logits.dim();
  if (dim > kMaxEnumerationDim) {
    throw EnumerationBudgetError("enumerate_exact_gradient: dim " + std::to_string(dim) +
                                 " exceeds the enumeration budget");
  }
  std::vector<KahanSum> acc(static_cast<std::size_t>(dim));
  for_each_bit_pattern(dim, [&](const Bits& b) {
    const double weighted = std::exp(log_prob(logits, b)) * f(b);
    const Eigen::VectorXd s = score(logits, b);
    for (Eigen::Index i = 0; i < dim; ++i) acc[static_cast<std::size_t>(i)].add(weighted * s(i));
  });
  Eigen::VectorXd grad(dim);
  for (Eigen::Index i = 0; i < dim; ++i) grad(i) = acc[static_cast<std::size_t>(i)].sum;
  return grad;
}

}  // namespace disarm
