#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include "disarm/objective.hpp"
#include "disarm/rng.hpp"

namespace disarm {

// Factorial Bernoulli logits. Construction rejects empty or non-finite input,
// so every instance in flight is usable without further checks.
class LogitParameterVector {
 public:
  explicit LogitParameterVector(Eigen::VectorXd logits);

  Eigen::Index dim() const { return logits_.size(); }
  const Eigen::VectorXd& values() const { return logits_; }
  double operator[](Eigen::Index i) const { return logits_(i); }

  // sigma(alpha) per dimension.
  Eigen::VectorXd probabilities() const;

 private:
  Eigen::VectorXd logits_;
};

// Coupled draw from a single vector of uniforms:
//   b_i       = 1{1 - u_i < sigma(alpha_i)}
//   b_tilde_i = 1{u_i < sigma(alpha_i)}
struct AntitheticPair {
  Eigen::VectorXd u;
  Bits b;
  Bits b_tilde;
};

enum class EstimatorId : std::uint8_t {
  reinforce,
  reinforce_loo,
  arm,
  disarm,
  interpolated,
  vimco,
  disarm_multisample,
  exact,
};

std::string_view to_string(EstimatorId id);
// Throws std::invalid_argument on unknown names.
EstimatorId estimator_from_string(std::string_view name);

struct GradientEstimate {
  Eigen::VectorXd partials;  // d/d alpha_i
  EstimatorId estimator;
  std::size_t objective_evals = 0;
};

class EnumerationBudgetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr Eigen::Index kMaxEnumerationDim = 20;

AntitheticPair antithetic_pair_from_uniforms(const LogitParameterVector& logits,
                                             Eigen::VectorXd u);

// Draws dim uniforms from rng, in dimension order.
AntitheticPair sample_antithetic(const LogitParameterVector& logits, Rng& rng);

// Independent draw b_i = 1{u_i < sigma(alpha_i)}.
Bits sample_bernoulli(const LogitParameterVector& logits, Rng& rng);

// sum_i b_i log sigma(alpha_i) + (1 - b_i) log sigma(-alpha_i)
double log_prob(const LogitParameterVector& logits, const Bits& b);

// Same for real-valued {0,1} targets (pixels, decoded layers).
double log_prob(const Eigen::Ref<const Eigen::VectorXd>& logits,
                const Eigen::Ref<const Eigen::VectorXd>& targets);

// d/d alpha log q(b) = b - sigma(alpha).
Eigen::VectorXd score(const LogitParameterVector& logits, const Bits& b);

// 2 E[u | b, b_tilde] - 1 for a scalar logit. Zero when the pair agrees,
// otherwise (-1)^{b_tilde} sigma(|alpha|).
double conditional_score_expectation(double alpha, bool b, bool b_tilde);

// Visits all 2^dim bit patterns in lexicographic order (dimension 0 is the
// most significant bit).
template <typename Visitor>
void for_each_bit_pattern(Eigen::Index dim, Visitor&& visit) {
  if (dim > kMaxEnumerationDim) {
    throw EnumerationBudgetError("enumeration over " + std::to_string(dim) +
                                 " dimensions exceeds the budget of " +
                                 std::to_string(kMaxEnumerationDim));
  }
  Bits b(dim);
  const std::uint64_t count = std::uint64_t{1} << dim;
  for (std::uint64_t m = 0; m < count; ++m) {
    for (Eigen::Index i = 0; i < dim; ++i) {
      b(i) = static_cast<std::uint8_t>((m >> (dim - 1 - i)) & 1U);
    }
    visit(static_cast<const Bits&>(b));
  }
}

// Exact E_q[f(b)] by enumeration.
double enumerate_expectation(const LogitParameterVector& logits, ObjectiveFunction& f);

// Exact d/d alpha E_q[f(b)] = sum_b q(b) f(b) (b - sigma(alpha)), with
// compensated summation. Throws EnumerationBudgetError for dim > 20.
Eigen::VectorXd enumerate_exact_gradient(const LogitParameterVector& logits,
                                         ObjectiveFunction& f);

inline Eigen::VectorXd to_real(const Bits& b) { return b.cast<double>(); }

}  // namespace disarm
