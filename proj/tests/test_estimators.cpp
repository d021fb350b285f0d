#include <doctest.h>

#include <cmath>

#include "disarm/bernoulli.hpp"
#include "disarm/estimators.hpp"
#include "disarm/math.hpp"
#include "quadratic.hpp"
#include "stats.hpp"

using namespace disarm;
using disarm::testing::Quadratic;
using disarm::testing::RunningStats;

namespace {

Bits bits(std::initializer_list<int> v) {
  Bits b(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (int x : v) b(i++) = static_cast<std::uint8_t>(x);
  return b;
}

LogitParameterVector scalar(double a) { return LogitParameterVector(Eigen::VectorXd::Constant(1, a)); }

ObjectiveFunction table(double f0, double f1) {
  return ObjectiveFunction([f0, f1](const Bits& b) { return b(0) ? f1 : f0; });
}

AntitheticPair pair_of(Eigen::VectorXd u, Bits b, Bits bt) { return {std::move(u), std::move(b), std::move(bt)}; }

}  // namespace

TEST_CASE("reinforce_loo") {
  ObjectiveFunction constant([](const Bits&) { return 4.0; });
  const LogitParameterVector a(Eigen::VectorXd::LinSpaced(4, -1.0, 1.0));
  Rng rng(5);
  CHECK(reinforce_loo(a, constant, rng).partials.isZero(0.0));

  ObjectiveFunction q = Quadratic(4, Rng(1)).objective();
  const Bits same = bits({1, 0, 1, 1});
  CHECK(reinforce_loo(a, q, same, same).partials.isZero(0.0));

  ObjectiveFunction f = table(1.0, 2.0);
  const auto g = reinforce_loo(scalar(0.0), f, bits({1}), bits({0}));
  CHECK(g.partials(0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(g.objective_evals == 2);
  CHECK(f.eval_count() == 2);
}

TEST_CASE("arm") {
  ObjectiveFunction q = Quadratic(3, Rng(2)).objective();
  const LogitParameterVector a(Eigen::Vector3d(0.2, -0.7, 1.1));
  const auto half = antithetic_pair_from_uniforms(a, Eigen::VectorXd::Constant(3, 0.5));
  CHECK(arm(a, q, half).partials.isZero(0.0));
  CHECK(arm(a, q, pair_of(Eigen::Vector3d(0.1, 0.2, 0.3), bits({1, 0, 1}), bits({1, 0, 1}))).partials.isZero(0.0));

  ObjectiveFunction f = table(1.0, 2.0);
  const auto p = antithetic_pair_from_uniforms(scalar(0.0), Eigen::VectorXd::Constant(1, 0.3));
  REQUIRE(p.b(0) == 0);
  REQUIRE(p.b_tilde(0) == 1);
  const auto g = arm(scalar(0.0), f, p);
  CHECK(g.partials(0) == doctest::Approx(0.5 * (1.0 - 2.0) * (2.0 * 0.3 - 1.0)).epsilon(1e-15));
  CHECK(g.partials(0) == doctest::Approx(0.2).epsilon(1e-14));
  CHECK(g.objective_evals == 2);
  CHECK_THROWS(arm(LogitParameterVector(Eigen::Vector2d(0.0, 0.0)), f, p));
}

TEST_CASE("disarm") {
  ObjectiveFunction f = table(1.0, 2.0);
  CHECK(disarm::disarm(scalar(0.0), f, pair_of(Eigen::VectorXd::Constant(1, 0.8), bits({1}), bits({0}))).partials(0) == 0.25);

  ObjectiveFunction g = table(0.0, 1.0);
  const auto est = disarm::disarm(scalar(std::log(3.0)), g, pair_of(Eigen::VectorXd::Constant(1, 0.1), bits({0}), bits({1})));
  CHECK(est.partials(0) == doctest::Approx(0.375).epsilon(1e-15));
  CHECK(est.objective_evals == 2);

  SUBCASE("agreeing dimensions are exactly zero and sparsity matches") {
    const Eigen::Index dim = 8;
    ObjectiveFunction q = Quadratic(dim, Rng(3)).objective();
    const LogitParameterVector a(disarm::testing::random_logits(dim, Rng(4)));
    Rng rng(6);
    long zeros = 0, agree = 0;
    for (int n = 0; n < 5000; ++n) {
      const auto p = sample_antithetic(a, rng);
      const auto e = disarm::disarm(a, q, p);
      for (Eigen::Index i = 0; i < dim; ++i) {
        if (p.b(i) == p.b_tilde(i)) {
          ++agree;
          REQUIRE(e.partials(i) == 0.0);
        }
        if (e.partials(i) == 0.0) ++zeros;
      }
    }
    CHECK(zeros == agree);
  }
}

TEST_CASE("reinforce_baseline") {
  ObjectiveFunction c([](const Bits&) { return 3.0; });
  const LogitParameterVector a(Eigen::Vector2d(0.0, 0.0));
  Rng rng(8);
  CHECK(reinforce_baseline(a, c, 3.0, rng).partials.isZero(0.0));
  // baseline 0, f = c: each partial is c (b_i - 1/2) = +-c/2.
  const auto e = reinforce_baseline(a, c, 0.0, rng);
  CHECK(e.partials.cwiseAbs().isApprox(Eigen::Vector2d(1.5, 1.5)));
  CHECK(e.objective_evals == 1);

  // dim 1, alpha 0, b = 0, f(0) = 3, baseline 1 -> -1; find a draw with b = 0.
  ObjectiveFunction f = table(3.0, 5.0);
  for (std::uint64_t s = 0;; ++s) {
    Rng r(s);
    const auto g = reinforce_baseline(scalar(0.0), f, 1.0, r);
    if (g.partials(0) < 0.0) {
      CHECK(g.partials(0) == -1.0);
      break;
    }
  }
}

TEST_CASE("interpolated endpoints and support") {
  const Eigen::Index dim = 6;
  const Quadratic quad(dim, Rng(10));
  ObjectiveFunction q = quad.objective();
  const LogitParameterVector a(disarm::testing::random_logits(dim, Rng(11)));
  Rng rng(12);
  for (int n = 0; n < 2000; ++n) {
    const auto p = sample_antithetic(a, rng);
    const auto d = disarm::disarm(a, q, p);
    const auto i1 = interpolated(a, q, InterpolationConfig(1.0), p.b, p.b_tilde);
    REQUIRE((i1.partials - d.partials).cwiseAbs().maxCoeff() <= 1e-12);
    const Bits b2 = sample_bernoulli(a, rng);
    const auto l = reinforce_loo(a, q, p.b, b2);
    const auto i0 = interpolated(a, q, InterpolationConfig(0.0), p.b, b2);
    REQUIRE((i0.partials - l.partials).cwiseAbs().maxCoeff() <= 1e-12);
  }
  CHECK_THROWS(InterpolationConfig(1.5));
  CHECK_THROWS(InterpolationConfig(-0.1));

  // p = 0.3 and (1, 1) cannot come from the antithetic table.
  const LogitParameterVector lo(Eigen::VectorXd::Constant(1, std::log(0.3 / 0.7)));
  CHECK(antithetic_posterior(lo, bits({1}), bits({1}), 0.5) == 0.0);
  ObjectiveFunction f = table(0.0, 1.0);
  CHECK(interpolated(lo, f, InterpolationConfig(0.5), bits({1}), bits({1})).partials(0) == 0.0);
}

TEST_CASE("antithetic posterior against a hand-built table") {
  // Scalar case: q^A(b, b~) and q^I(b, b~) for p >= 0.5.
  const double alpha = 0.8;
  const double p = sigmoid(alpha);
  const double beta = 0.3;
  const LogitParameterVector a(Eigen::VectorXd::Constant(1, alpha));
  auto qa = [&](int b, int t) {
    if (b != t) return 1.0 - p;
    return b == 1 ? 2.0 * p - 1.0 : 0.0;
  };
  auto qi = [&](int b, int t) { return (b ? p : 1 - p) * (t ? p : 1 - p); };
  for (int b = 0; b < 2; ++b) {
    for (int t = 0; t < 2; ++t) {
      const double expect = beta * qa(b, t) / (beta * qa(b, t) + (1 - beta) * qi(b, t));
      CHECK(antithetic_posterior(a, bits({b}), bits({t}), beta) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("unbiasedness on a small quadratic") {
  const Eigen::Index dim = 5;
  const Quadratic quad(dim, Rng(20));
  ObjectiveFunction f = quad.objective();
  const LogitParameterVector a(disarm::testing::random_logits(dim, Rng(21)));
  const Eigen::VectorXd exact = enumerate_exact_gradient(a, f);
  for (EstimatorId id : {EstimatorId::reinforce, EstimatorId::reinforce_loo, EstimatorId::arm,
                         EstimatorId::disarm, EstimatorId::interpolated}) {
    CAPTURE(to_string(id));
    RunningStats s;
    const Rng root(22);
    for (int n = 0; n < 20000; ++n) {
      Rng r = root.split(static_cast<std::uint64_t>(n));
      s.add(estimate(id, a, f, r, {0.5, 0.0}).partials);
    }
    CHECK(disarm::testing::max_z(s, exact) < 4.0);
  }
}

TEST_CASE("disarm is arm conditioned on the pair") {
  const Eigen::Index dim = 3;
  ObjectiveFunction f = Quadratic(dim, Rng(30)).objective();
  const LogitParameterVector a(Eigen::Vector3d(-0.6, 0.4, 1.3));
  Rng rng(31);
  RunningStats arm_s, dis_s;
  RunningStats buckets[3][2][2];
  for (int n = 0; n < 40000; ++n) {
    const auto p = sample_antithetic(a, rng);
    const auto ga = arm(a, f, p).partials;
    const auto gd = disarm::disarm(a, f, p).partials;
    arm_s.add(ga);
    dis_s.add(gd);
    for (Eigen::Index i = 0; i < dim; ++i) {
      // Within a bucket the DisARM value still varies with the other
      // dimensions, so compare the bucket mean of ARM - DisARM with zero.
      buckets[i][p.b(i)][p.b_tilde(i)].add(Eigen::VectorXd::Constant(1, ga(i) - gd(i)));
    }
  }
  for (int i = 0; i < dim; ++i) {
    for (int b = 0; b < 2; ++b) {
      for (int t = 0; t < 2; ++t) {
        if (buckets[i][b][t].count() < 2) continue;
        CHECK(disarm::testing::max_z(buckets[i][b][t], Eigen::VectorXd::Zero(1)) < 4.0);
      }
    }
  }
  // Rao-Blackwell: per-dimension variance never exceeds ARM's.
  CHECK((dis_s.variance().array() <= arm_s.variance().array()).all());
}

TEST_CASE("estimate dispatch counts evaluations") {
  ObjectiveFunction f = Quadratic(3, Rng(40)).objective();
  const LogitParameterVector a(Eigen::Vector3d(0.1, 0.2, 0.3));
  Rng rng(41);
  for (EstimatorId id : {EstimatorId::reinforce_loo, EstimatorId::arm, EstimatorId::disarm, EstimatorId::interpolated}) {
    f.reset_count();
    const auto e = estimate(id, a, f, rng);
    CHECK(e.objective_evals == 2);
    CHECK(f.eval_count() == 2);
    CHECK(e.estimator == id);
  }
  f.reset_count();
  CHECK(estimate(EstimatorId::reinforce, a, f, rng).objective_evals == 1);
  CHECK(f.eval_count() == 1);
  CHECK_THROWS(estimate(EstimatorId::vimco, a, f, rng));

  // arm and disarm draw the same pair from the same stream.
  Rng r1(50), r2(50);
  const auto p1 = sample_antithetic(a, r1);
  ObjectiveFunction g([](const Bits& b) { return static_cast<double>(b.sum()); });
  Rng r3(50);
  const auto ea = estimate(EstimatorId::arm, a, g, r2);
  const auto ed = estimate(EstimatorId::disarm, a, g, r3);
  CHECK((ea.partials - arm(a, g, p1).partials).isZero(0.0));
  CHECK((ed.partials - disarm::disarm(a, g, p1).partials).isZero(0.0));
}
