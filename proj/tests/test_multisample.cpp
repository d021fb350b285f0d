#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "disarm/estimators.hpp"
#include "disarm/math.hpp"
#include "disarm/multisample.hpp"
#include "multisample_oracle.hpp"
#include "quadratic.hpp"
#include "stats.hpp"

using namespace disarm;
using disarm::testing::RunningStats;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double e : v) x(i++) = e;
  return x;
}

}  // namespace

TEST_CASE("multi_sample_bound") {
  CHECK(multi_sample_bound(vec({-3.5})) == -3.5);
  CHECK(multi_sample_bound(vec({0.0, 0.0})) == 0.0);
  CHECK(multi_sample_bound(vec({0.0, std::log(3.0)})) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK_THROWS(multi_sample_bound(Eigen::VectorXd()));
}

TEST_CASE("leave-one-out log-sum-exp") {
  SUBCASE("matches direct recomputation") {
    const Eigen::VectorXd lw = vec({-1.0, 2.0, 0.5, -700.0, 2.0});
    const Eigen::VectorXd loo = leave_one_out_log_sum_exp(lw);
    for (Eigen::Index k = 0; k < lw.size(); ++k) {
      Eigen::VectorXd rest(lw.size() - 1);
      for (Eigen::Index j = 0, r = 0; j < lw.size(); ++j) {
        if (j != k) rest(r++) = lw(j);
      }
      CHECK(loo(k) == doctest::Approx(log_sum_exp(rest)).epsilon(1e-13));
    }
  }
  SUBCASE("dominant excluded term does not cancel catastrophically") {
    const Eigen::VectorXd lw = vec({0.0, -60.0, -61.0});
    const Eigen::VectorXd loo = leave_one_out_log_sum_exp(lw);
    CHECK(loo(0) == doctest::Approx(log_add_exp(-60.0, -61.0)).epsilon(1e-13));
  }
}

TEST_CASE("vimco signals") {
  const Eigen::VectorXd s = vimco_signals(vec({0.0, std::log(3.0)}));
  CHECK(s(0) == doctest::Approx(std::log(2.0) - std::log(3.0)).epsilon(1e-14));
  CHECK(s(0) == doctest::Approx(-0.405465).epsilon(1e-6));
  CHECK(s(1) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(vimco_signals(vec({1.5, 1.5, 1.5})).isZero(1e-15));
  CHECK_THROWS(vimco_signals(vec({1.0})));
}

TEST_CASE("vimco estimate is permutation invariant") {
  const Eigen::Index dim = 5;
  const LogitParameterVector a(disarm::testing::random_logits(dim, Rng(1)));
  Rng rng(2);
  std::vector<Bits> samples;
  Eigen::VectorXd lw(6);
  for (int j = 0; j < 6; ++j) {
    samples.push_back(sample_bernoulli(a, rng));
    lw(j) = rng.normal() * 3.0;
  }
  const auto base = vimco(a, lw, samples);
  CHECK(base.objective_evals == 6);
  std::vector<int> perm{3, 0, 5, 1, 4, 2};
  std::vector<Bits> s2;
  Eigen::VectorXd lw2(6);
  for (int j = 0; j < 6; ++j) {
    s2.push_back(samples[static_cast<std::size_t>(perm[static_cast<std::size_t>(j)])]);
    lw2(j) = lw(perm[static_cast<std::size_t>(j)]);
  }
  const auto other = vimco(a, lw2, s2);
  CHECK((base.partials - other.partials).norm() <= 1e-10 * base.partials.norm());
  CHECK(vimco(a, Eigen::VectorXd::Constant(6, -2.0), samples).partials.isZero(1e-15));
}

TEST_CASE("local multi-sample disarm") {
  const Eigen::Index dim = 4;
  const disarm::testing::Quadratic g(dim, Rng(7));
  ObjectiveFunction log_w = g.objective();
  const LogitParameterVector a(disarm::testing::random_logits(dim, Rng(8)));

  SUBCASE("weight cache: exactly 2K evaluations") {
    Rng rng(9);
    const auto batch = make_multisample_batch(a, 3, log_w, rng);
    CHECK(log_w.eval_count() == 6);
    const auto e = disarm_multisample(a, batch);
    CHECK(e.objective_evals == 6);
    CHECK(log_w.eval_count() == 6);
  }
  SUBCASE("equal weights give zero") {
    Rng rng(10);
    ObjectiveFunction flat([](const Bits&) { return -1.25; });
    const auto batch = make_multisample_batch(a, 3, flat, rng);
    CHECK(disarm_multisample(a, batch).partials.isZero(0.0));
  }
  SUBCASE("agreeing coordinates contribute nothing") {
    Rng rng(11);
    for (int n = 0; n < 200; ++n) {
      const auto batch = make_multisample_batch(a, 1, log_w, rng);
      const auto e = disarm_multisample(a, batch);
      for (Eigen::Index i = 0; i < dim; ++i) {
        if (batch.pairs[0].b(i) == batch.pairs[0].b_tilde(i)) REQUIRE(e.partials(i) == 0.0);
      }
    }
  }
  SUBCASE("K = 1 reduces to single-pair disarm on log w") {
    Rng rng(12);
    for (int n = 0; n < 200; ++n) {
      const auto batch = make_multisample_batch(a, 1, log_w, rng);
      const auto ms = disarm_multisample(a, batch);
      const auto single = disarm::disarm(a, log_w, batch.pairs[0]);
      REQUIRE((ms.partials - single.partials).cwiseAbs().maxCoeff() <= 1e-14);
    }
  }
  SUBCASE("four-term signal against direct log-means") {
    Rng rng(13);
    const auto batch = make_multisample_batch(a, 3, log_w, rng);
    const Eigen::VectorXd s = disarm_multisample_signals(batch.log_w_trunk(), batch.log_w_antithetic());
    const Eigen::VectorXd t = batch.log_w_trunk(), u = batch.log_w_antithetic();
    for (Eigen::Index k = 0; k < 3; ++k) {
      auto f = [&](const Eigen::VectorXd& ctx, double d) {
        double sum = std::exp(d);
        for (Eigen::Index j = 0; j < 3; ++j) {
          if (j != k) sum += std::exp(ctx(j));
        }
        return std::log(sum / 3.0);
      };
      const double expect = 0.25 * ((f(t, t(k)) - f(t, u(k))) + (f(u, t(k)) - f(u, u(k))));
      CHECK(s(k) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  SUBCASE("unbiased for K = 2") {
    auto gf = [&g](const Bits& b) { return g(b); };
    const Eigen::VectorXd exact = disarm::testing::enumerate_multisample_gradient(a, gf, 2);
    RunningStats st;
    const Rng root(14);
    for (int n = 0; n < 20000; ++n) {
      Rng r = root.split(static_cast<std::uint64_t>(n));
      st.add(disarm_multisample(a, make_multisample_batch(a, 2, log_w, r)).partials);
    }
    CHECK(disarm::testing::max_z(st, exact) < 4.0);
  }
}

TEST_CASE("batch validation") {
  const LogitParameterVector a(Eigen::VectorXd::Zero(2));
  MultiSampleBatch b;
  CHECK_THROWS(validate(b, a));
  Rng rng(1);
  ObjectiveFunction f([](const Bits&) { return 0.0; });
  b = make_multisample_batch(a, 2, f, rng);
  b.log_w(1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS(validate(b, a));
}
