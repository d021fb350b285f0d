#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <functional>

#include "disarm/math.hpp"
#include "disarm/vae.hpp"
#include "stats.hpp"

using namespace disarm;
using disarm::testing::RunningStats;

namespace {

std::vector<double*> params(DenseNetwork& net) {
  std::vector<double*> out;
  for (auto& l : net.mutable_layers()) {
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) out.push_back(l.weight.data() + i);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) out.push_back(l.bias.data() + i);
  }
  return out;
}

std::vector<double*> params(BernoulliVAE& v) {
  auto out = params(v.encoder);
  for (double* p : params(v.decoder)) out.push_back(p);
  for (Eigen::Index i = 0; i < v.prior_logits.size(); ++i) out.push_back(v.prior_logits.data() + i);
  return out;
}

std::vector<double*> params(HierarchicalVAE& h) {
  std::vector<double*> out;
  for (auto& e : h.encoders) for (double* p : params(e)) out.push_back(p);
  for (auto& d : h.decoders) for (double* p : params(d)) out.push_back(p);
  for (Eigen::Index i = 0; i < h.prior_logits.size(); ++i) out.push_back(h.prior_logits.data() + i);
  return out;
}

Eigen::VectorXd fd_gradient(const std::function<double()>& objective, const std::vector<double*>& ps) {
  Eigen::VectorXd g(static_cast<Eigen::Index>(ps.size()));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    double& p = *ps[i];
    const double saved = p;
    const double h = 1e-5 * std::max(1.0, std::abs(saved));
    p = saved + h;
    const double up = objective();
    p = saved - h;
    const double down = objective();
    p = saved;
    g(static_cast<Eigen::Index>(i)) = (up - down) / (2.0 * h);
  }
  return g;
}

Eigen::VectorXd flat(const VaeGradients& g) {
  const Eigen::VectorXd e = g.encoder.flatten(), d = g.decoder.flatten();
  Eigen::VectorXd out(e.size() + d.size() + g.prior.size());
  out << e, d, g.prior;
  return out;
}

Eigen::VectorXd flat(const HierarchicalGradients& g) {
  const Eigen::VectorXd e = flatten(g.encoders), d = flatten(g.decoders);
  Eigen::VectorXd out(e.size() + d.size() + g.prior.size());
  out << e, d, g.prior;
  return out;
}

std::vector<Bits> patterns(Eigen::Index dim) {
  std::vector<Bits> out;
  for_each_bit_pattern(dim, [&](const Bits& b) { out.push_back(b); });
  return out;
}

// E over `s` i.i.d. posterior draws of log mean_j w(b^j), by enumeration.
double exact_bound(const BernoulliVAE& vae, const Batch& batch, int s) {
  const LogitParameterVector post(forward(vae.encoder, batch.centered.col(0)));
  const auto all = patterns(vae.latent_dim());
  std::vector<double> lq, lw;
  for (const auto& b : all) {
    lq.push_back(log_prob(post, b));
    lw.push_back(elbo_value(vae, batch.binary.col(0), post, b));
  }
  std::vector<std::size_t> idx(static_cast<std::size_t>(s), 0);
  double total = 0.0;
  for (;;) {
    double log_q = 0.0;
    Eigen::VectorXd w(s);
    for (int j = 0; j < s; ++j) {
      log_q += lq[idx[static_cast<std::size_t>(j)]];
      w(j) = lw[idx[static_cast<std::size_t>(j)]];
    }
    total += std::exp(log_q) * log_mean_exp(w);
    int j = 0;
    while (j < s && ++idx[static_cast<std::size_t>(j)] == all.size()) idx[static_cast<std::size_t>(j++)] = 0;
    if (j == s) break;
  }
  return total;
}

double exact_hierarchical_elbo(const HierarchicalVAE& h, const Batch& batch) {
  const LogitParameterVector first(forward(h.encoders[0], batch.centered.col(0)));
  double total = 0.0;
  for (const auto& b1 : patterns(h.encoders[0].output_dim())) {
    const LogitParameterVector second(forward(h.encoders[1], to_real(b1)));
    for (const auto& b2 : patterns(h.encoders[1].output_dim())) {
      const double lq = log_prob(first, b1) + log_prob(second, b2);
      total += std::exp(lq) * hierarchical_elbo_value(h, batch.binary.col(0), first, {b1, b2});
    }
  }
  return total;
}

// Zero biases put every unit of a decoder fed the all-zero code on the
// activation kink, where finite differences are meaningless.
void jitter_biases(DenseNetwork& net, Rng& rng) {
  for (auto& l : net.mutable_layers()) {
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = rng.uniform() - 0.5;
  }
}

Batch single_datum() {
  Batch b;
  b.binary = Eigen::Vector3d(1.0, 0.0, 1.0);
  b.centered = b.binary.array() - 0.4;
  return b;
}

BernoulliVAE tiny_vae(Eigen::Index latent, std::uint64_t seed) {
  Rng rng(seed);
  auto v = BernoulliVAE::create(3, latent, {3}, rng);
  jitter_biases(v.encoder, rng);
  jitter_biases(v.decoder, rng);
  for (Eigen::Index i = 0; i < latent; ++i) v.prior_logits(i) = 0.3 * static_cast<double>(i) - 0.2;
  return v;
}

Batch random_batch(Eigen::Index dim, Eigen::Index n, Rng& rng) {
  Batch b;
  b.binary.resize(dim, n);
  for (Eigen::Index i = 0; i < b.binary.size(); ++i) b.binary.data()[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
  b.centered = b.binary.array() - 0.4;
  return b;
}

}  // namespace

TEST_CASE("toy objective") {
  CHECK(toy_value(0.49, true) == doctest::Approx(0.2601).epsilon(1e-15));
  CHECK(toy_value(0.49, false) == doctest::Approx(0.2401).epsilon(1e-15));
  CHECK(toy_value(0.5, true) == 0.25);
  CHECK(toy_value(0.5, false) == 0.25);
  CHECK(toy_exact_gradient(0.49, 0.0) == doctest::Approx(0.005).epsilon(1e-13));
  CHECK(toy_exact_gradient(0.5, 1.3) == 0.0);
  CHECK(std::abs(toy_exact_gradient(0.49, 60.0)) < 1e-20);
  CHECK(std::abs(toy_exact_gradient(0.49, -60.0)) < 1e-20);
  CHECK_THROWS(ToyObjective(0.0, 0.0));
  CHECK_THROWS(ToyObjective(1.0, 0.0));
  // Closed form against a numerical derivative of the expected value.
  const double h = 1e-6;
  CHECK(toy_exact_gradient(0.3, 0.7) ==
        doctest::Approx((toy_expected_value(0.3, 0.7 + h) - toy_expected_value(0.3, 0.7 - h)) / (2 * h)).epsilon(1e-7));
}

TEST_CASE("elbo value") {
  SUBCASE("zero decoder gives D log 1/2 likelihood") {
    auto v = tiny_vae(2, 1);
    for (auto& l : v.decoder.mutable_layers()) {
      l.weight.setZero();
      l.bias.setZero();
    }
    const Batch b = single_datum();
    const LogitParameterVector post(forward(v.encoder, b.centered));
    Bits z(2);
    z << 1, 0;
    const double expect = 3.0 * std::log(0.5) + log_prob(LogitParameterVector(v.prior_logits), z) - log_prob(post, z);
    CHECK(elbo_value(v, b.binary.col(0), post, z) == doctest::Approx(expect).epsilon(1e-15));
  }
  SUBCASE("prior equal to posterior leaves the likelihood") {
    auto v = tiny_vae(2, 2);
    const Batch b = single_datum();
    const Eigen::VectorXd a = forward(v.encoder, b.centered);
    v.prior_logits = a;
    Bits z(2);
    z << 0, 1;
    CHECK(elbo_value(v, b.binary.col(0), b.centered.col(0), z) ==
          doctest::Approx(log_prob(Eigen::VectorXd(forward(v.decoder, to_real(z))), b.binary.col(0))).epsilon(1e-14));
  }
  SUBCASE("scripted recomputation") {
    auto v = tiny_vae(2, 3);
    const Batch b = single_datum();
    Bits z(2);
    z << 1, 1;
    // Plain loops, no library helpers besides the raw weights.
    auto dense = [](const DenseNetwork& net, std::vector<double> x) {
      for (const auto& l : net.layers()) {
        std::vector<double> y(static_cast<std::size_t>(l.weight.rows()));
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
          double s = l.bias(r);
          for (Eigen::Index c = 0; c < l.weight.cols(); ++c) s += l.weight(r, c) * x[static_cast<std::size_t>(c)];
          if (l.activation == Activation::leaky_relu && s < 0) s *= l.slope;
          y[static_cast<std::size_t>(r)] = s;
        }
        x = y;
      }
      return x;
    };
    auto lp = [](const std::vector<double>& a, const std::vector<double>& t) {
      double s = 0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double p = 1.0 / (1.0 + std::exp(-a[i]));
        s += t[i] > 0.5 ? std::log(p) : std::log(1.0 - p);
      }
      return s;
    };
    const std::vector<double> xc{0.6, -0.4, 0.6}, xb{1, 0, 1}, zb{1, 1};
    const std::vector<double> prior{v.prior_logits(0), v.prior_logits(1)};
    const double expect = lp(dense(v.decoder, zb), xb) + lp(prior, zb) - lp(dense(v.encoder, xc), zb);
    CHECK(std::abs(elbo_value(v, b.binary.col(0), b.centered.col(0), z) - expect) < 1e-12);
  }
  SUBCASE("shape errors") {
    auto v = tiny_vae(2, 4);
    CHECK_THROWS(elbo_value(v, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(3), Bits::Zero(2)));
    CHECK_THROWS(elbo_value(v, Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3), Bits::Zero(3)));
  }
}

TEST_CASE("elbo gradients are unbiased for every single-objective estimator") {
  auto v = tiny_vae(3, 5);
  const Batch batch = single_datum();
  const Eigen::VectorXd exact = fd_gradient([&] { return exact_bound(v, batch, 1); }, params(v));
  for (EstimatorId id : {EstimatorId::disarm, EstimatorId::arm, EstimatorId::reinforce_loo,
                         EstimatorId::reinforce, EstimatorId::interpolated}) {
    CAPTURE(to_string(id));
    RunningStats s;
    const int n = id == EstimatorId::disarm ? 100000 : 20000;
    const Rng root(6);
    for (int i = 0; i < n; ++i) {
      s.add(flat(elbo_gradients(v, batch, EstimatorSpec{id, 0.5, -4.0}, root.split(static_cast<std::uint64_t>(i))).grads));
    }
    CHECK(disarm::testing::max_z(s, exact) < 4.0);
  }
}

TEST_CASE("encoder logit gradient matches the enumeration oracle") {
  auto v = tiny_vae(3, 7);
  const Batch batch = single_datum();
  const LogitParameterVector post(forward(v.encoder, batch.centered));
  ObjectiveFunction f([&](const Bits& b) { return elbo_value(v, batch.binary.col(0), post, b); });
  // E[-score] = 0, so the target is the plain score-function gradient.
  const Eigen::VectorXd exact = enumerate_exact_gradient(post, f);
  RunningStats s;
  const Rng root(8);
  for (int i = 0; i < 100000; ++i) {
    s.add(elbo_gradients(v, batch, EstimatorSpec{}, root.split(static_cast<std::uint64_t>(i))).logit_grads.col(0));
  }
  CHECK(disarm::testing::max_z(s, exact) < 4.0);
}

TEST_CASE("elbo step plumbing") {
  Rng rng(9);
  auto v = BernoulliVAE::create(6, 4, {5}, rng);
  const Batch batch = random_batch(6, 7, rng);

  SUBCASE("zero learning rates leave parameters unchanged") {
    auto opt = VaeOptimizers::make(TrainingRates{0.0, 0.0});
    const auto before = flat(VaeGradients{NetworkGradients::zeros_like(v.encoder), NetworkGradients::zeros_like(v.decoder), v.prior_logits});
    const auto w0 = v.encoder.layers()[0].weight;
    const auto d0 = v.decoder.layers()[1].bias;
    const auto r = elbo_step(v, batch, EstimatorSpec{}, opt, Rng(1));
    (void)before;
    CHECK(v.encoder.layers()[0].weight == w0);
    CHECK(v.decoder.layers()[1].bias == d0);
    CHECK(std::isfinite(r.objective));
    CHECK(r.objective_evals == 14);
    CHECK(r.grads.encoder.flatten().norm() > 0.0);
  }
  SUBCASE("arm and disarm consume identical pairs") {
    const auto a = elbo_gradients(v, batch, EstimatorSpec{EstimatorId::arm}, Rng(3));
    const auto d = elbo_gradients(v, batch, EstimatorSpec{EstimatorId::disarm}, Rng(3));
    CHECK(a.trunk == d.trunk);
    CHECK(a.partner == d.partner);
    CHECK(a.objective == d.objective);
    CHECK(flat(a.grads).tail(flat(a.grads).size() - a.grads.encoder.flatten().size()) ==
          flat(d.grads).tail(flat(d.grads).size() - d.grads.encoder.flatten().size()));
  }
  SUBCASE("non-finite state aborts") {
    auto bad = v;
    bad.decoder.mutable_layers()[0].weight(0, 0) = std::numeric_limits<double>::infinity();
    auto opt = VaeOptimizers::make(TrainingRates{});
    CHECK_THROWS_AS(elbo_step(bad, batch, EstimatorSpec{}, opt, Rng(1)), NonFiniteError);
    auto bad_enc = v;
    bad_enc.encoder.mutable_layers()[0].bias(0) = std::nan("");
    CHECK_THROWS_AS(elbo_gradients(bad_enc, batch, EstimatorSpec{}, Rng(1)), NonFiniteError);
  }
  SUBCASE("thread count does not change results") {
    const auto one = elbo_gradients(v, batch, EstimatorSpec{}, Rng(4));
    setenv("DISARM_THREADS", "3", 1);
    const auto three = elbo_gradients(v, batch, EstimatorSpec{}, Rng(4));
    const auto ms3 = multisample_gradients(v, batch, 2, MultiSampleMethod::disarm_k_pairs, Rng(4));
    unsetenv("DISARM_THREADS");
    const auto ms1 = multisample_gradients(v, batch, 2, MultiSampleMethod::disarm_k_pairs, Rng(4));
    CHECK(flat(one.grads) == flat(three.grads));
    CHECK(flat(ms1.grads) == flat(ms3.grads));
  }
}

TEST_CASE("hierarchical with one layer is the single-layer estimator") {
  Rng rng(10);
  auto v = BernoulliVAE::create(8, 5, {6}, rng);
  const Batch batch = random_batch(8, 9, rng);
  const auto h = HierarchicalVAE::from_single(v);
  const auto s = elbo_gradients(v, batch, EstimatorSpec{EstimatorId::disarm}, Rng(11));
  const auto t = hierarchical_gradients(h, batch, EstimatorId::disarm, Rng(11));
  CHECK(t.objective == s.objective);
  CHECK(t.logit_grads[0] == s.logit_grads);
  CHECK(t.trunk[0] == s.trunk);
  CHECK(flat(t.grads) == flat(s.grads));
  CHECK(t.objective_evals == s.objective_evals);

  // The stepping wrappers agree too.
  auto v2 = v;
  auto h2 = h;
  auto opt = VaeOptimizers::make(TrainingRates{});
  auto hopt = HierarchicalOptimizers::make(1, TrainingRates{});
  for (std::uint64_t k = 0; k < 3; ++k) {
    elbo_step(v2, batch, EstimatorSpec{}, opt, Rng(20 + k));
    hierarchical_disarm_step(h2, batch, hopt, Rng(20 + k));
  }
  CHECK(v2.encoder.layers()[0].weight == h2.encoders[0].layers()[0].weight);
  CHECK(v2.prior_logits == h2.prior_logits);
}

TEST_CASE("hierarchical gradients are unbiased") {
  Rng rng(12);
  auto h = HierarchicalVAE::create(3, {2, 2}, {3}, rng);
  h.prior_logits << 0.4, -0.3;
  for (auto& e : h.encoders) jitter_biases(e, rng);
  for (auto& d : h.decoders) jitter_biases(d, rng);
  const Batch batch = single_datum();
  const Eigen::VectorXd exact = fd_gradient([&] { return exact_hierarchical_elbo(h, batch); }, params(h));
  for (EstimatorId id : {EstimatorId::disarm, EstimatorId::arm}) {
    CAPTURE(to_string(id));
    RunningStats s;
    const Rng root(13);
    for (int i = 0; i < 30000; ++i) {
      const auto r = hierarchical_gradients(h, batch, id, root.split(static_cast<std::uint64_t>(i)));
      REQUIRE(r.objective_evals == 3);
      s.add(flat(r.grads));
    }
    CHECK(disarm::testing::max_z(s, exact) < 4.0);
  }
  CHECK_THROWS(hierarchical_gradients(h, batch, EstimatorId::reinforce_loo, Rng(1)));
}

TEST_CASE("multi-sample gradients") {
  auto v = tiny_vae(2, 14);
  const Batch batch = single_datum();

  SUBCASE("K = 1 pair equals single-pair elbo disarm") {
    Rng rng(15);
    auto big = BernoulliVAE::create(6, 4, {5}, rng);
    const Batch b = random_batch(6, 5, rng);
    const auto ms = multisample_gradients(big, b, 1, MultiSampleMethod::disarm_k_pairs, Rng(16));
    const auto el = elbo_gradients(big, b, EstimatorSpec{}, Rng(16));
    CHECK(ms.logit_grads == el.logit_grads);
    CHECK(flat(ms.grads) == flat(el.grads));
    CHECK(ms.objective_evals == 10);
  }
  SUBCASE("unbiased against the enumerated bound") {
    struct Case {
      MultiSampleMethod method;
      Eigen::Index k;
      int samples;
    };
    for (const Case c : {Case{MultiSampleMethod::disarm_k_pairs, 2, 2}, Case{MultiSampleMethod::vimco_2k, 1, 2},
                         Case{MultiSampleMethod::vimco_2k, 2, 4}, Case{MultiSampleMethod::vimco_k, 3, 3}}) {
      CAPTURE(c.samples);
      const Eigen::VectorXd exact = fd_gradient([&] { return exact_bound(v, batch, c.samples); }, params(v));
      RunningStats s;
      const Rng root(17);
      for (int i = 0; i < 30000; ++i) {
        s.add(flat(multisample_gradients(v, batch, c.k, c.method, root.split(static_cast<std::uint64_t>(i))).grads));
      }
      CHECK(disarm::testing::max_z(s, exact) < 4.0);
    }
  }
  SUBCASE("argument checks") {
    CHECK_THROWS(multisample_gradients(v, batch, 0, MultiSampleMethod::disarm_k_pairs, Rng(1)));
    CHECK_THROWS(multisample_gradients(v, batch, 1, MultiSampleMethod::vimco_k, Rng(1)));
  }
}

TEST_CASE("importance bound grows with the sample count") {
  Rng rng(18);
  const auto v = BernoulliVAE::create(10, 4, {}, rng);
  const Batch batch = random_batch(10, 200, rng);
  double prev = -INFINITY;
  for (Eigen::Index k : {1, 2, 4}) {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) total += importance_bound(v, batch, k, Rng(seed)).mean();
    CHECK(total / 10.0 > prev);
    prev = total / 10.0;
  }
}
