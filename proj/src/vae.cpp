#include "disarm/vae.hpp"

#include <cmath>
#include <sstream>
#include <string>
#include <utility>

#include "disarm/estimators.hpp"
#include "disarm/math.hpp"
#include "disarm/multisample.hpp"
#include "disarm/parallel.hpp"

namespace disarm {

// ---------------------------------------------------------------------------
// Toy problem

ToyObjective::ToyObjective(double p0, double phi) : p0_(p0), phi_(phi) {
  if (!(p0 > 0.0 && p0 < 1.0)) throw std::invalid_argument("ToyObjective: p0 must lie in (0, 1)");
  if (!std::isfinite(phi)) throw std::invalid_argument("ToyObjective: non-finite phi");
}

double toy_value(double p0, bool b) {
  const double d = (b ? 1.0 : 0.0) - p0;
  return d * d;
}

double toy_expected_value(double p0, double phi) {
  const double p = sigmoid(phi);
  return p * toy_value(p0, true) + (1.0 - p) * toy_value(p0, false);
}

double toy_exact_gradient(double p0, double phi) {
  const double p = sigmoid(phi);
  return (1.0 - 2.0 * p0) * p * (1.0 - p);
}

// ---------------------------------------------------------------------------
// Shared pieces

namespace {

Eigen::VectorXd column(const Eigen::MatrixXd& m, Eigen::Index n) { return m.col(n); }

void check_batch(const Batch& batch, Eigen::Index data_dim) {
  if (batch.binary.rows() != data_dim || batch.centered.rows() != data_dim ||
      batch.binary.cols() != batch.centered.cols() || batch.size() == 0) {
    throw std::invalid_argument("batch shape does not match the model");
  }
}

// Weighted log-likelihood gradient of a factorial Bernoulli decoder:
// cotangent column m is weights(m) * (target - sigma(logits)).
void decoder_backward(const DenseNetwork& decoder, const Eigen::MatrixXd& inputs,
                      const Eigen::MatrixXd& targets, const Eigen::VectorXd& weights,
                      NetworkGradients& accum) {
  Tape tape;
  const Eigen::MatrixXd logits = forward(decoder, inputs, &tape);
  Eigen::MatrixXd cot = targets - sigmoid(logits);
  for (Eigen::Index m = 0; m < cot.cols(); ++m) cot.col(m) *= weights(m);
  backward(decoder, tape, cot, accum);
}

void prior_accumulate(const Eigen::VectorXd& prior_logits, const Eigen::MatrixXd& samples,
                      const Eigen::VectorXd& weights, Eigen::VectorXd& accum) {
  const Eigen::VectorXd p = sigmoid(prior_logits);
  for (Eigen::Index m = 0; m < samples.cols(); ++m) {
    accum += weights(m) * (samples.col(m) - p);
  }
}

void check_logits(const Eigen::MatrixXd& logits, const char* what) {
  if (!logits.allFinite()) {
    throw NonFiniteError(std::string(what) + ": encoder produced non-finite logits (max |logit| " +
                         std::to_string(logits.cwiseAbs().maxCoeff()) + ")");
  }
}

double norm_of(const NetworkGradients& g) { return g.flatten().norm(); }

Eigen::VectorXd softmax(const Eigen::VectorXd& log_w) {
  const double lse = log_sum_exp(log_w);
  return (log_w.array() - lse).exp().matrix();
}

struct ExampleDraw {
  Bits trunk;
  Bits partner;
  Eigen::VectorXd logit_grad;
  double objective = 0.0;
  std::size_t evals = 0;
};

ExampleDraw draw_single(const BernoulliVAE& vae, const Eigen::VectorXd& x,
                        const LogitParameterVector& post, const EstimatorSpec& spec, Rng& rng) {
  auto f = [&](const Bits& b) { return elbo_value(vae, x, post, b); };
  ExampleDraw d;
  switch (spec.id) {
    case EstimatorId::disarm:
    case EstimatorId::arm: {
      const AntitheticPair pair = sample_antithetic(post, rng);
      const double fb = f(pair.b);
      const double ft = f(pair.b_tilde);
      d.logit_grad = spec.id == EstimatorId::disarm
                         ? disarm_partials(post, pair.b, pair.b_tilde, fb, ft)
                         : arm_partials(pair.u, fb, ft);
      d.trunk = pair.b;
      d.partner = pair.b_tilde;
      d.objective = fb;
      d.evals = 2;
      break;
    }
    case EstimatorId::reinforce_loo: {
      d.trunk = sample_bernoulli(post, rng);
      d.partner = sample_bernoulli(post, rng);
      const double fb = f(d.trunk);
      const double ft = f(d.partner);
      d.logit_grad = loo_partials(post, d.trunk, d.partner, fb, ft);
      d.objective = fb;
      d.evals = 2;
      break;
    }
    case EstimatorId::reinforce: {
      d.trunk = sample_bernoulli(post, rng);
      const double fb = f(d.trunk);
      d.logit_grad = reinforce_partials(post, d.trunk, fb, spec.baseline);
      d.objective = fb;
      d.evals = 1;
      break;
    }
    case EstimatorId::interpolated: {
      const InterpolationConfig config(spec.beta);
      if (rng.uniform() < config.beta()) {
        AntitheticPair pair = sample_antithetic(post, rng);
        d.trunk = std::move(pair.b);
        d.partner = std::move(pair.b_tilde);
      } else {
        d.trunk = sample_bernoulli(post, rng);
        d.partner = sample_bernoulli(post, rng);
      }
      const double fb = f(d.trunk);
      const double ft = f(d.partner);
      d.logit_grad = interpolated_partials(post, d.trunk, d.partner, fb, ft, config.beta());
      d.objective = fb;
      d.evals = 2;
      break;
    }
    default:
      throw std::invalid_argument("estimator '" + std::string(to_string(spec.id)) +
                                  "' is not a single-objective estimator");
  }
  // Direct term: f depends on the encoder through -log q(b|x).
  d.logit_grad -= score(post, d.trunk);
  return d;
}

void check_finite(double objective, const Eigen::VectorXd& flat, const char* what) {
  if (!std::isfinite(objective) || !flat.allFinite()) {
    std::ostringstream msg;
    msg << what << ": non-finite training state (objective=" << objective
        << ", gradient norm=" << flat.norm() << ", gradient size=" << flat.size() << ")";
    throw NonFiniteError(msg.str());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Single stochastic layer

BernoulliVAE BernoulliVAE::create(Eigen::Index data_dim, Eigen::Index latent_dim,
                                  const std::vector<Eigen::Index>& hidden, Rng& rng,
                                  double slope) {
  BernoulliVAE vae;
  vae.encoder = DenseNetwork::create(data_dim, hidden, latent_dim, rng, slope);
  vae.decoder = DenseNetwork::create(latent_dim, hidden, data_dim, rng, slope);
  vae.prior_logits = Eigen::VectorXd::Zero(latent_dim);
  return vae;
}

void BernoulliVAE::validate() const {
  const Eigen::Index latent = prior_logits.size();
  if (latent == 0 || encoder.output_dim() != latent || decoder.input_dim() != latent ||
      encoder.input_dim() != decoder.output_dim()) {
    throw std::invalid_argument("BernoulliVAE: encoder, decoder and prior dimensions disagree");
  }
}

double elbo_value(const BernoulliVAE& vae, const Eigen::Ref<const Eigen::VectorXd>& x_binary,
                  const LogitParameterVector& posterior, const Bits& b) {
  if (b.size() != vae.latent_dim() || x_binary.size() != vae.data_dim() ||
      posterior.dim() != vae.latent_dim()) {
    throw std::invalid_argument("elbo_value: shape mismatch");
  }
  const Eigen::VectorXd pixel_logits = forward(vae.decoder, to_real(b));
  const double lpx = log_prob(pixel_logits, x_binary);
  const double lpb = log_prob(LogitParameterVector(vae.prior_logits), b);
  const double lq = log_prob(posterior, b);
  return (lpx + lpb) - lq;
}

double elbo_value(const BernoulliVAE& vae, const Eigen::Ref<const Eigen::VectorXd>& x_binary,
                  const Eigen::Ref<const Eigen::VectorXd>& x_centered, const Bits& b) {
  const LogitParameterVector posterior(forward(vae.encoder, x_centered));
  return elbo_value(vae, x_binary, posterior, b);
}

VaeOptimizers VaeOptimizers::make(const TrainingRates& rates) {
  return {Optimizer(AdamConfig{rates.network_lr}), Optimizer(AdamConfig{rates.network_lr}),
          Optimizer(SgdConfig{rates.prior_lr})};
}

VaeGradientResult elbo_gradients(const BernoulliVAE& vae, const Batch& batch,
                                 const EstimatorSpec& estimator, const Rng& rng) {
  vae.validate();
  check_batch(batch, vae.data_dim());
  const Eigen::Index n_examples = batch.size();
  const Eigen::Index latent = vae.latent_dim();

  Tape enc_tape;
  const Eigen::MatrixXd logits = forward(vae.encoder, batch.centered, &enc_tape);
  check_logits(logits, "elbo_gradients");

  std::vector<ExampleDraw> draws(static_cast<std::size_t>(n_examples));
  parallel_for(draws.size(), [&](std::size_t n) {
    const auto idx = static_cast<Eigen::Index>(n);
    Rng example_rng = rng.split(n);
    const LogitParameterVector post(column(logits, idx));
    draws[n] = draw_single(vae, column(batch.binary, idx), post, estimator, example_rng);
  });

  VaeGradientResult result;
  result.logit_grads.resize(latent, n_examples);
  result.trunk.resize(latent, n_examples);
  if (estimator.id != EstimatorId::reinforce) result.partner.resize(latent, n_examples);
  double objective_sum = 0.0;
  for (Eigen::Index n = 0; n < n_examples; ++n) {
    const auto& d = draws[static_cast<std::size_t>(n)];
    result.logit_grads.col(n) = d.logit_grad;
    result.trunk.col(n) = to_real(d.trunk);
    if (d.partner.size() > 0) result.partner.col(n) = to_real(d.partner);
    objective_sum += d.objective;
    result.objective_evals += d.evals;
  }
  result.objective = objective_sum / static_cast<double>(n_examples);

  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n_examples);
  auto& g = result.grads;
  g.encoder = NetworkGradients::zeros_like(vae.encoder);
  backward(vae.encoder, enc_tape, result.logit_grads, g.encoder);
  g.decoder = NetworkGradients::zeros_like(vae.decoder);
  decoder_backward(vae.decoder, result.trunk, batch.binary, ones, g.decoder);
  g.prior = Eigen::VectorXd::Zero(latent);
  prior_accumulate(vae.prior_logits, result.trunk, ones, g.prior);

  const double inv = 1.0 / static_cast<double>(n_examples);
  g.encoder *= inv;
  g.decoder *= inv;
  g.prior *= inv;
  return result;
}

void apply_gradients(BernoulliVAE& vae, VaeOptimizers& optimizers, const VaeGradients& grads) {
  optimizers.encoder.step(vae.encoder, grads.encoder);
  optimizers.decoder.step(vae.decoder, grads.decoder);
  optimizers.prior.step(vae.prior_logits, grads.prior);
}

namespace {

void check_result(const VaeGradientResult& r, const char* what) {
  Eigen::VectorXd flat(r.grads.encoder.flatten().size() + r.grads.decoder.flatten().size() +
                       r.grads.prior.size());
  flat << r.grads.encoder.flatten(), r.grads.decoder.flatten(), r.grads.prior;
  if (!std::isfinite(r.objective) || !flat.allFinite()) {
    std::ostringstream msg;
    msg << what << ": non-finite training state (objective=" << r.objective
        << ", |encoder grad|=" << norm_of(r.grads.encoder)
        << ", |decoder grad|=" << norm_of(r.grads.decoder)
        << ", |prior grad|=" << r.grads.prior.norm() << ")";
    throw NonFiniteError(msg.str());
  }
}

}  // namespace

VaeGradientResult elbo_step(BernoulliVAE& vae, const Batch& batch, const EstimatorSpec& estimator,
                            VaeOptimizers& optimizers, const Rng& rng) {
  VaeGradientResult r = elbo_gradients(vae, batch, estimator, rng);
  check_result(r, "elbo_step");
  apply_gradients(vae, optimizers, r.grads);
  return r;
}

namespace {

Eigen::Index per_example_evals(MultiSampleMethod method, Eigen::Index k) {
  return method == MultiSampleMethod::vimco_k ? k : 2 * k;
}

}  // namespace

VaeGradientResult multisample_gradients(const BernoulliVAE& vae, const Batch& batch,
                                        Eigen::Index k, MultiSampleMethod method, const Rng& rng) {
  vae.validate();
  check_batch(batch, vae.data_dim());
  if (k < 1) throw std::invalid_argument("multisample: K must be >= 1");
  if (method == MultiSampleMethod::vimco_k && k < 2) {
    throw std::invalid_argument("multisample: K-sample VIMCO needs K >= 2");
  }
  const Eigen::Index n_examples = batch.size();
  const Eigen::Index latent = vae.latent_dim();

  Tape enc_tape;
  const Eigen::MatrixXd logits = forward(vae.encoder, batch.centered, &enc_tape);
  check_logits(logits, "multisample_gradients");

  struct Draw {
    std::vector<Bits> samples;  // samples that carry direct gradients
    Eigen::VectorXd weights;    // normalized importance weights over `samples`
    Eigen::VectorXd logit_grad;
    double objective = 0.0;
  };
  std::vector<Draw> draws(static_cast<std::size_t>(n_examples));

  parallel_for(draws.size(), [&](std::size_t n) {
    const auto idx = static_cast<Eigen::Index>(n);
    Rng example_rng = rng.split(n);
    const LogitParameterVector post(column(logits, idx));
    const Eigen::VectorXd x = column(batch.binary, idx);
    Draw& d = draws[n];
    d.logit_grad = Eigen::VectorXd::Zero(latent);
    if (method != MultiSampleMethod::disarm_k_pairs) {
      const Eigen::Index s = method == MultiSampleMethod::vimco_2k ? 2 * k : k;
      Eigen::VectorXd log_w(s);
      for (Eigen::Index j = 0; j < s; ++j) {
        d.samples.push_back(sample_bernoulli(post, example_rng));
        log_w(j) = elbo_value(vae, x, post, d.samples.back());
      }
      d.logit_grad = vimco(post, log_w, d.samples).partials;
      d.weights = softmax(log_w);
      d.objective = multi_sample_bound(log_w);
    } else {
      std::vector<AntitheticPair> pairs;
      for (Eigen::Index j = 0; j < k; ++j) pairs.push_back(sample_antithetic(post, example_rng));
      MultiSampleBatch ms;
      ms.log_w.resize(2 * k);
      for (Eigen::Index j = 0; j < k; ++j) {
        const auto& pair = pairs[static_cast<std::size_t>(j)];
        ms.log_w(j) = elbo_value(vae, x, post, pair.b);
        ms.log_w(k + j) = elbo_value(vae, x, post, pair.b_tilde);
      }
      ms.pairs = std::move(pairs);
      d.logit_grad = disarm_multisample(post, ms).partials;
      for (const auto& pair : ms.pairs) d.samples.push_back(pair.b);
      d.weights = softmax(ms.log_w_trunk());
      d.objective = multi_sample_bound(ms.log_w);
    }
    // Direct term of the bound through -log q(b|x).
    for (std::size_t j = 0; j < d.samples.size(); ++j) {
      d.logit_grad -= d.weights(static_cast<Eigen::Index>(j)) * score(post, d.samples[j]);
    }
  });

  const Eigen::Index per_example = static_cast<Eigen::Index>(draws.front().samples.size());
  const Eigen::Index total = per_example * n_examples;
  Eigen::MatrixXd samples(latent, total);
  Eigen::MatrixXd targets(vae.data_dim(), total);
  Eigen::VectorXd weights(total);

  VaeGradientResult result;
  result.logit_grads.resize(latent, n_examples);
  result.trunk.resize(latent, n_examples);
  double objective_sum = 0.0;
  for (Eigen::Index n = 0; n < n_examples; ++n) {
    const auto& d = draws[static_cast<std::size_t>(n)];
    result.logit_grads.col(n) = d.logit_grad;
    result.trunk.col(n) = to_real(d.samples.front());
    for (Eigen::Index j = 0; j < per_example; ++j) {
      const Eigen::Index m = n * per_example + j;
      samples.col(m) = to_real(d.samples[static_cast<std::size_t>(j)]);
      targets.col(m) = batch.binary.col(n);
      weights(m) = d.weights(j);
    }
    objective_sum += d.objective;
  }
  result.objective = objective_sum / static_cast<double>(n_examples);
  result.objective_evals = static_cast<std::size_t>(per_example_evals(method, k) * n_examples);

  auto& g = result.grads;
  g.encoder = NetworkGradients::zeros_like(vae.encoder);
  backward(vae.encoder, enc_tape, result.logit_grads, g.encoder);
  g.decoder = NetworkGradients::zeros_like(vae.decoder);
  decoder_backward(vae.decoder, samples, targets, weights, g.decoder);
  g.prior = Eigen::VectorXd::Zero(latent);
  prior_accumulate(vae.prior_logits, samples, weights, g.prior);

  const double inv = 1.0 / static_cast<double>(n_examples);
  g.encoder *= inv;
  g.decoder *= inv;
  g.prior *= inv;
  return result;
}

VaeGradientResult multisample_step(BernoulliVAE& vae, const Batch& batch, Eigen::Index k,
                                   MultiSampleMethod method, VaeOptimizers& optimizers,
                                   const Rng& rng) {
  VaeGradientResult r = multisample_gradients(vae, batch, k, method, rng);
  check_result(r, "multisample_step");
  apply_gradients(vae, optimizers, r.grads);
  return r;
}

Eigen::VectorXd importance_bound(const BernoulliVAE& vae, const Batch& batch,
                                 Eigen::Index samples, const Rng& rng) {
  vae.validate();
  check_batch(batch, vae.data_dim());
  if (samples < 1) throw std::invalid_argument("importance_bound: need at least one sample");
  const Eigen::MatrixXd logits = forward(vae.encoder, batch.centered);
  Eigen::VectorXd out(batch.size());
  parallel_for(static_cast<std::size_t>(batch.size()), [&](std::size_t n) {
    const auto idx = static_cast<Eigen::Index>(n);
    Rng example_rng = rng.split(n);
    const LogitParameterVector post(column(logits, idx));
    const Eigen::VectorXd x = column(batch.binary, idx);
    Eigen::VectorXd log_w(samples);
    for (Eigen::Index s = 0; s < samples; ++s) {
      log_w(s) = elbo_value(vae, x, post, sample_bernoulli(post, example_rng));
    }
    out(idx) = multi_sample_bound(log_w);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Hierarchical

HierarchicalVAE HierarchicalVAE::create(Eigen::Index data_dim,
                                        const std::vector<Eigen::Index>& layer_dims,
                                        const std::vector<Eigen::Index>& hidden, Rng& rng,
                                        double slope) {
  if (layer_dims.empty()) throw std::invalid_argument("HierarchicalVAE: need at least one layer");
  HierarchicalVAE h;
  for (std::size_t t = 0; t < layer_dims.size(); ++t) {
    const Eigen::Index below = t == 0 ? data_dim : layer_dims[t - 1];
    h.encoders.push_back(DenseNetwork::create(below, hidden, layer_dims[t], rng, slope));
    h.decoders.push_back(DenseNetwork::create(layer_dims[t], hidden, below, rng, slope));
  }
  h.prior_logits = Eigen::VectorXd::Zero(layer_dims.back());
  return h;
}

HierarchicalVAE HierarchicalVAE::from_single(const BernoulliVAE& vae) {
  vae.validate();
  HierarchicalVAE h;
  h.encoders.push_back(vae.encoder);
  h.decoders.push_back(vae.decoder);
  h.prior_logits = vae.prior_logits;
  return h;
}

void HierarchicalVAE::validate() const {
  const std::size_t t_count = encoders.size();
  if (t_count == 0 || decoders.size() != t_count) {
    throw std::invalid_argument("HierarchicalVAE: encoder/decoder layer counts differ");
  }
  for (std::size_t t = 0; t < t_count; ++t) {
    const Eigen::Index dim = encoders[t].output_dim();
    const Eigen::Index below = encoders[t].input_dim();
    if (decoders[t].input_dim() != dim || decoders[t].output_dim() != below) {
      throw std::invalid_argument("HierarchicalVAE: layer " + std::to_string(t) +
                                  " encoder and decoder disagree");
    }
    if (t > 0 && below != encoders[t - 1].output_dim()) {
      throw std::invalid_argument("HierarchicalVAE: layers do not chain at " + std::to_string(t));
    }
  }
  if (prior_logits.size() != encoders.back().output_dim()) {
    throw std::invalid_argument("HierarchicalVAE: prior dimension mismatch");
  }
}

double hierarchical_elbo_value(const HierarchicalVAE& hvae,
                               const Eigen::Ref<const Eigen::VectorXd>& x_binary,
                               const LogitParameterVector& first_posterior,
                               const std::vector<Bits>& layers) {
  const std::size_t t_count = hvae.layer_count();
  if (layers.size() != t_count) throw std::invalid_argument("hierarchical_elbo_value: layer count");
  for (std::size_t t = 0; t < t_count; ++t) {
    if (layers[t].size() != hvae.encoders[t].output_dim()) {
      throw std::invalid_argument("hierarchical_elbo_value: layer " + std::to_string(t) + " size");
    }
  }
  double total = 0.0;
  for (std::size_t t = 0; t < t_count; ++t) {
    const Eigen::VectorXd logits = forward(hvae.decoders[t], to_real(layers[t]));
    if (t == 0) {
      total += log_prob(logits, x_binary);
    } else {
      total += log_prob(logits, to_real(layers[t - 1]));
    }
  }
  total += log_prob(LogitParameterVector(hvae.prior_logits), layers.back());
  for (std::size_t t = 0; t < t_count; ++t) {
    if (t == 0) {
      total -= log_prob(first_posterior, layers[0]);
    } else {
      const LogitParameterVector post(forward(hvae.encoders[t], to_real(layers[t - 1])));
      total -= log_prob(post, layers[t]);
    }
  }
  return total;
}

HierarchicalOptimizers HierarchicalOptimizers::make(std::size_t layers, const TrainingRates& rates) {
  HierarchicalOptimizers o{{}, {}, Optimizer(SgdConfig{rates.prior_lr})};
  for (std::size_t t = 0; t < layers; ++t) {
    o.encoders.emplace_back(AdamConfig{rates.network_lr});
    o.decoders.emplace_back(AdamConfig{rates.network_lr});
  }
  return o;
}

HierarchicalGradientResult hierarchical_gradients(const HierarchicalVAE& hvae, const Batch& batch,
                                                  EstimatorId estimator, const Rng& rng) {
  if (estimator != EstimatorId::disarm && estimator != EstimatorId::arm) {
    throw std::invalid_argument("hierarchical estimator must be disarm or arm");
  }
  hvae.validate();
  check_batch(batch, hvae.data_dim());
  const std::size_t t_count = hvae.layer_count();
  const Eigen::Index n_examples = batch.size();
  const auto n_size = static_cast<std::size_t>(n_examples);

  // Shared uniforms u_{1:T}, drawn up front from each example's stream.
  std::vector<std::vector<Eigen::VectorXd>> uniforms(n_size);
  for (std::size_t n = 0; n < n_size; ++n) {
    Rng example_rng = rng.split(n);
    for (std::size_t t = 0; t < t_count; ++t) {
      Eigen::VectorXd u(hvae.encoders[t].output_dim());
      for (Eigen::Index i = 0; i < u.size(); ++i) u(i) = example_rng.uniform();
      uniforms[n].push_back(std::move(u));
    }
  }

  // Trunk, batched layer by layer.
  std::vector<Tape> tapes(t_count);
  std::vector<Eigen::MatrixXd> logits(t_count);
  std::vector<std::vector<AntitheticPair>> pairs(t_count, std::vector<AntitheticPair>(n_size));
  HierarchicalGradientResult result;
  Eigen::MatrixXd input = batch.centered;
  for (std::size_t t = 0; t < t_count; ++t) {
    logits[t] = forward(hvae.encoders[t], input, &tapes[t]);
    check_logits(logits[t], "hierarchical_gradients");
    Eigen::MatrixXd trunk(logits[t].rows(), n_examples);
    for (std::size_t n = 0; n < n_size; ++n) {
      const auto idx = static_cast<Eigen::Index>(n);
      pairs[t][n] = antithetic_pair_from_uniforms(LogitParameterVector(column(logits[t], idx)),
                                                  uniforms[n][t]);
      trunk.col(idx) = to_real(pairs[t][n].b);
    }
    result.trunk.push_back(trunk);
    input = std::move(trunk);
  }

  for (std::size_t t = 0; t < t_count; ++t) {
    result.logit_grads.emplace_back(logits[t].rows(), n_examples);
  }
  std::vector<double> objectives(n_size);

  parallel_for(n_size, [&](std::size_t n) {
    const auto idx = static_cast<Eigen::Index>(n);
    const Eigen::VectorXd x = column(batch.binary, idx);
    const LogitParameterVector first(column(logits[0], idx));
    std::vector<Bits> trunk(t_count);
    for (std::size_t t = 0; t < t_count; ++t) trunk[t] = pairs[t][n].b;
    const double f_trunk = hierarchical_elbo_value(hvae, x, first, trunk);
    objectives[n] = f_trunk;

    for (std::size_t t = 0; t < t_count; ++t) {
      const LogitParameterVector post(column(logits[t], idx));
      const AntitheticPair& pair = pairs[t][n];
      // Branch: antithetic at layer t, fresh samples above it.
      std::vector<Bits> branch = trunk;
      branch[t] = pair.b_tilde;
      Rng branch_rng = rng.split(n).split(t + 1);
      for (std::size_t s = t + 1; s < t_count; ++s) {
        const LogitParameterVector above(forward(hvae.encoders[s], to_real(branch[s - 1])));
        branch[s] = sample_bernoulli(above, branch_rng);
      }
      const double f_branch = hierarchical_elbo_value(hvae, x, first, branch);
      Eigen::VectorXd g = estimator == EstimatorId::disarm
                              ? disarm_partials(post, pair.b, pair.b_tilde, f_trunk, f_branch)
                              : arm_partials(pair.u, f_trunk, f_branch);
      g -= score(post, pair.b);
      result.logit_grads[t].col(idx) = g;
    }
  });

  double objective_sum = 0.0;
  for (double v : objectives) objective_sum += v;
  result.objective = objective_sum / static_cast<double>(n_examples);
  result.objective_evals = (t_count + 1) * n_size;

  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n_examples);
  auto& g = result.grads;
  for (std::size_t t = 0; t < t_count; ++t) {
    g.encoders.push_back(NetworkGradients::zeros_like(hvae.encoders[t]));
    backward(hvae.encoders[t], tapes[t], result.logit_grads[t], g.encoders[t]);
  }
  for (std::size_t t = 0; t < t_count; ++t) {
    g.decoders.push_back(NetworkGradients::zeros_like(hvae.decoders[t]));
    const Eigen::MatrixXd& targets = t == 0 ? batch.binary : result.trunk[t - 1];
    decoder_backward(hvae.decoders[t], result.trunk[t], targets, ones, g.decoders[t]);
  }
  g.prior = Eigen::VectorXd::Zero(hvae.prior_logits.size());
  prior_accumulate(hvae.prior_logits, result.trunk.back(), ones, g.prior);

  const double inv = 1.0 / static_cast<double>(n_examples);
  for (auto& e : g.encoders) e *= inv;
  for (auto& d : g.decoders) d *= inv;
  g.prior *= inv;
  return result;
}

void apply_gradients(HierarchicalVAE& hvae, HierarchicalOptimizers& optimizers,
                     const HierarchicalGradients& grads) {
  for (std::size_t t = 0; t < hvae.layer_count(); ++t) {
    optimizers.encoders[t].step(hvae.encoders[t], grads.encoders[t]);
  }
  for (std::size_t t = 0; t < hvae.layer_count(); ++t) {
    optimizers.decoders[t].step(hvae.decoders[t], grads.decoders[t]);
  }
  optimizers.prior.step(hvae.prior_logits, grads.prior);
}

HierarchicalGradientResult hierarchical_disarm_step(HierarchicalVAE& hvae, const Batch& batch,
                                                    HierarchicalOptimizers& optimizers,
                                                    const Rng& rng, EstimatorId estimator) {
  HierarchicalGradientResult r = hierarchical_gradients(hvae, batch, estimator, rng);
  Eigen::VectorXd flat(flatten(r.grads.encoders).size() + flatten(r.grads.decoders).size() +
                       r.grads.prior.size());
  flat << flatten(r.grads.encoders), flatten(r.grads.decoders), r.grads.prior;
  check_finite(r.objective, flat, "hierarchical_disarm_step");
  apply_gradients(hvae, optimizers, r.grads);
  return r;
}

Eigen::VectorXd importance_bound(const HierarchicalVAE& hvae, const Batch& batch,
                                 Eigen::Index samples, const Rng& rng) {
  hvae.validate();
  check_batch(batch, hvae.data_dim());
  if (samples < 1) throw std::invalid_argument("importance_bound: need at least one sample");
  const Eigen::MatrixXd first_logits = forward(hvae.encoders[0], batch.centered);
  const std::size_t t_count = hvae.layer_count();
  Eigen::VectorXd out(batch.size());
  parallel_for(static_cast<std::size_t>(batch.size()), [&](std::size_t n) {
    const auto idx = static_cast<Eigen::Index>(n);
    Rng example_rng = rng.split(n);
    const LogitParameterVector first(column(first_logits, idx));
    const Eigen::VectorXd x = column(batch.binary, idx);
    Eigen::VectorXd log_w(samples);
    std::vector<Bits> config(t_count);
    for (Eigen::Index s = 0; s < samples; ++s) {
      config[0] = sample_bernoulli(first, example_rng);
      for (std::size_t t = 1; t < t_count; ++t) {
        const LogitParameterVector post(forward(hvae.encoders[t], to_real(config[t - 1])));
        config[t] = sample_bernoulli(post, example_rng);
      }
      log_w(s) = hierarchical_elbo_value(hvae, x, first, config);
    }
    out(idx) = multi_sample_bound(log_w);
  });
  return out;
}

Eigen::VectorXd flatten(const std::vector<NetworkGradients>& grads) {
  std::vector<Eigen::VectorXd> parts;
  Eigen::Index n = 0;
  for (const auto& g : grads) {
    parts.push_back(g.flatten());
    n += parts.back().size();
  }
  Eigen::VectorXd out(n);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.segment(at, p.size()) = p;
    at += p.size();
  }
  return out;
}

}  // namespace disarm
