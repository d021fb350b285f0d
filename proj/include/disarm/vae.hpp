#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "disarm/bernoulli.hpp"
#include "disarm/neural.hpp"
#include "disarm/rng.hpp"

namespace disarm {

// ---------------------------------------------------------------------------
// Toy problem: maximize E_{b ~ Bernoulli(sigma(phi))}[(b - p0)^2].

class ToyObjective {
 public:
  ToyObjective(double p0, double phi);

  double p0() const { return p0_; }
  double phi() const { return phi_; }
  double& phi() { return phi_; }

 private:
  double p0_;
  double phi_;
};

double toy_value(double p0, bool b);
double toy_expected_value(double p0, double phi);
// (1 - 2 p0) sigma(phi) (1 - sigma(phi))
double toy_exact_gradient(double p0, double phi);

// ---------------------------------------------------------------------------
// Shared training plumbing.

// Columns are examples. `binary` feeds the likelihood, `centered` the encoder.
struct Batch {
  Eigen::MatrixXd binary;
  Eigen::MatrixXd centered;

  Eigen::Index size() const { return binary.cols(); }
};

struct EstimatorSpec {
  EstimatorId id = EstimatorId::disarm;
  double beta = 0.5;      // interpolated only
  double baseline = 0.0;  // reinforce only
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainingRates {
  double network_lr = 1e-4;  // Adam, encoder and decoder
  double prior_lr = 1e-2;    // SGD, prior logits
};

// ---------------------------------------------------------------------------
// Single stochastic layer.

struct BernoulliVAE {
  DenseNetwork encoder;  // centered x -> posterior logits
  DenseNetwork decoder;  // b -> pixel logits
  Eigen::VectorXd prior_logits;

  static BernoulliVAE create(Eigen::Index data_dim, Eigen::Index latent_dim,
                             const std::vector<Eigen::Index>& hidden, Rng& rng,
                             double slope = kDefaultLeakySlope);

  Eigen::Index data_dim() const { return decoder.output_dim(); }
  Eigen::Index latent_dim() const { return prior_logits.size(); }
  // Throws std::invalid_argument when the pieces do not fit together.
  void validate() const;
};

// log p(x|b) + log p(b) - log q(b|x); posterior holds the encoder logits for x.
double elbo_value(const BernoulliVAE& vae, const Eigen::Ref<const Eigen::VectorXd>& x_binary,
                  const LogitParameterVector& posterior, const Bits& b);
double elbo_value(const BernoulliVAE& vae, const Eigen::Ref<const Eigen::VectorXd>& x_binary,
                  const Eigen::Ref<const Eigen::VectorXd>& x_centered, const Bits& b);

struct VaeGradients {
  NetworkGradients encoder;
  NetworkGradients decoder;
  Eigen::VectorXd prior;
};

struct VaeGradientResult {
  VaeGradients grads;             // batch means
  Eigen::MatrixXd logit_grads;    // latent x N, encoder-logit gradients per example
  Eigen::MatrixXd trunk;          // latent x N, the sample that drives decoder/prior grads
  Eigen::MatrixXd partner;        // latent x N, b~ (or the second draw); empty for reinforce
  double objective = 0.0;         // batch mean of the reported bound
  std::size_t objective_evals = 0;
};

struct VaeOptimizers {
  Optimizer encoder;
  Optimizer decoder;
  Optimizer prior;

  static VaeOptimizers make(const TrainingRates& rates);
};

// Estimator gradients at the current parameters; no update. Example n draws
// all its randomness from rng.split(n).
VaeGradientResult elbo_gradients(const BernoulliVAE& vae, const Batch& batch,
                                 const EstimatorSpec& estimator, const Rng& rng);

void apply_gradients(BernoulliVAE& vae, VaeOptimizers& optimizers, const VaeGradients& grads);

VaeGradientResult elbo_step(BernoulliVAE& vae, const Batch& batch, const EstimatorSpec& estimator,
                            VaeOptimizers& optimizers, const Rng& rng);

enum class MultiSampleMethod { vimco_2k, disarm_k_pairs, vimco_k };

// Gradients of the multi-sample bound. vimco_2k draws 2K independent samples,
// disarm_k_pairs draws K antithetic pairs; both spend 2K evaluations of
// log w per example and report the 2K-sample bound as the objective.
// vimco_k draws K samples (K >= 2) and reports the K-sample bound; two of
// them averaged give the equal-cost VIMCO reference for variance probes.
VaeGradientResult multisample_gradients(const BernoulliVAE& vae, const Batch& batch,
                                        Eigen::Index k, MultiSampleMethod method, const Rng& rng);

VaeGradientResult multisample_step(BernoulliVAE& vae, const Batch& batch, Eigen::Index k,
                                   MultiSampleMethod method, VaeOptimizers& optimizers,
                                   const Rng& rng);

// Per-example log (1/S) sum_s w(b^s) with b^s drawn independently from q(b|x).
Eigen::VectorXd importance_bound(const BernoulliVAE& vae, const Batch& batch,
                                 Eigen::Index samples, const Rng& rng);

// ---------------------------------------------------------------------------
// T stochastic layers: q(b|x) = prod_t q(b_t | b_{t-1}), b_0 = x.

struct HierarchicalVAE {
  std::vector<DenseNetwork> encoders;  // encoders[t]: b_{t-1} -> logits of b_t
  std::vector<DenseNetwork> decoders;  // decoders[t]: b_t -> logits of b_{t-1}
  Eigen::VectorXd prior_logits;        // p(b_T)

  static HierarchicalVAE create(Eigen::Index data_dim, const std::vector<Eigen::Index>& layer_dims,
                                const std::vector<Eigen::Index>& hidden, Rng& rng,
                                double slope = kDefaultLeakySlope);
  static HierarchicalVAE from_single(const BernoulliVAE& vae);

  std::size_t layer_count() const { return encoders.size(); }
  Eigen::Index data_dim() const { return decoders.front().output_dim(); }
  void validate() const;
};

// f(b_{1:T}) = sum_t log p(b_{t-1}|b_t) + log p(b_T) - sum_t log q(b_t|b_{t-1}).
// first_posterior holds the layer-1 logits for x; deeper logits are computed
// from the configuration itself.
double hierarchical_elbo_value(const HierarchicalVAE& hvae,
                               const Eigen::Ref<const Eigen::VectorXd>& x_binary,
                               const LogitParameterVector& first_posterior,
                               const std::vector<Bits>& layers);

struct HierarchicalGradients {
  std::vector<NetworkGradients> encoders;
  std::vector<NetworkGradients> decoders;
  Eigen::VectorXd prior;
};

struct HierarchicalGradientResult {
  HierarchicalGradients grads;
  std::vector<Eigen::MatrixXd> logit_grads;  // per layer, dim_t x N
  std::vector<Eigen::MatrixXd> trunk;        // per layer, dim_t x N
  double objective = 0.0;
  std::size_t objective_evals = 0;
};

struct HierarchicalOptimizers {
  std::vector<Optimizer> encoders;
  std::vector<Optimizer> decoders;
  Optimizer prior;

  static HierarchicalOptimizers make(std::size_t layers, const TrainingRates& rates);
};

// Shared-uniform trunk plus one resampled branch per layer. `estimator` is
// disarm or arm; arm keeps the same trunk/branch structure with the (2u - 1)
// coefficient.
HierarchicalGradientResult hierarchical_gradients(const HierarchicalVAE& hvae, const Batch& batch,
                                                  EstimatorId estimator, const Rng& rng);

void apply_gradients(HierarchicalVAE& hvae, HierarchicalOptimizers& optimizers,
                     const HierarchicalGradients& grads);

HierarchicalGradientResult hierarchical_disarm_step(HierarchicalVAE& hvae, const Batch& batch,
                                                    HierarchicalOptimizers& optimizers,
                                                    const Rng& rng,
                                                    EstimatorId estimator = EstimatorId::disarm);

Eigen::VectorXd importance_bound(const HierarchicalVAE& hvae, const Batch& batch,
                                 Eigen::Index samples, const Rng& rng);

// Mean of parameter gradients, flattened in a fixed order; used by the
// variance trackers.
Eigen::VectorXd flatten(const std::vector<NetworkGradients>& grads);

}  // namespace disarm
