#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "disarm/rng.hpp"

namespace disarm {

enum class Activation : std::uint8_t { identity = 0, leaky_relu = 1 };

inline constexpr double kDefaultLeakySlope = 0.3;

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
  Activation activation = Activation::identity;
  double slope = kDefaultLeakySlope;
};

// Stack of affine maps with optional LeakyReLU. Inputs are column vectors or
// matrices whose columns are independent examples.
class DenseNetwork {
 public:
  DenseNetwork() = default;
  explicit DenseNetwork(std::vector<DenseLayer> layers);

  // Hidden layers use LeakyReLU(slope), the output layer is affine. Weights
  // are drawn uniformly from [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases start
  // at zero.
  static DenseNetwork create(Eigen::Index input_dim, const std::vector<Eigen::Index>& hidden,
                             Eigen::Index output_dim, Rng& rng,
                             double slope = kDefaultLeakySlope);

  Eigen::Index input_dim() const;
  Eigen::Index output_dim() const;
  Eigen::Index parameter_count() const;

  const std::vector<DenseLayer>& layers() const { return layers_; }
  // Any mutable access invalidates outstanding tapes.
  std::vector<DenseLayer>& mutable_layers() {
    ++version_;
    return layers_;
  }
  std::uint64_t version() const { return version_; }

 private:
  std::vector<DenseLayer> layers_;
  std::uint64_t version_ = 0;
};

// Forward cache for one call: inputs and pre-activations of every layer.
struct Tape {
  const DenseNetwork* network = nullptr;
  std::uint64_t version = 0;
  std::vector<Eigen::MatrixXd> inputs;
  std::vector<Eigen::MatrixXd> pre_activations;
};

struct NetworkGradients {
  std::vector<Eigen::MatrixXd> weight;
  std::vector<Eigen::VectorXd> bias;

  static NetworkGradients zeros_like(const DenseNetwork& net);
  NetworkGradients& operator+=(const NetworkGradients& other);
  NetworkGradients& operator*=(double s);
  Eigen::VectorXd flatten() const;
};

Eigen::MatrixXd forward(const DenseNetwork& net, const Eigen::Ref<const Eigen::MatrixXd>& input,
                        Tape* tape = nullptr);

// Reverse pass for the composition recorded in tape. Parameter gradients are
// summed over columns and added into accum; the return value is the
// cotangent of the input. Throws std::logic_error on a stale or foreign tape.
Eigen::MatrixXd backward(const DenseNetwork& net, const Tape& tape,
                         const Eigen::Ref<const Eigen::MatrixXd>& output_cotangent,
                         NetworkGradients& accum);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct SgdConfig {
  double lr = 1e-2;
};

// First-order optimizer over a fixed list of parameter blocks. Steps ascend:
// params += update(grads), since every objective here is a bound to maximize.
class Optimizer {
 public:
  using Config = std::variant<AdamConfig, SgdConfig>;

  explicit Optimizer(Config config) : config_(config) {}

  struct Slot {
    double* value;
    const double* grad;
    Eigen::Index size;
  };

  void step(std::span<const Slot> slots);
  void step(DenseNetwork& net, const NetworkGradients& grads);
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grads);

  const Config& config() const { return config_; }
  std::uint64_t step_count() const { return steps_; }

 private:
  Config config_;
  std::vector<Eigen::VectorXd> first_moment_;
  std::vector<Eigen::VectorXd> second_moment_;
  std::uint64_t steps_ = 0;
};

}  // namespace disarm
