#include "disarm/neural.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace disarm {

namespace {

Eigen::MatrixXd activate(const Eigen::MatrixXd& pre, const DenseLayer& layer) {
  if (layer.activation == Activation::identity) return pre;
  const double slope = layer.slope;
  return pre.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
}

// d activation / d pre, elementwise.
Eigen::MatrixXd activation_derivative(const Eigen::MatrixXd& pre, const DenseLayer& layer) {
  if (layer.activation == Activation::identity) {
    return Eigen::MatrixXd::Ones(pre.rows(), pre.cols());
  }
  const double slope = layer.slope;
  return pre.unaryExpr([slope](double v) { return v > 0.0 ? 1.0 : slope; });
}

}  // namespace

DenseNetwork::DenseNetwork(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw std::invalid_argument("DenseNetwork: no layers");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (layer.bias.size() != layer.weight.rows()) {
      throw std::invalid_argument("DenseNetwork: bias/weight mismatch in layer " + std::to_string(l));
    }
    if (l > 0 && layer.weight.cols() != layers_[l - 1].weight.rows()) {
      throw std::invalid_argument("DenseNetwork: layer " + std::to_string(l) +
                                  " does not compose with its predecessor");
    }
    if (!layer.weight.allFinite() || !layer.bias.allFinite() || !std::isfinite(layer.slope)) {
      throw std::invalid_argument("DenseNetwork: non-finite parameter");
    }
  }
}

DenseNetwork DenseNetwork::create(Eigen::Index input_dim, const std::vector<Eigen::Index>& hidden,
                                  Eigen::Index output_dim, Rng& rng, double slope) {
  std::vector<DenseLayer> layers;
  Eigen::Index fan_in = input_dim;
  auto make_layer = [&](Eigen::Index out, Activation act) {
    DenseLayer layer;
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    layer.weight.resize(out, fan_in);
    // Column-major fill order keeps the draw sequence stable.
    for (Eigen::Index c = 0; c < fan_in; ++c) {
      for (Eigen::Index r = 0; r < out; ++r) {
        layer.weight(r, c) = scale * (2.0 * rng.uniform() - 1.0);
      }
    }
    layer.bias = Eigen::VectorXd::Zero(out);
    layer.activation = act;
    layer.slope = slope;
    layers.push_back(std::move(layer));
    fan_in = out;
  };
  for (Eigen::Index h : hidden) make_layer(h, Activation::leaky_relu);
  make_layer(output_dim, Activation::identity);
  return DenseNetwork(std::move(layers));
}

Eigen::Index DenseNetwork::input_dim() const {
  return layers_.empty() ? 0 : layers_.front().weight.cols();
}

Eigen::Index DenseNetwork::output_dim() const {
  return layers_.empty() ? 0 : layers_.back().weight.rows();
}

Eigen::Index DenseNetwork::parameter_count() const {
  Eigen::Index n = 0;
  for (const auto& layer : layers_) n += layer.weight.size() + layer.bias.size();
  return n;
}

NetworkGradients NetworkGradients::zeros_like(const DenseNetwork& net) {
  NetworkGradients g;
  for (const auto& layer : net.layers()) {
    g.weight.push_back(Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()));
    g.bias.push_back(Eigen::VectorXd::Zero(layer.bias.size()));
  }
  return g;
}

NetworkGradients& NetworkGradients::operator+=(const NetworkGradients& other) {
  if (other.weight.size() != weight.size()) {
    throw std::invalid_argument("NetworkGradients: layer count mismatch");
  }
  for (std::size_t l = 0; l < weight.size(); ++l) {
    weight[l] += other.weight[l];
    bias[l] += other.bias[l];
  }
  return *this;
}

NetworkGradients& NetworkGradients::operator*=(double s) {
  for (std::size_t l = 0; l < weight.size(); ++l) {
    weight[l] *= s;
    bias[l] *= s;
  }
  return *this;
}

Eigen::VectorXd NetworkGradients::flatten() const {
  Eigen::Index n = 0;
  for (std::size_t l = 0; l < weight.size(); ++l) n += weight[l].size() + bias[l].size();
  Eigen::VectorXd out(n);
  Eigen::Index at = 0;
  for (std::size_t l = 0; l < weight.size(); ++l) {
    out.segment(at, weight[l].size()) = weight[l].reshaped();
    at += weight[l].size();
    out.segment(at, bias[l].size()) = bias[l];
    at += bias[l].size();
  }
  return out;
}

Eigen::MatrixXd forward(const DenseNetwork& net, const Eigen::Ref<const Eigen::MatrixXd>& input,
                        Tape* tape) {
  if (input.rows() != net.input_dim()) {
    throw std::invalid_argument("forward: input has " + std::to_string(input.rows()) +
                                " rows, network expects " + std::to_string(net.input_dim()));
  }
  if (tape != nullptr) {
    tape->network = &net;
    tape->version = net.version();
    tape->inputs.clear();
    tape->pre_activations.clear();
  }
  Eigen::MatrixXd h = input;
  for (const auto& layer : net.layers()) {
    Eigen::MatrixXd pre = layer.weight * h;
    pre.colwise() += layer.bias;
    Eigen::MatrixXd out = activate(pre, layer);
    if (tape != nullptr) {
      tape->inputs.push_back(std::move(h));
      tape->pre_activations.push_back(std::move(pre));
    }
    h = std::move(out);
  }
  return h;
}

Eigen::MatrixXd backward(const DenseNetwork& net, const Tape& tape,
                         const Eigen::Ref<const Eigen::MatrixXd>& output_cotangent,
                         NetworkGradients& accum) {
  if (tape.network != &net || tape.version != net.version() ||
      tape.inputs.size() != net.layers().size()) {
    throw std::logic_error("backward: tape does not match the current network state");
  }
  if (accum.weight.size() != net.layers().size()) {
    throw std::invalid_argument("backward: gradient buffer has the wrong layer count");
  }
  const Eigen::Index cols = tape.inputs.front().cols();
  if (output_cotangent.rows() != net.output_dim() || output_cotangent.cols() != cols) {
    throw std::invalid_argument("backward: cotangent shape mismatch");
  }
  Eigen::MatrixXd delta = output_cotangent;
  for (std::size_t l = net.layers().size(); l-- > 0;) {
    const auto& layer = net.layers()[l];
    delta.array() *= activation_derivative(tape.pre_activations[l], layer).array();
    accum.weight[l].noalias() += delta * tape.inputs[l].transpose();
    accum.bias[l] += delta.rowwise().sum();
    delta = layer.weight.transpose() * delta;
  }
  return delta;
}

void Optimizer::step(std::span<const Slot> slots) {
  const bool first = first_moment_.empty() && second_moment_.empty() && steps_ == 0;
  if (std::holds_alternative<AdamConfig>(config_) && first) {
    for (const auto& slot : slots) {
      first_moment_.push_back(Eigen::VectorXd::Zero(slot.size));
      second_moment_.push_back(Eigen::VectorXd::Zero(slot.size));
    }
  }
  if (std::holds_alternative<AdamConfig>(config_)) {
    if (first_moment_.size() != slots.size()) {
      throw std::invalid_argument("optimizer: parameter block count changed");
    }
    for (std::size_t s = 0; s < slots.size(); ++s) {
      if (first_moment_[s].size() != slots[s].size) {
        throw std::invalid_argument("optimizer: parameter block shape changed");
      }
    }
  }
  ++steps_;
  if (const auto* sgd = std::get_if<SgdConfig>(&config_)) {
    for (const auto& slot : slots) {
      Eigen::Map<Eigen::VectorXd> value(slot.value, slot.size);
      Eigen::Map<const Eigen::VectorXd> grad(slot.grad, slot.size);
      value += sgd->lr * grad;
    }
    return;
  }
  const auto& adam = std::get<AdamConfig>(config_);
  const double t = static_cast<double>(steps_);
  const double correction1 = 1.0 - std::pow(adam.beta1, t);
  const double correction2 = 1.0 - std::pow(adam.beta2, t);
  for (std::size_t s = 0; s < slots.size(); ++s) {
    Eigen::Map<Eigen::VectorXd> value(slots[s].value, slots[s].size);
    Eigen::Map<const Eigen::VectorXd> grad(slots[s].grad, slots[s].size);
    auto& m = first_moment_[s];
    auto& v = second_moment_[s];
    m = adam.beta1 * m + (1.0 - adam.beta1) * grad;
    v = adam.beta2 * v + (1.0 - adam.beta2) * grad.cwiseProduct(grad);
    value.array() += adam.lr * (m.array() / correction1) /
                     ((v.array() / correction2).sqrt() + adam.epsilon);
  }
}

void Optimizer::step(DenseNetwork& net, const NetworkGradients& grads) {
  auto& layers = net.mutable_layers();
  if (grads.weight.size() != layers.size()) {
    throw std::invalid_argument("optimizer: gradient/network layer mismatch");
  }
  std::vector<Slot> slots;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (grads.weight[l].rows() != layers[l].weight.rows() ||
        grads.weight[l].cols() != layers[l].weight.cols() ||
        grads.bias[l].size() != layers[l].bias.size()) {
      throw std::invalid_argument("optimizer: gradient shape mismatch in layer " + std::to_string(l));
    }
    slots.push_back({layers[l].weight.data(), grads.weight[l].data(), layers[l].weight.size()});
    slots.push_back({layers[l].bias.data(), grads.bias[l].data(), layers[l].bias.size()});
  }
  step(slots);
}

void Optimizer::step(Eigen::VectorXd& params, const Eigen::VectorXd& grads) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("optimizer: gradient shape mismatch");
  }
  const Slot slot{params.data(), grads.data(), params.size()};
  step(std::span<const Slot>(&slot, 1));
}

}  // namespace disarm
