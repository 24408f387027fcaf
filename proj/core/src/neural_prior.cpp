#include "mbflow/neural_prior.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <random>

#include "mbflow/error.hpp"

namespace mbflow {

namespace {

using MatrixMap = Eigen::Map<const Eigen::MatrixXd>;
using RowMap = Eigen::Map<const Eigen::RowVectorXd>;

void activate(Eigen::MatrixXd& m, Activation a) {
  switch (a) {
    case Activation::kRelu:
      m = m.cwiseMax(0.0);
      break;
    case Activation::kGelu:
      m = m.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * 0.70710678118654752440)); });
      break;
    case Activation::kSine:
      m = m.array().sin().matrix();
      break;
  }
}

ad::Var activate(ad::Var v, Activation a) {
  switch (a) {
    case Activation::kRelu:
      return ad::relu(v);
    case Activation::kGelu:
      return ad::gelu(v);
    case Activation::kSine:
      return ad::sine(v);
  }
  return v;
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kRelu:
      return "relu";
    case Activation::kGelu:
      return "gelu";
    case Activation::kSine:
      return "sine";
  }
  return "relu";
}

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "gelu") return Activation::kGelu;
  if (name == "sine") return Activation::kSine;
  throw FormatError("unknown activation '" + name + "' (expected relu, gelu or sine)");
}

void MlpArchitecture::validate() const {
  if (input_dim < 1) throw Error("mlp: input_dim must be >= 1");
  if (hidden_width < 1) throw Error("mlp: hidden_width must be >= 1");
  if (hidden_layers < 1) throw Error("mlp: hidden_layers must be >= 1");
  if (output_dim != 3) throw Error("mlp: output_dim must be 3");
}

std::vector<std::pair<int, int>> MlpArchitecture::layer_shapes() const {
  std::vector<std::pair<int, int>> shapes;
  shapes.emplace_back(input_dim, hidden_width);
  for (int l = 1; l < hidden_layers; ++l) shapes.emplace_back(hidden_width, hidden_width);
  shapes.emplace_back(hidden_width, output_dim);
  return shapes;
}

Index MlpArchitecture::parameter_count() const {
  Index count = 0;
  for (auto [fan_in, fan_out] : layer_shapes()) count += static_cast<Index>(fan_in + 1) * fan_out;
  return count;
}

NeuralPrior NeuralPrior::Init(const MlpArchitecture& arch, std::uint64_t seed) {
  arch.validate();
  Eigen::VectorXd params = Eigen::VectorXd::Zero(arch.parameter_count());
  std::mt19937_64 rng(seed);
  Index offset = 0;
  for (auto [fan_in, fan_out] : arch.layer_shapes()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    const Index w = static_cast<Index>(fan_in) * fan_out;
    for (Index k = 0; k < w; ++k) params[offset + k] = dist(rng);
    offset += w + fan_out;
  }
  return NeuralPrior(arch, std::move(params), seed);
}

NeuralPrior::NeuralPrior(const MlpArchitecture& arch, Eigen::VectorXd parameters, std::uint64_t seed)
    : arch_(arch), seed_(seed) {
  arch_.validate();
  set_parameters(std::move(parameters));
}

void NeuralPrior::set_parameters(Eigen::VectorXd params) {
  if (params.size() != arch_.parameter_count()) {
    throw Error("neural prior: expected " + std::to_string(arch_.parameter_count()) + " parameters, got " +
                std::to_string(params.size()));
  }
  if (!params.allFinite()) throw Error("neural prior: non-finite parameters");
  params_ = std::move(params);
}

Eigen::MatrixXd NeuralPrior::forward(const Eigen::MatrixXd& inputs) const {
  if (inputs.cols() != arch_.input_dim) {
    throw Error("neural prior: input has " + std::to_string(inputs.cols()) + " columns, network expects " +
                std::to_string(arch_.input_dim));
  }
  const auto shapes = arch_.layer_shapes();
  Eigen::MatrixXd x = inputs;
  Index offset = 0;
  for (size_t l = 0; l < shapes.size(); ++l) {
    const auto [fan_in, fan_out] = shapes[l];
    MatrixMap W(params_.data() + offset, fan_in, fan_out);
    RowMap b(params_.data() + offset + static_cast<Index>(fan_in) * fan_out, fan_out);
    offset += static_cast<Index>(fan_in + 1) * fan_out;
    Eigen::MatrixXd y(x.rows(), fan_out);
    y.noalias() = x * W;
    y.rowwise() += b;
    if (l + 1 < shapes.size()) activate(y, arch_.activation);
    x = std::move(y);
  }
  return x;
}

NeuralPrior::Binding NeuralPrior::bind(ad::Tape& tape) const {
  Binding binding;
  Index offset = 0;
  for (auto [fan_in, fan_out] : arch_.layer_shapes()) {
    binding.weights.push_back(tape.variable(MatrixMap(params_.data() + offset, fan_in, fan_out)));
    offset += static_cast<Index>(fan_in) * fan_out;
    binding.biases.push_back(tape.variable(MatrixMap(params_.data() + offset, 1, fan_out)));
    offset += fan_out;
  }
  return binding;
}

ad::Var NeuralPrior::forward(const Binding& binding, ad::Var inputs) const {
  if (inputs.cols() != arch_.input_dim) {
    throw Error("neural prior: input has " + std::to_string(inputs.cols()) + " columns, network expects " +
                std::to_string(arch_.input_dim));
  }
  ad::Var x = inputs;
  const size_t layers = binding.weights.size();
  for (size_t l = 0; l < layers; ++l) {
    x = ad::add_rowwise(ad::matmul(x, binding.weights[l]), binding.biases[l]);
    if (l + 1 < layers) x = activate(x, arch_.activation);
  }
  return x;
}

Eigen::VectorXd NeuralPrior::gradient(const ad::Tape& tape, const Binding& binding) const {
  Eigen::VectorXd g(params_.size());
  Index offset = 0;
  for (size_t l = 0; l < binding.weights.size(); ++l) {
    const ad::Matrix gw = tape.grad(binding.weights[l]);
    g.segment(offset, gw.size()) = Eigen::Map<const Eigen::VectorXd>(gw.data(), gw.size());
    offset += gw.size();
    const ad::Matrix gb = tape.grad(binding.biases[l]);
    g.segment(offset, gb.size()) = Eigen::Map<const Eigen::VectorXd>(gb.data(), gb.size());
    offset += gb.size();
  }
  return g;
}

double NeuralPrior::lipschitz_bound() const {
  double bound = 1.0;
  Index offset = 0;
  for (auto [fan_in, fan_out] : arch_.layer_shapes()) {
    MatrixMap W(params_.data() + offset, fan_in, fan_out);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(W);
    bound *= svd.singularValues()(0);
    offset += static_cast<Index>(fan_in + 1) * fan_out;
  }
  return bound;
}

FlowField evaluate_flow(const NeuralPrior& net, const PointCloud& P) {
  return FlowField(net.forward(P.matrix()));
}

}  // namespace mbflow
