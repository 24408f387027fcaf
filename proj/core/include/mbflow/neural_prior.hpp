#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mbflow/autodiff.hpp"
#include "mbflow/geometry.hpp"

namespace mbflow {

enum class Activation { kRelu, kGelu, kSine };

std::string to_string(Activation a);
/// Accepts "relu", "gelu", "sine"; throws otherwise.
Activation parse_activation(const std::string& name);

struct MlpArchitecture {
  int input_dim = 3;
  int hidden_width = 128;
  int hidden_layers = 4;
  Activation activation = Activation::kRelu;
  int output_dim = 3;

  void validate() const;
  /// Sum over layers of (fan_in + 1) * fan_out.
  Index parameter_count() const;
  /// (fan_in, fan_out) per affine layer, input to output.
  std::vector<std::pair<int, int>> layer_shapes() const;

  bool operator==(const MlpArchitecture&) const = default;
};

/// Coordinate network mapping points (plus optional extra input features) to
/// 3D displacements. Parameters are one flat vector laid out layer by layer as
/// the column-major fan_in x fan_out weight matrix followed by the bias.
class NeuralPrior {
 public:
  /// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases; deterministic in seed.
  static NeuralPrior Init(const MlpArchitecture& arch, std::uint64_t seed);

  NeuralPrior(const MlpArchitecture& arch, Eigen::VectorXd parameters, std::uint64_t seed = 0);

  const MlpArchitecture& architecture() const { return arch_; }
  const Eigen::VectorXd& parameters() const { return params_; }
  void set_parameters(Eigen::VectorXd params);
  std::uint64_t seed() const { return seed_; }

  /// Plain evaluation of an (N x input_dim) batch.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs) const;

  /// Parameter leaves of one tape, in layer order (W0, b0, W1, b1, ...).
  struct Binding {
    std::vector<ad::Var> weights;
    std::vector<ad::Var> biases;
  };
  Binding bind(ad::Tape& tape) const;
  ad::Var forward(const Binding& binding, ad::Var inputs) const;
  /// Gradient of the tape's swept root with respect to the flat parameters.
  Eigen::VectorXd gradient(const ad::Tape& tape, const Binding& binding) const;

  /// Product of layer spectral norms: a Lipschitz bound of the network for
  /// 1-Lipschitz activations (relu, gelu is ~1.13-Lipschitz and sine 1).
  double lipschitz_bound() const;

 private:
  MlpArchitecture arch_;
  Eigen::VectorXd params_;
  std::uint64_t seed_ = 0;
};

/// Flow at each point of P: F[i] = net(P[i]). Requires input_dim == 3.
FlowField evaluate_flow(const NeuralPrior& net, const PointCloud& P);

}  // namespace mbflow
