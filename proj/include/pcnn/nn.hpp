#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "pcnn/autodiff.hpp"

namespace pcnn {

enum class Activation { Relu };

/// Shape of one multilayer perceptron: input -> hidden... -> output, with the
/// activation applied after every hidden layer and none on the output.
struct MlpSpec {
  Index input_width = 0;
  Index output_width = 0;
  std::vector<Index> hidden;
  Activation activation = Activation::Relu;

  /// Sum over layers of fan_in * fan_out + fan_out.
  Index parameter_count() const;
  void validate() const;

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

/// Weight is fan_in x fan_out (inputs are row-batched), bias is 1 x fan_out.
template <class T>
struct Layer {
  T weight;
  T bias;
};

template <class T>
using Network = std::vector<Layer<T>>;

template <class T>
using NetworkSet = std::vector<Network<T>>;

/// All learned-term parameters. The flat ordering is network by network,
/// layer by layer, weight (row-major) then bias.
class ParameterSet {
 public:
  ParameterSet() = default;
  /// Zero-valued parameters for the given specs.
  explicit ParameterSet(std::vector<MlpSpec> specs);

  const std::vector<MlpSpec>& specs() const { return specs_; }
  std::size_t num_networks() const { return specs_.size(); }
  Index size() const;

  const NetworkSet<Matrix>& networks() const { return networks_; }
  NetworkSet<Matrix>& networks() { return networks_; }

  Vector flatten() const;
  void unflatten(const Vector& flat);

  /// Registers every weight and bias as a leaf on the tape.
  NetworkSet<Var> bind(Tape& tape, bool requires_grad = true) const;

  friend bool operator==(const ParameterSet& a, const ParameterSet& b);

 private:
  std::vector<MlpSpec> specs_;
  NetworkSet<Matrix> networks_;
};

/// Gradient of the bound leaves, in ParameterSet's flat ordering.
Vector gather_gradient(const NetworkSet<Var>& bound);

/// Uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
ParameterSet init_parameters(const std::vector<MlpSpec>& specs, std::uint64_t seed);

namespace detail {
[[noreturn]] void throw_network_index(std::size_t index, std::size_t count);
[[noreturn]] void throw_width_mismatch(Index got, Index expected);
}  // namespace detail

/// Row-batched forward pass of one network (input: batch x input_width).
template <class T>
T mlp_forward(const NetworkSet<T>& nets, std::size_t index, const T& input) {
  if (index >= nets.size()) detail::throw_network_index(index, nets.size());
  const Network<T>& net = nets[index];
  const Index expected = value_of(net.front().weight).rows();
  if (value_of(input).cols() != expected) {
    detail::throw_width_mismatch(value_of(input).cols(), expected);
  }
  T h = input;
  for (std::size_t l = 0; l < net.size(); ++l) {
    h = add_row(matmul(h, net[l].weight), net[l].bias);
    if (l + 1 < net.size()) h = relu(h);
  }
  return h;
}

nlohmann::json spec_to_json(const MlpSpec& spec);
MlpSpec spec_from_json(const nlohmann::json& j);

/// Header of specs plus the flat values; doubles round-trip exactly.
nlohmann::json parameters_to_json(const ParameterSet& params);
ParameterSet parameters_from_json(const nlohmann::json& j);

}  // namespace pcnn
