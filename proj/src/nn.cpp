#include "pcnn/nn.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "pcnn/random.hpp"

namespace pcnn {
namespace {

std::vector<Index> layer_widths(const MlpSpec& spec) {
  std::vector<Index> widths;
  widths.push_back(spec.input_width);
  widths.insert(widths.end(), spec.hidden.begin(), spec.hidden.end());
  widths.push_back(spec.output_width);
  return widths;
}

}  // namespace

namespace detail {
void throw_network_index(std::size_t index, std::size_t count) {
  throw std::out_of_range("network index " + std::to_string(index) + " >= " +
                          std::to_string(count));
}
void throw_width_mismatch(Index got, Index expected) {
  throw std::invalid_argument("network input width " + std::to_string(got) + ", expected " +
                              std::to_string(expected));
}
}  // namespace detail

Index MlpSpec::parameter_count() const {
  const auto widths = layer_widths(*this);
  Index total = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    total += widths[l] * widths[l + 1] + widths[l + 1];
  }
  return total;
}

void MlpSpec::validate() const {
  for (Index w : layer_widths(*this)) {
    if (w <= 0) throw std::invalid_argument("MLP layer widths must be positive");
  }
}

ParameterSet::ParameterSet(std::vector<MlpSpec> specs) : specs_(std::move(specs)) {
  networks_.reserve(specs_.size());
  for (const MlpSpec& spec : specs_) {
    spec.validate();
    const auto widths = layer_widths(spec);
    Network<Matrix> net;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      net.push_back({Matrix::Zero(widths[l], widths[l + 1]), Matrix::Zero(1, widths[l + 1])});
    }
    networks_.push_back(std::move(net));
  }
}

Index ParameterSet::size() const {
  Index total = 0;
  for (const MlpSpec& spec : specs_) total += spec.parameter_count();
  return total;
}

Vector ParameterSet::flatten() const {
  Vector flat(size());
  Index at = 0;
  for (const auto& net : networks_) {
    for (const auto& layer : net) {
      for (Index r = 0; r < layer.weight.rows(); ++r) {
        for (Index c = 0; c < layer.weight.cols(); ++c) flat(at++) = layer.weight(r, c);
      }
      for (Index c = 0; c < layer.bias.cols(); ++c) flat(at++) = layer.bias(0, c);
    }
  }
  return flat;
}

void ParameterSet::unflatten(const Vector& flat) {
  if (flat.size() != size()) {
    throw std::invalid_argument("flat parameter vector has length " + std::to_string(flat.size()) +
                                ", expected " + std::to_string(size()));
  }
  Index at = 0;
  for (auto& net : networks_) {
    for (auto& layer : net) {
      for (Index r = 0; r < layer.weight.rows(); ++r) {
        for (Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = flat(at++);
      }
      for (Index c = 0; c < layer.bias.cols(); ++c) layer.bias(0, c) = flat(at++);
    }
  }
}

NetworkSet<Var> ParameterSet::bind(Tape& tape, bool requires_grad) const {
  NetworkSet<Var> bound;
  bound.reserve(networks_.size());
  for (const auto& net : networks_) {
    Network<Var> vars;
    for (const auto& layer : net) {
      vars.push_back({tape.input(layer.weight, requires_grad), tape.input(layer.bias, requires_grad)});
    }
    bound.push_back(std::move(vars));
  }
  return bound;
}

bool operator==(const ParameterSet& a, const ParameterSet& b) {
  if (!(a.specs_ == b.specs_)) return false;
  const Vector fa = a.flatten();
  const Vector fb = b.flatten();
  for (Index i = 0; i < fa.size(); ++i) {
    if (std::memcmp(&fa(i), &fb(i), sizeof(double)) != 0) return false;
  }
  return true;
}

Vector gather_gradient(const NetworkSet<Var>& bound) {
  Index total = 0;
  for (const auto& net : bound) {
    for (const auto& layer : net) total += layer.weight.value().size() + layer.bias.value().size();
  }
  Vector flat(total);
  Index at = 0;
  for (const auto& net : bound) {
    for (const auto& layer : net) {
      const Matrix& gw = layer.weight.grad();
      for (Index r = 0; r < gw.rows(); ++r) {
        for (Index c = 0; c < gw.cols(); ++c) flat(at++) = gw(r, c);
      }
      const Matrix& gb = layer.bias.grad();
      for (Index c = 0; c < gb.cols(); ++c) flat(at++) = gb(0, c);
    }
  }
  return flat;
}

ParameterSet init_parameters(const std::vector<MlpSpec>& specs, std::uint64_t seed) {
  ParameterSet params(specs);
  Rng rng(seed);
  for (auto& net : params.networks()) {
    for (auto& layer : net) {
      const double fan_in = static_cast<double>(layer.weight.rows());
      const double fan_out = static_cast<double>(layer.weight.cols());
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      for (Index r = 0; r < layer.weight.rows(); ++r) {
        for (Index c = 0; c < layer.weight.cols(); ++c) {
          layer.weight(r, c) = uniform(rng, -limit, limit);
        }
      }
    }
  }
  return params;
}

nlohmann::json spec_to_json(const MlpSpec& spec) {
  return {{"input", spec.input_width},
          {"output", spec.output_width},
          {"hidden", spec.hidden},
          {"activation", "relu"}};
}

MlpSpec spec_from_json(const nlohmann::json& j) {
  MlpSpec spec;
  spec.input_width = j.at("input").get<Index>();
  spec.output_width = j.at("output").get<Index>();
  spec.hidden = j.at("hidden").get<std::vector<Index>>();
  if (j.at("activation").get<std::string>() != "relu") {
    throw std::invalid_argument("unsupported activation " + j.at("activation").dump());
  }
  spec.validate();
  return spec;
}

nlohmann::json parameters_to_json(const ParameterSet& params) {
  nlohmann::json specs = nlohmann::json::array();
  for (const auto& s : params.specs()) specs.push_back(spec_to_json(s));
  const Vector flat = params.flatten();
  return {{"networks", specs},
          {"values", std::vector<double>(flat.data(), flat.data() + flat.size())}};
}

ParameterSet parameters_from_json(const nlohmann::json& j) {
  std::vector<MlpSpec> specs;
  for (const auto& s : j.at("networks")) specs.push_back(spec_from_json(s));
  ParameterSet params(specs);
  const auto values = j.at("values").get<std::vector<double>>();
  params.unflatten(Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size())));
  return params;
}

}  // namespace pcnn
