#include "pcnn/vectorfield.hpp"

namespace pcnn {

void VectorField::check_input(Index x_cols, Index u_cols, std::size_t n_nets) const {
  if (x_cols != state_dim_) {
    throw std::invalid_argument(name_ + ": state width " + std::to_string(x_cols) + ", expected " +
                                std::to_string(state_dim_));
  }
  if (u_cols != control_dim_) {
    throw std::invalid_argument(name_ + ": control width " + std::to_string(u_cols) +
                                ", expected " + std::to_string(control_dim_));
  }
  if (n_nets != specs_.size()) {
    throw std::invalid_argument(name_ + ": got " + std::to_string(n_nets) + " networks, expected " +
                                std::to_string(specs_.size()));
  }
}

void VectorField::check_output(Index rows, Index out_rows, Index out_cols) const {
  if (out_rows != rows || out_cols != state_dim_) {
    throw std::invalid_argument(name_ + ": field output is " + std::to_string(out_rows) + "x" +
                                std::to_string(out_cols) + ", expected " + std::to_string(rows) +
                                "x" + std::to_string(state_dim_));
  }
}

Matrix VectorField::operator()(const NetworkSet<Matrix>& nets, const Matrix& x,
                               const Matrix& u) const {
  check_input(x.cols(), u.cols(), nets.size());
  Matrix out = numeric_(nets, x, u);
  check_output(x.rows(), out.rows(), out.cols());
  return out;
}

Var VectorField::operator()(const NetworkSet<Var>& nets, const Var& x, const Var& u) const {
  check_input(x.cols(), u.cols(), nets.size());
  Var out = taped_(nets, x, u);
  check_output(x.rows(), out.rows(), out.cols());
  return out;
}

VectorField k1_composition(const PendulumParams& p, const std::vector<Index>& hidden) {
  const MlpSpec term{4, 1, hidden, Activation::Relu};
  return make_composition("k1-generic", 4, 0, {{{0, 1, 2, 3}, term}, {{0, 1, 2, 3}, term}},
                          [p](const auto& x, const auto&, const auto& g) {
                            return k1_combine(x, g[0], g[1], p);
                          });
}

VectorField baseline_composition(Index state_dim, Index control_dim,
                                 const std::vector<Index>& hidden) {
  std::vector<Index> inputs;
  for (Index c = 0; c < state_dim + control_dim; ++c) inputs.push_back(c);
  const MlpSpec term{state_dim + control_dim, state_dim, hidden, Activation::Relu};
  return make_composition("baseline-generic", state_dim, control_dim, {{inputs, term}},
                          [](const auto&, const auto&, const auto& g) { return g[0]; });
}

const char* model_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::Baseline: return "baseline";
    case ModelKind::K1: return "k1";
    case ModelKind::True: return "true";
  }
  return "unknown";
}

ModelKind model_from_name(const std::string& name) {
  if (name == "baseline") return ModelKind::Baseline;
  if (name == "k1") return ModelKind::K1;
  if (name == "true") return ModelKind::True;
  throw std::invalid_argument("unknown model '" + name + "' (expected baseline | k1)");
}

std::vector<MlpSpec> model_specs(ModelKind kind, const std::vector<Index>& hidden) {
  switch (kind) {
    case ModelKind::Baseline: return {MlpSpec{4, 4, hidden, Activation::Relu}};
    case ModelKind::K1:
      return {MlpSpec{4, 1, hidden, Activation::Relu}, MlpSpec{4, 1, hidden, Activation::Relu}};
    case ModelKind::True: return {};
  }
  return {};
}

VectorField make_model(ModelKind kind, const std::vector<Index>& hidden, const PendulumParams& p) {
  switch (kind) {
    case ModelKind::Baseline:
      return VectorField("baseline", model_specs(kind, hidden), 4, 0,
                         [](const auto& nets, const auto& x, const auto& u) {
                           return eval_baseline(nets, x, u);
                         });
    case ModelKind::K1:
      return VectorField("k1", model_specs(kind, hidden), 4, 0,
                         [p](const auto& nets, const auto& x, const auto&) {
                           return eval_k1_pendulum(nets, x, p);
                         });
    case ModelKind::True:
      return VectorField("true", {}, 4, 0, [p](const auto&, const auto& x, const auto&) {
        return eval_true_pendulum(x, p);
      });
  }
  throw std::invalid_argument("unknown model kind");
}

bool has_symmetry_terms(ModelKind kind) { return kind != ModelKind::Baseline; }

}  // namespace pcnn
