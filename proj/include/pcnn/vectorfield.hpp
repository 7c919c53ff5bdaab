#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "pcnn/autodiff.hpp"
#include "pcnn/nn.hpp"
#include "pcnn/pendulum.hpp"

namespace pcnn {

/// A model of the vector field, x_dot = F(x, u, g_1..g_d), evaluable on plain
/// matrices and on a tape. Both evaluations come from one generic callable
/// `f(nets, x, u)` so they cannot drift apart.
class VectorField {
 public:
  VectorField() = default;

  template <class F>
  VectorField(std::string name, std::vector<MlpSpec> specs, Index state_dim, Index control_dim,
              F f)
      : name_(std::move(name)),
        specs_(std::move(specs)),
        state_dim_(state_dim),
        control_dim_(control_dim),
        numeric_([f](const NetworkSet<Matrix>& n, const Matrix& x, const Matrix& u) -> Matrix {
          return f(n, x, u);
        }),
        taped_([f](const NetworkSet<Var>& n, const Var& x, const Var& u) -> Var {
          return f(n, x, u);
        }) {}

  const std::string& name() const { return name_; }
  const std::vector<MlpSpec>& specs() const { return specs_; }
  Index state_dim() const { return state_dim_; }
  Index control_dim() const { return control_dim_; }

  Matrix operator()(const NetworkSet<Matrix>& nets, const Matrix& x, const Matrix& u) const;
  Var operator()(const NetworkSet<Var>& nets, const Var& x, const Var& u) const;

 private:
  void check_input(Index x_cols, Index u_cols, std::size_t n_nets) const;
  void check_output(Index rows, Index out_rows, Index out_cols) const;

  std::string name_;
  std::vector<MlpSpec> specs_;
  Index state_dim_ = 0;
  Index control_dim_ = 0;
  std::function<Matrix(const NetworkSet<Matrix>&, const Matrix&, const Matrix&)> numeric_;
  std::function<Var(const NetworkSet<Var>&, const Var&, const Var&)> taped_;
};

// Concrete fields -------------------------------------------------------------

/// Single network over (x, u): F = g_1(x, u).
template <class T>
T eval_baseline(const NetworkSet<T>& nets, const T& x, const T& u) {
  if (nets.size() != 1) throw std::invalid_argument("baseline field expects one network");
  const T input = value_of(u).cols() == 0 ? x : hcat({x, u});
  return mlp_forward(nets, 0, input);
}

/// Double-pendulum structure with known a1, a2 and learned g1, g2 (both 4 -> 1):
/// (x3, x4, (g1 - a1 g2) / (1 - a1 a2), (-a2 g1 + g2) / (1 - a1 a2)).
template <class T>
T k1_combine(const T& x, const T& g1, const T& g2, const PendulumParams& p) {
  const T a1 = alpha1(x, p);
  const T a2 = alpha2(x, p);
  const T den = shift(-mul(a1, a2), 1.0);
  if ((value_of(den).array().abs() < kSingularTolerance).any()) {
    throw SingularMassMatrixError("K1 field denominator 1 - a1*a2 vanishes");
  }
  const T ddphi1 = div(g1 - mul(a1, g2), den);
  const T ddphi2 = div(g2 - mul(a2, g1), den);
  return hcat({cols(x, 2, 1), cols(x, 3, 1), ddphi1, ddphi2});
}

template <class T>
T eval_k1_pendulum(const NetworkSet<T>& nets, const T& x, const PendulumParams& p) {
  if (nets.size() != 2) throw std::invalid_argument("K1 field expects two networks");
  if (value_of(x).cols() != 4) throw std::invalid_argument("K1 field expects a 4-wide state");
  return k1_combine(x, mlp_forward(nets, 0, x), mlp_forward(nets, 1, x), p);
}

/// K1 structure with the closed-form g1, g2 substituted for the networks.
template <class T>
T eval_true_pendulum(const T& x, const PendulumParams& p) {
  return k1_combine(x, batched_true_g1(x, p), batched_true_g2(x, p), p);
}

// Generic composition --------------------------------------------------------

/// One learned term: which columns of [x, u] it reads, and its network shape.
struct LearnedTerm {
  std::vector<Index> inputs;
  MlpSpec spec;
};

/// Known structure F(x, u, terms) combined with learned terms g_i. The
/// combine callable must be generic over Matrix and Var. Wiring is checked
/// at construction.
template <class Combine>
VectorField make_composition(std::string name, Index state_dim, Index control_dim,
                             std::vector<LearnedTerm> terms, Combine combine) {
  std::vector<MlpSpec> specs;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const LearnedTerm& t = terms[i];
    t.spec.validate();
    if (static_cast<Index>(t.inputs.size()) != t.spec.input_width) {
      throw std::invalid_argument("learned term " + std::to_string(i) + " reads " +
                                  std::to_string(t.inputs.size()) + " columns but its network takes " +
                                  std::to_string(t.spec.input_width));
    }
    for (Index c : t.inputs) {
      if (c < 0 || c >= state_dim + control_dim) {
        throw std::invalid_argument("learned term " + std::to_string(i) + " reads column " +
                                    std::to_string(c) + " outside [x, u]");
      }
    }
    specs.push_back(t.spec);
  }
  VectorField field(
      std::move(name), specs, state_dim, control_dim,
      [terms, combine, state_dim](const auto& nets, const auto& x, const auto& u) {
        using T = std::decay_t<decltype(x)>;
        std::vector<T> outputs;
        outputs.reserve(terms.size());
        for (std::size_t i = 0; i < terms.size(); ++i) {
          std::vector<T> columns;
          for (Index c : terms[i].inputs) {
            columns.push_back(c < state_dim ? cols(x, c, 1) : cols(u, c - state_dim, 1));
          }
          outputs.push_back(mlp_forward(nets, i, hcat(columns)));
        }
        return T(combine(x, u, outputs));
      });

  // Probe the known structure once so output-width wiring errors surface now.
  const ParameterSet probe(specs);
  const Matrix out = field(probe.networks(), Matrix::Zero(1, state_dim), Matrix::Zero(1, control_dim));
  (void)out;
  return field;
}

/// Pendulum K1 assembled through make_composition.
VectorField k1_composition(const PendulumParams& p, const std::vector<Index>& hidden);
/// Baseline assembled through make_composition.
VectorField baseline_composition(Index state_dim, Index control_dim,
                                 const std::vector<Index>& hidden);

// Registry -------------------------------------------------------------------

enum class ModelKind { Baseline, K1, True };

const char* model_name(ModelKind kind);
ModelKind model_from_name(const std::string& name);

std::vector<MlpSpec> model_specs(ModelKind kind, const std::vector<Index>& hidden);
VectorField make_model(ModelKind kind, const std::vector<Index>& hidden, const PendulumParams& p);

/// Batch x 2 matrix of the model's (g1, g2); K1 and True only.
bool has_symmetry_terms(ModelKind kind);

template <class T>
T model_g_pair(ModelKind kind, const NetworkSet<T>& nets, const T& x, const PendulumParams& p) {
  switch (kind) {
    case ModelKind::K1:
      return hcat({mlp_forward(nets, 0, x), mlp_forward(nets, 1, x)});
    case ModelKind::True:
      return hcat({batched_true_g1(x, p), batched_true_g2(x, p)});
    case ModelKind::Baseline:
      break;
  }
  throw std::invalid_argument("model has no learned g1, g2 terms");
}

}  // namespace pcnn
