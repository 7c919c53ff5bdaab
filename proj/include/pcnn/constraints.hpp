#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "pcnn/autodiff.hpp"
#include "pcnn/nn.hpp"
#include "pcnn/pendulum.hpp"
#include "pcnn/vectorfield.hpp"

namespace pcnn {

enum class ConstraintKind { Equality, Inequality };

/// A family of `arity` scalar constraints sharing one kind and one box
/// domain over (x, u). Each column of the residual is its own constraint
/// with its own multipliers. Equalities target 0, inequalities target <= 0.
class ConstraintSpec {
 public:
  /// residual(nets, x, u) -> batch x arity, generic over Matrix and Var.
  template <class F>
  ConstraintSpec(std::string name, ConstraintKind kind, Box domain, Index arity, F residual)
      : name_(std::move(name)),
        kind_(kind),
        domain_(std::move(domain)),
        arity_(arity),
        numeric_([residual](const NetworkSet<Matrix>& n, const Matrix& x, const Matrix& u) -> Matrix {
          return residual(n, x, u);
        }),
        taped_([residual](const NetworkSet<Var>& n, const Var& x, const Var& u) -> Var {
          return residual(n, x, u);
        }) {
    if (arity_ < 1) throw std::invalid_argument("constraint arity must be >= 1");
  }

  const std::string& name() const { return name_; }
  ConstraintKind kind() const { return kind_; }
  const Box& domain() const { return domain_; }
  Index arity() const { return arity_; }

  Matrix residual(const NetworkSet<Matrix>& nets, const Matrix& x, const Matrix& u) const;
  Var residual(const NetworkSet<Var>& nets, const Var& x, const Var& u) const;

 private:
  std::string name_;
  ConstraintKind kind_;
  Box domain_;
  Index arity_;
  std::function<Matrix(const NetworkSet<Matrix>&, const Matrix&, const Matrix&)> numeric_;
  std::function<Var(const NetworkSet<Var>&, const Var&, const Var&)> taped_;
};

struct ConstraintProgram {
  Index state_dim = 0;
  Index control_dim = 0;
  std::vector<ConstraintSpec> specs;

  bool empty() const { return specs.empty(); }
};

/// Finite collocation set. Points are rows of (x, u); members[s] lists the
/// points inside spec s's domain in ascending order.
struct CollocationSet {
  Matrix points;
  std::vector<std::vector<Index>> members;
  std::vector<std::vector<Index>> member_slot;  // point -> row in members[s], or -1
  std::uint64_t seed = 0;

  Index size() const { return points.rows(); }
};

/// Per-spec multipliers, lambda[s] is |members[s]| x arity. mu > 0.
struct MultiplierState {
  std::vector<Matrix> lambda;
  double mu = 1e-3;
  int updates = 0;
};

CollocationSet sample_collocation(const ConstraintProgram& program, Index n_points,
                                  std::uint64_t seed);

MultiplierState init_multipliers(const ConstraintProgram& program, const CollocationSet& omega,
                                 double mu0);

/// data_loss + sum_eq [mu Phi^2 + lambda Phi] + sum_ineq [mu gate Psi^2 + lambda Psi]
/// over the batch points in each spec's domain. gate = (lambda > 0 or Psi > 0),
/// held constant for differentiation.
Var augmented_lagrangian(const Var& data_loss, const ConstraintProgram& program,
                         const NetworkSet<Var>& nets, const CollocationSet& omega,
                         std::span<const Index> batch, const MultiplierState& mult);

/// Residuals of every spec over its full member set (|members[s]| x arity).
std::vector<Matrix> evaluate_residuals(const ConstraintProgram& program,
                                       const NetworkSet<Matrix>& nets,
                                       const CollocationSet& omega);

/// lambda_eq += 2 mu Phi; lambda_ineq = max(0, lambda_ineq + 2 mu Psi); mu *= mu_mult.
/// Residuals come from the full collocation set.
MultiplierState update_multipliers(const ConstraintProgram& program,
                                   const NetworkSet<Matrix>& nets, const CollocationSet& omega,
                                   const MultiplierState& mult, double mu_mult);

/// Mean over all (constraint, point) pairs of |Phi| or max(0, Psi).
double constraint_loss(const ConstraintProgram& program, const NetworkSet<Matrix>& nets,
                       const CollocationSet& omega);

nlohmann::json multipliers_to_json(const MultiplierState& mult);
MultiplierState multipliers_from_json(const nlohmann::json& j);

// Built-ins --------------------------------------------------------------------

/// Symmetric state box over which the pendulum symmetries are enforced.
Box default_symmetry_domain();

/// The four equality symmetries on the model's (g1, g2) terms.
ConstraintProgram pendulum_symmetry_program(ModelKind kind, const PendulumParams& p,
                                            const Box& domain = default_symmetry_domain());

}  // namespace pcnn
