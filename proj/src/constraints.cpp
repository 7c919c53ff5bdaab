#include "pcnn/constraints.hpp"

#include <cmath>

#include "pcnn/random.hpp"

namespace pcnn {

Matrix ConstraintSpec::residual(const NetworkSet<Matrix>& nets, const Matrix& x,
                                const Matrix& u) const {
  Matrix r = numeric_(nets, x, u);
  if (r.rows() != x.rows() || r.cols() != arity_) {
    throw std::invalid_argument("constraint '" + name_ + "' residual has wrong shape");
  }
  return r;
}

Var ConstraintSpec::residual(const NetworkSet<Var>& nets, const Var& x, const Var& u) const {
  Var r = taped_(nets, x, u);
  if (r.rows() != x.rows() || r.cols() != arity_) {
    throw std::invalid_argument("constraint '" + name_ + "' residual has wrong shape");
  }
  return r;
}

CollocationSet sample_collocation(const ConstraintProgram& program, Index n_points,
                                  std::uint64_t seed) {
  if (n_points < 1) throw std::invalid_argument("collocation set needs at least one point");
  if (program.empty()) throw std::invalid_argument("collocation needs at least one constraint");
  const Index dim = program.state_dim + program.control_dim;
  Vector lo = Vector::Constant(dim, std::numeric_limits<double>::infinity());
  Vector hi = Vector::Constant(dim, -std::numeric_limits<double>::infinity());
  for (const ConstraintSpec& s : program.specs) {
    s.domain().validate();
    if (s.domain().lower.size() != dim) {
      throw std::invalid_argument("constraint '" + s.name() + "' domain has wrong dimension");
    }
    lo = lo.cwiseMin(s.domain().lower);
    hi = hi.cwiseMax(s.domain().upper);
  }

  CollocationSet omega;
  omega.seed = seed;
  omega.points.resize(n_points, dim);
  Rng rng(seed);
  Vector p(dim);
  for (Index i = 0; i < n_points;) {
    for (Index d = 0; d < dim; ++d) p(d) = uniform(rng, lo(d), hi(d));
    bool inside = false;
    for (const ConstraintSpec& s : program.specs) inside = inside || s.domain().contains(p);
    if (!inside) continue;
    omega.points.row(i++) = p.transpose();
  }

  omega.members.resize(program.specs.size());
  omega.member_slot.assign(program.specs.size(), std::vector<Index>(n_points, -1));
  for (std::size_t s = 0; s < program.specs.size(); ++s) {
    for (Index i = 0; i < n_points; ++i) {
      if (program.specs[s].domain().contains(omega.points.row(i).transpose())) {
        omega.member_slot[s][i] = static_cast<Index>(omega.members[s].size());
        omega.members[s].push_back(i);
      }
    }
  }
  return omega;
}

MultiplierState init_multipliers(const ConstraintProgram& program, const CollocationSet& omega,
                                 double mu0) {
  if (!(mu0 > 0.0)) throw std::invalid_argument("initial penalty mu0 must be positive");
  MultiplierState mult;
  mult.mu = mu0;
  for (std::size_t s = 0; s < program.specs.size(); ++s) {
    mult.lambda.push_back(
        Matrix::Zero(static_cast<Index>(omega.members.at(s).size()), program.specs[s].arity()));
  }
  return mult;
}

namespace {

Matrix gather_rows(const Matrix& m, const std::vector<Index>& rows, Index start, Index count) {
  Matrix out(static_cast<Index>(rows.size()), count);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.row(static_cast<Index>(r)) = m.row(rows[r]).segment(start, count);
  }
  return out;
}

}  // namespace

Var augmented_lagrangian(const Var& data_loss, const ConstraintProgram& program,
                         const NetworkSet<Var>& nets, const CollocationSet& omega,
                         std::span<const Index> batch, const MultiplierState& mult) {
  Var total = data_loss;
  Tape& tape = data_loss.tape();
  for (std::size_t s = 0; s < program.specs.size(); ++s) {
    const ConstraintSpec& spec = program.specs[s];
    std::vector<Index> rows;
    std::vector<Index> slots;
    for (Index i : batch) {
      const Index slot = omega.member_slot.at(s).at(i);
      if (slot < 0) continue;
      rows.push_back(i);
      slots.push_back(slot);
    }
    if (rows.empty()) continue;

    const Var x = tape.constant(gather_rows(omega.points, rows, 0, program.state_dim));
    const Var u = tape.constant(gather_rows(omega.points, rows, program.state_dim, program.control_dim));
    Matrix lambda(static_cast<Index>(slots.size()), spec.arity());
    for (std::size_t r = 0; r < slots.size(); ++r) {
      lambda.row(static_cast<Index>(r)) = mult.lambda.at(s).row(slots[r]);
    }
    const Var residual = spec.residual(nets, x, u);
    const Var linear = sum(mul(tape.constant(lambda), residual));

    if (spec.kind() == ConstraintKind::Equality) {
      total = total + mult.mu * squared_norm(residual) + linear;
    } else {
      const Matrix gate =
          ((lambda.array() > 0.0) || (residual.value().array() > 0.0)).cast<double>().matrix();
      total = total + mult.mu * sum(mul(tape.constant(gate), square(residual))) + linear;
    }
  }
  return total;
}

std::vector<Matrix> evaluate_residuals(const ConstraintProgram& program,
                                       const NetworkSet<Matrix>& nets,
                                       const CollocationSet& omega) {
  std::vector<Matrix> out;
  for (std::size_t s = 0; s < program.specs.size(); ++s) {
    const auto& rows = omega.members.at(s);
    if (rows.empty()) {
      out.push_back(Matrix::Zero(0, program.specs[s].arity()));
      continue;
    }
    out.push_back(program.specs[s].residual(
        nets, gather_rows(omega.points, rows, 0, program.state_dim),
        gather_rows(omega.points, rows, program.state_dim, program.control_dim)));
  }
  return out;
}

MultiplierState update_multipliers(const ConstraintProgram& program,
                                   const NetworkSet<Matrix>& nets, const CollocationSet& omega,
                                   const MultiplierState& mult, double mu_mult) {
  if (!(mu_mult > 0.0)) throw std::invalid_argument("mu_mult must be positive");
  const auto residuals = evaluate_residuals(program, nets, omega);
  MultiplierState next = mult;
  for (std::size_t s = 0; s < program.specs.size(); ++s) {
    next.lambda[s] = mult.lambda[s] + 2.0 * mult.mu * residuals[s];
    if (program.specs[s].kind() == ConstraintKind::Inequality) {
      next.lambda[s] = next.lambda[s].cwiseMax(0.0);
    }
  }
  next.mu = mult.mu * mu_mult;
  next.updates = mult.updates + 1;
  return next;
}

double constraint_loss(const ConstraintProgram& program, const NetworkSet<Matrix>& nets,
                       const CollocationSet& omega) {
  const auto residuals = evaluate_residuals(program, nets, omega);
  double total = 0.0;
  Index count = 0;
  for (std::size_t s = 0; s < program.specs.size(); ++s) {
    const Matrix& r = residuals[s];
    total += program.specs[s].kind() == ConstraintKind::Equality ? r.cwiseAbs().sum()
                                                                  : r.cwiseMax(0.0).sum();
    count += r.size();
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

nlohmann::json multipliers_to_json(const MultiplierState& mult) {
  nlohmann::json lambdas = nlohmann::json::array();
  for (const Matrix& l : mult.lambda) {
    std::vector<double> values;
    for (Index r = 0; r < l.rows(); ++r) {
      for (Index c = 0; c < l.cols(); ++c) values.push_back(l(r, c));
    }
    lambdas.push_back({{"rows", l.rows()}, {"cols", l.cols()}, {"values", values}});
  }
  return {{"mu", mult.mu}, {"updates", mult.updates}, {"lambda", lambdas}};
}

MultiplierState multipliers_from_json(const nlohmann::json& j) {
  MultiplierState mult;
  mult.mu = j.at("mu").get<double>();
  mult.updates = j.at("updates").get<int>();
  for (const auto& l : j.at("lambda")) {
    const Index rows = l.at("rows").get<Index>();
    const Index cols = l.at("cols").get<Index>();
    const auto values = l.at("values").get<std::vector<double>>();
    if (static_cast<Index>(values.size()) != rows * cols) {
      throw std::invalid_argument("multiplier block size does not match its shape");
    }
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
      for (Index c = 0; c < cols; ++c) m(r, c) = values[static_cast<std::size_t>(r * cols + c)];
    }
    mult.lambda.push_back(std::move(m));
  }
  return mult;
}

Box default_symmetry_domain() {
  Box box{Vector(4), Vector(4)};
  box.lower << -1.0, -1.0, -3.0, -3.0;
  box.upper << 1.0, 1.0, 3.0, 3.0;
  return box;
}

ConstraintProgram pendulum_symmetry_program(ModelKind kind, const PendulumParams& p,
                                            const Box& domain) {
  if (!has_symmetry_terms(kind)) {
    throw std::invalid_argument(std::string("model '") + model_name(kind) +
                                "' has no g1, g2 terms to constrain");
  }
  ConstraintProgram program;
  program.state_dim = 4;
  program.control_dim = 0;
  program.specs.emplace_back(
      "pendulum-symmetry", ConstraintKind::Equality, domain, 4,
      [kind, p](const auto& nets, const auto& x, const auto&) {
        using T = std::decay_t<decltype(x)>;
        return symmetry_residuals<T>([&](const T& at) { return model_g_pair(kind, nets, at, p); }, x);
      });
  return program;
}

}  // namespace pcnn
