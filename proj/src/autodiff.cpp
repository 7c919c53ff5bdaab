#include "pcnn/autodiff.hpp"

#include <cmath>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace pcnn {
namespace {

// Tapes allocate and free many large buffers per step; keep them on the heap
// instead of round-tripping through mmap.
#if defined(__GLIBC__)
const bool allocator_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
  return true;
}();
#endif

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

void require_same_shape(std::size_t index, OpKind kind, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw TapeError(index, std::string(op_name(kind)) + " shape mismatch " + shape_str(a) +
                               " vs " + shape_str(b));
  }
}

Tape& common_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument("operands live on different tapes");
  return a.tape();
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::Neg: return "neg";
    case OpKind::Scale: return "scale";
    case OpKind::Shift: return "shift";
    case OpKind::MatMul: return "matmul";
    case OpKind::AddRow: return "add_row";
    case OpKind::Broadcast: return "broadcast";
    case OpKind::Relu: return "relu";
    case OpKind::Hinge: return "hinge";
    case OpKind::Sin: return "sin";
    case OpKind::Cos: return "cos";
    case OpKind::Square: return "square";
    case OpKind::Sum: return "sum";
    case OpKind::SquaredNorm: return "squared_norm";
    case OpKind::Cols: return "cols";
    case OpKind::HCat: return "hcat";
  }
  return "unknown";
}

Var Tape::input(Matrix value, bool requires_grad) {
  Node node;
  node.kind = OpKind::Leaf;
  node.requires_grad = requires_grad;
  node.grad = Matrix::Zero(value.rows(), value.cols());
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::input(double value, bool requires_grad) {
  return input(Matrix::Constant(1, 1, value), requires_grad);
}

Var Tape::record(OpKind kind, std::initializer_list<Var> operands, double scalar, Index start,
                 Index count) {
  return record(kind, std::vector<Var>(operands), scalar, start, count);
}

Var Tape::record(OpKind kind, const std::vector<Var>& operands, double scalar, Index start,
                 Index count) {
  if (kind == OpKind::Leaf) throw std::invalid_argument("use Tape::input for leaves");
  if (stale_) throw TapeError(nodes_.size(), "cannot record on a stale tape; call forward()");
  Node node;
  node.kind = kind;
  node.scalar = scalar;
  node.start = start;
  node.count = count;
  node.operands.reserve(operands.size());
  for (const Var& v : operands) {
    if (&v.tape() != this) throw std::invalid_argument("operand recorded on a different tape");
    node.operands.push_back(v.index());
    node.requires_grad = node.requires_grad || nodes_[v.index()].requires_grad;
  }
  const std::size_t index = nodes_.size();
  node.value = evaluate(index, node);
  node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
  nodes_.push_back(std::move(node));
  return Var(this, index);
}

Matrix Tape::evaluate(std::size_t index, const Node& node) const {
  auto arg = [&](std::size_t k) -> const Matrix& { return nodes_[node.operands.at(k)].value; };
  auto arity = [&](std::size_t n) {
    if (node.operands.size() != n) {
      throw TapeError(index, std::string(op_name(node.kind)) + " expects " + std::to_string(n) +
                                 " operands");
    }
  };
  switch (node.kind) {
    case OpKind::Leaf:
      return node.value;
    case OpKind::Add:
      arity(2);
      require_same_shape(index, node.kind, arg(0), arg(1));
      return arg(0) + arg(1);
    case OpKind::Sub:
      arity(2);
      require_same_shape(index, node.kind, arg(0), arg(1));
      return arg(0) - arg(1);
    case OpKind::Mul:
      arity(2);
      require_same_shape(index, node.kind, arg(0), arg(1));
      return arg(0).cwiseProduct(arg(1));
    case OpKind::Div:
      arity(2);
      require_same_shape(index, node.kind, arg(0), arg(1));
      return arg(0).cwiseQuotient(arg(1));
    case OpKind::Neg:
      arity(1);
      return -arg(0);
    case OpKind::Scale:
      arity(1);
      return node.scalar * arg(0);
    case OpKind::Shift:
      arity(1);
      return (arg(0).array() + node.scalar).matrix();
    case OpKind::MatMul:
      arity(2);
      if (arg(0).cols() != arg(1).rows()) {
        throw TapeError(index, "matmul shape mismatch " + shape_str(arg(0)) + " * " +
                                   shape_str(arg(1)));
      }
      return arg(0) * arg(1);
    case OpKind::AddRow:
      arity(2);
      if (arg(1).rows() != 1 || arg(1).cols() != arg(0).cols()) {
        throw TapeError(index, "add_row shape mismatch " + shape_str(arg(0)) + " + row " +
                                   shape_str(arg(1)));
      }
      return arg(0).rowwise() + arg(1).row(0);
    case OpKind::Broadcast:
      arity(1);
      if (arg(0).rows() != 1 || arg(0).cols() != 1) {
        throw TapeError(index, "broadcast expects a 1x1 operand, got " + shape_str(arg(0)));
      }
      return Matrix::Constant(node.start, node.count, arg(0)(0, 0));
    case OpKind::Relu:
    case OpKind::Hinge:
      arity(1);
      return arg(0).cwiseMax(0.0);
    case OpKind::Sin:
      arity(1);
      return arg(0).array().sin().matrix();
    case OpKind::Cos:
      arity(1);
      return arg(0).array().cos().matrix();
    case OpKind::Square:
      arity(1);
      return arg(0).array().square().matrix();
    case OpKind::Sum:
      arity(1);
      return Matrix::Constant(1, 1, arg(0).sum());
    case OpKind::SquaredNorm:
      arity(1);
      return Matrix::Constant(1, 1, arg(0).squaredNorm());
    case OpKind::Cols:
      arity(1);
      if (node.start < 0 || node.count < 0 || node.start + node.count > arg(0).cols()) {
        throw TapeError(index, "cols [" + std::to_string(node.start) + ", +" +
                                   std::to_string(node.count) + ") out of range for " +
                                   shape_str(arg(0)));
      }
      return arg(0).middleCols(node.start, node.count);
    case OpKind::HCat: {
      if (node.operands.empty()) throw TapeError(index, "hcat of nothing");
      const Index rows = arg(0).rows();
      Index total = 0;
      for (std::size_t k = 0; k < node.operands.size(); ++k) {
        if (arg(k).rows() != rows) {
          throw TapeError(index, "hcat row mismatch " + shape_str(arg(0)) + " vs " +
                                     shape_str(arg(k)));
        }
        total += arg(k).cols();
      }
      Matrix out(rows, total);
      Index at = 0;
      for (std::size_t k = 0; k < node.operands.size(); ++k) {
        out.middleCols(at, arg(k).cols()) = arg(k);
        at += arg(k).cols();
      }
      return out;
    }
  }
  throw TapeError(index, "unknown operation");
}

void Tape::set_input(const Var& leaf, Matrix value) {
  Node& node = nodes_.at(leaf.index());
  if (node.kind != OpKind::Leaf) {
    throw TapeError(leaf.index(), "set_input on a non-leaf operation");
  }
  node.grad = Matrix::Zero(value.rows(), value.cols());
  node.value = std::move(value);
  stale_ = true;
  has_backward_ = false;
}

void Tape::forward() {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& node = nodes_[i];
    if (node.kind == OpKind::Leaf) continue;
    node.value = evaluate(i, node);
    if (node.grad.rows() != node.value.rows() || node.grad.cols() != node.value.cols()) {
      node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
    }
  }
  stale_ = false;
  has_backward_ = false;
}

std::vector<bool> Tape::activation_pattern() const {
  std::vector<bool> out;
  for (const Node& node : nodes_) {
    if (node.kind != OpKind::Relu && node.kind != OpKind::Hinge) continue;
    const Matrix& in = nodes_[node.operands[0]].value;
    for (Index i = 0; i < in.size(); ++i) out.push_back(in(i) > 0.0);
  }
  return out;
}

void Tape::zero_grad() {
  for (Node& node : nodes_) node.grad.setZero();
  has_backward_ = false;
}

void Tape::clear() {
  nodes_.clear();
  stale_ = false;
  has_backward_ = false;
}

void Tape::backward(const Var& root) {
  const Matrix& v = value(root.index());
  if (v.rows() != 1 || v.cols() != 1) {
    throw TapeError(root.index(), "implicit seed requires a scalar root, got " + shape_str(v));
  }
  backward(root, Matrix::Ones(1, 1));
}

void Tape::backward(const Var& root, const Matrix& seed) {
  if (&root.tape() != this) throw std::invalid_argument("root belongs to a different tape");
  if (stale_) throw TapeError(root.index(), "backward before forward: tape inputs changed");
  const Matrix& v = nodes_.at(root.index()).value;
  if (seed.rows() != v.rows() || seed.cols() != v.cols()) {
    throw TapeError(root.index(), "seed shape " + shape_str(seed) + " does not match root " +
                                      shape_str(v));
  }
  if (has_backward_) zero_grad();
  nodes_[root.index()].grad = seed;
  for (std::size_t i = root.index() + 1; i-- > 0;) {
    if (nodes_[i].requires_grad && nodes_[i].kind != OpKind::Leaf) propagate(i);
  }
  has_backward_ = true;
}

void Tape::propagate(std::size_t index) {
  const Node& node = nodes_[index];
  const Matrix& g = node.grad;
  if (!g.allFinite()) throw TapeError(index, std::string(op_name(node.kind)) + " gradient is not finite");

  auto operand = [&](std::size_t k) -> Node& { return nodes_[node.operands[k]]; };
  auto wants = [&](std::size_t k) { return operand(k).requires_grad; };

  switch (node.kind) {
    case OpKind::Leaf:
      break;
    case OpKind::Add:
      if (wants(0)) operand(0).grad += g;
      if (wants(1)) operand(1).grad += g;
      break;
    case OpKind::Sub:
      if (wants(0)) operand(0).grad += g;
      if (wants(1)) operand(1).grad -= g;
      break;
    case OpKind::Mul:
      if (wants(0)) operand(0).grad += g.cwiseProduct(operand(1).value);
      if (wants(1)) operand(1).grad += g.cwiseProduct(operand(0).value);
      break;
    case OpKind::Div: {
      const Matrix& a = operand(0).value;
      const Matrix& b = operand(1).value;
      if (wants(0)) operand(0).grad += g.cwiseQuotient(b);
      if (wants(1)) {
        operand(1).grad.array() -= g.array() * a.array() / b.array().square();
      }
      break;
    }
    case OpKind::Neg:
      operand(0).grad -= g;
      break;
    case OpKind::Scale:
      operand(0).grad += node.scalar * g;
      break;
    case OpKind::Shift:
      operand(0).grad += g;
      break;
    case OpKind::MatMul:
      if (wants(0)) operand(0).grad.noalias() += g * operand(1).value.transpose();
      if (wants(1)) operand(1).grad.noalias() += operand(0).value.transpose() * g;
      break;
    case OpKind::AddRow:
      if (wants(0)) operand(0).grad += g;
      if (wants(1)) operand(1).grad += g.colwise().sum();
      break;
    case OpKind::Broadcast:
      operand(0).grad(0, 0) += g.sum();
      break;
    case OpKind::Relu:
    case OpKind::Hinge:
      // Subgradient at exactly zero is zero.
      operand(0).grad.array() +=
          (operand(0).value.array() > 0.0).select(g.array(), 0.0);
      break;
    case OpKind::Sin:
      operand(0).grad.array() += g.array() * operand(0).value.array().cos();
      break;
    case OpKind::Cos:
      operand(0).grad.array() -= g.array() * operand(0).value.array().sin();
      break;
    case OpKind::Square:
      operand(0).grad.array() += 2.0 * g.array() * operand(0).value.array();
      break;
    case OpKind::Sum:
      operand(0).grad.array() += g(0, 0);
      break;
    case OpKind::SquaredNorm:
      operand(0).grad += (2.0 * g(0, 0)) * operand(0).value;
      break;
    case OpKind::Cols:
      operand(0).grad.middleCols(node.start, node.count) += g;
      break;
    case OpKind::HCat: {
      Index at = 0;
      for (std::size_t k = 0; k < node.operands.size(); ++k) {
        const Index width = operand(k).value.cols();
        if (wants(k)) operand(k).grad += g.middleCols(at, width);
        at += width;
      }
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Var expressions

Var operator+(const Var& a, const Var& b) { return common_tape(a, b).record(OpKind::Add, {a, b}); }
Var operator-(const Var& a, const Var& b) { return common_tape(a, b).record(OpKind::Sub, {a, b}); }
Var operator-(const Var& a) { return a.tape().record(OpKind::Neg, {a}); }
Var operator*(double c, const Var& a) { return a.tape().record(OpKind::Scale, {a}, c); }
Var operator*(const Var& a, double c) { return c * a; }
Var mul(const Var& a, const Var& b) { return common_tape(a, b).record(OpKind::Mul, {a, b}); }
Var div(const Var& a, const Var& b) { return common_tape(a, b).record(OpKind::Div, {a, b}); }
Var shift(const Var& a, double c) { return a.tape().record(OpKind::Shift, {a}, c); }
Var matmul(const Var& a, const Var& b) { return common_tape(a, b).record(OpKind::MatMul, {a, b}); }
Var add_row(const Var& a, const Var& row) {
  return common_tape(a, row).record(OpKind::AddRow, {a, row});
}
Var broadcast(const Var& a, Index rows, Index cols) {
  return a.tape().record(OpKind::Broadcast, {a}, 0.0, rows, cols);
}
Var relu(const Var& a) { return a.tape().record(OpKind::Relu, {a}); }
Var hinge(const Var& a) { return a.tape().record(OpKind::Hinge, {a}); }
Var sin(const Var& a) { return a.tape().record(OpKind::Sin, {a}); }
Var cos(const Var& a) { return a.tape().record(OpKind::Cos, {a}); }
Var square(const Var& a) { return a.tape().record(OpKind::Square, {a}); }
Var sum(const Var& a) { return a.tape().record(OpKind::Sum, {a}); }
Var squared_norm(const Var& a) { return a.tape().record(OpKind::SquaredNorm, {a}); }
Var cols(const Var& a, Index start, Index count) {
  return a.tape().record(OpKind::Cols, {a}, 0.0, start, count);
}
Var hcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("hcat of nothing");
  return parts.front().tape().record(OpKind::HCat, parts);
}
Var hcat(std::initializer_list<Var> parts) { return hcat(std::vector<Var>(parts)); }

// ---------------------------------------------------------------------------
// Matrix counterparts

namespace {
void check_same(const char* what, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(what) + " shape mismatch " + shape_str(a) + " vs " +
                                shape_str(b));
  }
}
}  // namespace

Matrix mul(const Matrix& a, const Matrix& b) {
  check_same("mul", a, b);
  return a.cwiseProduct(b);
}
Matrix div(const Matrix& a, const Matrix& b) {
  check_same("div", a, b);
  return a.cwiseQuotient(b);
}
Matrix shift(const Matrix& a, double c) { return (a.array() + c).matrix(); }
Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul shape mismatch " + shape_str(a) + " * " + shape_str(b));
  }
  return a * b;
}
Matrix add_row(const Matrix& a, const Matrix& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw std::invalid_argument("add_row shape mismatch " + shape_str(a) + " + row " +
                                shape_str(row));
  }
  return a.rowwise() + row.row(0);
}
Matrix broadcast(const Matrix& a, Index rows, Index cols) {
  if (a.rows() != 1 || a.cols() != 1) throw std::invalid_argument("broadcast expects 1x1");
  return Matrix::Constant(rows, cols, a(0, 0));
}
Matrix relu(const Matrix& a) { return a.cwiseMax(0.0); }
Matrix hinge(const Matrix& a) { return a.cwiseMax(0.0); }
Matrix sin(const Matrix& a) { return a.array().sin().matrix(); }
Matrix cos(const Matrix& a) { return a.array().cos().matrix(); }
Matrix square(const Matrix& a) { return a.array().square().matrix(); }
Matrix sum(const Matrix& a) { return Matrix::Constant(1, 1, a.sum()); }
Matrix squared_norm(const Matrix& a) { return Matrix::Constant(1, 1, a.squaredNorm()); }
Matrix cols(const Matrix& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw std::invalid_argument("cols out of range for " + shape_str(a));
  }
  return a.middleCols(start, count);
}
Matrix hcat(const std::vector<Matrix>& parts) {
  if (parts.empty()) throw std::invalid_argument("hcat of nothing");
  Index total = 0;
  for (const Matrix& p : parts) {
    if (p.rows() != parts.front().rows()) throw std::invalid_argument("hcat row mismatch");
    total += p.cols();
  }
  Matrix out(parts.front().rows(), total);
  Index at = 0;
  for (const Matrix& p : parts) {
    out.middleCols(at, p.cols()) = p;
    at += p.cols();
  }
  return out;
}
Matrix hcat(std::initializer_list<Matrix> parts) { return hcat(std::vector<Matrix>(parts)); }

// ---------------------------------------------------------------------------

GradientCheckReport gradient_check_report(const TapeFunction& function,
                                          const std::vector<Matrix>& point, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("gradient_check: step must be positive");
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(point.size());
  for (const Matrix& p : point) leaves.push_back(tape.input(p));
  const Var out = function(tape, leaves);
  if (out.rows() != 1 || out.cols() != 1) {
    throw std::invalid_argument("gradient_check: function output is not scalar");
  }
  tape.backward(out);
  std::vector<Matrix> analytic;
  for (const Var& leaf : leaves) analytic.push_back(leaf.grad());
  const std::vector<bool> pattern = tape.activation_pattern();

  GradientCheckReport report;
  for (std::size_t k = 0; k < point.size(); ++k) {
    Matrix probe = point[k];
    for (Index i = 0; i < probe.size(); ++i) {
      const double saved = probe(i);
      const auto eval = [&](double x, bool& smooth) {
        probe(i) = x;
        tape.set_input(leaves[k], probe);
        tape.forward();
        smooth = smooth && tape.activation_pattern() == pattern;
        return out.value()(0, 0);
      };
      bool smooth = true;
      const double plus = eval(saved + step, smooth);
      const double minus = eval(saved - step, smooth);
      probe(i) = saved;
      tape.set_input(leaves[k], probe);
      if (!smooth) {
        ++report.kinks;
        continue;
      }
      const double central = (plus - minus) / (2.0 * step);
      const double err = std::abs(analytic[k](i) - central) / (std::abs(central) + 1e-12);
      report.max_rel_error = std::max(report.max_rel_error, err);
      ++report.checked;
    }
  }
  tape.forward();
  return report;
}

double gradient_check(const TapeFunction& function, const std::vector<Matrix>& point,
                      double step) {
  return gradient_check_report(function, point, step).max_rel_error;
}

}  // namespace pcnn
