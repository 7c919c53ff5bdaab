#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pcnn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

class Tape;

/// Error raised by the tape. Carries the index of the offending operation.
class TapeError : public std::runtime_error {
 public:
  TapeError(std::size_t op_index, const std::string& what)
      : std::runtime_error("operation " + std::to_string(op_index) + ": " + what),
        op_index_(op_index) {}

  std::size_t op_index() const { return op_index_; }

 private:
  std::size_t op_index_;
};

enum class OpKind {
  Leaf,
  Add,
  Sub,
  Mul,          // elementwise
  Div,          // elementwise
  Neg,
  Scale,        // constant * a
  Shift,        // a + constant
  MatMul,
  AddRow,       // (r x c) + broadcast (1 x c)
  Broadcast,    // (1 x 1) -> (r x c)
  Relu,
  Hinge,        // max(a, 0)
  Sin,
  Cos,
  Square,
  Sum,          // -> 1 x 1
  SquaredNorm,  // -> 1 x 1
  Cols,         // column slice
  HCat,
};

const char* op_name(OpKind kind);

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives and
/// has not been cleared.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape& tape() const { return *tape_; }
  std::size_t index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }

  const Matrix& value() const;
  const Matrix& grad() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

/// Records elementary dense-matrix operations in evaluation order and runs
/// reverse-mode differentiation over them.
///
/// Recording evaluates eagerly, so every node holds its value as soon as it is
/// created. Leaves can be rebound with set_input(); the tape is then stale
/// until forward() replays the recorded operations on the new inputs.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var input(Matrix value, bool requires_grad = true);
  Var input(double value, bool requires_grad = true);
  Var constant(Matrix value) { return input(std::move(value), false); }
  Var constant(double value) { return input(value, false); }

  Var record(OpKind kind, std::initializer_list<Var> operands, double scalar = 0.0,
             Index start = 0, Index count = 0);
  Var record(OpKind kind, const std::vector<Var>& operands, double scalar = 0.0,
             Index start = 0, Index count = 0);

  void set_input(const Var& leaf, Matrix value);
  void forward();

  /// Propagates seed (shaped like root) back to every node. Gradients are
  /// overwritten, not accumulated across calls.
  void backward(const Var& root, const Matrix& seed);
  void backward(const Var& root);

  void zero_grad();
  void clear();

  std::size_t size() const { return nodes_.size(); }
  bool stale() const { return stale_; }
  OpKind kind(std::size_t i) const { return nodes_.at(i).kind; }
  const Matrix& value(std::size_t i) const { return nodes_.at(i).value; }
  const Matrix& grad(std::size_t i) const { return nodes_.at(i).grad; }
  bool requires_grad(std::size_t i) const { return nodes_.at(i).requires_grad; }

  /// Which inputs of every relu and hinge operation are positive.
  std::vector<bool> activation_pattern() const;

 private:
  struct Node {
    OpKind kind = OpKind::Leaf;
    std::vector<std::size_t> operands;
    double scalar = 0.0;
    Index start = 0;
    Index count = 0;
    bool requires_grad = false;
    Matrix value;
    Matrix grad;
  };

  Matrix evaluate(std::size_t index, const Node& node) const;
  void propagate(std::size_t index);

  std::vector<Node> nodes_;
  bool stale_ = false;
  bool has_backward_ = false;
};

inline const Matrix& Var::value() const { return tape_->value(index_); }
inline const Matrix& Var::grad() const { return tape_->grad(index_); }

// Expression-friendly free functions. Each exists for both Matrix (plain
// numeric evaluation) and Var (taped evaluation) so model code can be written
// once as a template over the value type.

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator-(const Var& a);
Var operator*(double c, const Var& a);
Var operator*(const Var& a, double c);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var shift(const Var& a, double c);
Var matmul(const Var& a, const Var& b);
Var add_row(const Var& a, const Var& row);
Var broadcast(const Var& a, Index rows, Index cols);
Var relu(const Var& a);
Var hinge(const Var& a);
Var sin(const Var& a);
Var cos(const Var& a);
Var square(const Var& a);
Var sum(const Var& a);
Var squared_norm(const Var& a);
Var cols(const Var& a, Index start, Index count);
Var hcat(const std::vector<Var>& parts);
Var hcat(std::initializer_list<Var> parts);

Matrix mul(const Matrix& a, const Matrix& b);
Matrix div(const Matrix& a, const Matrix& b);
Matrix shift(const Matrix& a, double c);
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix add_row(const Matrix& a, const Matrix& row);
Matrix broadcast(const Matrix& a, Index rows, Index cols);
Matrix relu(const Matrix& a);
Matrix hinge(const Matrix& a);
Matrix sin(const Matrix& a);
Matrix cos(const Matrix& a);
Matrix square(const Matrix& a);
Matrix sum(const Matrix& a);
Matrix squared_norm(const Matrix& a);
Matrix cols(const Matrix& a, Index start, Index count);
Matrix hcat(const std::vector<Matrix>& parts);
Matrix hcat(std::initializer_list<Matrix> parts);

inline const Matrix& value_of(const Matrix& m) { return m; }
inline const Matrix& value_of(const Var& v) { return v.value(); }

/// Builds a scalar-valued function on a tape from a list of leaf inputs.
using TapeFunction = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradientCheckReport {
  /// Max over coordinates of |reverse-mode - central difference| /
  /// (|central difference| + 1e-12).
  double max_rel_error = 0.0;
  Index checked = 0;
  /// Coordinates whose probes moved some relu or hinge input across zero,
  /// where central differences are meaningless. Not counted in the error.
  Index kinks = 0;
};

GradientCheckReport gradient_check_report(const TapeFunction& function,
                                          const std::vector<Matrix>& point, double step);
double gradient_check(const TapeFunction& function, const std::vector<Matrix>& point,
                      double step);

}  // namespace pcnn
