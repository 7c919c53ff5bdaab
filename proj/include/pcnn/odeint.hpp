#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcnn/autodiff.hpp"

namespace pcnn {

/// Raised when a field returns a non-finite derivative inside a solver stage.
class NonFiniteFieldError : public std::runtime_error {
 public:
  NonFiniteFieldError(int stage)
      : std::runtime_error("field output is not finite in RK4 stage " + std::to_string(stage)),
        stage_(stage) {}
  int stage() const { return stage_; }

 private:
  int stage_;
};

/// Field signature: (state batch x n, control batch x m) -> derivative batch x n.
template <class T>
using FieldFunction = std::function<T(const T& x, const T& u)>;

/// One classical fourth-order Runge-Kutta step with u held constant.
template <class T, class Field>
T rk4_step(const Field& field, const T& x, const T& u, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("rk4_step: dt must be positive");
  auto stage = [&](const T& at, int index) {
    T k = field(at, u);
    const Matrix& v = value_of(k);
    if (v.rows() != value_of(x).rows() || v.cols() != value_of(x).cols()) {
      throw std::invalid_argument("field output width does not match state width");
    }
    if (!v.allFinite()) throw NonFiniteFieldError(index);
    return k;
  };
  const T k1 = stage(x, 1);
  const T k2 = stage(x + (0.5 * dt) * k1, 2);
  const T k3 = stage(x + (0.5 * dt) * k2, 3);
  const T k4 = stage(x + dt * k3, 4);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// A rollout from an initial state over a time grid t_0 < ... < t_K. The
/// control at grid point k applies on [t_k, t_{k+1}); the final grid point's
/// control is carried for alignment with the data but is unused. An empty
/// control list means the field takes no control input.
template <class T>
struct RolloutRequest {
  T initial;
  std::vector<T> controls;
  std::vector<double> times;
  int steps_per_interval = 1;

  void validate() const {
    if (times.size() < 2) throw std::invalid_argument("rollout needs at least one interval");
    for (std::size_t k = 1; k < times.size(); ++k) {
      if (!(times[k] > times[k - 1])) {
        throw std::invalid_argument("rollout time grid must be strictly increasing");
      }
    }
    if (!controls.empty() && controls.size() != times.size()) {
      throw std::invalid_argument("control sequence length must equal number of intervals + 1");
    }
    if (steps_per_interval < 1) throw std::invalid_argument("steps_per_interval must be >= 1");
  }
};

/// Predicted states at t_1 ... t_K.
template <class T, class Field>
std::vector<T> ode_solve(const Field& field, const RolloutRequest<T>& request, const T& no_control) {
  request.validate();
  std::vector<T> out;
  out.reserve(request.times.size() - 1);
  T x = request.initial;
  for (std::size_t k = 0; k + 1 < request.times.size(); ++k) {
    const T& u = request.controls.empty() ? no_control : request.controls[k];
    const double dt = (request.times[k + 1] - request.times[k]) / request.steps_per_interval;
    for (int s = 0; s < request.steps_per_interval; ++s) x = rk4_step(field, x, u, dt);
    out.push_back(x);
  }
  return out;
}

struct DopriOptions {
  double rtol = 1e-8;
  double atol = 1e-8;
  double min_step = 1e-12;
  double initial_step = 0.0;  // 0: choose automatically
  long max_steps = 10'000'000;
};

struct DopriStats {
  long accepted = 0;
  long rejected = 0;
};

using PlainField = std::function<Vector(const Vector&)>;

/// Adaptive Dormand-Prince 5(4) with PI step-size control. Integrates exactly
/// to each sample time (sorted, within [t0, t_end]) and returns the state
/// there. Not differentiable; used for ground-truth data.
std::vector<Vector> dopri_integrate(const PlainField& field, const Vector& x0, double t0,
                                   double t_end, const std::vector<double>& sample_times,
                                   const DopriOptions& options = {}, DopriStats* stats = nullptr);

}  // namespace pcnn
