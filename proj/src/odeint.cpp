#include "pcnn/odeint.hpp"

#include <algorithm>
#include <cmath>

namespace pcnn {
namespace {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                 b6 = 11.0 / 84;
// b - b_hat (error weights); the seventh stage is the FSAL evaluation.
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

// PI controller exponents (Hairer & Wanner, beta = 0.04).
constexpr double kBeta = 0.04;
constexpr double kAlpha = 0.2 - 0.75 * kBeta;
constexpr double kSafety = 0.9;
constexpr double kMinFactor = 0.2;
constexpr double kMaxFactor = 10.0;

double error_norm(const Vector& err, const Vector& y0, const Vector& y1, double rtol,
                  double atol) {
  const Vector scale =
      (atol + rtol * y0.cwiseAbs().cwiseMax(y1.cwiseAbs()).array()).matrix();
  return std::sqrt(err.cwiseQuotient(scale).squaredNorm() / static_cast<double>(err.size()));
}

double initial_step(const PlainField& f, const Vector& x0, const Vector& f0, double rtol,
                    double atol) {
  const Vector scale = (atol + rtol * x0.cwiseAbs().array()).matrix();
  const double n = static_cast<double>(x0.size());
  const double d0 = std::sqrt(x0.cwiseQuotient(scale).squaredNorm() / n);
  const double d1 = std::sqrt(f0.cwiseQuotient(scale).squaredNorm() / n);
  double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  const Vector f1 = f(x0 + h0 * f0);
  const double d2 = std::sqrt((f1 - f0).cwiseQuotient(scale).squaredNorm() / n) / h0;
  const double h1 = std::max(d1, d2) <= 1e-15 ? std::max(1e-6, h0 * 1e-3)
                                                : std::pow(0.01 / std::max(d1, d2), 1.0 / 5);
  return std::min(100 * h0, h1);
}

}  // namespace

std::vector<Vector> dopri_integrate(const PlainField& field, const Vector& x0, double t0,
                                    double t_end, const std::vector<double>& sample_times,
                                    const DopriOptions& options, DopriStats* stats) {
  if (!(options.rtol > 0.0) || !(options.atol > 0.0)) {
    throw std::invalid_argument("dopri_integrate: tolerances must be positive");
  }
  if (!(t_end >= t0)) throw std::invalid_argument("dopri_integrate: t_end < t0");
  for (std::size_t k = 0; k < sample_times.size(); ++k) {
    if (sample_times[k] < t0 || sample_times[k] > t_end) {
      throw std::invalid_argument("dopri_integrate: sample time outside integration span");
    }
    if (k > 0 && sample_times[k] < sample_times[k - 1]) {
      throw std::invalid_argument("dopri_integrate: sample times must be sorted");
    }
  }

  DopriStats local;
  std::vector<Vector> out;
  out.reserve(sample_times.size());

  Vector x = x0;
  double t = t0;
  Vector k1 = field(x);
  double h = options.initial_step > 0.0 ? options.initial_step
                                        : initial_step(field, x, k1, options.rtol, options.atol);
  double err_prev = 1e-4;
  long steps = 0;

  for (double target : sample_times) {
    while (t < target) {
      if (++steps > options.max_steps) throw std::runtime_error("dopri_integrate: too many steps");
      const double remaining = target - t;
      // Land exactly on the sample time instead of overshooting it.
      const bool last = h >= remaining;
      const double step = last ? remaining : h;
      if (step < options.min_step && !last) {
        throw std::runtime_error("dopri_integrate: step size underflow at t = " +
                                 std::to_string(t));
      }

      const Vector k2 = field(x + step * (a21 * k1));
      const Vector k3 = field(x + step * (a31 * k1 + a32 * k2));
      const Vector k4 = field(x + step * (a41 * k1 + a42 * k2 + a43 * k3));
      const Vector k5 = field(x + step * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
      const Vector k6 = field(x + step * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
      const Vector x_new = x + step * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
      const Vector k7 = field(x_new);
      const Vector err = step * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
      const double en = error_norm(err, x, x_new, options.rtol, options.atol);

      if (!std::isfinite(en)) {
        h = step * kMinFactor;
        ++local.rejected;
        if (h < options.min_step) throw std::runtime_error("dopri_integrate: step size underflow");
        continue;
      }
      if (en <= 1.0) {
        t = last ? target : t + step;
        x = x_new;
        k1 = k7;
        ++local.accepted;
        double factor = en == 0.0 ? kMaxFactor
                                  : kSafety * std::pow(en, -kAlpha) * std::pow(err_prev, kBeta);
        factor = std::clamp(factor, kMinFactor, kMaxFactor);
        err_prev = std::max(en, 1e-4);
        // A shortened landing step says nothing about the natural step size.
        if (!last || step >= h) h = step * factor;
      } else {
        ++local.rejected;
        h = step * std::max(kMinFactor, kSafety * std::pow(en, -kAlpha));
        if (h < options.min_step) {
          throw std::runtime_error("dopri_integrate: step size underflow at t = " +
                                   std::to_string(t));
        }
      }
    }
    out.push_back(x);
  }
  if (stats) *stats = local;
  return out;
}

}  // namespace pcnn
