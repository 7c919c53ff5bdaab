#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "pcnn/autodiff.hpp"

namespace pcnn {

/// Point masses m1, m2 (kg) at the ends of links l1, l2 (m); gravity g (m/s^2).
struct PendulumParams {
  double m1 = 1.0;
  double m2 = 1.0;
  double l1 = 1.0;
  double l2 = 1.0;
  double g = 9.81;

  void validate() const;
  friend bool operator==(const PendulumParams&, const PendulumParams&) = default;
};

nlohmann::json to_json(const PendulumParams& p);
PendulumParams pendulum_from_json(const nlohmann::json& j);

class SingularMassMatrixError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kSingularTolerance = 1e-9;

// State layout: (phi1, phi2, dphi1, dphi2).

/// Angular accelerations of the double pendulum:
///   ddphi1 = (g1 - a1 g2) / (1 - a1 a2),  ddphi2 = (-a2 g1 + g2) / (1 - a1 a2)
/// with
///   a1 = (l1/l2) (m1/(m1+m2)) cos(phi1 - phi2),   a2 = (l1/l2) cos(phi1 - phi2)
///   g1 = -(l1/l2) (m2/(m1+m2)) dphi2^2 sin(phi1 - phi2) - (g/l1) sin(phi1)
///   g2 = (l1/l2) dphi1^2 sin(phi1 - phi2) - (g/l2) sin(phi2)
/// With equal masses and lengths this coincides with the textbook two-link
/// point-mass model.
Vector true_field(const Vector& x, const PendulumParams& p);

double true_g1(const Vector& x, const PendulumParams& p);
double true_g2(const Vector& x, const PendulumParams& p);

/// Kinetic plus potential energy; zero level at the pivot height.
double energy(const Vector& x, const PendulumParams& p);

// Row-batched versions (batch x 4 -> batch x 1) for both value types.

template <class T>
T alpha1(const T& x, const PendulumParams& p) {
  return ((p.l1 / p.l2) * (p.m1 / (p.m1 + p.m2))) * cos(cols(x, 0, 1) - cols(x, 1, 1));
}

template <class T>
T alpha2(const T& x, const PendulumParams& p) {
  return (p.l1 / p.l2) * cos(cols(x, 0, 1) - cols(x, 1, 1));
}

template <class T>
T batched_true_g1(const T& x, const PendulumParams& p) {
  const T diff = cols(x, 0, 1) - cols(x, 1, 1);
  const T coriolis = mul(square(cols(x, 3, 1)), sin(diff));
  return (-(p.l1 / p.l2) * (p.m2 / (p.m1 + p.m2))) * coriolis - (p.g / p.l1) * sin(cols(x, 0, 1));
}

template <class T>
T batched_true_g2(const T& x, const PendulumParams& p) {
  const T diff = cols(x, 0, 1) - cols(x, 1, 1);
  return (p.l1 / p.l2) * mul(square(cols(x, 2, 1)), sin(diff)) - (p.g / p.l2) * sin(cols(x, 1, 1));
}

/// Positions mirrored: (-x12, x34).
template <class T>
T reflect_positions(const T& x) {
  return hcat({-cols(x, 0, 2), cols(x, 2, 2)});
}

/// Velocities mirrored: (x12, -x34).
template <class T>
T reflect_velocities(const T& x) {
  return hcat({cols(x, 0, 2), -cols(x, 2, 2)});
}

/// Residuals of the four symmetries of the true g terms, as batch x 4:
///   g1(x) + g1(-x12, x34),  g2(x) + g2(-x12, x34),
///   g1(x) - g1(x12, -x34),  g2(x) - g2(x12, -x34).
/// `gpair(x)` returns g1 and g2 as the two columns of a batch x 2 value.
template <class T, class GPair>
T symmetry_residuals(const GPair& gpair, const T& x) {
  const T g = gpair(x);
  const T g_pos = gpair(reflect_positions(x));
  const T g_vel = gpair(reflect_velocities(x));
  return hcat({g + g_pos, g - g_vel});
}

// Datasets ------------------------------------------------------------------

enum class DatasetRole { Train, Test };

const char* role_name(DatasetRole role);
DatasetRole role_from_name(const std::string& name);

/// Closed box in state space: lower[i] <= x[i] <= upper[i].
struct Box {
  Vector lower;
  Vector upper;

  bool contains(const Eigen::Ref<const Vector>& x) const;
  void validate() const;
};

nlohmann::json to_json(const Box& box);
Box box_from_json(const nlohmann::json& j);

/// Sampling boxes for initial states.
Box train_initial_box();
Box test_initial_box();

struct Trajectory {
  std::vector<double> times;
  Matrix states;    // points x n
  Matrix controls;  // points x m (m may be 0)
};

struct TrajectoryDataset {
  std::vector<Trajectory> trajectories;
  double dt = 0.01;
  std::uint64_t seed = 0;
  DatasetRole role = DatasetRole::Train;
  Box initial_box;
  PendulumParams params;

  Index state_dim() const;
  Index control_dim() const;
  void validate() const;
};

struct DatasetOptions {
  Index points = 300;
  double dt = 0.01;
  double rtol = 1e-8;
  double atol = 1e-8;
};

TrajectoryDataset generate_dataset(DatasetRole role, Index n_trajectories, std::uint64_t seed,
                                   const PendulumParams& params, const DatasetOptions& options = {});

/// Writes traj_NNN.csv files plus manifest.json into dir (created if needed).
void save_dataset(const TrajectoryDataset& dataset, const std::filesystem::path& dir);
TrajectoryDataset load_dataset(const std::filesystem::path& dir);

}  // namespace pcnn
