#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "pcnn/constraints.hpp"
#include "pcnn/nn.hpp"
#include "pcnn/odeint.hpp"
#include "pcnn/pendulum.hpp"
#include "pcnn/random.hpp"
#include "pcnn/vectorfield.hpp"

namespace pcnn {

// Optimizer ------------------------------------------------------------------

struct AdamOptions {
  double learning_rate = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(Index size, AdamOptions options);

  void reset();
  /// params -= lr * m_hat / (sqrt(v_hat) + eps)
  void step(Vector& params, const Vector& gradient);
  Index iterations() const { return t_; }

 private:
  AdamOptions options_;
  Vector m_;
  Vector v_;
  Index t_ = 0;
};

// Rollout loss ---------------------------------------------------------------

struct Anchor {
  Index trajectory = 0;
  Index start = 0;
};

/// Every (trajectory, i) with room for i + horizon + 1 inside the trajectory.
std::vector<Anchor> admissible_anchors(const TrajectoryDataset& dataset, Index horizon);

/// Uniform sample with replacement from the admissible anchors.
std::vector<Anchor> sample_anchors(const std::vector<Anchor>& admissible, Index count, Rng& rng);

/// Mean over anchors of sum_{j=1}^{horizon+1} ||x_hat_{i+j} - x_{i+j}||^2 with
/// RK4 predictions at the dataset's dt.
Var rollout_loss(Tape& tape, const VectorField& field, const NetworkSet<Var>& nets,
                 const TrajectoryDataset& dataset, std::span<const Anchor> anchors, Index horizon);
double rollout_loss(const VectorField& field, const NetworkSet<Matrix>& nets,
                    const TrajectoryDataset& dataset, std::span<const Anchor> anchors,
                    Index horizon);

// Metrics --------------------------------------------------------------------

struct StepRecord {
  Index step = 0;
  double train_loss = 0.0;
  std::optional<double> test_loss;
  std::optional<double> constraint_loss;
  double mu = 0.0;
  double wall_seconds = 0.0;
};

struct OuterRecord {
  int iteration = 0;
  Index step = 0;
  double constraint_loss = 0.0;
  double mu = 0.0;
  std::vector<double> lambda_norms;
};

struct MetricsLog {
  std::vector<StepRecord> steps;
  std::vector<OuterRecord> outer;

  /// CSV `step,train_loss,test_loss,constraint_loss,mu`; columns not
  /// measured at a step are left empty. Wall-clock time is not written.
  void write_csv(std::ostream& out) const;
};

// Augmented-Lagrangian driver ------------------------------------------------

struct InnerLoopOptions {
  AdamOptions adam;
  Index patience = 1000;
  Index eval_every = 50;
  Index max_steps = 10000;
};

struct SolverOptions {
  InnerLoopOptions inner;
  double mu0 = 1e-3;
  double mu_mult = 1.5;
  double tolerance = 1e-4;
  int max_outer = 10;
  Index constraint_batch = 256;
};

/// What the driver minimizes. data_loss draws its own minibatch from rng.
struct Objective {
  std::function<Var(Tape&, const NetworkSet<Var>&, Rng&)> data_loss;
  /// Early-stopping score, lower is better.
  std::function<double(const ParameterSet&, const MultiplierState&)> validation;
  /// Optional metric logged at evaluation steps (defaults to the program's
  /// constraint loss over the collocation set).
  std::function<std::optional<double>(const ParameterSet&)> constraint_metric;
};

struct SolveResult {
  ParameterSet params;
  MultiplierState multipliers;
  MetricsLog log;
  int outer_iterations = 0;
  std::optional<double> final_constraint_loss;
  bool converged = false;
  bool cap_hit = false;
  bool aborted = false;
  std::string abort_reason;
};

/// Inner Adam minimization of the augmented Lagrangian with early stopping,
/// then multiplier and penalty updates, repeated until the mean constraint
/// violation drops below tolerance or max_outer updates have run. The inner
/// minimization always runs at least once. Without constraints a single
/// inner loop runs. Each inner loop stops once `patience` steps pass without
/// a better validation score and returns the best parameters it evaluated,
/// or its last parameters when it stopped before the first evaluation.
SolveResult minimize_augmented_lagrangian(ParameterSet params, const Objective& objective,
                                          const ConstraintProgram* program,
                                          const CollocationSet* omega,
                                          const SolverOptions& options, Rng& rng);

// Pendulum training ------------------------------------------------------------

struct TrainConfig {
  ModelKind model = ModelKind::K1;
  bool constraints = false;
  std::vector<Index> hidden = {128, 128};
  Index rollout_horizon = 5;
  Index batch_size = 64;
  AdamOptions adam;
  Index patience = 1000;
  Index eval_every = 50;
  Index max_inner_steps = 10000;
  double mu0 = 1e-3;
  double mu_mult = 1.5;
  double tolerance = 1e-4;
  int max_outer = 10;
  Index constraint_points = 10000;
  Index constraint_batch = 256;
  Index eval_constraint_points = 10000;
  Box constraint_domain = default_symmetry_domain();
  PendulumParams pendulum;
  std::uint64_t seed = 0;

  void validate() const;
  /// "baseline", "k1", or "k2" (k1 with constraints).
  std::string label() const;
};

nlohmann::json to_json(const TrainConfig& c);
/// Rejects unknown keys; absent keys keep their defaults.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct TrainResult {
  SolveResult solve;
  VectorField field;
};

TrainResult train(const TrainConfig& config, const TrajectoryDataset& train_data,
                  const TrajectoryDataset& test_data);

struct EvalMetrics {
  double testing_loss = 0.0;
  double avg_rollout_error = 0.0;
  std::optional<double> constraint_loss;
  std::vector<Index> diverged;  // test trajectories whose rollout blew up
};

/// Testing loss over all admissible test anchors; mean per-step Euclidean
/// error of full rollouts from each test trajectory's first state; constraint
/// loss of the model's symmetry terms over a fresh collocation sample.
EvalMetrics evaluate(const VectorField& field, ModelKind kind, const ParameterSet& params,
                     const TrajectoryDataset& test_data, Index horizon,
                     const PendulumParams& pendulum, const Box& constraint_domain,
                     Index constraint_points, std::uint64_t constraint_seed);

/// Mean over steps 1..T-1 of ||x_hat_t - x_t|| for a rollout from x_0;
/// +infinity if the rollout diverges.
double trajectory_rollout_error(const VectorField& field, const NetworkSet<Matrix>& nets,
                                const Trajectory& trajectory, double dt);

nlohmann::json eval_to_json(const EvalMetrics& m);

// Checkpoints ---------------------------------------------------------------

struct Checkpoint {
  TrainConfig config;
  ParameterSet params;
  std::optional<MultiplierState> multipliers;
  Index step = 0;
};

nlohmann::json checkpoint_to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a over the compact JSON dump.
std::string config_hash(const nlohmann::json& j);

}  // namespace pcnn
