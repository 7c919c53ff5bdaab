#include "pcnn/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

namespace pcnn {

// Adam -------------------------------------------------------------------------

Adam::Adam(Index size, AdamOptions options)
    : options_(options), m_(Vector::Zero(size)), v_(Vector::Zero(size)) {}

void Adam::reset() {
  m_.setZero();
  v_.setZero();
  t_ = 0;
}

void Adam::step(Vector& params, const Vector& gradient) {
  ++t_;
  m_ = options_.beta1 * m_ + (1.0 - options_.beta1) * gradient;
  v_ = options_.beta2 * v_ + (1.0 - options_.beta2) * gradient.cwiseAbs2();
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  params.array() -= options_.learning_rate * (m_.array() / c1) /
                    ((v_.array() / c2).sqrt() + options_.epsilon);
}

// Rollout loss -------------------------------------------------------------------

std::vector<Anchor> admissible_anchors(const TrajectoryDataset& dataset, Index horizon) {
  if (horizon < 0) throw std::invalid_argument("rollout horizon must be >= 0");
  std::vector<Anchor> out;
  for (std::size_t t = 0; t < dataset.trajectories.size(); ++t) {
    const Index length = dataset.trajectories[t].states.rows();
    for (Index i = 0; i + horizon + 1 <= length - 1; ++i) {
      out.push_back({static_cast<Index>(t), i});
    }
  }
  return out;
}

std::vector<Anchor> sample_anchors(const std::vector<Anchor>& admissible, Index count, Rng& rng) {
  if (admissible.empty()) {
    throw std::invalid_argument("no anchor leaves room for the rollout horizon");
  }
  std::vector<Anchor> out(static_cast<std::size_t>(count));
  for (auto& a : out) a = admissible[uniform_index(rng, admissible.size())];
  return out;
}

namespace {

struct RolloutBatch {
  Matrix initial;
  std::vector<Matrix> controls;  // one per grid point
  std::vector<Matrix> targets;   // horizon + 1 future states
  std::vector<double> times;
};

RolloutBatch make_batch(const TrajectoryDataset& ds, std::span<const Anchor> anchors,
                        Index horizon) {
  if (anchors.empty()) throw std::invalid_argument("rollout loss needs at least one anchor");
  const Index n = ds.state_dim();
  const Index m = ds.control_dim();
  const auto rows = static_cast<Index>(anchors.size());
  RolloutBatch b;
  b.initial.resize(rows, n);
  b.controls.assign(static_cast<std::size_t>(horizon + 2), Matrix(rows, m));
  b.targets.assign(static_cast<std::size_t>(horizon + 1), Matrix(rows, n));
  for (Index r = 0; r < rows; ++r) {
    const Anchor& a = anchors[static_cast<std::size_t>(r)];
    const Trajectory& tr = ds.trajectories.at(static_cast<std::size_t>(a.trajectory));
    if (a.start < 0 || a.start + horizon + 1 >= tr.states.rows()) {
      throw std::invalid_argument("anchor has no room for the rollout horizon");
    }
    b.initial.row(r) = tr.states.row(a.start);
    for (Index j = 0; j <= horizon + 1; ++j) b.controls[j].row(r) = tr.controls.row(a.start + j);
    for (Index j = 0; j <= horizon; ++j) b.targets[j].row(r) = tr.states.row(a.start + j + 1);
  }
  for (Index j = 0; j <= horizon + 1; ++j) b.times.push_back(static_cast<double>(j) * ds.dt);
  return b;
}

template <class T, class Lift>
T rollout_loss_impl(const VectorField& field, const NetworkSet<T>& nets, const RolloutBatch& b,
                    const Lift& lift) {
  RolloutRequest<T> request;
  request.initial = lift(b.initial);
  for (const Matrix& u : b.controls) request.controls.push_back(lift(u));
  request.times = b.times;
  const auto f = [&](const T& x, const T& u) { return field(nets, x, u); };
  const std::vector<T> predicted = ode_solve(f, request, request.controls.front());
  T total = squared_norm(predicted[0] - lift(b.targets[0]));
  for (std::size_t j = 1; j < predicted.size(); ++j) {
    total = total + squared_norm(predicted[j] - lift(b.targets[j]));
  }
  return (1.0 / static_cast<double>(b.initial.rows())) * total;
}

template <class F>
double inf_on_blowup(const F& f) {
  try {
    return f();
  } catch (const NonFiniteFieldError&) {
    return std::numeric_limits<double>::infinity();
  } catch (const SingularMassMatrixError&) {
    return std::numeric_limits<double>::infinity();
  }
}

}  // namespace

Var rollout_loss(Tape& tape, const VectorField& field, const NetworkSet<Var>& nets,
                 const TrajectoryDataset& dataset, std::span<const Anchor> anchors, Index horizon) {
  const RolloutBatch b = make_batch(dataset, anchors, horizon);
  return rollout_loss_impl<Var>(field, nets, b,
                                [&tape](const Matrix& m) { return tape.constant(m); });
}

double rollout_loss(const VectorField& field, const NetworkSet<Matrix>& nets,
                    const TrajectoryDataset& dataset, std::span<const Anchor> anchors,
                    Index horizon) {
  const RolloutBatch b = make_batch(dataset, anchors, horizon);
  const Matrix loss =
      rollout_loss_impl<Matrix>(field, nets, b, [](const Matrix& m) -> const Matrix& { return m; });
  return loss(0, 0);
}

// Metrics ----------------------------------------------------------------------

namespace {
std::string csv_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

void MetricsLog::write_csv(std::ostream& out) const {
  out << "step,train_loss,test_loss,constraint_loss,mu\n";
  for (const StepRecord& r : steps) {
    out << r.step << ',' << csv_number(r.train_loss) << ',';
    if (r.test_loss) out << csv_number(*r.test_loss);
    out << ',';
    if (r.constraint_loss) out << csv_number(*r.constraint_loss);
    out << ',' << csv_number(r.mu) << '\n';
  }
}

// Driver -----------------------------------------------------------------------

namespace {

class BatchSampler {
 public:
  explicit BatchSampler(Index n) : order_(static_cast<std::size_t>(n)) {
    std::iota(order_.begin(), order_.end(), Index{0});
  }

  /// Partial Fisher-Yates: count distinct indices (all of them if count >= n).
  std::span<const Index> sample(Index count, Rng& rng) {
    const auto n = static_cast<std::uint64_t>(order_.size());
    const auto k = static_cast<std::uint64_t>(std::min<Index>(count, static_cast<Index>(n)));
    for (std::uint64_t i = 0; i < k; ++i) {
      const std::uint64_t j = i + uniform_index(rng, n - i);
      std::swap(order_[i], order_[j]);
    }
    return {order_.data(), static_cast<std::size_t>(k)};
  }

 private:
  std::vector<Index> order_;
};

using Clock = std::chrono::steady_clock;

}  // namespace

SolveResult minimize_augmented_lagrangian(ParameterSet params, const Objective& objective,
                                          const ConstraintProgram* program,
                                          const CollocationSet* omega,
                                          const SolverOptions& options, Rng& rng) {
  const bool constrained = program != nullptr && !program->empty();
  if (constrained && omega == nullptr) {
    throw std::invalid_argument("constrained problem needs a collocation set");
  }
  const InnerLoopOptions& inner = options.inner;
  if (inner.patience < 1 || inner.eval_every < 1 || inner.max_steps < 1) {
    throw std::invalid_argument("patience, eval_every and max_steps must be >= 1");
  }

  SolveResult result;
  result.multipliers = constrained ? init_multipliers(*program, *omega, options.mu0)
                                   : MultiplierState{{}, options.mu0, 0};
  const auto start_time = Clock::now();
  const auto elapsed = [&] {
    return std::chrono::duration<double>(Clock::now() - start_time).count();
  };
  const auto constraint_metric = [&](const ParameterSet& p) -> std::optional<double> {
    if (objective.constraint_metric) return objective.constraint_metric(p);
    if (constrained) return constraint_loss(*program, p.networks(), *omega);
    return std::nullopt;
  };

  Adam adam(params.size(), inner.adam);
  std::optional<BatchSampler> sampler;
  if (constrained) sampler.emplace(omega->size());
  Index global_step = 0;

  {
    StepRecord first;
    first.step = 0;
    first.train_loss = std::numeric_limits<double>::quiet_NaN();
    first.test_loss = objective.validation(params, result.multipliers);
    first.constraint_loss = constraint_metric(params);
    first.mu = result.multipliers.mu;
    // Training loss at step 0 is the first minibatch's, filled in below.
    result.log.steps.push_back(first);
  }

  // Returns false when training had to abort. Checkpoints are the
  // evaluations made inside the current inner loop.
  const auto inner_loop = [&]() -> bool {
    adam.reset();
    std::optional<ParameterSet> best;
    double best_score = std::numeric_limits<double>::infinity();
    const ParameterSet start = params;
    const auto restore = [&] { params = best ? *best : start; };
    Index since_best = 0;
    Vector flat = params.flatten();
    Tape tape;
    for (Index k = 1; k <= inner.max_steps; ++k) {
      tape.clear();
      const NetworkSet<Var> nets = params.bind(tape);
      std::optional<Var> data;
      std::optional<Var> total;
      try {
        data = objective.data_loss(tape, nets, rng);
        total = data;
        if (constrained) {
          const auto batch = sampler->sample(options.constraint_batch, rng);
          total = augmented_lagrangian(*data, *program, nets, *omega, batch, result.multipliers);
        }
      } catch (const NonFiniteFieldError&) {
      } catch (const SingularMassMatrixError&) {
      }
      if (!total || !std::isfinite(total->value()(0, 0))) {
        result.aborted = true;
        result.abort_reason = "non-finite loss at step " + std::to_string(global_step + 1);
        restore();
        return false;
      }
      const double data_value = data->value()(0, 0);
      tape.backward(*total);
      const Vector grad = gather_gradient(nets);
      if (!grad.allFinite()) {
        result.aborted = true;
        result.abort_reason = "non-finite gradient at step " + std::to_string(global_step + 1);
        restore();
        return false;
      }
      if (global_step == 0) result.log.steps.front().train_loss = data_value;
      adam.step(flat, grad);
      params.unflatten(flat);
      ++global_step;
      ++since_best;

      StepRecord rec;
      rec.step = global_step;
      rec.train_loss = data_value;
      rec.mu = result.multipliers.mu;
      if (k % inner.eval_every == 0) {
        const double score = objective.validation(params, result.multipliers);
        rec.test_loss = score;
        rec.constraint_loss = constraint_metric(params);
        if (!std::isfinite(score)) {
          result.aborted = true;
          result.abort_reason = "non-finite validation loss at step " + std::to_string(global_step);
          rec.wall_seconds = elapsed();
          result.log.steps.push_back(rec);
          restore();
          return false;
        }
        if (score < best_score) {
          best_score = score;
          best = params;
          since_best = 0;
        }
      }
      rec.wall_seconds = elapsed();
      result.log.steps.push_back(rec);
      if (since_best >= inner.patience) break;
    }
    if (best) params = *best;
    return true;
  };

  if (!constrained) {
    inner_loop();
  } else {
    double closs = constraint_loss(*program, params.networks(), *omega);
    while (inner_loop()) {
      result.multipliers = update_multipliers(*program, params.networks(), *omega,
                                              result.multipliers, options.mu_mult);
      ++result.outer_iterations;
      closs = constraint_loss(*program, params.networks(), *omega);
      OuterRecord rec;
      rec.iteration = result.outer_iterations;
      rec.step = global_step;
      rec.constraint_loss = closs;
      rec.mu = result.multipliers.mu;
      for (const Matrix& l : result.multipliers.lambda) rec.lambda_norms.push_back(l.norm());
      result.log.outer.push_back(rec);
      if (closs < options.tolerance) break;
      if (result.outer_iterations >= options.max_outer) {
        result.cap_hit = true;
        break;
      }
    }
    result.final_constraint_loss = closs;
    result.converged = !result.aborted && closs < options.tolerance;
  }
  result.params = std::move(params);
  return result;
}

// TrainConfig --------------------------------------------------------------------

void TrainConfig::validate() const {
  if (rollout_horizon < 1) throw std::invalid_argument("rollout_horizon must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (patience < 1) throw std::invalid_argument("patience must be >= 1");
  if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
  if (max_inner_steps < 1) throw std::invalid_argument("max_inner_steps must be >= 1");
  if (!(adam.learning_rate > 0 && adam.epsilon > 0)) {
    throw std::invalid_argument("learning_rate and adam_epsilon must be positive");
  }
  if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1)) {
    throw std::invalid_argument("adam betas must lie in [0, 1)");
  }
  if (!(mu0 > 0 && mu_mult > 0 && tolerance > 0)) {
    throw std::invalid_argument("mu0, mu_mult and tolerance must be positive");
  }
  if (max_outer < 1) throw std::invalid_argument("max_outer_iterations must be >= 1");
  if (constraint_points < 1 || constraint_batch < 1 || eval_constraint_points < 1) {
    throw std::invalid_argument("constraint point counts must be >= 1");
  }
  if (constraints && !has_symmetry_terms(model)) {
    throw std::invalid_argument("constraints require a model with learned g1, g2 terms (k1)");
  }
  if (model == ModelKind::True) throw std::invalid_argument("the true model cannot be trained");
  for (Index h : hidden) {
    if (h < 1) throw std::invalid_argument("hidden widths must be positive");
  }
  constraint_domain.validate();
  if (constraint_domain.lower.size() != 4) {
    throw std::invalid_argument("constraint domain must bound the 4 pendulum states");
  }
  pendulum.validate();
}

std::string TrainConfig::label() const {
  if (model == ModelKind::K1 && constraints) return "k2";
  return model_name(model);
}

nlohmann::json to_json(const TrainConfig& c) {
  return {
      {"model", model_name(c.model)},
      {"constraints", c.constraints},
      {"seed", c.seed},
      {"network", {{"hidden", c.hidden}}},
      {"training",
       {{"rollout_horizon", c.rollout_horizon},
        {"batch_size", c.batch_size},
        {"learning_rate", c.adam.learning_rate},
        {"adam_beta1", c.adam.beta1},
        {"adam_beta2", c.adam.beta2},
        {"adam_epsilon", c.adam.epsilon},
        {"patience", c.patience},
        {"eval_every", c.eval_every},
        {"max_inner_steps", c.max_inner_steps}}},
      {"constraint",
       {{"mu0", c.mu0},
        {"mu_mult", c.mu_mult},
        {"tolerance", c.tolerance},
        {"max_outer_iterations", c.max_outer},
        {"points", c.constraint_points},
        {"batch_size", c.constraint_batch},
        {"eval_points", c.eval_constraint_points},
        {"domain", to_json(c.constraint_domain)}}},
      {"pendulum", to_json(c.pendulum)},
  };
}

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known,
                    const std::string& section) {
  if (!j.is_object()) throw std::invalid_argument("config section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) {
      throw std::invalid_argument("unknown config key '" + (section.empty() ? key : section + "." + key) + "'");
    }
  }
}

template <class V>
void read(const nlohmann::json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

}  // namespace

TrainConfig train_config_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"model", "constraints", "seed", "network", "training", "constraint", "pendulum"}, "");
  TrainConfig c;
  if (j.contains("model")) c.model = model_from_name(j.at("model").get<std::string>());
  read(j, "constraints", c.constraints);
  read(j, "seed", c.seed);
  if (j.contains("network")) {
    const auto& n = j.at("network");
    reject_unknown(n, {"hidden"}, "network");
    read(n, "hidden", c.hidden);
  }
  if (j.contains("training")) {
    const auto& t = j.at("training");
    reject_unknown(t, {"rollout_horizon", "batch_size", "learning_rate", "adam_beta1", "adam_beta2",
                       "adam_epsilon", "patience", "eval_every", "max_inner_steps"},
                   "training");
    read(t, "rollout_horizon", c.rollout_horizon);
    read(t, "batch_size", c.batch_size);
    read(t, "learning_rate", c.adam.learning_rate);
    read(t, "adam_beta1", c.adam.beta1);
    read(t, "adam_beta2", c.adam.beta2);
    read(t, "adam_epsilon", c.adam.epsilon);
    read(t, "patience", c.patience);
    read(t, "eval_every", c.eval_every);
    read(t, "max_inner_steps", c.max_inner_steps);
  }
  if (j.contains("constraint")) {
    const auto& k = j.at("constraint");
    reject_unknown(k, {"mu0", "mu_mult", "tolerance", "max_outer_iterations", "points", "batch_size",
                       "eval_points", "domain"},
                   "constraint");
    read(k, "mu0", c.mu0);
    read(k, "mu_mult", c.mu_mult);
    read(k, "tolerance", c.tolerance);
    read(k, "max_outer_iterations", c.max_outer);
    read(k, "points", c.constraint_points);
    read(k, "batch_size", c.constraint_batch);
    read(k, "eval_points", c.eval_constraint_points);
    if (k.contains("domain")) c.constraint_domain = box_from_json(k.at("domain"));
  }
  if (j.contains("pendulum")) c.pendulum = pendulum_from_json(j.at("pendulum"));
  c.validate();
  return c;
}

// Training -----------------------------------------------------------------------

namespace {
// Independent random streams derived from the run seed.
enum Stream : std::uint64_t { kInit = 0, kBatches = 1, kCollocation = 2, kEvalCollocation = 3 };
}  // namespace

TrainResult train(const TrainConfig& config, const TrajectoryDataset& train_data,
                  const TrajectoryDataset& test_data) {
  config.validate();
  train_data.validate();
  test_data.validate();
  if (train_data.state_dim() != 4 || test_data.state_dim() != 4) {
    throw std::invalid_argument("pendulum training expects 4-wide states");
  }

  VectorField field = make_model(config.model, config.hidden, config.pendulum);
  ParameterSet params = init_parameters(field.specs(), derive_seed(config.seed, kInit));

  const auto train_anchors = admissible_anchors(train_data, config.rollout_horizon);
  const auto test_anchors = admissible_anchors(test_data, config.rollout_horizon);
  if (train_anchors.empty() || test_anchors.empty()) {
    throw std::invalid_argument("trajectories are too short for the rollout horizon");
  }

  // The symmetry program is built for every model with g terms so the
  // violation can be reported; it is only enforced when constraints are on.
  std::optional<ConstraintProgram> program;
  std::optional<CollocationSet> omega;
  if (has_symmetry_terms(config.model)) {
    program = pendulum_symmetry_program(config.model, config.pendulum, config.constraint_domain);
    omega = sample_collocation(*program, config.constraint_points,
                               derive_seed(config.seed, kCollocation));
  }

  Objective objective;
  objective.data_loss = [&](Tape& tape, const NetworkSet<Var>& nets, Rng& rng) {
    const auto batch = sample_anchors(train_anchors, config.batch_size, rng);
    return rollout_loss(tape, field, nets, train_data, batch, config.rollout_horizon);
  };
  objective.validation = [&](const ParameterSet& p, const MultiplierState&) {
    return inf_on_blowup([&] {
      return rollout_loss(field, p.networks(), test_data, test_anchors, config.rollout_horizon);
    });
  };
  objective.constraint_metric = [&](const ParameterSet& p) -> std::optional<double> {
    if (!program) return std::nullopt;
    return constraint_loss(*program, p.networks(), *omega);
  };

  SolverOptions options;
  options.inner.adam = config.adam;
  options.inner.patience = config.patience;
  options.inner.eval_every = config.eval_every;
  options.inner.max_steps = config.max_inner_steps;
  options.mu0 = config.mu0;
  options.mu_mult = config.mu_mult;
  options.tolerance = config.tolerance;
  options.max_outer = config.max_outer;
  options.constraint_batch = config.constraint_batch;

  Rng rng(derive_seed(config.seed, kBatches));
  const ConstraintProgram* enforced = config.constraints ? &*program : nullptr;
  const CollocationSet* enforced_omega = config.constraints ? &*omega : nullptr;
  TrainResult result{minimize_augmented_lagrangian(std::move(params), objective, enforced,
                                                   enforced_omega, options, rng),
                     field};
  return result;
}

double trajectory_rollout_error(const VectorField& field, const NetworkSet<Matrix>& nets,
                                const Trajectory& trajectory, double dt) {
  const Index length = trajectory.states.rows();
  if (length < 2) return 0.0;
  Matrix x = trajectory.states.row(0);
  double total = 0.0;
  const auto f = [&](const Matrix& s, const Matrix& u) { return field(nets, s, u); };
  return inf_on_blowup([&] {
    for (Index t = 1; t < length; ++t) {
      const Matrix u = trajectory.controls.row(t - 1);
      x = rk4_step(f, x, u, dt);
      if (!x.allFinite()) return std::numeric_limits<double>::infinity();
      total += (x - trajectory.states.row(t)).norm();
    }
    return total / static_cast<double>(length - 1);
  });
}

EvalMetrics evaluate(const VectorField& field, ModelKind kind, const ParameterSet& params,
                     const TrajectoryDataset& test_data, Index horizon,
                     const PendulumParams& pendulum, const Box& constraint_domain,
                     Index constraint_points, std::uint64_t constraint_seed) {
  test_data.validate();
  if (test_data.state_dim() != field.state_dim() || test_data.control_dim() != field.control_dim()) {
    throw std::invalid_argument("test data width does not match the model");
  }
  EvalMetrics m;
  const auto anchors = admissible_anchors(test_data, horizon);
  m.testing_loss = inf_on_blowup(
      [&] { return rollout_loss(field, params.networks(), test_data, anchors, horizon); });

  double total = 0.0;
  for (std::size_t t = 0; t < test_data.trajectories.size(); ++t) {
    const double err =
        trajectory_rollout_error(field, params.networks(), test_data.trajectories[t], test_data.dt);
    if (!std::isfinite(err)) m.diverged.push_back(static_cast<Index>(t));
    total += err;
  }
  m.avg_rollout_error = total / static_cast<double>(test_data.trajectories.size());

  if (has_symmetry_terms(kind)) {
    const ConstraintProgram program = pendulum_symmetry_program(kind, pendulum, constraint_domain);
    const CollocationSet omega = sample_collocation(program, constraint_points, constraint_seed);
    m.constraint_loss = constraint_loss(program, params.networks(), omega);
  }
  return m;
}

nlohmann::json eval_to_json(const EvalMetrics& m) {
  const auto num = [](double v) -> nlohmann::json {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json("inf");
  };
  return {{"testing_loss", num(m.testing_loss)},
          {"avg_rollout_error", num(m.avg_rollout_error)},
          {"constraint_loss", m.constraint_loss ? num(*m.constraint_loss) : nlohmann::json(nullptr)},
          {"diverged_trajectories", m.diverged}};
}

// Checkpoints ------------------------------------------------------------------

nlohmann::json checkpoint_to_json(const Checkpoint& c) {
  return {{"format", "pcnn-checkpoint"},
          {"version", 1},
          {"step", c.step},
          {"config", to_json(c.config)},
          {"parameters", parameters_to_json(c.params)},
          {"multipliers",
           c.multipliers ? multipliers_to_json(*c.multipliers) : nlohmann::json(nullptr)}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", "") != "pcnn-checkpoint") {
    throw std::invalid_argument("not a pcnn checkpoint");
  }
  if (j.at("version").get<int>() != 1) throw std::invalid_argument("unsupported checkpoint version");
  Checkpoint c;
  c.step = j.at("step").get<Index>();
  // The true-field pseudo model is not trainable, so bypass validate() for it.
  const auto& cfg = j.at("config");
  if (cfg.value("model", "") == "true") {
    nlohmann::json copy = cfg;
    copy["model"] = "k1";
    copy["constraints"] = false;
    c.config = train_config_from_json(copy);
    c.config.model = ModelKind::True;
  } else {
    c.config = train_config_from_json(cfg);
  }
  c.params = parameters_from_json(j.at("parameters"));
  const auto expected = model_specs(c.config.model, c.config.hidden);
  if (c.params.specs() != expected) {
    throw std::invalid_argument("checkpoint networks do not match model '" +
                                std::string(model_name(c.config.model)) + "'");
  }
  if (!j.at("multipliers").is_null()) c.multipliers = multipliers_from_json(j.at("multipliers"));
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(c).dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  try {
    return checkpoint_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("corrupted checkpoint " + path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error("invalid checkpoint " + path.string() + ": " + e.what());
  }
}

std::string config_hash(const nlohmann::json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace pcnn
