#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "doctest.h"

#include "pcnn/trainer.hpp"

using namespace pcnn;
namespace fs = std::filesystem;

namespace {

// Dataset whose samples are produced by exact RK4 stepping of the true field.
TrajectoryDataset rk4_dataset(Index n_traj, Index points, std::uint64_t seed) {
  const PendulumParams p;
  TrajectoryDataset ds;
  ds.dt = 0.01;
  ds.seed = seed;
  ds.role = DatasetRole::Test;
  ds.initial_box = test_initial_box();
  Rng rng(seed);
  const auto f = [&](const Matrix& x, const Matrix&) { return eval_true_pendulum(x, p); };
  for (Index k = 0; k < n_traj; ++k) {
    Trajectory t;
    t.states.resize(points, 4);
    t.controls.resize(points, 0);
    Matrix x(1, 4);
    for (Index d = 0; d < 4; ++d) {
      x(0, d) = uniform(rng, ds.initial_box.lower(d), ds.initial_box.upper(d));
    }
    for (Index i = 0; i < points; ++i) {
      t.times.push_back(static_cast<double>(i) * ds.dt);
      t.states.row(i) = x;
      x = rk4_step(f, x, Matrix(1, 0), ds.dt);
    }
    ds.trajectories.push_back(t);
  }
  return ds;
}

ParameterSet zero_params(ModelKind kind) { return ParameterSet(model_specs(kind, {8})); }

TrainConfig small_config(ModelKind kind, bool constraints) {
  TrainConfig c;
  c.model = kind;
  c.constraints = constraints;
  c.hidden = {16, 16};
  c.batch_size = 16;
  c.max_inner_steps = 120;
  c.eval_every = 20;
  c.patience = 1000;
  c.max_outer = 2;
  c.constraint_points = 200;
  c.constraint_batch = 32;
  c.eval_constraint_points = 200;
  c.seed = 5;
  return c;
}

std::string csv_of(const MetricsLog& log) {
  std::ostringstream out;
  log.write_csv(out);
  return out.str();
}

}  // namespace

TEST_CASE("Adam: first step moves each coordinate by the learning rate") {
  Adam adam(3, AdamOptions{0.1, 0.9, 0.999, 1e-8});
  Vector p = Vector::Zero(3);
  Vector g(3);
  g << 2.0, -0.5, 1e-3;
  adam.step(p, g);
  CHECK(p(0) == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(p(1) == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(p(2) == doctest::Approx(-0.1).epsilon(1e-4));
}

TEST_CASE("Adam: two steps agree with the bias-corrected recursion") {
  const AdamOptions o{0.01, 0.9, 0.999, 1e-8};
  Adam adam(1, o);
  Vector p = Vector::Constant(1, 1.0);
  adam.step(p, Vector::Constant(1, 3.0));
  adam.step(p, Vector::Constant(1, 1.0));
  const double m = 0.9 * (0.1 * 3.0) + 0.1 * 1.0;
  const double v = 0.999 * (0.001 * 9.0) + 0.001 * 1.0;
  const double first = 0.01 * 3.0 / (3.0 + 1e-8);
  const double second = 0.01 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
  CHECK(p(0) == doctest::Approx(1.0 - first - second).epsilon(1e-12));
  adam.reset();
  CHECK(adam.iterations() == 0);
}

TEST_CASE("admissible anchors leave room for the horizon") {
  const TrajectoryDataset ds = rk4_dataset(10, 300, 1);
  const auto anchors = admissible_anchors(ds, 5);
  CHECK(anchors.size() == 10 * 294);
  for (const Anchor& a : anchors) CHECK(a.start + 5 + 1 <= 299);
  const TrajectoryDataset tiny = rk4_dataset(1, 5, 1);
  CHECK(admissible_anchors(tiny, 5).empty());
  Rng rng(1);
  CHECK_THROWS_AS(sample_anchors({}, 4, rng), std::invalid_argument);
}

TEST_CASE("rollout loss of the true field on its own RK4 data is zero") {
  const TrajectoryDataset ds = rk4_dataset(3, 100, 2);
  const VectorField truth = make_model(ModelKind::True, {}, PendulumParams{});
  const auto anchors = admissible_anchors(ds, 5);
  CHECK(rollout_loss(truth, {}, ds, anchors, 5) < 1e-16);
}

TEST_CASE("rollout loss with horizon 1 equals a hand-unrolled two-step error") {
  const TrajectoryDataset ds = rk4_dataset(2, 50, 3);
  const VectorField field = make_model(ModelKind::K1, {8}, PendulumParams{});
  const ParameterSet params = init_parameters(field.specs(), 3);
  const std::vector<Anchor> anchors{{0, 4}, {1, 10}, {0, 30}};
  const auto f = [&](const Matrix& x, const Matrix& u) { return field(params.networks(), x, u); };
  double expected = 0.0;
  for (const Anchor& a : anchors) {
    const Matrix& s = ds.trajectories[a.trajectory].states;
    const Matrix x1 = rk4_step(f, Matrix(s.row(a.start)), Matrix(1, 0), 0.01);
    const Matrix x2 = rk4_step(f, x1, Matrix(1, 0), 0.01);
    expected += (x1 - s.row(a.start + 1)).squaredNorm() + (x2 - s.row(a.start + 2)).squaredNorm();
  }
  expected /= 3.0;
  CHECK(rollout_loss(field, params.networks(), ds, anchors, 1) ==
        doctest::Approx(expected).epsilon(1e-13));
}

TEST_CASE("rollout loss of a frozen predictor is the displacement from the anchor") {
  const TrajectoryDataset ds = rk4_dataset(2, 60, 4);
  const VectorField field = make_model(ModelKind::Baseline, {8}, PendulumParams{});
  const auto anchors = admissible_anchors(ds, 5);
  double expected = 0.0;
  for (const Anchor& a : anchors) {
    const Matrix& s = ds.trajectories[a.trajectory].states;
    for (Index j = 1; j <= 6; ++j) expected += (s.row(a.start + j) - s.row(a.start)).squaredNorm();
  }
  expected /= static_cast<double>(anchors.size());
  CHECK(rollout_loss(field, zero_params(ModelKind::Baseline).networks(), ds, anchors, 5) ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("taped rollout loss matches the numeric one and its gradient checks out") {
  const TrajectoryDataset ds = rk4_dataset(1, 40, 5);
  const VectorField field = make_model(ModelKind::K1, {6}, PendulumParams{});
  const ParameterSet params = init_parameters(field.specs(), 6);
  const std::vector<Anchor> anchors{{0, 0}, {0, 7}, {0, 20}};
  Tape tape;
  const auto nets = params.bind(tape);
  const Var loss = rollout_loss(tape, field, nets, ds, anchors, 3);
  CHECK(loss.value()(0, 0) ==
        doctest::Approx(rollout_loss(field, params.networks(), ds, anchors, 3)).epsilon(1e-13));

  std::vector<Matrix> point;
  for (const auto& net : params.networks()) {
    for (const auto& layer : net) {
      point.push_back(layer.weight);
      point.push_back(layer.bias);
    }
  }
  const double err = gradient_check(
      [&](Tape& t, const std::vector<Var>& in) {
        const NetworkSet<Var> bound{{{in[0], in[1]}, {in[2], in[3]}}, {{in[4], in[5]}, {in[6], in[7]}}};
        return rollout_loss(t, field, bound, ds, anchors, 3);
      },
      point, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("evaluation of the true and frozen fields") {
  const PendulumParams p;
  const TrajectoryDataset ds = generate_dataset(DatasetRole::Test, 3, 11, p);

  const EvalMetrics truth = evaluate(make_model(ModelKind::True, {}, p), ModelKind::True,
                                     ParameterSet(std::vector<MlpSpec>{}), ds, 5, p,
                                     default_symmetry_domain(), 500, 1);
  CHECK(truth.avg_rollout_error < 1e-6);
  REQUIRE(truth.constraint_loss.has_value());
  CHECK(*truth.constraint_loss < 1e-12);
  CHECK(truth.diverged.empty());

  const EvalMetrics frozen = evaluate(make_model(ModelKind::Baseline, {8}, p), ModelKind::Baseline,
                                      zero_params(ModelKind::Baseline), ds, 5, p,
                                      default_symmetry_domain(), 500, 1);
  double expected = 0.0;
  for (const auto& t : ds.trajectories) {
    double sum = 0.0;
    for (Index i = 1; i < t.states.rows(); ++i) sum += (t.states.row(i) - t.states.row(0)).norm();
    expected += sum / static_cast<double>(t.states.rows() - 1);
  }
  expected /= 3.0;
  CHECK(frozen.avg_rollout_error == doctest::Approx(expected).epsilon(1e-12));
  CHECK_FALSE(frozen.constraint_loss.has_value());
}

TEST_CASE("diverging rollouts are recorded as infinite and flagged") {
  const PendulumParams p;
  const TrajectoryDataset ds = generate_dataset(DatasetRole::Test, 2, 3, p);
  const VectorField blowup("blowup", {}, 4, 0, [](const auto&, const auto& x, const auto&) {
    return 1e4 * square(shift(x, 1.0));
  });
  const EvalMetrics m = evaluate(blowup, ModelKind::Baseline, ParameterSet(std::vector<MlpSpec>{}),
                                 ds, 5, p, default_symmetry_domain(), 10, 1);
  CHECK(std::isinf(m.avg_rollout_error));
  CHECK(m.diverged.size() == 2);
  CHECK(eval_to_json(m)["avg_rollout_error"] == "inf");
}

TEST_CASE("early stopping with patience 1 stops within two evaluation intervals") {
  const TrajectoryDataset train_data = rk4_dataset(1, 300, 7);
  const TrajectoryDataset test_data = rk4_dataset(2, 300, 8);
  TrainConfig c = small_config(ModelKind::Baseline, false);
  c.patience = 1;
  c.max_inner_steps = 500;
  const TrainResult r = train(c, train_data, test_data);
  CHECK(r.solve.log.steps.back().step <= 2 * c.eval_every);
}

TEST_CASE("early stopping returns the best validated parameters") {
  // Validation score is the distance of theta from 0.5 while the data loss
  // pulls theta towards 2, so the best checkpoint is found early.
  Objective obj;
  obj.data_loss = [](Tape& tape, const NetworkSet<Var>& nets, Rng&) {
    return square(shift(mlp_forward(nets, 0, tape.constant(Matrix::Zero(1, 1))), -2.0));
  };
  std::vector<double> seen;
  obj.validation = [&](const ParameterSet& p, const MultiplierState&) {
    const double th = p.networks()[0][0].bias(0, 0);
    seen.push_back(th);
    return std::abs(th - 0.5);
  };
  SolverOptions opt;
  opt.inner.adam.learning_rate = 0.05;
  opt.inner.eval_every = 1;
  opt.inner.patience = 30;
  opt.inner.max_steps = 200;
  Rng rng(0);
  const SolveResult r = minimize_augmented_lagrangian(
      ParameterSet({MlpSpec{1, 1, {}, Activation::Relu}}), obj, nullptr, nullptr, opt, rng);
  double best = std::numeric_limits<double>::infinity();
  for (double th : seen) best = std::min(best, std::abs(th - 0.5));
  CHECK(std::abs(r.params.networks()[0][0].bias(0, 0) - 0.5) == best);
  CHECK(r.log.steps.back().step < 200);
}

TEST_CASE("non-finite loss aborts and keeps the last good parameters") {
  Objective obj;
  int calls = 0;
  obj.data_loss = [&](Tape& tape, const NetworkSet<Var>& nets, Rng&) {
    const Var th = mlp_forward(nets, 0, tape.constant(Matrix::Zero(1, 1)));
    if (++calls == 5) return tape.constant(std::numeric_limits<double>::quiet_NaN());
    return square(shift(th, -2.0));
  };
  obj.validation = [](const ParameterSet& p, const MultiplierState&) {
    return std::abs(p.networks()[0][0].bias(0, 0) - 2.0);
  };
  SolverOptions opt;
  opt.inner.eval_every = 1;
  Rng rng(0);
  const SolveResult r = minimize_augmented_lagrangian(
      ParameterSet({MlpSpec{1, 1, {}, Activation::Relu}}), obj, nullptr, nullptr, opt, rng);
  CHECK(r.aborted);
  CHECK(r.abort_reason.find("non-finite") != std::string::npos);
  CHECK(r.params.flatten().allFinite());
  CHECK(r.log.steps.back().step == 4);
}

TEST_CASE("an inner loop keeps its own best evaluation even if the start scored better") {
  Objective obj;
  obj.data_loss = [](Tape& tape, const NetworkSet<Var>& nets, Rng&) {
    return square(shift(mlp_forward(nets, 0, tape.constant(Matrix::Zero(1, 1))), -2.0));
  };
  int calls = 0;
  obj.validation = [&](const ParameterSet&, const MultiplierState&) { return ++calls; };
  SolverOptions opt;
  opt.inner.adam.learning_rate = 0.01;
  opt.inner.eval_every = 5;
  opt.inner.patience = 10;
  Rng rng(0);
  const SolveResult r = minimize_augmented_lagrangian(
      ParameterSet({MlpSpec{1, 1, {}, Activation::Relu}}), obj, nullptr, nullptr, opt, rng);
  CHECK(r.log.steps.back().step == 15);
  // Five Adam steps of size ~lr towards 2.
  CHECK(r.params.networks()[0][0].bias(0, 0) == doctest::Approx(0.05).epsilon(1e-3));
}

TEST_CASE("a field that blows up mid-rollout aborts training") {
  Objective obj;
  int calls = 0;
  obj.data_loss = [&](Tape& tape, const NetworkSet<Var>& nets, Rng&) {
    const Var th = mlp_forward(nets, 0, tape.constant(Matrix::Zero(1, 1)));
    if (++calls == 3) throw NonFiniteFieldError(2);
    return square(shift(th, -2.0));
  };
  obj.validation = [](const ParameterSet&, const MultiplierState&) { return 1.0; };
  SolverOptions opt;
  Rng rng(0);
  const SolveResult r = minimize_augmented_lagrangian(
      ParameterSet({MlpSpec{1, 1, {}, Activation::Relu}}), obj, nullptr, nullptr, opt, rng);
  CHECK(r.aborted);
  CHECK(r.abort_reason == "non-finite loss at step 3");
}

TEST_CASE("training is deterministic per seed") {
  const TrajectoryDataset train_data = rk4_dataset(1, 300, 7);
  const TrajectoryDataset test_data = rk4_dataset(2, 300, 8);
  const TrainConfig c = small_config(ModelKind::K1, true);
  const TrainResult a = train(c, train_data, test_data);
  const TrainResult b = train(c, train_data, test_data);
  CHECK(csv_of(a.solve.log) == csv_of(b.solve.log));
  CHECK(a.solve.params == b.solve.params);
  TrainConfig other = c;
  other.seed = 6;
  CHECK(csv_of(train(other, train_data, test_data).solve.log) != csv_of(a.solve.log));
}

TEST_CASE("metrics log shape") {
  const TrajectoryDataset train_data = rk4_dataset(1, 300, 7);
  const TrajectoryDataset test_data = rk4_dataset(2, 300, 8);
  const TrainConfig c = small_config(ModelKind::K1, true);
  const TrainResult r = train(c, train_data, test_data);
  const MetricsLog& log = r.solve.log;
  for (std::size_t i = 1; i < log.steps.size(); ++i) CHECK(log.steps[i].step > log.steps[i - 1].step);
  CHECK(log.steps.front().test_loss.has_value());
  CHECK(std::isfinite(log.steps.front().train_loss));
  CHECK(log.steps[c.eval_every].test_loss.has_value());
  CHECK_FALSE(log.steps[1].test_loss.has_value());
  CHECK(log.outer.size() == static_cast<std::size_t>(r.solve.outer_iterations));
  CHECK(log.outer.back().mu == doctest::Approx(c.mu0 * std::pow(c.mu_mult, r.solve.outer_iterations)));

  const std::string csv = csv_of(log);
  CHECK(csv.rfind("step,train_loss,test_loss,constraint_loss,mu\n", 0) == 0);
  CHECK(csv.find("\n1,") != std::string::npos);
  CHECK(csv.find(",,,") != std::string::npos);
  CHECK(r.solve.cap_hit == !r.solve.converged);
}

TEST_CASE("train config validation and json") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.label() == "k1");
  c.constraints = true;
  CHECK(c.label() == "k2");
  const TrainConfig back = train_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));

  TrainConfig bad;
  bad.rollout_horizon = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = TrainConfig{};
  bad.model = ModelKind::Baseline;
  bad.constraints = true;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = TrainConfig{};
  bad.adam.learning_rate = -1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  CHECK_THROWS_AS(train_config_from_json({{"modle", "k1"}}), std::invalid_argument);
  CHECK_THROWS_AS(train_config_from_json({{"training", {{"batchsize", 3}}}}), std::invalid_argument);
  CHECK(train_config_from_json({{"training", {{"batch_size", 3}}}}).batch_size == 3);
}

TEST_CASE("checkpoints round trip and reject corruption") {
  Checkpoint ck;
  ck.config = small_config(ModelKind::K1, false);
  ck.params = init_parameters(model_specs(ModelKind::K1, ck.config.hidden), 1);
  ck.step = 42;
  const fs::path path = fs::temp_directory_path() / "pcnn_test_checkpoint.json";
  save_checkpoint(ck, path);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.params == ck.params);
  CHECK(back.step == 42);
  CHECK(to_json(back.config) == to_json(ck.config));

  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "{\"format\": \"pcnn-checkpoint\", \"version\": 1, \"step\": ";
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("corrupted"), std::runtime_error);

  nlohmann::json j = checkpoint_to_json(ck);
  j["config"]["model"] = "baseline";
  CHECK_THROWS(checkpoint_from_json(j));
  fs::remove(path);
}

TEST_CASE("config hash is stable and sensitive") {
  const nlohmann::json a = to_json(TrainConfig{});
  TrainConfig other;
  other.batch_size = 65;
  CHECK(config_hash(a) == config_hash(to_json(TrainConfig{})));
  CHECK(config_hash(a) != config_hash(to_json(other)));
  CHECK(config_hash(a).size() == 16);
}
