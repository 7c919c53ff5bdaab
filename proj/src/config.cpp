#include "pcnn/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace pcnn {

namespace fs = std::filesystem;

fs::path RunConfiguration::train_dir() const { return base_dir / data.train_dir; }
fs::path RunConfiguration::test_dir() const { return base_dir / data.test_dir; }
fs::path RunConfiguration::output_path() const { return base_dir / output_dir; }

nlohmann::json to_json(const RunConfiguration& c) {
  nlohmann::json j = to_json(c.train);
  j.erase("seed");
  j["seeds"] = c.seeds;
  j["output_dir"] = c.output_dir;
  j["data"] = {{"train_dir", c.data.train_dir},
               {"test_dir", c.data.test_dir},
               {"train_trajectories", c.data.train_trajectories},
               {"test_trajectories", c.data.test_trajectories},
               {"train_seed", c.data.train_seed},
               {"test_seed", c.data.test_seed},
               {"points", c.data.options.points},
               {"dt", c.data.options.dt},
               {"rtol", c.data.options.rtol},
               {"atol", c.data.options.atol}};
  return j;
}

RunConfiguration run_config_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw std::invalid_argument("run configuration must be a JSON object");
  RunConfiguration c;
  c.base_dir = base_dir;
  nlohmann::json train = j;
  if (j.contains("seed")) throw std::invalid_argument("unknown config key 'seed' (use 'seeds')");
  if (j.contains("seeds")) {
    c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    train.erase("seeds");
  }
  if (j.contains("output_dir")) {
    c.output_dir = j.at("output_dir").get<std::string>();
    train.erase("output_dir");
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    static const std::set<std::string> known = {"train_dir", "test_dir", "train_trajectories",
                                                "test_trajectories", "train_seed", "test_seed",
                                                "points", "dt", "rtol", "atol"};
    if (!d.is_object()) throw std::invalid_argument("config section 'data' must be an object");
    for (const auto& [key, value] : d.items()) {
      if (!known.count(key)) throw std::invalid_argument("unknown config key 'data." + key + "'");
    }
    c.data.train_dir = d.value("train_dir", c.data.train_dir);
    c.data.test_dir = d.value("test_dir", c.data.test_dir);
    c.data.train_trajectories = d.value("train_trajectories", c.data.train_trajectories);
    c.data.test_trajectories = d.value("test_trajectories", c.data.test_trajectories);
    c.data.train_seed = d.value("train_seed", c.data.train_seed);
    c.data.test_seed = d.value("test_seed", c.data.test_seed);
    c.data.options.points = d.value("points", c.data.options.points);
    c.data.options.dt = d.value("dt", c.data.options.dt);
    c.data.options.rtol = d.value("rtol", c.data.options.rtol);
    c.data.options.atol = d.value("atol", c.data.options.atol);
    train.erase("data");
  }
  c.train = train_config_from_json(train);
  if (c.seeds.empty()) throw std::invalid_argument("seeds must list at least one seed");
  if (c.data.train_trajectories < 1 || c.data.test_trajectories < 1) {
    throw std::invalid_argument("trajectory counts must be >= 1");
  }
  if (c.data.options.points < 2 || !(c.data.options.dt > 0)) {
    throw std::invalid_argument("data.points must be >= 2 and data.dt positive");
  }
  return c;
}

RunConfiguration load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("cannot parse config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos) {
      throw std::invalid_argument("bad seed '" + item + "' in seed list '" + text + "'");
    }
    seeds.push_back(std::stoull(item));
  }
  if (seeds.empty()) throw std::invalid_argument("empty seed list");
  return seeds;
}

namespace {

void prepare_dir(const fs::path& dir, bool overwrite) {
  if (fs::exists(dir)) {
    if (!overwrite) {
      throw OutputExistsError(dir.string() + " already exists (pass --overwrite to replace it)");
    }
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

TrajectoryDataset load_required(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) {
    throw std::runtime_error("dataset not found: expected " + (dir / "manifest.json").string() +
                             " (run gen-data first)");
  }
  return load_dataset(dir);
}

nlohmann::json optional_number(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

void run_gen_data(const RunConfiguration& config, bool overwrite) {
  for (const fs::path& dir : {config.train_dir(), config.test_dir()}) {
    if (fs::exists(dir) && !overwrite) {
      throw OutputExistsError(dir.string() + " already exists (pass --overwrite to replace it)");
    }
  }
  const auto write = [&](DatasetRole role, Index n, std::uint64_t seed, const fs::path& dir) {
    prepare_dir(dir, true);
    save_dataset(generate_dataset(role, n, seed, config.train.pendulum, config.data.options), dir);
  };
  write(DatasetRole::Train, config.data.train_trajectories, config.data.train_seed,
        config.train_dir());
  write(DatasetRole::Test, config.data.test_trajectories, config.data.test_seed, config.test_dir());
}

RunArtifacts run_train(const RunConfiguration& config, std::uint64_t seed, bool overwrite) {
  const TrajectoryDataset train_data = load_required(config.train_dir());
  const TrajectoryDataset test_data = load_required(config.test_dir());

  TrainConfig tc = config.train;
  tc.seed = seed;
  RunArtifacts art;
  art.dir = config.output_path() / tc.label() / std::to_string(seed);
  prepare_dir(art.dir, overwrite);

  RunConfiguration resolved = config;
  resolved.seeds = {seed};
  const nlohmann::json resolved_json = to_json(resolved);
  write_json(art.dir / "config.json", resolved_json);

  const TrainResult result = train(tc, train_data, test_data);
  const SolveResult& solve = result.solve;
  {
    std::ofstream out(art.dir / "metrics.csv", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (art.dir / "metrics.csv").string());
    solve.log.write_csv(out);
  }

  Checkpoint ck;
  ck.config = tc;
  ck.params = solve.params;
  if (tc.constraints) ck.multipliers = solve.multipliers;
  ck.step = solve.log.steps.empty() ? 0 : solve.log.steps.back().step;
  save_checkpoint(ck, art.dir / "checkpoint.json");

  const EvalMetrics m =
      evaluate(result.field, tc.model, solve.params, test_data, tc.rollout_horizon, tc.pendulum,
               tc.constraint_domain, tc.eval_constraint_points, derive_seed(seed, 3));

  nlohmann::json outer = nlohmann::json::array();
  for (const OuterRecord& r : solve.log.outer) {
    outer.push_back({{"iteration", r.iteration},
                     {"step", r.step},
                     {"constraint_loss", r.constraint_loss},
                     {"mu", r.mu},
                     {"lambda_norms", r.lambda_norms}});
  }
  art.summary = eval_to_json(m);
  art.summary["model"] = tc.label();
  art.summary["seed"] = seed;
  art.summary["config_hash"] = config_hash(resolved_json);
  art.summary["steps"] = ck.step;
  art.summary["outer_iterations"] = solve.outer_iterations;
  art.summary["training_constraint_loss"] = optional_number(solve.final_constraint_loss);
  art.summary["converged"] = solve.converged;
  art.summary["cap_hit"] = solve.cap_hit;
  art.summary["aborted"] = solve.aborted;
  art.summary["abort_reason"] = solve.abort_reason;
  art.summary["outer"] = outer;
  write_json(art.dir / "summary.json", art.summary);
  return art;
}

EvalMetrics run_eval(const Checkpoint& checkpoint, const fs::path& data_dir) {
  const TrajectoryDataset data = load_required(data_dir);
  const TrainConfig& tc = checkpoint.config;
  const VectorField field = make_model(tc.model, tc.hidden, tc.pendulum);
  if (data.state_dim() != field.state_dim() || data.control_dim() != field.control_dim()) {
    throw std::invalid_argument("dataset state width " + std::to_string(data.state_dim()) +
                                " does not match model '" + model_name(tc.model) + "' width " +
                                std::to_string(field.state_dim()));
  }
  return evaluate(field, tc.model, checkpoint.params, data, tc.rollout_horizon, tc.pendulum,
                  tc.constraint_domain, tc.eval_constraint_points, derive_seed(tc.seed, 3));
}

Checkpoint true_field_checkpoint(const PendulumParams& p) {
  Checkpoint ck;
  ck.config.model = ModelKind::True;
  ck.config.pendulum = p;
  ck.params = ParameterSet(std::vector<MlpSpec>{});
  return ck;
}

}  // namespace pcnn
