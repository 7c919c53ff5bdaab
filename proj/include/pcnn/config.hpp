#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "pcnn/pendulum.hpp"
#include "pcnn/trainer.hpp"

namespace pcnn {

struct DataConfig {
  std::string train_dir = "data/train";
  std::string test_dir = "data/test";
  Index train_trajectories = 1;
  Index test_trajectories = 10;
  std::uint64_t train_seed = 1;
  std::uint64_t test_seed = 2;
  DatasetOptions options;
};

/// Everything a gen-data / train invocation needs. Relative data paths are
/// resolved against the directory of the config file they were read from.
struct RunConfiguration {
  TrainConfig train;
  DataConfig data;
  std::string output_dir = "runs";
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::filesystem::path base_dir;

  std::filesystem::path train_dir() const;
  std::filesystem::path test_dir() const;
  std::filesystem::path output_path() const;
};

/// Fully-resolved document with every default materialized.
nlohmann::json to_json(const RunConfiguration& c);
RunConfiguration run_config_from_json(const nlohmann::json& j,
                                      const std::filesystem::path& base_dir = {});
RunConfiguration load_run_config(const std::filesystem::path& path);

/// "1,2,3" -> {1, 2, 3}
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

class OutputExistsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Generates the train and test sets. Refuses existing directories unless
/// overwrite is set.
void run_gen_data(const RunConfiguration& config, bool overwrite);

struct RunArtifacts {
  std::filesystem::path dir;
  nlohmann::json summary;
};

/// Trains one seed into <out>/<label>/<seed>/{config.json, metrics.csv,
/// checkpoint.json, summary.json}.
RunArtifacts run_train(const RunConfiguration& config, std::uint64_t seed, bool overwrite);

/// Metrics of a checkpoint on a dataset directory.
EvalMetrics run_eval(const Checkpoint& checkpoint, const std::filesystem::path& data_dir);

/// Checkpoint for the closed-form pendulum field (no parameters).
Checkpoint true_field_checkpoint(const PendulumParams& p = {});

}  // namespace pcnn
