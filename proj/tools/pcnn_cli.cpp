#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "pcnn/config.hpp"

namespace fs = std::filesystem;

namespace {

pcnn::RunConfiguration resolve(const std::string& config_path, const std::string& out,
                               const std::string& seeds) {
  pcnn::RunConfiguration c = config_path.empty() ? pcnn::RunConfiguration{}
                                                 : pcnn::load_run_config(config_path);
  if (!out.empty()) c.output_dir = fs::absolute(out).string();
  if (!seeds.empty()) c.seeds = pcnn::parse_seed_list(seeds);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pcnn: physics-constrained neural ODE models of dynamical systems"};
  app.require_subcommand(1);

  std::string config_path, out, seeds, checkpoint_path, data_dir;
  bool overwrite = false;

  auto* gen = app.add_subcommand("gen-data", "generate train and test trajectory datasets");
  gen->add_option("--config", config_path, "run configuration (JSON)");
  gen->add_flag("--overwrite", overwrite, "replace existing dataset directories");

  auto* tr = app.add_subcommand("train", "train one model per seed");
  tr->add_option("--config", config_path, "run configuration (JSON)");
  tr->add_option("--out", out, "output directory (overrides output_dir)");
  tr->add_option("--seed", seeds, "comma-separated seed list (overrides seeds)");
  tr->add_flag("--overwrite", overwrite, "replace existing run directories");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  ev->add_option("--checkpoint", checkpoint_path, "checkpoint.json, or 'true' for the exact field")
      ->required();
  ev->add_option("--data", data_dir, "dataset directory (default: the config's test set)");
  ev->add_option("--config", config_path, "run configuration (JSON)");
  ev->add_option("--out", out, "write metrics JSON to this file");
  ev->add_flag("--overwrite", overwrite, "replace an existing metrics file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const auto c = resolve(config_path, "", "");
      pcnn::run_gen_data(c, overwrite);
      std::cout << "wrote " << c.train_dir().string() << " and " << c.test_dir().string() << "\n";
    } else if (tr->parsed()) {
      const auto c = resolve(config_path, out, seeds);
      for (std::uint64_t seed : c.seeds) {
        const auto art = pcnn::run_train(c, seed, overwrite);
        std::cout << art.dir.string() << ": testing_loss " << art.summary["testing_loss"]
                  << ", constraint_loss " << art.summary["constraint_loss"];
        if (art.summary["cap_hit"].get<bool>()) std::cout << " (outer cap hit)";
        if (art.summary["aborted"].get<bool>()) {
          std::cout << " (aborted: " << art.summary["abort_reason"].get<std::string>() << ")";
        }
        std::cout << "\n";
      }
    } else if (ev->parsed()) {
      const auto c = resolve(config_path, "", "");
      const pcnn::Checkpoint ck = checkpoint_path == "true"
                                      ? pcnn::true_field_checkpoint(c.train.pendulum)
                                      : pcnn::load_checkpoint(checkpoint_path);
      const fs::path data = data_dir.empty() ? c.test_dir() : fs::path(data_dir);
      const nlohmann::json metrics = pcnn::eval_to_json(pcnn::run_eval(ck, data));
      std::cout << metrics.dump(2) << "\n";
      if (!out.empty()) {
        if (fs::exists(out) && !overwrite) {
          throw pcnn::OutputExistsError(out + " already exists (pass --overwrite to replace it)");
        }
        std::ofstream f(out, std::ios::binary);
        f << metrics.dump(2) << '\n';
        if (!f) throw std::runtime_error("cannot write " + out);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
