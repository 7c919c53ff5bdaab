#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Workspace {
  fs::path dir;
  Workspace() {
    static int counter = 0;
    dir = fs::temp_directory_path() /
          ("pcnn_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(dir);
    fs::create_directories(dir);
    json c = {{"model", "k1"},
              {"constraints", true},
              {"seeds", {0}},
              {"network", {{"hidden", {8, 8}}}},
              {"training", {{"max_inner_steps", 20}, {"eval_every", 10}, {"batch_size", 16}}},
              {"constraint", {{"points", 50}, {"batch_size", 16}, {"eval_points", 50},
                              {"max_outer_iterations", 1}}}};
    write("config.json", c.dump(2));
  }
  ~Workspace() { fs::remove_all(dir); }

  void write(const std::string& name, const std::string& text) const {
    std::ofstream(dir / name, std::ios::binary) << text;
  }

  int run(const std::string& args) const {
    const std::string cmd = "cd \"" + dir.string() + "\" && \"" PCNN_CLI "\" " + args +
                            " > out.txt 2> err.txt";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string read(const fs::path& rel) const {
    std::ifstream f(dir / rel, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
  }

  json read_json(const fs::path& rel) const { return json::parse(read(rel)); }
};

std::size_t lines(const std::string& text) {
  std::size_t n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("gen-data writes the train and test sets and refuses to overwrite") {
  Workspace w;
  REQUIRE(w.run("gen-data --config config.json") == 0);
  std::size_t train = 0, test = 0;
  for (const auto& e : fs::directory_iterator(w.dir / "data/train")) {
    if (e.path().extension() == ".csv") {
      ++train;
      CHECK(lines(w.read(fs::relative(e.path(), w.dir))) == 301);
    }
  }
  for (const auto& e : fs::directory_iterator(w.dir / "data/test")) {
    test += e.path().extension() == ".csv";
  }
  CHECK(train == 1);
  CHECK(test == 10);

  const std::string before = w.read("data/test/traj_000.csv");
  CHECK(w.run("gen-data --config config.json") != 0);
  CHECK(w.read("err.txt").find("--overwrite") != std::string::npos);
  REQUIRE(w.run("gen-data --config config.json --overwrite") == 0);
  CHECK(w.read("data/test/traj_000.csv") == before);
}

TEST_CASE("train writes one directory per seed and reruns are byte-identical") {
  Workspace w;
  REQUIRE(w.run("gen-data --config config.json") == 0);
  REQUIRE(w.run("train --config config.json --seed 0,1,2 --out runs") == 0);
  for (int seed : {0, 1, 2}) {
    const fs::path run = fs::path("runs/k2") / std::to_string(seed);
    for (const char* f : {"config.json", "metrics.csv", "checkpoint.json", "summary.json"}) {
      CHECK(fs::exists(w.dir / run / f));
    }
    const json s = w.read_json(run / "summary.json");
    CHECK(s["seed"] == seed);
    CHECK(s["model"] == "k2");
    CHECK(s["constraint_loss"].is_number());
  }
  CHECK(lines(w.read("out.txt")) == 3);

  const std::string metrics = w.read("runs/k2/0/metrics.csv");
  CHECK(metrics.rfind("step,train_loss,test_loss,constraint_loss,mu\n", 0) == 0);
  CHECK(w.run("train --config config.json --seed 0 --out runs") != 0);
  REQUIRE(w.run("train --config config.json --seed 0 --out runs --overwrite") == 0);
  CHECK(w.read("runs/k2/0/metrics.csv") == metrics);
}

TEST_CASE("baseline summaries have no constraint loss") {
  Workspace w;
  REQUIRE(w.run("gen-data --config config.json") == 0);
  w.write("baseline.json", json{{"model", "baseline"},
                                {"network", {{"hidden", {8}}}},
                                {"training", {{"max_inner_steps", 10}, {"eval_every", 5}}}}
                               .dump());
  REQUIRE(w.run("train --config baseline.json --seed 4 --out runs") == 0);
  const json s = w.read_json("runs/baseline/4/summary.json");
  CHECK(s["constraint_loss"].is_null());
  CHECK(s["outer_iterations"] == 0);
}

TEST_CASE("eval of the exact field and of a trained checkpoint") {
  Workspace w;
  REQUIRE(w.run("gen-data --config config.json") == 0);
  REQUIRE(w.run("eval --checkpoint true --config config.json --out true.json") == 0);
  const json t = w.read_json("true.json");
  CHECK(t["testing_loss"].get<double>() < 1e-6);
  CHECK(t["constraint_loss"].get<double>() < 1e-12);
  CHECK(w.run("eval --checkpoint true --config config.json --out true.json") != 0);

  REQUIRE(w.run("train --config config.json --out runs") == 0);
  REQUIRE(w.run("eval --checkpoint runs/k2/0/checkpoint.json --data data/test") == 0);
  const json e = json::parse(w.read("out.txt"));
  CHECK(e["testing_loss"].get<double>() ==
        doctest::Approx(w.read_json("runs/k2/0/summary.json")["testing_loss"].get<double>()));
}

TEST_CASE("error paths exit nonzero with a message") {
  Workspace w;
  SUBCASE("training without a dataset names the missing manifest") {
    CHECK(w.run("train --config config.json --out runs") != 0);
    CHECK(w.read("err.txt").find("manifest.json") != std::string::npos);
  }
  SUBCASE("corrupted checkpoint") {
    REQUIRE(w.run("gen-data --config config.json") == 0);
    REQUIRE(w.run("train --config config.json --out runs") == 0);
    std::string ck = w.read("runs/k2/0/checkpoint.json");
    ck.resize(ck.size() / 2);
    w.write("broken.json", ck);
    CHECK(w.run("eval --checkpoint broken.json --config config.json") != 0);
    CHECK(w.read("err.txt").find("checkpoint") != std::string::npos);
  }
  SUBCASE("unknown configuration key") {
    w.write("typo.json", R"({"model": "k1", "trainig": {}})");
    CHECK(w.run("train --config typo.json --out runs") != 0);
    CHECK(w.read("err.txt").find("trainig") != std::string::npos);
  }
  SUBCASE("unknown model") {
    w.write("bad.json", R"({"model": "k7"})");
    CHECK(w.run("train --config bad.json --out runs") != 0);
  }
}
