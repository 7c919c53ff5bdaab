#include "pcnn/pendulum.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "pcnn/odeint.hpp"
#include "pcnn/random.hpp"

namespace pcnn {

void PendulumParams::validate() const {
  if (!(m1 > 0 && m2 > 0 && l1 > 0 && l2 > 0 && g > 0)) {
    throw std::invalid_argument("pendulum masses, lengths and gravity must be positive");
  }
}

nlohmann::json to_json(const PendulumParams& p) {
  return {{"m1", p.m1}, {"m2", p.m2}, {"l1", p.l1}, {"l2", p.l2}, {"g", p.g}};
}

PendulumParams pendulum_from_json(const nlohmann::json& j) {
  PendulumParams p;
  for (const auto& [key, value] : j.items()) {
    if (key == "m1") p.m1 = value.get<double>();
    else if (key == "m2") p.m2 = value.get<double>();
    else if (key == "l1") p.l1 = value.get<double>();
    else if (key == "l2") p.l2 = value.get<double>();
    else if (key == "g") p.g = value.get<double>();
    else throw std::invalid_argument("unknown pendulum key '" + key + "'");
  }
  p.validate();
  return p;
}

double true_g1(const Vector& x, const PendulumParams& p) {
  return -(p.l1 / p.l2) * (p.m2 / (p.m1 + p.m2)) * x(3) * x(3) * std::sin(x(0) - x(1)) -
         (p.g / p.l1) * std::sin(x(0));
}

double true_g2(const Vector& x, const PendulumParams& p) {
  return (p.l1 / p.l2) * x(2) * x(2) * std::sin(x(0) - x(1)) - (p.g / p.l2) * std::sin(x(1));
}

Vector true_field(const Vector& x, const PendulumParams& p) {
  if (x.size() != 4) throw std::invalid_argument("pendulum state must have 4 components");
  const double a1 = (p.l1 / p.l2) * (p.m1 / (p.m1 + p.m2)) * std::cos(x(0) - x(1));
  const double a2 = (p.l1 / p.l2) * std::cos(x(0) - x(1));
  const double den = 1.0 - a1 * a2;
  if (std::abs(den) < kSingularTolerance) {
    throw SingularMassMatrixError("double pendulum denominator 1 - a1*a2 vanishes");
  }
  const double g1 = true_g1(x, p);
  const double g2 = true_g2(x, p);
  Vector dx(4);
  dx << x(2), x(3), (g1 - a1 * g2) / den, (-a2 * g1 + g2) / den;
  return dx;
}

double energy(const Vector& x, const PendulumParams& p) {
  const double y1 = -p.l1 * std::cos(x(0));
  const double y2 = y1 - p.l2 * std::cos(x(1));
  const double kinetic =
      0.5 * p.m1 * p.l1 * p.l1 * x(2) * x(2) +
      0.5 * p.m2 *
          (p.l1 * p.l1 * x(2) * x(2) + p.l2 * p.l2 * x(3) * x(3) +
           2.0 * p.l1 * p.l2 * x(2) * x(3) * std::cos(x(0) - x(1)));
  const double potential = p.m1 * p.g * y1 + p.m2 * p.g * y2;
  return kinetic + potential;
}

const char* role_name(DatasetRole role) { return role == DatasetRole::Train ? "train" : "test"; }

DatasetRole role_from_name(const std::string& name) {
  if (name == "train") return DatasetRole::Train;
  if (name == "test") return DatasetRole::Test;
  throw std::invalid_argument("unknown dataset role '" + name + "'");
}

bool Box::contains(const Eigen::Ref<const Vector>& x) const {
  return x.size() == lower.size() && (x.array() >= lower.array()).all() &&
         (x.array() <= upper.array()).all();
}

void Box::validate() const {
  if (lower.size() != upper.size() || lower.size() == 0) {
    throw std::invalid_argument("box bounds must be non-empty and of equal length");
  }
  if ((lower.array() > upper.array()).any() || !lower.allFinite() || !upper.allFinite()) {
    throw std::invalid_argument("box domain is empty or unbounded");
  }
}

nlohmann::json to_json(const Box& box) {
  return {{"lower", std::vector<double>(box.lower.data(), box.lower.data() + box.lower.size())},
          {"upper", std::vector<double>(box.upper.data(), box.upper.data() + box.upper.size())}};
}

Box box_from_json(const nlohmann::json& j) {
  for (const auto& [key, value] : j.items()) {
    if (key != "lower" && key != "upper") throw std::invalid_argument("unknown box key '" + key + "'");
  }
  const auto lo = j.at("lower").get<std::vector<double>>();
  const auto hi = j.at("upper").get<std::vector<double>>();
  Box box{Eigen::Map<const Vector>(lo.data(), static_cast<Index>(lo.size())),
          Eigen::Map<const Vector>(hi.data(), static_cast<Index>(hi.size()))};
  box.validate();
  return box;
}

Box train_initial_box() {
  Box box{Vector(4), Vector(4)};
  box.lower << -0.5, -0.5, -0.3, -0.3;
  box.upper << 0.0, 0.0, 0.3, 0.3;
  return box;
}

Box test_initial_box() {
  Box box{Vector(4), Vector(4)};
  box.lower << -0.5, -0.5, -0.6, -0.6;
  box.upper << 0.5, 0.5, 0.6, 0.6;
  return box;
}

Index TrajectoryDataset::state_dim() const {
  return trajectories.empty() ? 0 : trajectories.front().states.cols();
}

Index TrajectoryDataset::control_dim() const {
  return trajectories.empty() ? 0 : trajectories.front().controls.cols();
}

void TrajectoryDataset::validate() const {
  if (trajectories.empty()) throw std::invalid_argument("dataset has no trajectories");
  if (!(dt > 0)) throw std::invalid_argument("dataset dt must be positive");
  for (const Trajectory& tr : trajectories) {
    const auto n = static_cast<Index>(tr.times.size());
    if (n < 2 || tr.states.rows() != n || tr.controls.rows() != n) {
      throw std::invalid_argument("trajectory times, states and controls disagree in length");
    }
    if (tr.states.cols() != state_dim() || tr.controls.cols() != control_dim()) {
      throw std::invalid_argument("trajectories disagree in state or control width");
    }
    for (Index k = 1; k < n; ++k) {
      const double step = tr.times[k] - tr.times[k - 1];
      if (!(step > 0) || std::abs(step - dt) > 1e-9 * std::max(1.0, std::abs(tr.times[k]))) {
        throw std::invalid_argument("trajectory times are not uniformly spaced by dt");
      }
    }
  }
}

TrajectoryDataset generate_dataset(DatasetRole role, Index n_trajectories, std::uint64_t seed,
                                   const PendulumParams& params, const DatasetOptions& options) {
  if (n_trajectories < 1) throw std::invalid_argument("n_trajectories must be >= 1");
  if (options.points < 2) throw std::invalid_argument("trajectories need at least 2 points");
  params.validate();

  TrajectoryDataset ds;
  ds.dt = options.dt;
  ds.seed = seed;
  ds.role = role;
  ds.params = params;
  ds.initial_box = role == DatasetRole::Train ? train_initial_box() : test_initial_box();

  std::vector<double> times(static_cast<std::size_t>(options.points));
  for (Index k = 0; k < options.points; ++k) times[k] = static_cast<double>(k) * options.dt;

  DopriOptions dopri;
  dopri.rtol = options.rtol;
  dopri.atol = options.atol;
  const PlainField field = [&params](const Vector& x) { return true_field(x, params); };

  for (Index k = 0; k < n_trajectories; ++k) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    Vector x0(4);
    for (Index i = 0; i < 4; ++i) {
      x0(i) = uniform(rng, ds.initial_box.lower(i), ds.initial_box.upper(i));
    }
    const auto states = dopri_integrate(field, x0, 0.0, times.back(), times, dopri);
    Trajectory tr;
    tr.times = times;
    tr.states.resize(options.points, 4);
    for (Index i = 0; i < options.points; ++i) tr.states.row(i) = states[i].transpose();
    tr.controls.resize(options.points, 0);
    ds.trajectories.push_back(std::move(tr));
  }
  return ds;
}

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trajectory_file(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "traj_%03zu.csv", k);
  return buf;
}

const char* kCsvHeader = "t,phi1,phi2,dphi1,dphi2";

}  // namespace

void save_dataset(const TrajectoryDataset& dataset, const std::filesystem::path& dir) {
  dataset.validate();
  if (dataset.state_dim() != 4 || dataset.control_dim() != 0) {
    throw std::invalid_argument("dataset CSV format covers 4-state uncontrolled trajectories");
  }
  std::filesystem::create_directories(dir);
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t k = 0; k < dataset.trajectories.size(); ++k) {
    const Trajectory& tr = dataset.trajectories[k];
    const std::string name = trajectory_file(k);
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    out << kCsvHeader << '\n';
    for (std::size_t i = 0; i < tr.times.size(); ++i) {
      out << format_double(tr.times[i]);
      for (Index c = 0; c < 4; ++c) out << ',' << format_double(tr.states(i, c));
      out << '\n';
    }
    files.push_back(name);
  }
  nlohmann::json manifest = {
      {"format", "pcnn-dataset"},
      {"version", 1},
      {"role", role_name(dataset.role)},
      {"dt", dataset.dt},
      {"seed", dataset.seed},
      {"points", dataset.trajectories.front().times.size()},
      {"initial_box", to_json(dataset.initial_box)},
      {"pendulum", to_json(dataset.params)},
      {"columns", {"t", "phi1", "phi2", "dphi1", "dphi2"}},
      {"files", files},
  };
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

TrajectoryDataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("missing dataset manifest: " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed dataset manifest " + manifest_path.string() + ": " + e.what());
  }

  TrajectoryDataset ds;
  ds.role = role_from_name(manifest.at("role").get<std::string>());
  ds.dt = manifest.at("dt").get<double>();
  ds.seed = manifest.at("seed").get<std::uint64_t>();
  ds.initial_box = box_from_json(manifest.at("initial_box"));
  ds.params = pendulum_from_json(manifest.at("pendulum"));

  for (const auto& file : manifest.at("files")) {
    const auto path = dir / file.get<std::string>();
    std::ifstream csv(path);
    if (!csv) throw std::runtime_error("missing trajectory file: " + path.string());
    std::string line;
    std::getline(csv, line);
    if (line != kCsvHeader) throw std::runtime_error("unexpected CSV header in " + path.string());
    std::vector<std::array<double, 5>> rows;
    while (std::getline(csv, line)) {
      if (line.empty()) continue;
      std::array<double, 5> row{};
      std::istringstream ls(line);
      std::string cell;
      for (std::size_t c = 0; c < 5; ++c) {
        if (!std::getline(ls, cell, ',')) {
          throw std::runtime_error("short row in " + path.string());
        }
        row[c] = std::stod(cell);
      }
      rows.push_back(row);
    }
    Trajectory tr;
    tr.states.resize(static_cast<Index>(rows.size()), 4);
    tr.controls.resize(static_cast<Index>(rows.size()), 0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      tr.times.push_back(rows[i][0]);
      for (Index c = 0; c < 4; ++c) tr.states(static_cast<Index>(i), c) = rows[i][c + 1];
    }
    ds.trajectories.push_back(std::move(tr));
  }
  ds.validate();
  return ds;
}

}  // namespace pcnn
