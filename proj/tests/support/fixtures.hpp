#pragma once

// Small deterministic worlds and rollouts used across the test suites.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "palo/amp.hpp"
#include "palo/config.hpp"
#include "palo/dynamics.hpp"
#include "palo/env.hpp"
#include "palo/terrain.hpp"

namespace palo::fixture {

inline std::filesystem::path source_dir() { return PALO_SOURCE_DIR; }

inline config::TrainConfig load_config(const std::string& name) {
  return config::load((source_dir() / "configs" / name).string());
}

// Perfectly flat map of `size` metres centred on the origin.
inline std::shared_ptr<const terrain::TerrainMap> flat_map(double size = 10.0, double cell = 0.05) {
  const int cells = static_cast<int>(std::lround(size / cell));
  return std::make_shared<const terrain::TerrainMap>(terrain::Kind::kRoughFlat, 0, 0, cells, cells, cell,
                                                     Eigen::Vector2d(-0.5 * size, -0.5 * size));
}

// Nominal environment: no randomization, noise or pushes, fixed command.
inline env::EnvConfig quiet_env_config() {
  env::EnvConfig c;
  c.randomize = false;
  c.observation_noise = false;
  c.pushes = false;
  c.resample_interval = std::numeric_limits<double>::infinity();
  c.command.posture = false;
  return c;
}

// Open-loop trot: thighs sweep in diagonal pairs, calves flex during the
// forward swing. Walks at roughly 0.5 m/s for a couple of seconds.
inline env::ActionVec trot_action(double t, double sweep = 0.2, double lift = 0.3, double freq = 2.5,
                                  double action_scale = 0.25) {
  env::ActionVec a = env::ActionVec::Zero();
  for (int leg = 0; leg < dynamics::kNumLegs; ++leg) {
    const double offset = (leg == dynamics::kFR || leg == dynamics::kRL) ? 0.0 : M_PI;
    const double phase = 2.0 * M_PI * freq * t + offset;
    a[3 * leg + 1] = -sweep * std::sin(phase) / action_scale;
    a[3 * leg + 2] = -lift * std::max(0.0, std::cos(phase)) / action_scale;
  }
  return a;
}

enum class Behaviour { kTrot, kRandom };

struct PairSet {
  Eigen::MatrixXd pairs;  // (86 x n)
  std::vector<std::int64_t> episode;
};

// Consecutive AMP feature pairs from one environment driven by `behaviour`,
// resetting whenever an episode ends.
inline PairSet rollout_pairs(Behaviour behaviour, Eigen::Index n, std::uint64_t seed) {
  auto map = flat_map(40.0, 0.1);
  env::EnvConfig cfg = quiet_env_config();
  env::Env e(dynamics::RobotModel::a1_like(), cfg, Rng(seed, 1));
  e.set_command({0.5, 0.0, 0.0, 0.0, 0.0, 0.0});
  Rng noise(seed, 2);
  PairSet out;
  out.pairs.resize(amp::kPairDim, n);
  out.episode.resize(static_cast<std::size_t>(n));
  std::int64_t episode = 0;
  e.reset(map, {});
  int t = 0;
  for (Eigen::Index k = 0; k < n; ++k) {
    env::ActionVec a;
    if (behaviour == Behaviour::kTrot) {
      a = trot_action(t * cfg.control_dt);
    } else {
      for (int j = 0; j < env::kActionDim; ++j) a[j] = noise.normal();
    }
    const env::AmpStateVec before = e.amp_features();
    const env::StepResult r = e.step(a);
    out.pairs.col(k) << before, r.amp_next;
    out.episode[static_cast<std::size_t>(k)] = episode;
    ++t;
    // Trotting is open loop and eventually stumbles; short episodes keep the
    // data on the periodic gait.
    if (r.done || (behaviour == Behaviour::kTrot && t >= 100)) {
      ++episode;
      t = 0;
      e.reset(map, {});
    }
  }
  return out;
}

inline std::shared_ptr<const amp::ExpertDataset> synthetic_dataset(Eigen::Index n, std::uint64_t seed) {
  PairSet p = rollout_pairs(Behaviour::kTrot, n, seed);
  return std::make_shared<const amp::ExpertDataset>(amp::ExpertDataset::from_pairs(
      std::move(p.pairs), std::move(p.episode), {{"source", "scripted trot"}}, 0));
}

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)) + "_" +
             std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace palo::fixture
