#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "palo/amp.hpp"
#include "palo/curricula.hpp"
#include "palo/env.hpp"
#include "palo/rl.hpp"
#include "palo/terrain.hpp"

namespace palo::config {

inline constexpr int kSchemaVersion = 1;

enum class Stage { kStage1, kStage2, kBoth };
std::string to_string(Stage s);

struct TerrainConfig {
  terrain::TerrainSpec spec;
  int variants = 1;
  std::vector<terrain::Kind> stage1_kinds{terrain::Kind::kRoughFlat};
  std::vector<terrain::Kind> stage2_kinds{terrain::Kind::kWavy, terrain::Kind::kRoughSlope,
                                          terrain::Kind::kStairsUp, terrain::Kind::kStairsDown,
                                          terrain::Kind::kDiscreteObstacles};
};

struct CurriculumConfig {
  bool terrain = true;
  bool reward = true;
  double reward_t1 = 0.15;
  double reward_t2 = 0.40;
  bool grid = true;
  double grid_threshold = 0.8;
  int grid_interval = 10;  // updates between expansion checks
  curricula::CommandGrid command_grid;
  double push_interval_relaxed = 15.0;
  double push_interval_tight = 10.0;
};

struct EvalConfig {
  int repetitions = 5;
  double duration = 20.0;
  double resample_interval = 2.0;
  Range vx{-1.0, 1.0};
  Range vy{-1.0, 1.0};
  Range wz{-1.0, 1.0};
  bool posture = true;
  double tile_size = 40.0;
  int terrain_level = 5;
};

struct AmpSettings {
  bool enabled = true;
  amp::AmpConfig discriminator;
  Eigen::Index pairs = amp::kMinExpertPairs;
  std::string dataset;  // path; stage-2 runs need it unless produced by a "both" run
  bool fresh_policy = false;
};

struct TrainConfig {
  int schema_version = kSchemaVersion;
  std::uint64_t seed = 1;
  int num_envs = 64;
  Stage stage = Stage::kBoth;
  int total_updates = 3000;
  int stage1_updates = 1000;
  int checkpoint_interval = 100;
  int threads = 0;  // 0: OpenMP default
  bool parallel = true;
  double stage1_feet_air_time = 1.0;
  env::EnvConfig env;
  TerrainConfig terrain;
  CurriculumConfig curriculum;
  rl::PpoConfig ppo;
  rl::NetworkConfig network;
  AmpSettings amp;
  EvalConfig eval;

  void validate() const;
};

// Unknown keys and wrongly typed values raise ConfigError; missing keys keep
// their defaults.
TrainConfig from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& c);
TrainConfig load(const std::string& path);
// Stable digest of the fully resolved configuration.
std::string digest(const TrainConfig& c);

}  // namespace palo::config
