#pragma once

#include <span>
#include <vector>

#include "palo/command.hpp"
#include "palo/rng.hpp"
#include "palo/terrain.hpp"

namespace palo::curricula {

struct TerrainAssignment {
  terrain::Kind kind = terrain::Kind::kRoughFlat;
  int level = 0;
  friend bool operator==(const TerrainAssignment&, const TerrainAssignment&) = default;
};

// Promotion when the robot travelled more than half the tile, demotion when
// less. At the top level a promotion re-draws the kind from `kinds`.
TerrainAssignment terrain_update(TerrainAssignment current, double distance, double extent, Rng& rng,
                                 std::span<const terrain::Kind> kinds);

struct RewardStage {
  int stage = 0;
  double posture_multiplier = 0.0;
  friend bool operator==(const RewardStage&, const RewardStage&) = default;
};

// Stage 0 before t1, linear posture ramp in [t1, t2), full reward afterwards.
// Thresholds are fractions of the total update count.
RewardStage reward_stage(int update, int total_updates, double t1_fraction = 0.15, double t2_fraction = 0.40);

enum class SamplingMode { kNormal, kUniform };

struct CommandGrid {
  Range vx{-0.5, 0.5};
  Range vy{-0.3, 0.3};
  Range wz{-0.5, 0.5};
  Range cap_vx{-limits::kLinVel, limits::kLinVel};
  Range cap_vy{-limits::kLinVel, limits::kLinVel};
  Range cap_wz{-limits::kAngVel, limits::kAngVel};
  double lin_step = 0.1;
  double ang_step = 0.1;

  bool valid() const;
  // Fraction of the cap width reached, taken as the minimum over channels.
  double width_fraction() const;
  friend bool operator==(const CommandGrid&, const CommandGrid&) = default;
};

inline constexpr double kPostureStd = 0.25;
inline constexpr double kStairPitchMean = 0.5;

struct CommandOptions {
  SamplingMode mode = SamplingMode::kNormal;
  bool posture = true;  // false: dh, pitch and roll stay zero
  double reference_height = 0.30;
};

Command6D sample_command(terrain::Kind kind, const CommandGrid& grid, Rng& rng, const CommandOptions& options);

// Expand the velocity bounds by one step per side when the boundary-cell mean
// of the velocity tracking reward exceeds `threshold`, capped at the grid caps.
CommandGrid grid_update(double boundary_reward, CommandGrid grid, double threshold = 0.8);

// Accumulates velocity-tracking reward per (vx, wz) cell across the cap region.
class GridRewardTracker {
 public:
  explicit GridRewardTracker(const CommandGrid& grid = {});

  void add(const Command6D& cmd, double r_v);
  // Mean reward over the populated cells on the outer ring of the active
  // bounds; negative when no boundary cell has data.
  double boundary_mean(const CommandGrid& grid) const;
  void clear();

  const std::vector<double>& sums() const { return sum_; }
  const std::vector<double>& counts() const { return count_; }
  void restore(std::vector<double> sums, std::vector<double> counts);

 private:
  int vx_index(double vx) const;
  int wz_index(double wz) const;

  Range cap_vx_;
  Range cap_wz_;
  double lin_step_;
  double ang_step_;
  int nx_;
  int nz_;
  std::vector<double> sum_;
  std::vector<double> count_;
};

// Push interval floor shrinks from `relaxed` to `tight` once the grid has
// reached half of its cap width.
double push_interval_floor(const CommandGrid& grid, double relaxed = 15.0, double tight = 10.0);

}  // namespace palo::curricula
