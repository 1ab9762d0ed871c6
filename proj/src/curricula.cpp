#include "palo/curricula.hpp"

#include <algorithm>
#include <cmath>

#include "palo/errors.hpp"

namespace palo::curricula {

TerrainAssignment terrain_update(TerrainAssignment current, double distance, double extent, Rng& rng,
                                 std::span<const terrain::Kind> kinds) {
  const double half = 0.5 * extent;
  if (distance > half) {
    if (current.level >= terrain::kMaxLevel) {
      current.level = terrain::kMaxLevel;
      if (!kinds.empty()) current.kind = kinds[rng.below(kinds.size())];
    } else {
      ++current.level;
    }
  } else if (distance < half) {
    current.level = std::max(0, current.level - 1);
  }
  return current;
}

RewardStage reward_stage(int update, int total_updates, double t1_fraction, double t2_fraction) {
  if (!(t1_fraction >= 0.0 && t1_fraction < t2_fraction && t2_fraction <= 1.0) || total_updates <= 0) {
    throw InvalidThresholds("reward stage thresholds require 0 <= t1 < t2 <= 1 and a positive update count");
  }
  const double t1 = t1_fraction * total_updates;
  const double t2 = t2_fraction * total_updates;
  const double u = update;
  if (u < t1) return {0, 0.0};
  if (u < t2) return {1, (u - t1) / (t2 - t1)};
  return {2, 1.0};
}

bool CommandGrid::valid() const {
  auto ok = [](const Range& r, const Range& cap) { return r.lo <= r.hi && r.lo >= cap.lo && r.hi <= cap.hi; };
  return ok(vx, cap_vx) && ok(vy, cap_vy) && ok(wz, cap_wz) && lin_step > 0.0 && ang_step > 0.0;
}

double CommandGrid::width_fraction() const {
  auto frac = [](const Range& r, const Range& cap) { return cap.width() > 0.0 ? r.width() / cap.width() : 1.0; };
  return std::min({frac(vx, cap_vx), frac(vy, cap_vy), frac(wz, cap_wz)});
}

namespace {

double clipped_normal(Rng& rng, double mean, double stddev, double lo, double hi) {
  return std::clamp(rng.normal(mean, stddev), lo, hi);
}

}  // namespace

Command6D sample_command(terrain::Kind kind, const CommandGrid& grid, Rng& rng, const CommandOptions& options) {
  Command6D cmd;
  cmd.vx = rng.uniform(grid.vx.lo, grid.vx.hi);
  cmd.vy = rng.uniform(grid.vy.lo, grid.vy.hi);
  cmd.wz = rng.uniform(grid.wz.lo, grid.wz.hi);
  if (!options.posture) return cmd;

  cmd.dh = rng.uniform(limits::kMinHeight, limits::kMaxHeight) - options.reference_height;

  double pitch_mean = 0.0;
  Range pitch{-limits::kPitch, limits::kPitch};
  if (kind == terrain::Kind::kStairsUp) {
    pitch_mean = -kStairPitchMean;
    pitch = {-limits::kPitch, 0.0};
  } else if (kind == terrain::Kind::kStairsDown) {
    pitch_mean = kStairPitchMean;
    pitch = {0.0, limits::kPitch};
  }
  const Range roll{-limits::kRoll, limits::kRoll};
  if (options.mode == SamplingMode::kUniform) {
    cmd.pitch = rng.uniform(pitch.lo, pitch.hi);
    cmd.roll = rng.uniform(roll.lo, roll.hi);
  } else {
    cmd.pitch = clipped_normal(rng, pitch_mean, kPostureStd, pitch.lo, pitch.hi);
    cmd.roll = clipped_normal(rng, 0.0, kPostureStd, roll.lo, roll.hi);
  }
  return cmd;
}

CommandGrid grid_update(double boundary_reward, CommandGrid grid, double threshold) {
  if (!(boundary_reward > threshold)) return grid;
  auto expand = [](Range r, const Range& cap, double step) {
    r.lo = std::max(cap.lo, r.lo - step);
    r.hi = std::min(cap.hi, r.hi + step);
    return r;
  };
  grid.vx = expand(grid.vx, grid.cap_vx, grid.lin_step);
  grid.vy = expand(grid.vy, grid.cap_vy, grid.lin_step);
  grid.wz = expand(grid.wz, grid.cap_wz, grid.ang_step);
  return grid;
}

GridRewardTracker::GridRewardTracker(const CommandGrid& grid)
    : cap_vx_(grid.cap_vx),
      cap_wz_(grid.cap_wz),
      lin_step_(grid.lin_step),
      ang_step_(grid.ang_step),
      nx_(std::max(1, static_cast<int>(std::lround(grid.cap_vx.width() / grid.lin_step)))),
      nz_(std::max(1, static_cast<int>(std::lround(grid.cap_wz.width() / grid.ang_step)))),
      sum_(static_cast<std::size_t>(nx_ * nz_), 0.0),
      count_(static_cast<std::size_t>(nx_ * nz_), 0.0) {}

int GridRewardTracker::vx_index(double vx) const {
  return std::clamp(static_cast<int>(std::floor((vx - cap_vx_.lo) / lin_step_)), 0, nx_ - 1);
}

int GridRewardTracker::wz_index(double wz) const {
  return std::clamp(static_cast<int>(std::floor((wz - cap_wz_.lo) / ang_step_)), 0, nz_ - 1);
}

void GridRewardTracker::add(const Command6D& cmd, double r_v) {
  const std::size_t idx = static_cast<std::size_t>(vx_index(cmd.vx) * nz_ + wz_index(cmd.wz));
  sum_[idx] += r_v;
  count_[idx] += 1.0;
}

double GridRewardTracker::boundary_mean(const CommandGrid& grid) const {
  // Active cell index ranges; a small inset keeps bounds that sit exactly on a
  // cell edge from selecting the neighbouring (inactive) cell.
  const double eps_l = 1e-6 * lin_step_;
  const double eps_a = 1e-6 * ang_step_;
  const int x0 = vx_index(grid.vx.lo + eps_l);
  const int x1 = vx_index(grid.vx.hi - eps_l);
  const int z0 = wz_index(grid.wz.lo + eps_a);
  const int z1 = wz_index(grid.wz.hi - eps_a);
  double sum = 0.0;
  int cells = 0;
  for (int ix = x0; ix <= x1; ++ix) {
    for (int iz = z0; iz <= z1; ++iz) {
      if (ix != x0 && ix != x1 && iz != z0 && iz != z1) continue;
      const std::size_t idx = static_cast<std::size_t>(ix * nz_ + iz);
      if (count_[idx] <= 0.0) continue;
      sum += sum_[idx] / count_[idx];
      ++cells;
    }
  }
  return cells > 0 ? sum / cells : -1.0;
}

void GridRewardTracker::clear() {
  std::fill(sum_.begin(), sum_.end(), 0.0);
  std::fill(count_.begin(), count_.end(), 0.0);
}

void GridRewardTracker::restore(std::vector<double> sums, std::vector<double> counts) {
  if (sums.size() != sum_.size() || counts.size() != count_.size()) {
    throw FormatError("grid tracker state has the wrong size");
  }
  sum_ = std::move(sums);
  count_ = std::move(counts);
}

double push_interval_floor(const CommandGrid& grid, double relaxed, double tight) {
  return grid.width_fraction() >= 0.5 ? tight : relaxed;
}

}  // namespace palo::curricula
