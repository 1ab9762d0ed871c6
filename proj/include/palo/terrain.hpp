#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <memory>
#include <string_view>
#include <vector>

namespace palo::terrain {

enum class Kind : int {
  kWavy = 0,
  kRoughSlope,
  kStairsUp,
  kStairsDown,
  kDiscreteObstacles,
  kRoughFlat,
};
inline constexpr int kNumKinds = 6;
inline constexpr int kNumLevels = 10;
inline constexpr int kMaxLevel = kNumLevels - 1;

std::string_view to_string(Kind kind);
Kind kind_from_string(std::string_view name);

struct TerrainSpec {
  double cell_size = 0.05;
  double tile_size = 8.0;
};

// Height grid with samples at cell centers. Immutable after generation.
class TerrainMap {
 public:
  TerrainMap(Kind kind, int difficulty, std::uint64_t seed, int cells_x, int cells_y,
             double cell_size, Eigen::Vector2d origin);

  Kind kind() const { return kind_; }
  int difficulty() const { return difficulty_; }
  std::uint64_t seed() const { return seed_; }
  int cells_x() const { return cells_x_; }
  int cells_y() const { return cells_y_; }
  double cell_size() const { return cell_size_; }
  const Eigen::Vector2d& origin() const { return origin_; }
  double width() const { return cells_x_ * cell_size_; }
  double length() const { return cells_y_ * cell_size_; }
  Eigen::Vector2d center() const { return origin_ + 0.5 * Eigen::Vector2d(width(), length()); }

  double cell(int ix, int iy) const { return heights_[index(ix, iy)]; }
  double& cell(int ix, int iy) { return heights_[index(ix, iy)]; }
  Eigen::Vector2d cell_center(int ix, int iy) const {
    return origin_ + cell_size_ * Eigen::Vector2d(ix + 0.5, iy + 0.5);
  }

  bool contains(double x, double y) const;

  // Bilinear interpolation between the four surrounding cell centers.
  // Throws OutOfBounds outside [origin, origin + extent].
  double sample_height(double x, double y) const;

  const std::vector<double>& heights() const { return heights_; }

 private:
  std::size_t index(int ix, int iy) const {
    return static_cast<std::size_t>(iy) * static_cast<std::size_t>(cells_x_) +
           static_cast<std::size_t>(ix);
  }

  Kind kind_;
  int difficulty_;
  std::uint64_t seed_;
  int cells_x_;
  int cells_y_;
  double cell_size_;
  Eigen::Vector2d origin_;
  std::vector<double> heights_;
};

// Roughness parameter of a kind at a difficulty level (linear schedules).
// Units: wavy amplitude m, slope rad, step height m, obstacle height m, noise m.
double roughness(Kind kind, int difficulty);

inline constexpr double kStairRun = 0.30;
inline constexpr double kPlatformHalfWidth = 0.5;

std::shared_ptr<const TerrainMap> generate_terrain(Kind kind, int difficulty, std::uint64_t seed,
                                                   const TerrainSpec& spec = {});

// Privileged height scan: 5x3 forward-biased grid plus two lateral points, in the
// yaw-aligned body frame.
inline constexpr int kHeightScanPoints = 17;
std::array<Eigen::Vector2d, kHeightScanPoints> height_scan_offsets();
std::array<double, kHeightScanPoints> height_scan(const TerrainMap& map, const Eigen::Vector2d& base_xy,
                                                  double yaw);

// Pre-generated, shared tiles keyed by (kind, level, variant). Read-only after
// construction, so concurrent get() calls are safe.
class TerrainBank {
 public:
  TerrainBank(TerrainSpec spec, std::uint64_t seed, std::vector<Kind> kinds, int variants_per_level = 1);

  std::shared_ptr<const TerrainMap> get(Kind kind, int level, int variant = 0) const;
  bool has(Kind kind) const;
  const std::vector<Kind>& kinds() const { return kinds_; }
  int variants() const { return variants_; }
  const TerrainSpec& spec() const { return spec_; }

 private:
  TerrainSpec spec_;
  std::vector<Kind> kinds_;
  int variants_;
  std::vector<std::shared_ptr<const TerrainMap>> tiles_;
};

}  // namespace palo::terrain
