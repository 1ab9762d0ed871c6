#include "palo/terrain.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "palo/errors.hpp"
#include "palo/rng.hpp"

namespace palo::terrain {

namespace {

double lerp_level(double lo, double hi, int difficulty) {
  return lo + (hi - lo) * static_cast<double>(difficulty) / static_cast<double>(kMaxLevel);
}

constexpr double kDegToRad = std::numbers::pi / 180.0;

void add_noise(TerrainMap& map, Rng& rng, double amplitude) {
  for (int iy = 0; iy < map.cells_y(); ++iy) {
    for (int ix = 0; ix < map.cells_x(); ++ix) map.cell(ix, iy) += rng.uniform(-amplitude, amplitude);
  }
}

// Chebyshev ring index around the spawn platform; 0 on the platform.
int stair_ring(const TerrainMap& map, int ix, int iy) {
  const Eigen::Vector2d d = (map.cell_center(ix, iy) - map.center()).cwiseAbs();
  const double r = std::max(d.x(), d.y());
  if (r < kPlatformHalfWidth) return 0;
  return static_cast<int>(std::floor((r - kPlatformHalfWidth) / kStairRun)) + 1;
}

void fill(TerrainMap& map, Rng& rng) {
  const double p = roughness(map.kind(), map.difficulty());
  const Eigen::Vector2d c = map.center();
  switch (map.kind()) {
    case Kind::kWavy: {
      const double wavelength = 2.0;
      const double phase_x = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double phase_y = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double k = 2.0 * std::numbers::pi / wavelength;
      for (int iy = 0; iy < map.cells_y(); ++iy) {
        for (int ix = 0; ix < map.cells_x(); ++ix) {
          const Eigen::Vector2d q = map.cell_center(ix, iy);
          map.cell(ix, iy) = 0.5 * p * (std::sin(k * q.x() + phase_x) + std::sin(k * q.y() + phase_y));
        }
      }
      break;
    }
    case Kind::kRoughSlope: {
      // Pyramid rising toward the tile center from a flat spawn platform edge.
      const double grade = std::tan(p);
      const double half = 0.5 * std::min(map.width(), map.length());
      for (int iy = 0; iy < map.cells_y(); ++iy) {
        for (int ix = 0; ix < map.cells_x(); ++ix) {
          const Eigen::Vector2d d = (map.cell_center(ix, iy) - c).cwiseAbs();
          const double r = std::max(std::max(d.x(), d.y()), kPlatformHalfWidth);
          map.cell(ix, iy) = grade * (half - r);
        }
      }
      add_noise(map, rng, 0.01);
      break;
    }
    case Kind::kStairsUp:
    case Kind::kStairsDown: {
      const double sign = map.kind() == Kind::kStairsUp ? 1.0 : -1.0;
      for (int iy = 0; iy < map.cells_y(); ++iy) {
        for (int ix = 0; ix < map.cells_x(); ++ix) {
          map.cell(ix, iy) = sign * p * stair_ring(map, ix, iy);
        }
      }
      break;
    }
    case Kind::kDiscreteObstacles: {
      const int count = static_cast<int>(0.6 * map.width() * map.length());
      for (int n = 0; n < count; ++n) {
        const double w = rng.uniform(0.2, 1.0);
        const double l = rng.uniform(0.2, 1.0);
        const double x0 = map.origin().x() + rng.uniform(0.0, map.width());
        const double y0 = map.origin().y() + rng.uniform(0.0, map.length());
        const double h = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.5, 1.0) * p;
        const double cs = map.cell_size();
        const int ix0 = std::max(0, static_cast<int>(std::ceil((x0 - map.origin().x()) / cs - 0.5)));
        const int iy0 = std::max(0, static_cast<int>(std::ceil((y0 - map.origin().y()) / cs - 0.5)));
        for (int iy = iy0; iy < map.cells_y(); ++iy) {
          if (map.cell_center(0, iy).y() >= y0 + l) break;
          for (int ix = ix0; ix < map.cells_x(); ++ix) {
            const Eigen::Vector2d q = map.cell_center(ix, iy);
            if (q.x() >= x0 + w) break;
            if (q.x() >= x0 && q.y() >= y0) map.cell(ix, iy) = h;
          }
        }
      }
      // keep the spawn area clear
      for (int iy = 0; iy < map.cells_y(); ++iy) {
        for (int ix = 0; ix < map.cells_x(); ++ix) {
          if (stair_ring(map, ix, iy) == 0) map.cell(ix, iy) = 0.0;
        }
      }
      break;
    }
    case Kind::kRoughFlat:
      add_noise(map, rng, p);
      break;
  }
}

}  // namespace

std::string_view to_string(Kind kind) {
  switch (kind) {
    case Kind::kWavy: return "wavy";
    case Kind::kRoughSlope: return "rough_slope";
    case Kind::kStairsUp: return "stairs_up";
    case Kind::kStairsDown: return "stairs_down";
    case Kind::kDiscreteObstacles: return "discrete_obstacles";
    case Kind::kRoughFlat: return "rough_flat";
  }
  return "unknown";
}

Kind kind_from_string(std::string_view name) {
  for (int k = 0; k < kNumKinds; ++k) {
    if (to_string(static_cast<Kind>(k)) == name) return static_cast<Kind>(k);
  }
  throw ConfigError("unknown terrain kind '" + std::string(name) + "'");
}

double roughness(Kind kind, int difficulty) {
  if (difficulty < 0 || difficulty > kMaxLevel) throw std::out_of_range("terrain difficulty out of range");
  switch (kind) {
    case Kind::kWavy: return lerp_level(0.02, 0.12, difficulty);
    case Kind::kRoughSlope: return lerp_level(5.0, 25.0, difficulty) * kDegToRad;
    case Kind::kStairsUp:
    case Kind::kStairsDown: return lerp_level(0.05, 0.18, difficulty);
    case Kind::kDiscreteObstacles: return lerp_level(0.02, 0.10, difficulty);
    case Kind::kRoughFlat: return lerp_level(0.005, 0.04, difficulty);
  }
  return 0.0;
}

TerrainMap::TerrainMap(Kind kind, int difficulty, std::uint64_t seed, int cells_x, int cells_y,
                       double cell_size, Eigen::Vector2d origin)
    : kind_(kind),
      difficulty_(difficulty),
      seed_(seed),
      cells_x_(cells_x),
      cells_y_(cells_y),
      cell_size_(cell_size),
      origin_(std::move(origin)),
      heights_(static_cast<std::size_t>(cells_x) * static_cast<std::size_t>(cells_y), 0.0) {}

bool TerrainMap::contains(double x, double y) const {
  const double u = x - origin_.x();
  const double v = y - origin_.y();
  return u >= 0.0 && v >= 0.0 && u <= width() && v <= length();
}

double TerrainMap::sample_height(double x, double y) const {
  if (!contains(x, y)) {
    throw OutOfBounds("height query (" + std::to_string(x) + ", " + std::to_string(y) +
                      ") outside terrain extent");
  }
  // Continuous cell coordinates relative to cell centers; clamp at the outer half cell.
  const double gx = std::clamp((x - origin_.x()) / cell_size_ - 0.5, 0.0, cells_x_ - 1.0);
  const double gy = std::clamp((y - origin_.y()) / cell_size_ - 0.5, 0.0, cells_y_ - 1.0);
  const int ix = std::min(static_cast<int>(gx), cells_x_ - 2);
  const int iy = std::min(static_cast<int>(gy), cells_y_ - 2);
  const double fx = gx - ix;
  const double fy = gy - iy;
  const double h00 = cell(ix, iy);
  const double h10 = cell(ix + 1, iy);
  const double h01 = cell(ix, iy + 1);
  const double h11 = cell(ix + 1, iy + 1);
  return (1.0 - fy) * ((1.0 - fx) * h00 + fx * h10) + fy * ((1.0 - fx) * h01 + fx * h11);
}

std::shared_ptr<const TerrainMap> generate_terrain(Kind kind, int difficulty, std::uint64_t seed,
                                                   const TerrainSpec& spec) {
  if (difficulty < 0 || difficulty > kMaxLevel) throw std::out_of_range("terrain difficulty out of range");
  const int cells = static_cast<int>(std::lround(spec.tile_size / spec.cell_size));
  auto map = std::make_shared<TerrainMap>(kind, difficulty, seed, cells, cells, spec.cell_size,
                                          Eigen::Vector2d(-0.5 * cells * spec.cell_size,
                                                          -0.5 * cells * spec.cell_size));
  Rng rng(seed, static_cast<std::uint64_t>(kind) * 16 + static_cast<std::uint64_t>(difficulty));
  fill(*map, rng);
  return map;
}

std::array<Eigen::Vector2d, kHeightScanPoints> height_scan_offsets() {
  std::array<Eigen::Vector2d, kHeightScanPoints> out;
  int n = 0;
  for (int i = 0; i < 5; ++i) {
    for (int j = -1; j <= 1; ++j) out[n++] = Eigen::Vector2d(-0.1 + 0.1 * i, 0.1 * j);
  }
  out[n++] = Eigen::Vector2d(0.0, 0.2);
  out[n++] = Eigen::Vector2d(0.0, -0.2);
  return out;
}

std::array<double, kHeightScanPoints> height_scan(const TerrainMap& map, const Eigen::Vector2d& base_xy,
                                                  double yaw) {
  static const auto offsets = height_scan_offsets();
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  std::array<double, kHeightScanPoints> out{};
  for (int i = 0; i < kHeightScanPoints; ++i) {
    const Eigen::Vector2d& o = offsets[i];
    const double x = base_xy.x() + c * o.x() - s * o.y();
    const double y = base_xy.y() + s * o.x() + c * o.y();
    const double cx = std::clamp(x, map.origin().x(), map.origin().x() + map.width());
    const double cy = std::clamp(y, map.origin().y(), map.origin().y() + map.length());
    out[i] = map.sample_height(cx, cy);
  }
  return out;
}

TerrainBank::TerrainBank(TerrainSpec spec, std::uint64_t seed, std::vector<Kind> kinds, int variants_per_level)
    : spec_(spec), kinds_(std::move(kinds)), variants_(std::max(1, variants_per_level)) {
  tiles_.resize(static_cast<std::size_t>(kNumKinds * kNumLevels * variants_));
  for (Kind k : kinds_) {
    for (int level = 0; level < kNumLevels; ++level) {
      for (int v = 0; v < variants_; ++v) {
        const std::size_t idx =
            (static_cast<std::size_t>(k) * kNumLevels + static_cast<std::size_t>(level)) * variants_ + v;
        tiles_[idx] = generate_terrain(k, level, seed + 7919ULL * static_cast<std::uint64_t>(v), spec_);
      }
    }
  }
}

bool TerrainBank::has(Kind kind) const { return std::find(kinds_.begin(), kinds_.end(), kind) != kinds_.end(); }

std::shared_ptr<const TerrainMap> TerrainBank::get(Kind kind, int level, int variant) const {
  const std::size_t idx = (static_cast<std::size_t>(kind) * kNumLevels + static_cast<std::size_t>(level)) * variants_ +
                          static_cast<std::size_t>(variant % variants_);
  if (!tiles_.at(idx)) throw ConfigError("terrain kind '" + std::string(to_string(kind)) + "' not in bank");
  return tiles_[idx];
}

}  // namespace palo::terrain
