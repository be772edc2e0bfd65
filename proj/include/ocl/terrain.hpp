#pragma once
// Procedural heightfield terrain: difficulty-graded curriculum tiles on a
// 20x5 grid and the four-block traverse benchmark course.
//
// Heightfields store node elevations on a regular grid (0.05 m default).
// Queries are bilinear and clamp to the border, so the flat apron around a
// course also answers for far-away points. Generation is pure in
// (spec, seed): every tile draws from its own forked stream, which makes the
// composite fields byte-identical no matter how generation is scheduled.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ocl/mathutil.hpp"

namespace ocl {

enum class TerrainKind {
  SmoothSlope,
  RoughSlope,
  StairsUp,
  StairsDown,
  Discrete,
  Flat,
};

const char* to_string(TerrainKind k);
TerrainKind terrain_kind_from_string(const std::string& s);

struct TerrainSpec {
  TerrainKind kind = TerrainKind::Flat;
  int difficulty = 0;            // 0..4
  double slope_rate = 0.0;       // rise per meter of run
  double step_height = 0.0;      // m per stair
  double step_run = 0.3;         // m per stair
  double noise_amp = 0.0;        // m, uniform +/- band
  double obstacle_height = 0.0;  // m, tallest discrete obstacle
};

/// Parameter magnitudes for a difficulty level; strictly monotone in d.
TerrainSpec make_spec(TerrainKind kind, int difficulty);

struct Heightfield {
  double cell_size = 0.05;     // m per cell
  int nx = 0, ny = 0;          // node counts; extent is (n-1)*cell_size
  Vec2 origin = Vec2::Zero();  // world xy of node (0, 0)
  double friction = 0.8;
  std::vector<double> heights;  // row-major, node (ix, iy) at iy*nx + ix

  double& at(int ix, int iy) {
    return heights[static_cast<size_t>(iy) * nx + ix];
  }
  double at(int ix, int iy) const {
    return heights[static_cast<size_t>(iy) * nx + ix];
  }
  double width() const { return (nx - 1) * cell_size; }
  double depth() const { return (ny - 1) * cell_size; }

  /// Bilinear elevation; queries outside the field clamp to the border.
  double height_at(double x, double y) const;

  /// Upward unit normal of the interpolated surface.
  Vec3 normal_at(double x, double y) const;
};

/// Level field of the given extent centered on the world origin.
Heightfield make_flat(double width, double depth, double cell_size = 0.05);

/// One 8x8 m tile. Slopes rise along +y to a plateau and come back down
/// (trapezoid profile, zero at the tile border); stairs climb monotonically
/// along +y with exact risers; discrete tiles scatter rectangular blocks.
Heightfield make_tile(const TerrainSpec& spec, uint64_t seed);

struct CurriculumGrid {
  static constexpr int kCols = 20;
  static constexpr int kRows = 5;  // difficulty 0 (easy) .. 4 (hard)

  double tile_size = 8.0;
  double apron = 8.0;  // flat margin around the core
  std::array<TerrainKind, kCols> column_kinds{};
  Vec2 core_origin = Vec2::Zero();  // world corner of tile (0, 0)

  Vec2 tile_center(int col, int row) const {
    return core_origin +
           Vec2((col + 0.5) * tile_size, (row + 0.5) * tile_size);
  }
  /// Tile containing a world point; false on the apron/outside.
  bool tile_of(const Vec2& p, int* col, int* row) const;
};

struct Curriculum {
  CurriculumGrid grid;
  Heightfield field;
};

/// 20 columns x 5 difficulty rows with the fixed type proportions
/// [smooth 2, rough 2, stairs-up 7, stairs-down 5, discrete 4], surrounded
/// by a flat apron. Difficulty increases with the row index.
Curriculum make_curriculum(uint64_t seed);

/// Benchmark course: flat, flat, smooth slope (rate 0.25, 2 m plateau),
/// rough slope (0.625 m plateau with an uneven surface). Blocks are 6 m
/// deep along +y (course spans y in [0, 24]) and structurally uniform
/// along x; flat aprons extend before and after.
Heightfield make_traverse_course(uint64_t seed, double width = 32.0,
                                 double noise_amp = 0.05);

/// CSV round-trip: one header line
/// (cell_size,nx,ny,origin_x,origin_y,friction), then one row of node
/// heights per iy.
void write_csv(const Heightfield& hf, std::ostream& os);
Heightfield read_csv(std::istream& is);

}  // namespace ocl
