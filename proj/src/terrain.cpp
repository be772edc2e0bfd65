#include "ocl/terrain.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "ocl/rng.hpp"

namespace ocl {
namespace {

constexpr double kTileSize = 8.0;

// Symmetric up-ramp / plateau / down-ramp profile across a block, zero at
// both edges, `rate` rise per meter on the ramps.
double trapezoid(double y, double block_len, double plateau_len, double rate) {
  const double ramp = 0.5 * (block_len - plateau_len);
  return rate * clampd(std::min(y, block_len - y), 0.0, ramp);
}

Heightfield blank_tile(double cell_size, double friction) {
  Heightfield hf;
  hf.cell_size = cell_size;
  hf.nx = hf.ny = static_cast<int>(std::lround(kTileSize / cell_size)) + 1;
  hf.friction = friction;
  hf.heights.assign(static_cast<size_t>(hf.nx) * hf.ny, 0.0);
  return hf;
}

void add_noise(Heightfield& hf, double amp, Rng& rng) {
  for (double& h : hf.heights) h += rng.uniform(-amp, amp);
}

}  // namespace

const char* to_string(TerrainKind k) {
  switch (k) {
    case TerrainKind::SmoothSlope: return "smooth_slope";
    case TerrainKind::RoughSlope: return "rough_slope";
    case TerrainKind::StairsUp: return "stairs_up";
    case TerrainKind::StairsDown: return "stairs_down";
    case TerrainKind::Discrete: return "discrete";
    case TerrainKind::Flat: return "flat";
  }
  return "?";
}

TerrainKind terrain_kind_from_string(const std::string& s) {
  if (s == "smooth_slope") return TerrainKind::SmoothSlope;
  if (s == "rough_slope") return TerrainKind::RoughSlope;
  if (s == "stairs_up") return TerrainKind::StairsUp;
  if (s == "stairs_down") return TerrainKind::StairsDown;
  if (s == "discrete") return TerrainKind::Discrete;
  if (s == "flat") return TerrainKind::Flat;
  throw std::invalid_argument("unknown terrain kind: " + s);
}

TerrainSpec make_spec(TerrainKind kind, int difficulty) {
  TerrainSpec spec;
  spec.kind = kind;
  spec.difficulty = difficulty;
  const double d = difficulty;
  switch (kind) {
    case TerrainKind::SmoothSlope:
      spec.slope_rate = 0.1 + 0.05 * d;
      break;
    case TerrainKind::RoughSlope:
      spec.slope_rate = 0.1 + 0.05 * d;
      spec.noise_amp = 0.01 + 0.02 * d;
      break;
    case TerrainKind::StairsUp:
    case TerrainKind::StairsDown:
      spec.step_height = 0.05 + 0.04 * d;
      break;
    case TerrainKind::Discrete:
      spec.obstacle_height = 0.05 + 0.03 * d;
      break;
    case TerrainKind::Flat:
      break;
  }
  return spec;
}

double Heightfield::height_at(double x, double y) const {
  const double fx = clampd((x - origin.x()) / cell_size, 0.0, nx - 1.0);
  const double fy = clampd((y - origin.y()) / cell_size, 0.0, ny - 1.0);
  const int ix = std::min(static_cast<int>(fx), nx - 2);
  const int iy = std::min(static_cast<int>(fy), ny - 2);
  const double tx = fx - ix, ty = fy - iy;
  const double h00 = at(ix, iy), h10 = at(ix + 1, iy);
  const double h01 = at(ix, iy + 1), h11 = at(ix + 1, iy + 1);
  return (1.0 - ty) * ((1.0 - tx) * h00 + tx * h10) +
         ty * ((1.0 - tx) * h01 + tx * h11);
}

Vec3 Heightfield::normal_at(double x, double y) const {
  const double fx = clampd((x - origin.x()) / cell_size, 0.0, nx - 1.0);
  const double fy = clampd((y - origin.y()) / cell_size, 0.0, ny - 1.0);
  const int ix = std::min(static_cast<int>(fx), nx - 2);
  const int iy = std::min(static_cast<int>(fy), ny - 2);
  const double tx = fx - ix, ty = fy - iy;
  const double h00 = at(ix, iy), h10 = at(ix + 1, iy);
  const double h01 = at(ix, iy + 1), h11 = at(ix + 1, iy + 1);
  const double dzdx =
      ((h10 - h00) * (1.0 - ty) + (h11 - h01) * ty) / cell_size;
  const double dzdy =
      ((h01 - h00) * (1.0 - tx) + (h11 - h10) * tx) / cell_size;
  return Vec3(-dzdx, -dzdy, 1.0).normalized();
}

Heightfield make_flat(double width, double depth, double cell_size) {
  Heightfield hf;
  hf.cell_size = cell_size;
  hf.nx = static_cast<int>(std::lround(width / cell_size)) + 1;
  hf.ny = static_cast<int>(std::lround(depth / cell_size)) + 1;
  hf.origin = Vec2(-0.5 * width, -0.5 * depth);
  hf.heights.assign(static_cast<size_t>(hf.nx) * hf.ny, 0.0);
  return hf;
}

Heightfield make_tile(const TerrainSpec& spec, uint64_t seed) {
  Rng rng(seed);
  Heightfield hf = blank_tile(0.05, 0.8);
  switch (spec.kind) {
    case TerrainKind::Flat:
      break;
    case TerrainKind::SmoothSlope:
    case TerrainKind::RoughSlope: {
      for (int iy = 0; iy < hf.ny; ++iy) {
        const double h =
            trapezoid(iy * hf.cell_size, kTileSize, 2.0, spec.slope_rate);
        for (int ix = 0; ix < hf.nx; ++ix) hf.at(ix, iy) = h;
      }
      if (spec.kind == TerrainKind::RoughSlope)
        add_noise(hf, spec.noise_amp, rng);
      break;
    }
    case TerrainKind::StairsUp:
    case TerrainKind::StairsDown: {
      const int nodes_per_run = std::max(
          1, static_cast<int>(std::lround(spec.step_run / hf.cell_size)));
      const double sign = spec.kind == TerrainKind::StairsUp ? 1.0 : -1.0;
      for (int iy = 0; iy < hf.ny; ++iy) {
        const int step = iy / nodes_per_run;
        const double h = sign * step * spec.step_height;
        for (int ix = 0; ix < hf.nx; ++ix) hf.at(ix, iy) = h;
      }
      break;
    }
    case TerrainKind::Discrete: {
      constexpr int kObstacles = 24;
      for (int k = 0; k < kObstacles; ++k) {
        const double cx = rng.uniform(0.0, kTileSize);
        const double cy = rng.uniform(0.0, kTileSize);
        const double wx = rng.uniform(0.3, 1.2);
        const double wy = rng.uniform(0.3, 1.2);
        const double h = spec.obstacle_height * rng.uniform(0.25, 1.0);
        const int x0 = std::max(
            0, static_cast<int>(std::ceil((cx - 0.5 * wx) / hf.cell_size)));
        const int x1 = std::min(
            hf.nx - 1,
            static_cast<int>(std::floor((cx + 0.5 * wx) / hf.cell_size)));
        const int y0 = std::max(
            0, static_cast<int>(std::ceil((cy - 0.5 * wy) / hf.cell_size)));
        const int y1 = std::min(
            hf.ny - 1,
            static_cast<int>(std::floor((cy + 0.5 * wy) / hf.cell_size)));
        for (int iy = y0; iy <= y1; ++iy)
          for (int ix = x0; ix <= x1; ++ix)
            hf.at(ix, iy) = std::max(hf.at(ix, iy), h);
      }
      break;
    }
  }
  return hf;
}

bool CurriculumGrid::tile_of(const Vec2& p, int* col, int* row) const {
  const double cx = (p.x() - core_origin.x()) / tile_size;
  const double cy = (p.y() - core_origin.y()) / tile_size;
  if (cx < 0.0 || cy < 0.0 || cx >= kCols || cy >= kRows) return false;
  if (col) *col = static_cast<int>(cx);
  if (row) *row = static_cast<int>(cy);
  return true;
}

Curriculum make_curriculum(uint64_t seed) {
  Curriculum cur;
  CurriculumGrid& grid = cur.grid;

  // Fixed column layout matching the published type proportions.
  const std::array<std::pair<TerrainKind, int>, 5> counts = {{
      {TerrainKind::SmoothSlope, 2},
      {TerrainKind::RoughSlope, 2},
      {TerrainKind::StairsUp, 7},
      {TerrainKind::StairsDown, 5},
      {TerrainKind::Discrete, 4},
  }};
  int col = 0;
  for (const auto& [kind, n] : counts)
    for (int i = 0; i < n; ++i) grid.column_kinds[col++] = kind;

  Heightfield& field = cur.field;
  field.cell_size = 0.05;
  const int tile_nodes =
      static_cast<int>(std::lround(grid.tile_size / field.cell_size));
  const int apron_nodes =
      static_cast<int>(std::lround(grid.apron / field.cell_size));
  field.nx = CurriculumGrid::kCols * tile_nodes + 2 * apron_nodes + 1;
  field.ny = CurriculumGrid::kRows * tile_nodes + 2 * apron_nodes + 1;
  field.origin = Vec2(-grid.apron, -grid.apron);
  field.heights.assign(static_cast<size_t>(field.nx) * field.ny, 0.0);

  Rng master(seed);
  for (int c = 0; c < CurriculumGrid::kCols; ++c) {
    for (int r = 0; r < CurriculumGrid::kRows; ++r) {
      const TerrainSpec spec = make_spec(grid.column_kinds[c], r);
      const Heightfield tile = make_tile(
          spec, master.fork(static_cast<uint64_t>(r) * CurriculumGrid::kCols +
                            c)
                    .state());
      for (int iy = 0; iy < tile.ny; ++iy)
        for (int ix = 0; ix < tile.nx; ++ix)
          field.at(apron_nodes + c * tile_nodes + ix,
                   apron_nodes + r * tile_nodes + iy) = tile.at(ix, iy);
    }
  }
  return cur;
}

Heightfield make_traverse_course(uint64_t seed, double width,
                                 double noise_amp) {
  constexpr double kBlock = 6.0;
  constexpr double kApron = 8.0;
  constexpr double kSmoothRate = 0.25;
  constexpr double kPlateau = 2.0;
  constexpr double kRoughPlateau = 0.625;

  Heightfield hf;
  hf.cell_size = 0.05;
  hf.nx = static_cast<int>(std::lround(width / hf.cell_size)) + 1;
  hf.ny = static_cast<int>(std::lround((4.0 * kBlock + 2.0 * kApron) /
                                       hf.cell_size)) +
          1;
  hf.origin = Vec2(0.0, -kApron);
  hf.heights.assign(static_cast<size_t>(hf.nx) * hf.ny, 0.0);

  Rng rng(seed);
  const double rough_rate = kRoughPlateau / (0.5 * (kBlock - kPlateau));
  for (int iy = 0; iy < hf.ny; ++iy) {
    const double y = hf.origin.y() + iy * hf.cell_size;
    double h = 0.0;
    bool rough = false;
    if (y >= 2.0 * kBlock && y <= 3.0 * kBlock) {
      h = trapezoid(y - 2.0 * kBlock, kBlock, kPlateau, kSmoothRate);
    } else if (y > 3.0 * kBlock && y <= 4.0 * kBlock) {
      h = trapezoid(y - 3.0 * kBlock, kBlock, kPlateau, rough_rate);
      rough = true;
    }
    for (int ix = 0; ix < hf.nx; ++ix)
      hf.at(ix, iy) = rough ? h + rng.uniform(-noise_amp, noise_amp) : h;
  }
  return hf;
}

void write_csv(const Heightfield& hf, std::ostream& os) {
  char buf[32];
  const auto put = [&](double v, char sep) {
    std::snprintf(buf, sizeof(buf), "%.17g%c", v, sep);
    os << buf;
  };
  put(hf.cell_size, ',');
  os << hf.nx << ',' << hf.ny << ',';
  put(hf.origin.x(), ',');
  put(hf.origin.y(), ',');
  put(hf.friction, '\n');
  for (int iy = 0; iy < hf.ny; ++iy)
    for (int ix = 0; ix < hf.nx; ++ix)
      put(hf.at(ix, iy), ix + 1 == hf.nx ? '\n' : ',');
}

Heightfield read_csv(std::istream& is) {
  Heightfield hf;
  std::string header;
  if (!std::getline(is, header))
    throw std::runtime_error("empty heightfield CSV");
  {
    std::istringstream hs(header);
    char c;
    hs >> hf.cell_size >> c >> hf.nx >> c >> hf.ny >> c >> hf.origin.x() >>
        c >> hf.origin.y() >> c >> hf.friction;
    if (hs.fail()) throw std::runtime_error("bad heightfield CSV header");
  }
  if (hf.nx < 2 || hf.ny < 2 || hf.cell_size <= 0.0)
    throw std::runtime_error("bad heightfield CSV dimensions");
  hf.heights.resize(static_cast<size_t>(hf.nx) * hf.ny);
  for (int iy = 0; iy < hf.ny; ++iy) {
    std::string line;
    if (!std::getline(is, line))
      throw std::runtime_error("truncated heightfield CSV");
    std::istringstream ls(line);
    for (int ix = 0; ix < hf.nx; ++ix) {
      std::string token;
      if (!std::getline(ls, token, ','))
        throw std::runtime_error("short heightfield CSV row");
      hf.at(ix, iy) = std::strtod(token.c_str(), nullptr);
    }
  }
  return hf;
}

}  // namespace ocl
