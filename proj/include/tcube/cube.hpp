#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tcube/catalog.hpp"
#include "tcube/date.hpp"
#include "tcube/parallel.hpp"

namespace tcube {

// Contiguous half-open intervals [start + i*period, start + (i+1)*period).
struct Timeline {
  Date start;
  int period_days = 16;
  int n = 0;

  Date instant(int i) const { return start + i * period_days; }
  Date end_exclusive() const { return start + n * period_days; }
  std::vector<Date> instants() const;
  // Interval containing d, if any.
  std::optional<int> index_of(Date d) const;

  bool operator==(const Timeline&) const = default;
};

Timeline build_timeline(Date start, Date end, int period_days);

struct TileGrid {
  std::string tile;
  int nrows = 0;
  int ncols = 0;
  std::array<double, 2> origin{0.0, 0.0};  // upper-left corner, CRS units
  std::array<double, 2> resolution{1.0, 1.0};

  std::int64_t pixels() const { return static_cast<std::int64_t>(nrows) * ncols; }
  bool operator==(const TileGrid&) const = default;
};

struct Window {
  int row0 = 0;
  int col0 = 0;
  int nrows = 0;
  int ncols = 0;

  std::int64_t pixels() const { return static_cast<std::int64_t>(nrows) * ncols; }
  bool operator==(const Window&) const = default;
};

struct PixelIndex {
  int row = 0;
  int col = 0;
  bool operator==(const PixelIndex&) const = default;
};

// Nearest pixel centre for a lon/lat location; a location exactly on the edge
// between two pixels maps to the lower index. Empty when outside the grid.
std::optional<PixelIndex> grid_pixel(const TileGrid& g, const Affine& affine, double lon, double lat);

struct RegularCube {
  std::string id;
  std::string crs;
  Affine affine;
  std::vector<BandDef> bands;  // stored as int16
  Timeline timeline;
  std::vector<TileGrid> tiles;
  std::filesystem::path root;
  std::int64_t filled_pixel_count = 0;

  const TileGrid& tile(const std::string& name) const;
  int band_index(const std::string& name) const;
  std::filesystem::path raster_path(const std::string& tile, int band, int instant) const;
  std::filesystem::path manifest_path() const { return root / "cube.json"; }
};

// Composites, gap-fills and writes every (tile, band, instant) raster under `out`
// and writes `cube.json`. Deterministic for a given input.
RegularCube regularize(const CollectionDescriptor& c, const Timeline& timeline, const std::filesystem::path& out,
                       std::size_t workers = default_workers());

RegularCube load_cube(const std::filesystem::path& root);
void write_cube_manifest(const RegularCube& cube);

struct RasterBlock {
  Window window;
  int n_bands = 0;
  int n_times = 0;
  std::vector<float> values;  // [band][time][row][col], physical units

  float at(int band, int time, int row, int col) const {
    return values[((static_cast<std::size_t>(band) * n_times + time) * window.nrows + row) * window.ncols + col];
  }
};

RasterBlock read_block(const RegularCube& cube, const std::string& tile, const Window& window,
                       std::span<const int> bands, std::span<const int> instants);
// All bands, all instants.
RasterBlock read_block(const RegularCube& cube, const std::string& tile, const Window& window);

PixelIndex pixel_at(const RegularCube& cube, const std::string& tile, double lon, double lat);

struct PixelLocation {
  std::string tile;
  PixelIndex pixel;
};
// First tile (in manifest order) containing the location.
std::optional<PixelLocation> locate(const RegularCube& cube, double lon, double lat);

}  // namespace tcube
