#include "tcube/cube.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "tcube/error.hpp"
#include "tcube/io.hpp"

namespace tcube {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<Date> Timeline::instants() const {
  std::vector<Date> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(instant(i));
  return out;
}

std::optional<int> Timeline::index_of(Date d) const {
  if (d < start || !(d < end_exclusive())) return std::nullopt;
  return (d - start) / period_days;
}

Timeline build_timeline(Date start, Date end, int period_days) {
  if (end < start) throw ValidationError("timeline: start date after end date");
  if (period_days < 1) throw ValidationError("timeline: period must be at least one day");
  Timeline t{start, period_days, 0};
  for (Date d = start; d <= end; d = d + period_days) ++t.n;
  return t;
}

std::optional<PixelIndex> grid_pixel(const TileGrid& g, const Affine& affine, double lon, double lat) {
  const auto xy = affine.to_crs(lon, lat);
  const double u = (xy[0] - g.origin[0]) / g.resolution[0];
  const double v = (g.origin[1] - xy[1]) / g.resolution[1];
  if (!(u >= 0.0 && u <= g.ncols && v >= 0.0 && v <= g.nrows)) return std::nullopt;
  auto to_index = [](double f) { return f <= 0.0 ? 0 : static_cast<int>(std::ceil(f)) - 1; };
  return PixelIndex{to_index(v), to_index(u)};
}

const TileGrid& RegularCube::tile(const std::string& name) const {
  for (const auto& t : tiles)
    if (t.tile == name) return t;
  throw ValidationError("cube '" + id + "' has no tile '" + name + "'");
}

int RegularCube::band_index(const std::string& name) const {
  for (std::size_t i = 0; i < bands.size(); ++i)
    if (bands[i].name == name) return static_cast<int>(i);
  throw ValidationError("cube '" + id + "' has no band '" + name + "'");
}

fs::path RegularCube::raster_path(const std::string& tile, int band, int instant) const {
  return root / tile / (tile + "_" + bands.at(static_cast<std::size_t>(band)).name + "_" + timeline.instant(instant).str() + ".bin");
}

namespace {

// Stored values of one asset converted to double; NaN marks invalid pixels.
std::vector<double> load_asset(const CollectionDescriptor& c, const ItemDescriptor& item, const BandDef& band) {
  const std::string src = c.resolve_asset(item, band.name);
  std::string bytes;
  try {
    bytes = io::read_source(src);
  } catch (const RuntimeFailure& e) {
    throw RuntimeFailure(std::string("regularize: asset not resolvable: ") + e.what());
  }
  const std::size_t n = static_cast<std::size_t>(item.nrows) * item.ncols;
  if (bytes.size() != n * dtype_size(band.dtype)) {
    throw IntegrityError("regularize: asset '" + src + "' has " + std::to_string(bytes.size()) + " bytes, expected " +
                         std::to_string(n * dtype_size(band.dtype)));
  }
  std::vector<double> out(n);
  if (band.dtype == DType::int16) {
    const auto raw = io::decode_i16(bytes);
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = raw[i] == band.nodata ? std::numeric_limits<double>::quiet_NaN() : raw[i];
    }
  } else {
    const auto raw = io::decode_f32(bytes);
    for (std::size_t i = 0; i < n; ++i) {
      const double v = raw[i];
      out[i] = (!std::isfinite(v) || v == band.nodata) ? std::numeric_limits<double>::quiet_NaN() : v;
    }
  }
  return out;
}

double median_of(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

BandDef output_band(const BandDef& in) {
  BandDef out = in;
  out.dtype = DType::int16;
  if (in.dtype == DType::float32) {
    out.scale = in.scale * 1e-4;
    out.nodata = std::numeric_limits<std::int16_t>::min();
  } else {
    out.nodata = io::round_to_i16(in.nodata);
  }
  return out;
}

}  // namespace

RegularCube regularize(const CollectionDescriptor& c, const Timeline& timeline, const fs::path& out,
                       std::size_t workers) {
  if (timeline.n < 1) throw ValidationError("regularize: empty timeline");
  RegularCube cube;
  cube.id = c.id;
  cube.crs = c.crs;
  cube.affine = c.affine;
  cube.timeline = timeline;
  cube.root = out;

  std::vector<const BandDef*> in_bands;
  for (const auto& b : c.bands) {
    if (b.is_cloud_mask) continue;
    in_bands.push_back(&b);
    cube.bands.push_back(output_band(b));
  }
  if (in_bands.empty()) throw ValidationError("regularize: collection has no data bands");
  const BandDef* mask_band = c.cloud_band();

  std::vector<std::vector<const ItemDescriptor*>> tile_items;
  for (const auto& name : c.tiles()) {
    std::vector<const ItemDescriptor*> items;
    const ItemDescriptor* first = nullptr;
    for (const auto& it : c.items) {
      if (it.tile != name) continue;
      if (!first) first = &it;
      if (it.nrows != first->nrows || it.ncols != first->ncols || it.origin != first->origin) {
        throw ValidationError("regularize: items of tile " + name + " do not share one grid");
      }
      if (timeline.index_of(it.datetime)) items.push_back(&it);
    }
    cube.tiles.push_back(TileGrid{name, first->nrows, first->ncols, first->origin, c.resolution});
    tile_items.push_back(std::move(items));
  }

  for (const auto& t : cube.tiles) fs::create_directories(out / t.tile);

  std::atomic<std::int64_t> filled{0};
  const std::size_t n_tasks = cube.tiles.size() * in_bands.size();
  parallel_for(n_tasks, workers, [&](std::size_t task) {
    const std::size_t ti = task / in_bands.size();
    const int bi = static_cast<int>(task % in_bands.size());
    const TileGrid& grid = cube.tiles[ti];
    const BandDef& in = *in_bands[static_cast<std::size_t>(bi)];
    const BandDef& outb = cube.bands[static_cast<std::size_t>(bi)];
    const std::size_t npix = static_cast<std::size_t>(grid.pixels());
    const std::size_t nt = static_cast<std::size_t>(timeline.n);
    const double to_out = in.dtype == DType::float32 ? 1e4 : 1.0;
    constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

    // composite[t * npix + p], in output stored units, NaN where no valid observation
    std::vector<double> composite(nt * npix, kMissing);
    for (std::size_t t = 0; t < nt; ++t) {
      std::vector<std::vector<double>> obs;
      for (const ItemDescriptor* item : tile_items[ti]) {
        if (*timeline.index_of(item->datetime) != static_cast<int>(t)) continue;
        if (!item->assets.contains(in.name)) continue;
        auto values = load_asset(c, *item, in);
        if (mask_band && item->assets.contains(mask_band->name)) {
          const auto mask = load_asset(c, *item, *mask_band);
          for (std::size_t p = 0; p < npix; ++p) {
            if (std::isnan(mask[p]) || mask[p] != 0.0) values[p] = kMissing;
          }
        }
        obs.push_back(std::move(values));
      }
      std::vector<double> valid;
      for (std::size_t p = 0; p < npix; ++p) {
        valid.clear();
        for (const auto& o : obs)
          if (!std::isnan(o[p])) valid.push_back(o[p]);
        if (!valid.empty()) composite[t * npix + p] = median_of(valid) * to_out;
      }
    }

    std::vector<double> all_valid;
    for (double v : composite)
      if (!std::isnan(v)) all_valid.push_back(v);
    const bool have_fallback = !all_valid.empty();
    const double fallback = have_fallback ? median_of(all_valid) : 0.0;

    std::int64_t filled_here = 0;
    std::vector<double> series(nt);
    for (std::size_t p = 0; p < npix; ++p) {
      for (std::size_t t = 0; t < nt; ++t) series[t] = composite[t * npix + p];
      int prev = -1;
      for (int t = 0; t < static_cast<int>(nt); ++t) {
        if (std::isnan(series[static_cast<std::size_t>(t)])) continue;
        if (prev < 0) {
          for (int k = 0; k < t; ++k) series[static_cast<std::size_t>(k)] = series[static_cast<std::size_t>(t)];
        } else {
          const double a = series[static_cast<std::size_t>(prev)];
          const double b = series[static_cast<std::size_t>(t)];
          for (int k = prev + 1; k < t; ++k) {
            series[static_cast<std::size_t>(k)] = a + (b - a) * (k - prev) / static_cast<double>(t - prev);
          }
        }
        prev = t;
      }
      if (prev < 0) {
        if (!have_fallback) {
          throw RuntimeFailure("regularize: band " + in.name + " of tile " + grid.tile +
                               " has no valid observation anywhere");
        }
        std::fill(series.begin(), series.end(), fallback);
        ++filled_here;
      } else {
        for (std::size_t k = static_cast<std::size_t>(prev) + 1; k < nt; ++k) series[k] = series[static_cast<std::size_t>(prev)];
      }
      for (std::size_t t = 0; t < nt; ++t) composite[t * npix + p] = series[t];
    }
    filled += filled_here;

    const auto nodata = static_cast<std::int16_t>(outb.nodata);
    std::vector<std::int16_t> raster(npix);
    for (std::size_t t = 0; t < nt; ++t) {
      for (std::size_t p = 0; p < npix; ++p) {
        std::int16_t v = io::round_to_i16(composite[t * npix + p]);
        // the sentinel must never appear in a regular cube
        if (v == nodata) v = nodata == std::numeric_limits<std::int16_t>::max() ? v - 1 : v + 1;
        raster[p] = v;
      }
      io::write_file_atomic(cube.raster_path(grid.tile, bi, static_cast<int>(t)), io::encode_i16(raster));
    }
  });

  cube.filled_pixel_count = filled.load();
  write_cube_manifest(cube);
  return cube;
}

void write_cube_manifest(const RegularCube& cube) {
  json j;
  j["id"] = cube.id;
  j["crs"] = cube.crs;
  j["affine"] = cube.affine.c;
  j["bands"] = json::array();
  for (const auto& b : cube.bands) {
    j["bands"].push_back({{"name", b.name}, {"dtype", to_string(b.dtype)}, {"scale", b.scale}, {"nodata", b.nodata}});
  }
  j["timeline"] = {{"start", cube.timeline.start.str()}, {"period_days", cube.timeline.period_days}, {"n", cube.timeline.n}};
  j["tiles"] = json::array();
  for (const auto& t : cube.tiles) {
    j["tiles"].push_back(
        {{"tile", t.tile}, {"nrows", t.nrows}, {"ncols", t.ncols}, {"origin", t.origin}, {"resolution", t.resolution}});
  }
  j["filled_pixel_count"] = cube.filled_pixel_count;
  fs::create_directories(cube.root);
  io::write_file_atomic(cube.manifest_path(), j.dump(2) + "\n");
}

RegularCube load_cube(const fs::path& root) {
  const fs::path manifest = root / "cube.json";
  if (!fs::exists(manifest)) throw ValidationError("no cube manifest at '" + manifest.string() + "'");
  RegularCube cube;
  cube.root = root;
  try {
    const json j = json::parse(io::read_file(manifest));
    cube.id = j.at("id").get<std::string>();
    cube.crs = j.at("crs").get<std::string>();
    if (j.contains("affine")) cube.affine.c = j.at("affine").get<std::array<double, 6>>();
    for (const auto& jb : j.at("bands")) {
      BandDef b;
      b.name = jb.at("name").get<std::string>();
      b.dtype = parse_dtype(jb.at("dtype").get<std::string>());
      b.scale = jb.at("scale").get<double>();
      b.nodata = jb.at("nodata").get<double>();
      cube.bands.push_back(std::move(b));
    }
    const auto& jt = j.at("timeline");
    cube.timeline.start = Date::parse(jt.at("start").get<std::string>());
    cube.timeline.period_days = jt.at("period_days").get<int>();
    cube.timeline.n = jt.at("n").get<int>();
    for (const auto& g : j.at("tiles")) {
      cube.tiles.push_back(TileGrid{g.at("tile").get<std::string>(), g.at("nrows").get<int>(), g.at("ncols").get<int>(),
                                    g.at("origin").get<std::array<double, 2>>(),
                                    g.at("resolution").get<std::array<double, 2>>()});
    }
    cube.filled_pixel_count = j.value("filled_pixel_count", std::int64_t{0});
  } catch (const json::exception& e) {
    throw ValidationError("malformed cube manifest '" + manifest.string() + "': " + e.what());
  }
  if (cube.timeline.n < 1 || cube.timeline.period_days < 1 || cube.bands.empty() || cube.tiles.empty()) {
    throw ValidationError("cube manifest '" + manifest.string() + "' describes an empty cube");
  }
  return cube;
}

RasterBlock read_block(const RegularCube& cube, const std::string& tile, const Window& w, std::span<const int> bands,
                       std::span<const int> instants) {
  const TileGrid& g = cube.tile(tile);
  if (w.row0 < 0 || w.col0 < 0 || w.nrows < 1 || w.ncols < 1 || w.row0 + w.nrows > g.nrows ||
      w.col0 + w.ncols > g.ncols) {
    throw ValidationError("read_block: window outside tile " + tile);
  }
  RasterBlock block;
  block.window = w;
  block.n_bands = static_cast<int>(bands.size());
  block.n_times = static_cast<int>(instants.size());
  block.values.resize(static_cast<std::size_t>(block.n_bands) * block.n_times * static_cast<std::size_t>(w.pixels()));

  std::vector<std::int16_t> row(static_cast<std::size_t>(w.ncols));
  const auto expected_size = static_cast<std::uintmax_t>(g.pixels()) * 2;
  std::size_t out = 0;
  for (int b : bands) {
    if (b < 0 || b >= static_cast<int>(cube.bands.size())) throw ValidationError("read_block: band index out of range");
    const double scale = cube.bands[static_cast<std::size_t>(b)].scale;
    for (int t : instants) {
      if (t < 0 || t >= cube.timeline.n) throw ValidationError("read_block: instant index out of range");
      const fs::path p = cube.raster_path(tile, b, t);
      std::error_code ec;
      const auto size = fs::file_size(p, ec);
      if (ec) throw IntegrityError("missing cube raster '" + p.string() + "'");
      if (size != expected_size) throw IntegrityError("cube raster '" + p.string() + "' has wrong size");
      std::ifstream in(p, std::ios::binary);
      if (!in) throw IntegrityError("cannot open cube raster '" + p.string() + "'");
      for (int r = 0; r < w.nrows; ++r) {
        const auto offset = (static_cast<std::int64_t>(w.row0 + r) * g.ncols + w.col0) * 2;
        in.seekg(offset);
        in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * 2));
        if (!in) throw IntegrityError("short read on cube raster '" + p.string() + "'");
        for (int col = 0; col < w.ncols; ++col) {
          block.values[out++] = static_cast<float>(row[static_cast<std::size_t>(col)] * scale);
        }
      }
    }
  }
  return block;
}

RasterBlock read_block(const RegularCube& cube, const std::string& tile, const Window& window) {
  std::vector<int> bands(cube.bands.size());
  for (std::size_t i = 0; i < bands.size(); ++i) bands[i] = static_cast<int>(i);
  std::vector<int> instants(static_cast<std::size_t>(cube.timeline.n));
  for (std::size_t i = 0; i < instants.size(); ++i) instants[i] = static_cast<int>(i);
  return read_block(cube, tile, window, bands, instants);
}

PixelIndex pixel_at(const RegularCube& cube, const std::string& tile, double lon, double lat) {
  const auto px = grid_pixel(cube.tile(tile), cube.affine, lon, lat);
  if (!px) {
    throw ValidationError("location (" + std::to_string(lon) + ", " + std::to_string(lat) + ") is outside tile " + tile);
  }
  return *px;
}

std::optional<PixelLocation> locate(const RegularCube& cube, double lon, double lat) {
  for (const auto& g : cube.tiles) {
    if (auto px = grid_pixel(g, cube.affine, lon, lat)) return PixelLocation{g.tile, *px};
  }
  return std::nullopt;
}

}  // namespace tcube
