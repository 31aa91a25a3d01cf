#include "tcube/samples.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "json.hpp"
#include "tcube/csv.hpp"
#include "tcube/error.hpp"
#include "tcube/io.hpp"

namespace tcube {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double parse_number(const std::string& s, const std::string& what, std::size_t line) {
  double v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw ValidationError("line " + std::to_string(line) + ": invalid " + what + " '" + s + "'");
  }
  return v;
}

float parse_float(const std::string& s, std::size_t line) {
  float v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw ValidationError("line " + std::to_string(line) + ": invalid value '" + s + "'");
  }
  return v;
}

Date parse_date_at(const std::string& s, std::size_t line) {
  try {
    return Date::parse(s);
  } catch (const ValidationError& e) {
    throw ValidationError("line " + std::to_string(line) + ": " + e.what());
  }
}

void check_point(const SamplePoint& p, std::size_t line) {
  if (p.label.empty()) throw ValidationError("line " + std::to_string(line) + ": empty label");
  if (p.end_date < p.start_date) throw ValidationError("line " + std::to_string(line) + ": start_date after end_date");
}

std::string format_float(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
  return buf;
}

}  // namespace

std::vector<SamplePoint> parse_samples_csv(std::string_view text) {
  const auto records = csv::parse(text);
  if (records.empty()) throw ValidationError("samples: empty file");
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < records[0].fields.size(); ++i) col[records[0].fields[i]] = i;
  for (const char* name : {"longitude", "latitude", "start_date", "end_date", "label"}) {
    if (!col.contains(name)) throw ValidationError(std::string("samples: missing column '") + name + "'");
  }
  std::vector<SamplePoint> out;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.fields.size() != records[0].fields.size()) {
      throw ValidationError("line " + std::to_string(rec.line) + ": expected " + std::to_string(records[0].fields.size()) +
                            " fields, found " + std::to_string(rec.fields.size()));
    }
    SamplePoint p;
    p.longitude = parse_number(rec.fields[col["longitude"]], "longitude", rec.line);
    p.latitude = parse_number(rec.fields[col["latitude"]], "latitude", rec.line);
    p.start_date = parse_date_at(rec.fields[col["start_date"]], rec.line);
    p.end_date = parse_date_at(rec.fields[col["end_date"]], rec.line);
    p.label = rec.fields[col["label"]];
    check_point(p, rec.line);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<SamplePoint> load_samples_csv(const fs::path& path) {
  try {
    return parse_samples_csv(io::read_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::vector<SamplePoint> load_samples_geojson(const fs::path& path) {
  std::vector<SamplePoint> out;
  try {
    const json j = json::parse(io::read_file(path));
    if (j.value("type", "") != "FeatureCollection") throw ValidationError("not a FeatureCollection");
    std::size_t index = 0;
    for (const auto& f : j.at("features")) {
      ++index;
      const auto& geom = f.at("geometry");
      if (geom.at("type").get<std::string>() != "Point") {
        throw ValidationError("feature " + std::to_string(index) + " is not a Point");
      }
      const auto coords = geom.at("coordinates").get<std::vector<double>>();
      if (coords.size() < 2) throw ValidationError("feature " + std::to_string(index) + " has bad coordinates");
      const auto& props = f.at("properties");
      SamplePoint p;
      p.longitude = coords[0];
      p.latitude = coords[1];
      p.start_date = Date::parse(props.at("start_date").get<std::string>());
      p.end_date = Date::parse(props.at("end_date").get<std::string>());
      p.label = props.at("label").get<std::string>();
      if (p.label.empty()) throw ValidationError("feature " + std::to_string(index) + ": empty label");
      if (p.end_date < p.start_date) throw ValidationError("feature " + std::to_string(index) + ": start_date after end_date");
      out.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": malformed GeoJSON: " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  if (out.empty()) throw ValidationError(path.string() + ": no sample features");
  return out;
}

std::vector<SamplePoint> load_samples(const fs::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".geojson" || ext == ".json") return load_samples_geojson(path);
  return load_samples_csv(path);
}

std::vector<std::string> TimeSeriesTable::labels() const {
  std::set<std::string> s;
  for (const auto& r : rows) s.insert(r.point.label);
  return {s.begin(), s.end()};
}

Extraction get_data(const RegularCube& cube, std::span<const SamplePoint> points, std::size_t workers) {
  if (points.empty()) throw ValidationError("get_data: no sample points");
  Extraction ex;
  ex.table.cube_id = cube.id;
  ex.table.timeline = cube.timeline;
  for (const auto& b : cube.bands) ex.table.band_names.push_back(b.name);

  const Date first = cube.timeline.start;
  const Date last = cube.timeline.instant(cube.timeline.n - 1);
  struct Kept {
    std::size_t point;
    std::size_t tile;
    std::int64_t offset;
  };
  std::vector<Kept> kept;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    std::optional<Kept> k;
    for (std::size_t t = 0; t < cube.tiles.size() && !k; ++t) {
      if (auto px = grid_pixel(cube.tiles[t], cube.affine, p.longitude, p.latitude)) {
        k = Kept{i, t, static_cast<std::int64_t>(px->row) * cube.tiles[t].ncols + px->col};
      }
    }
    if (!k) {
      ++ex.dropped_outside;
    } else if (first < p.start_date || p.end_date < last) {
      ++ex.rejected_span;
    } else {
      kept.push_back(*k);
    }
  }
  if (kept.empty()) throw EmptyResultError("get_data: no sample point falls inside the cube with a covering date range");

  const std::size_t nb = cube.bands.size();
  const std::size_t nt = static_cast<std::size_t>(cube.timeline.n);
  ex.table.rows.resize(kept.size());
  for (std::size_t r = 0; r < kept.size(); ++r) {
    ex.table.rows[r].point = points[kept[r].point];
    ex.table.rows[r].series.resize(nt * nb);
  }

  // one pass per stored raster; each task writes a disjoint (time, band) slot of every row
  for (std::size_t ti = 0; ti < cube.tiles.size(); ++ti) {
    std::vector<std::size_t> rows_here;
    for (std::size_t r = 0; r < kept.size(); ++r)
      if (kept[r].tile == ti) rows_here.push_back(r);
    if (rows_here.empty()) continue;
    const TileGrid& g = cube.tiles[ti];
    parallel_for(nb * nt, workers, [&](std::size_t task) {
      const std::size_t b = task / nt;
      const std::size_t t = task % nt;
      const fs::path path = cube.raster_path(g.tile, static_cast<int>(b), static_cast<int>(t));
      std::string bytes;
      try {
        bytes = io::read_file(path);
      } catch (const Error&) {
        throw IntegrityError("missing cube raster '" + path.string() + "'");
      }
      if (bytes.size() != static_cast<std::size_t>(g.pixels()) * 2) {
        throw IntegrityError("cube raster '" + path.string() + "' has wrong size");
      }
      const auto raster = io::decode_i16(bytes);
      const double scale = cube.bands[b].scale;
      for (std::size_t r : rows_here) {
        ex.table.rows[r].series[t * nb + b] = static_cast<float>(raster[static_cast<std::size_t>(kept[r].offset)] * scale);
      }
    });
  }
  return ex;
}

float sorted_quantile(std::span<const float> sorted, double q) {
  if (sorted.empty()) throw ValidationError("quantile of an empty sample");
  // the epsilon keeps q*(n-1) that should be integral from rounding up
  const double pos = std::ceil(q * static_cast<double>(sorted.size() - 1) - 1e-9);
  const auto idx = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(sorted.size() - 1)));
  return sorted[idx];
}

NormStats fit_normalization(const TimeSeriesTable& t) {
  if (t.rows.empty()) throw ValidationError("normalization: empty table");
  NormStats s;
  const int nb = t.n_bands();
  std::vector<float> values;
  for (int b = 0; b < nb; ++b) {
    values.clear();
    for (std::size_t r = 0; r < t.rows.size(); ++r)
      for (int k = 0; k < t.n_times(); ++k) values.push_back(t.value(r, k, b));
    std::sort(values.begin(), values.end());
    s.q02.push_back(sorted_quantile(values, 0.02));
    s.q98.push_back(sorted_quantile(values, 0.98));
  }
  return s;
}

std::vector<std::size_t> constant_bands(const NormStats& s) {
  std::vector<std::size_t> out;
  for (std::size_t b = 0; b < s.q02.size(); ++b)
    if (s.q02[b] == s.q98[b]) out.push_back(b);
  return out;
}

void normalize_features(std::span<float> features, const NormStats& s) {
  const std::size_t nb = s.q02.size();
  for (std::size_t i = 0; i < features.size(); ++i) {
    const std::size_t b = i % nb;
    const float lo = s.q02[b];
    const float hi = s.q98[b];
    if (lo == hi) {
      features[i] = 0.5f;
    } else {
      features[i] = std::clamp((features[i] - lo) / (hi - lo), 0.0f, 1.0f);
    }
  }
}

TimeSeriesTable apply_normalization(const TimeSeriesTable& t, const NormStats& s) {
  if (s.q02.size() != t.band_names.size()) throw ValidationError("normalization stats do not match table bands");
  TimeSeriesTable out = t;
  for (auto& r : out.rows) normalize_features(r.series, s);
  return out;
}

void write_table(const TimeSeriesTable& t, const fs::path& path) {
  std::string text = "longitude,latitude,start_date,end_date,label,cube";
  for (int k = 0; k < t.n_times(); ++k)
    for (const auto& b : t.band_names) text += ",b" + b + "_t" + std::to_string(k);
  text += "\n";
  char buf[64];
  for (const auto& r : t.rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g", r.point.longitude, r.point.latitude);
    text += buf;
    text += "," + r.point.start_date.str() + "," + r.point.end_date.str() + "," + csv::quote(r.point.label) + "," +
            csv::quote(t.cube_id);
    for (float v : r.series) text += "," + format_float(v);
    text += "\n";
  }
  io::write_file_atomic(path, text);

  const json meta{{"cube_id", t.cube_id},
                  {"bands", t.band_names},
                  {"timeline", {{"start", t.timeline.start.str()}, {"period_days", t.timeline.period_days}, {"n", t.timeline.n}}}};
  auto side = path;
  side += ".json";
  io::write_file_atomic(side, meta.dump(2) + "\n");
}

TimeSeriesTable read_table(const fs::path& path) {
  auto side = path;
  side += ".json";
  if (!fs::exists(side)) throw ValidationError("time-series table sidecar '" + side.string() + "' not found");
  TimeSeriesTable t;
  try {
    const json meta = json::parse(io::read_file(side));
    t.cube_id = meta.at("cube_id").get<std::string>();
    t.band_names = meta.at("bands").get<std::vector<std::string>>();
    const auto& tl = meta.at("timeline");
    t.timeline = Timeline{Date::parse(tl.at("start").get<std::string>()), tl.at("period_days").get<int>(), tl.at("n").get<int>()};
  } catch (const json::exception& e) {
    throw ValidationError("malformed table sidecar '" + side.string() + "': " + e.what());
  }
  const auto records = csv::parse(io::read_file(path));
  if (records.empty()) throw ValidationError(path.string() + ": empty table");
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < records[0].fields.size(); ++i) col[records[0].fields[i]] = i;
  auto need = [&](const std::string& name) {
    const auto it = col.find(name);
    if (it == col.end()) throw ValidationError(path.string() + ": missing column '" + name + "'");
    return it->second;
  };
  std::vector<std::size_t> value_cols;
  for (int k = 0; k < t.n_times(); ++k)
    for (const auto& b : t.band_names) value_cols.push_back(need("b" + b + "_t" + std::to_string(k)));
  const std::size_t c_lon = need("longitude"), c_lat = need("latitude"), c_s = need("start_date"), c_e = need("end_date"),
                    c_l = need("label");
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& f = records[r].fields;
    const std::size_t line = records[r].line;
    if (f.size() != records[0].fields.size()) throw ValidationError(path.string() + ": line " + std::to_string(line) + " has wrong field count");
    TimeSeriesRow row;
    row.point.longitude = parse_number(f[c_lon], "longitude", line);
    row.point.latitude = parse_number(f[c_lat], "latitude", line);
    row.point.start_date = parse_date_at(f[c_s], line);
    row.point.end_date = parse_date_at(f[c_e], line);
    row.point.label = f[c_l];
    check_point(row.point, line);
    row.series.reserve(value_cols.size());
    for (std::size_t c : value_cols) row.series.push_back(parse_float(f[c], line));
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace tcube
