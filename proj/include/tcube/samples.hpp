#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tcube/cube.hpp"
#include "tcube/date.hpp"

namespace tcube {

struct SamplePoint {
  double longitude = 0;
  double latitude = 0;
  Date start_date;
  Date end_date;
  std::string label;

  bool operator==(const SamplePoint&) const = default;
};

// Columns are matched by header name, in any order. Extra columns are ignored.
std::vector<SamplePoint> parse_samples_csv(std::string_view text);
std::vector<SamplePoint> load_samples_csv(const std::filesystem::path& path);
// FeatureCollection of Point features with label/start_date/end_date properties.
std::vector<SamplePoint> load_samples_geojson(const std::filesystem::path& path);
// Dispatches on extension (.csv, .geojson/.json).
std::vector<SamplePoint> load_samples(const std::filesystem::path& path);

struct TimeSeriesRow {
  SamplePoint point;
  std::vector<float> series;  // [time][band]
};

struct TimeSeriesTable {
  std::string cube_id;
  std::vector<std::string> band_names;
  Timeline timeline;
  std::vector<TimeSeriesRow> rows;

  int n_times() const { return timeline.n; }
  int n_bands() const { return static_cast<int>(band_names.size()); }
  std::size_t n_features() const { return static_cast<std::size_t>(n_times()) * band_names.size(); }
  float value(std::size_t row, int time, int band) const {
    return rows[row].series[static_cast<std::size_t>(time) * band_names.size() + static_cast<std::size_t>(band)];
  }
  // Sorted distinct labels.
  std::vector<std::string> labels() const;
};

struct Extraction {
  TimeSeriesTable table;
  std::size_t dropped_outside = 0;  // not inside any tile
  std::size_t rejected_span = 0;    // validity interval does not cover the cube timeline
};

// Nearest-pixel extraction of every band over the whole cube timeline. A point
// is kept when its [start_date, end_date] covers every instant start of the
// timeline; rows keep input order.
Extraction get_data(const RegularCube& cube, std::span<const SamplePoint> points,
                    std::size_t workers = default_workers());

struct NormStats {
  std::vector<float> q02;
  std::vector<float> q98;

  bool operator==(const NormStats&) const = default;
};

// Element at sorted index ceil(q*(n-1)).
float sorted_quantile(std::span<const float> sorted, double q);

NormStats fit_normalization(const TimeSeriesTable& t);
// Bands whose q02 == q98; they normalize to 0.5.
std::vector<std::size_t> constant_bands(const NormStats& s);
// In place on a [time][band] feature vector (or several concatenated).
void normalize_features(std::span<float> features, const NormStats& s);
TimeSeriesTable apply_normalization(const TimeSeriesTable& t, const NormStats& s);

// Wide CSV (metadata columns, then b{band}_t{index}) plus a `<path>.json`
// sidecar holding the cube id, band names and timeline.
void write_table(const TimeSeriesTable& t, const std::filesystem::path& path);
TimeSeriesTable read_table(const std::filesystem::path& path);

}  // namespace tcube
