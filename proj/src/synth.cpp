#include "tcube/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <set>

#include "tcube/error.hpp"
#include "tcube/io.hpp"

namespace tcube {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kScale = 1e-4;
constexpr double kNodata = -32768;
constexpr double kCloudValue = 0.95;
const char* const kCloudBand = "cloud_mask";

template <typename T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void validate(const ScenarioSpec& s) {
  const int K = s.n_classes();
  if (K < 2 || K > 255) throw ValidationError("scenario: need between 2 and 255 classes");
  if (std::set<std::string>(s.labels.begin(), s.labels.end()).size() != s.labels.size() ||
      std::any_of(s.labels.begin(), s.labels.end(), [](const std::string& l) { return l.empty(); })) {
    throw ValidationError("scenario: labels must be unique and non-empty");
  }
  if (s.bands.empty()) throw ValidationError("scenario: need at least one band");
  std::set<std::string> bands(s.bands.begin(), s.bands.end());
  if (bands.size() != s.bands.size() || bands.contains(kCloudBand)) {
    throw ValidationError("scenario: band names must be unique and not '" + std::string(kCloudBand) + "'");
  }
  if (s.nrows < 1 || s.ncols < 1) throw ValidationError("scenario: tile size must be positive");
  if (s.n_instants < 2 || s.period_days < 1) throw ValidationError("scenario: need >= 2 instants and period >= 1 day");
  if (!(s.resolution > 0)) throw ValidationError("scenario: resolution must be positive");
  if (s.block_size < 1) throw ValidationError("scenario: block_size must be >= 1");
  if (!(s.noise_sigma >= 0)) throw ValidationError("scenario: noise_sigma must be >= 0");
  if (!(s.cloud_fraction >= 0 && s.cloud_fraction < 1)) throw ValidationError("scenario: cloud_fraction must be in [0, 1)");
  if (!(s.confusion_fraction >= 0 && s.confusion_fraction < 1)) {
    throw ValidationError("scenario: confusion_fraction must be in [0, 1)");
  }
  if (s.n_train < 0 || s.n_refs < 0) throw ValidationError("scenario: sample counts must be >= 0");
  if (s.tile.empty() || s.tile.find('/') != std::string::npos) throw ValidationError("scenario: bad tile name");
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Counts `total` split over K classes, earlier classes taking the remainder.
int share(int total, int K, int k) { return total / K + (k < total % K ? 1 : 0); }

}  // namespace

ScenarioSpec scenario_from_json(const json& j) {
  static const std::set<std::string> known{"labels",       "bands",        "tile",           "nrows",
                                           "ncols",        "origin",       "resolution",     "start",
                                           "period_days",  "n_instants",   "block_size",     "noise_sigma",
                                           "cloud_fraction", "confusion_fraction", "n_train", "n_refs",
                                           "signatures"};
  if (!j.is_object()) throw ValidationError("scenario: expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) throw ValidationError("scenario: unknown key '" + it.key() + "'");
  }
  ScenarioSpec s;
  try {
    take(j, "labels", s.labels);
    take(j, "bands", s.bands);
    take(j, "tile", s.tile);
    take(j, "nrows", s.nrows);
    take(j, "ncols", s.ncols);
    take(j, "origin", s.origin);
    take(j, "resolution", s.resolution);
    if (j.contains("start")) s.start = Date::parse(j.at("start").get<std::string>());
    take(j, "period_days", s.period_days);
    take(j, "n_instants", s.n_instants);
    take(j, "block_size", s.block_size);
    take(j, "noise_sigma", s.noise_sigma);
    take(j, "cloud_fraction", s.cloud_fraction);
    take(j, "confusion_fraction", s.confusion_fraction);
    take(j, "n_train", s.n_train);
    take(j, "n_refs", s.n_refs);
    if (j.contains("signatures")) {
      for (const auto& g : j.at("signatures")) {
        ClassSignature c;
        c.base = g.at("base").get<std::vector<double>>();
        c.amplitude = g.at("amplitude").get<std::vector<double>>();
        c.phase = g.at("phase").get<std::vector<double>>();
        take(g, "pulse_center", c.pulse_center);
        take(g, "pulse_amplitude", c.pulse_amplitude);
        take(g, "pulse_width", c.pulse_width);
        s.signatures.push_back(std::move(c));
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("scenario: ") + e.what());
  }
  validate(s);
  return s;
}

json scenario_to_json(const ScenarioSpec& s) {
  json sigs = json::array();
  for (const auto& c : s.signatures) {
    sigs.push_back({{"base", c.base},
                    {"amplitude", c.amplitude},
                    {"phase", c.phase},
                    {"pulse_center", c.pulse_center},
                    {"pulse_amplitude", c.pulse_amplitude},
                    {"pulse_width", c.pulse_width}});
  }
  return {{"labels", s.labels},
          {"bands", s.bands},
          {"tile", s.tile},
          {"nrows", s.nrows},
          {"ncols", s.ncols},
          {"origin", s.origin},
          {"resolution", s.resolution},
          {"start", s.start.str()},
          {"period_days", s.period_days},
          {"n_instants", s.n_instants},
          {"block_size", s.block_size},
          {"noise_sigma", s.noise_sigma},
          {"cloud_fraction", s.cloud_fraction},
          {"confusion_fraction", s.confusion_fraction},
          {"n_train", s.n_train},
          {"n_refs", s.n_refs},
          {"signatures", sigs}};
}

std::vector<double> signature_series(const ClassSignature& sig, int n_times, int n_bands) {
  std::vector<double> out(static_cast<std::size_t>(n_times) * n_bands);
  const double center = sig.pulse_center * (n_times - 1);
  for (int t = 0; t < n_times; ++t) {
    const double z = (t - center) / sig.pulse_width;
    const double pulse = sig.pulse_amplitude * std::exp(-0.5 * z * z);
    for (int b = 0; b < n_bands; ++b) {
      out[static_cast<std::size_t>(t) * n_bands + b] =
          sig.base[b] + sig.amplitude[b] * std::sin(2 * std::numbers::pi * t / n_times + sig.phase[b]) + pulse;
    }
  }
  return out;
}

std::vector<ClassSignature> resolve_signatures(const ScenarioSpec& s) {
  validate(s);
  const int K = s.n_classes();
  const int B = static_cast<int>(s.bands.size());
  std::vector<ClassSignature> sigs = s.signatures;
  if (sigs.empty()) {
    // Class 0 runs in anti-phase with no pulse; the others share one seasonal
    // curve and differ only in when their pulse happens.
    for (int k = 0; k < K; ++k) {
      ClassSignature c;
      for (int b = 0; b < B; ++b) {
        c.base.push_back(0.4 + 0.1 * b);
        c.amplitude.push_back(0.15);
        c.phase.push_back(k == 0 ? std::numbers::pi : 0.0);
      }
      if (k > 0) {
        c.pulse_center = (k - 0.5) / (K - 1);
        c.pulse_amplitude = 0.25;
      }
      sigs.push_back(std::move(c));
    }
  }
  if (static_cast<int>(sigs.size()) != K) throw ValidationError("scenario: need one signature per class");
  for (const auto& c : sigs) {
    if (static_cast<int>(c.base.size()) != B || static_cast<int>(c.amplitude.size()) != B ||
        static_cast<int>(c.phase.size()) != B) {
      throw ValidationError("scenario: signature parameters need one value per band");
    }
    if (!(c.pulse_width > 0)) throw ValidationError("scenario: pulse_width must be positive");
  }
  std::vector<std::vector<double>> series;
  for (const auto& c : sigs) series.push_back(signature_series(c, s.n_instants, B));
  for (int a = 0; a < K; ++a)
    for (int b = a + 1; b < K; ++b) {
      double d2 = 0;
      for (std::size_t i = 0; i < series[a].size(); ++i) d2 += (series[a][i] - series[b][i]) * (series[a][i] - series[b][i]);
      if (!(std::sqrt(d2) > 3 * s.noise_sigma)) {
        throw ValidationError("scenario: signatures of '" + s.labels[a] + "' and '" + s.labels[b] +
                              "' are within 3 noise sigmas of each other");
      }
    }
  return sigs;
}

SynthOutput generate_scenario(const ScenarioSpec& spec, std::uint64_t seed, const fs::path& out) {
  const auto sigs = resolve_signatures(spec);
  const int K = spec.n_classes();
  const int B = static_cast<int>(spec.bands.size());
  const int T = spec.n_instants;
  const auto npix = static_cast<std::size_t>(spec.nrows) * spec.ncols;

  std::error_code ec;
  fs::create_directories(out / "rasters", ec);
  if (ec) throw RuntimeFailure("synth: cannot create '" + (out / "rasters").string() + "': " + ec.message());

  std::vector<std::uint8_t> truth(npix);
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(K));
  const int blocks_per_row = (spec.ncols + spec.block_size - 1) / spec.block_size;
  for (int r = 0; r < spec.nrows; ++r)
    for (int c = 0; c < spec.ncols; ++c) {
      const int block = (r / spec.block_size) * blocks_per_row + c / spec.block_size;
      const int k = (block + r / spec.block_size) % K;
      const auto p = static_cast<std::size_t>(r) * spec.ncols + c;
      truth[p] = static_cast<std::uint8_t>(k);
      members[static_cast<std::size_t>(k)].push_back(p);
    }
  for (int k = 0; k < K; ++k) {
    const auto need = static_cast<std::size_t>(share(spec.n_train, K, k) + share(spec.n_refs, K, k));
    if (members[k].empty() || members[k].size() < need) {
      throw ValidationError("scenario: class '" + spec.labels[k] + "' covers " + std::to_string(members[k].size()) +
                            " pixels, too few for the requested samples");
    }
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<std::uint8_t> signature_class = truth;
  if (K > 1) {
    for (auto& k : signature_class) {
      if (unit(rng) < spec.confusion_fraction) {
        const auto shift = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(K - 1));
        k = static_cast<std::uint8_t>((k + shift) % K);
      }
    }
  }
  std::vector<std::vector<double>> series;
  for (const auto& c : sigs) series.push_back(signature_series(c, T, B));

  const Timeline timeline{spec.start, spec.period_days, T};
  CollectionDescriptor cat;
  cat.id = "synthetic-" + spec.tile;
  cat.crs = "EPSG:4326";
  cat.resolution = {spec.resolution, spec.resolution};
  for (const auto& b : spec.bands) cat.bands.push_back(BandDef{b, DType::int16, kScale, kNodata, false});
  const bool clouds = spec.cloud_fraction > 0;
  if (clouds) cat.bands.push_back(BandDef{kCloudBand, DType::int16, 1.0, -1, true});

  std::vector<std::int16_t> values(npix);
  std::vector<std::int16_t> mask(npix);
  for (int t = 0; t < T; ++t) {
    ItemDescriptor item;
    item.tile = spec.tile;
    item.datetime = timeline.instant(t);
    item.nrows = spec.nrows;
    item.ncols = spec.ncols;
    item.origin = spec.origin;
    std::size_t cloudy = 0;
    if (clouds) {
      for (auto& m : mask) {
        m = unit(rng) < spec.cloud_fraction ? 1 : 0;
        cloudy += static_cast<std::size_t>(m);
      }
    }
    item.cloud_cover = 100.0 * static_cast<double>(cloudy) / static_cast<double>(npix);
    for (int b = 0; b < B; ++b) {
      for (std::size_t p = 0; p < npix; ++p) {
        double v = series[signature_class[p]][static_cast<std::size_t>(t) * B + b] + spec.noise_sigma * noise(rng);
        if (clouds && mask[p]) v = kCloudValue;
        values[p] = static_cast<std::int16_t>(std::clamp(std::lround(v / kScale), -10000L, 10000L));
      }
      const std::string rel = "rasters/" + spec.tile + "_" + spec.bands[b] + "_" + item.datetime.str() + ".bin";
      io::write_file_atomic(out / rel, io::encode_i16(values));
      item.assets[spec.bands[b]] = rel;
    }
    if (clouds) {
      const std::string rel = "rasters/" + spec.tile + "_" + kCloudBand + "_" + item.datetime.str() + ".bin";
      io::write_file_atomic(out / rel, io::encode_i16(mask));
      item.assets[kCloudBand] = rel;
    }
    cat.items.push_back(std::move(item));
  }
  cat.base = out.string();

  SynthOutput result;
  result.catalog_path = out / "catalog.json";
  io::write_file_atomic(result.catalog_path, serialize_catalog(cat) + "\n");
  result.catalog = parse_catalog(result.catalog_path.string());
  result.timeline = timeline;

  const TileGrid grid{spec.tile, spec.nrows, spec.ncols, spec.origin, {spec.resolution, spec.resolution}};
  result.truth = LabelMap{cat.id, cat.crs, Affine{}, {grid}, spec.labels, out / "truth"};
  fs::create_directories(result.truth.root);
  write_class_raster(result.truth, spec.tile, truth);
  write_label_map_metadata(result.truth);

  auto centre = [&](std::size_t p) {
    const auto r = static_cast<double>(p / static_cast<std::size_t>(spec.ncols));
    const auto c = static_cast<double>(p % static_cast<std::size_t>(spec.ncols));
    return std::array<double, 2>{spec.origin[0] + (c + 0.5) * spec.resolution, spec.origin[1] - (r + 0.5) * spec.resolution};
  };
  const std::string start = timeline.instant(0).str();
  const std::string end = (timeline.end_exclusive() + (-1)).str();
  std::string samples = "longitude,latitude,start_date,end_date,label\n";
  std::string refs = "longitude,latitude,label\n";
  for (int k = 0; k < K; ++k) {
    auto pool = members[k];
    std::shuffle(pool.begin(), pool.end(), rng);
    const auto n_train = static_cast<std::size_t>(share(spec.n_train, K, k));
    const auto n_refs = static_cast<std::size_t>(share(spec.n_refs, K, k));
    for (std::size_t i = 0; i < n_train + n_refs; ++i) {
      const auto xy = centre(pool[i]);
      const std::string coords = fmt("%.10f", xy[0]) + "," + fmt("%.10f", xy[1]) + ",";
      if (i < n_train) {
        samples += coords + start + "," + end + "," + spec.labels[k] + "\n";
      } else {
        refs += coords + spec.labels[k] + "\n";
      }
    }
  }
  result.samples_path = out / "samples.csv";
  result.refs_path = out / "refs.csv";
  io::write_file_atomic(result.samples_path, samples);
  io::write_file_atomic(result.refs_path, refs);

  ScenarioSpec resolved = spec;
  resolved.signatures = sigs;
  io::write_file_atomic(out / "scenario.json", scenario_to_json(resolved).dump(2) + "\n");
  return result;
}

}  // namespace tcube
