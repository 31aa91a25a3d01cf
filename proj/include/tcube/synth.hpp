#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "tcube/catalog.hpp"
#include "tcube/cube.hpp"
#include "tcube/smooth.hpp"

namespace tcube {

// value(t) = base + amplitude * sin(2*pi*t/n + phase) + pulse_amplitude * exp(-((t - pulse_center*(n-1)) / pulse_width)^2 / 2)
struct ClassSignature {
  std::vector<double> base;       // per band, physical units
  std::vector<double> amplitude;  // per band
  std::vector<double> phase;      // per band, radians
  double pulse_center = 0.5;      // fraction of the timeline
  double pulse_amplitude = 0.0;
  double pulse_width = 1.5;       // instants
};

struct ScenarioSpec {
  std::vector<std::string> labels{"forest", "pasture", "crop"};
  std::vector<std::string> bands{"ndvi", "evi"};
  std::string tile = "T001";
  int nrows = 64;
  int ncols = 64;
  std::array<double, 2> origin{-47.0, -15.0};
  double resolution = 0.0005;
  Date start = Date::from_ymd(2020, 1, 1);
  int period_days = 16;
  int n_instants = 23;
  int block_size = 16;            // class blocks are block_size x block_size squares
  double noise_sigma = 0.02;      // per-observation noise, physical units
  double cloud_fraction = 0.0;    // probability that an observation is cloud-masked
  double confusion_fraction = 0.0;  // pixels that carry another class's signature
  int n_train = 150;
  int n_refs = 150;
  std::vector<ClassSignature> signatures;  // empty: built-in sinusoid + pulse family

  int n_classes() const { return static_cast<int>(labels.size()); }
};

ScenarioSpec scenario_from_json(const nlohmann::json& j);
nlohmann::json scenario_to_json(const ScenarioSpec& s);

// Signatures actually used; validates that every pair of classes is more than
// 3 noise sigmas apart in L2 over the whole (time, band) series.
std::vector<ClassSignature> resolve_signatures(const ScenarioSpec& s);
// Noise-free series of a class, [time][band].
std::vector<double> signature_series(const ClassSignature& sig, int n_times, int n_bands);

struct SynthOutput {
  std::filesystem::path catalog_path;
  CollectionDescriptor catalog;
  Timeline timeline;
  LabelMap truth;
  std::filesystem::path samples_path;
  std::filesystem::path refs_path;
};

// Writes catalog.json, rasters/, truth/, samples.csv, refs.csv and scenario.json under `out`.
SynthOutput generate_scenario(const ScenarioSpec& spec, std::uint64_t seed, const std::filesystem::path& out);

}  // namespace tcube
