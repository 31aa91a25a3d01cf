#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tcube/samples.hpp"

namespace tcube {

struct SomParams {
  int width = 0;   // 0 picks default_som_side()
  int height = 0;
  int epochs = 50;
  double learning_rate_start = 0.05;
  double learning_rate_end = 0.01;
  double radius_start = 0;  // 0 means max(width, height) / 2
  double radius_end = 0.5;
  std::uint64_t seed = 42;
};

// ceil(sqrt(5 * sqrt(n)))
int default_som_side(std::size_t n_samples);

struct SOMGrid {
  int width = 0;
  int height = 0;
  std::size_t dim = 0;
  std::vector<float> weights;  // [neuron][dim], neuron = row * width + col
  std::vector<std::map<std::string, double>> label_dist;
  std::vector<std::size_t> counts;

  std::size_t size() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  std::span<const float> neuron(std::size_t i) const { return {weights.data() + i * dim, dim}; }
  // Most frequent label; ties go to the lexicographically smallest. Empty for an empty neuron.
  std::string majority(std::size_t i) const;
  double purity(std::size_t i) const;

  bool operator==(const SOMGrid&) const = default;
};

// Weights drawn from random training samples, no training, no label pass.
SOMGrid som_initialize(const TimeSeriesTable& t, const SomParams& p);
// Online Kohonen training with Gaussian neighbourhood over Chebyshev grid distance,
// followed by the label assignment pass.
SOMGrid som_train(const TimeSeriesTable& t, const SomParams& p);
// Recomputes counts and label distributions from the table.
void som_label(SOMGrid& g, const TimeSeriesTable& t);

// Best-matching unit; ties go to the lowest index.
std::size_t som_assign(const SOMGrid& g, std::span<const float> v);
// Mean Euclidean distance of every sample to its BMU.
double quantization_error(const SOMGrid& g, const TimeSeriesTable& t);

enum class SampleStatus { clean, analyze, remove };
std::string_view to_string(SampleStatus s);

struct SampleEvaluation {
  std::size_t sample_index = 0;
  std::size_t neuron = 0;
  double purity = 0;
  SampleStatus status = SampleStatus::clean;
};

std::vector<SampleEvaluation> som_evaluate(const SOMGrid& g, const TimeSeriesTable& t, double purity_threshold = 0.6);

// som_grid.csv and som_map.ppm
void som_export(const SOMGrid& g, const std::filesystem::path& dir);
void write_som_evaluation(std::span<const SampleEvaluation> evals, const std::filesystem::path& path);

}  // namespace tcube
