#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tcube/samples.hpp"

namespace tcube {

using Hyperparams = nlohmann::json;

struct FeatureLayout {
  int n_times = 0;
  int n_bands = 0;

  std::size_t features() const { return static_cast<std::size_t>(n_times) * static_cast<std::size_t>(n_bands); }
  bool operator==(const FeatureLayout&) const = default;
};

// Row-major [rows][cols] probabilities.
struct ProbMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
};

// Normalized training set handed to a model kind.
struct TrainingData {
  FeatureLayout layout;
  std::size_t n = 0;
  int n_classes = 0;
  std::vector<float> x;  // [n][time][band], already normalized
  std::vector<int> y;    // index into the model's label list

  std::span<const float> sample(std::size_t i) const { return {x.data() + i * layout.features(), layout.features()}; }
};

// Trained, kind-specific parameters. Implementations are immutable after training.
class Classifier {
 public:
  virtual ~Classifier() = default;
  // `features` holds n normalized rows; writes n*K probabilities.
  virtual void predict(std::span<const float> features, std::size_t n, std::span<double> out) const = 0;
  // Float32 parameter blobs in the order load() expects them.
  virtual std::vector<std::vector<float>> blobs() const = 0;
};

// A model kind plugs into training, prediction and the model file with these three pieces.
struct ModelKind {
  std::string name;
  // Defaults merged with user values; unknown keys are rejected.
  std::function<Hyperparams(const Hyperparams& user)> resolve;
  std::function<std::shared_ptr<const Classifier>(const TrainingData&, const Hyperparams&, std::uint64_t seed)> train;
  std::function<std::shared_ptr<const Classifier>(const Hyperparams&, const FeatureLayout&, int n_classes,
                                                  std::vector<std::vector<float>> blobs)>
      load;
};

void register_model_kind(ModelKind kind);
const ModelKind& model_kind(const std::string& name);
std::vector<std::string> model_kinds();

// Fills defaults from `defaults`, rejecting keys not present there and values of the wrong type.
Hyperparams merge_hyperparams(const std::string& kind, const Hyperparams& defaults, const Hyperparams& user);

struct TrainedModel {
  std::string kind;
  std::vector<std::string> labels;
  NormStats norm;
  FeatureLayout layout;
  Hyperparams hyperparams;
  std::shared_ptr<const Classifier> impl;
};

// Fits normalization on `t`, then trains the requested kind.
TrainedModel train_model(const TimeSeriesTable& t, const std::string& kind, const Hyperparams& h, std::uint64_t seed);
TrainedModel train_random_forest(const TimeSeriesTable& t, const Hyperparams& h, std::uint64_t seed);
TrainedModel train_mlp(const TimeSeriesTable& t, const Hyperparams& h, std::uint64_t seed);
TrainedModel train_tempcnn(const TimeSeriesTable& t, const Hyperparams& h, std::uint64_t seed);

// `batch` holds n raw (unnormalized) rows of layout.features() values in [time][band] order.
ProbMatrix predict_probs(const TrainedModel& m, std::span<const float> batch, std::size_t n);
// Same, for rows already normalized with m.norm.
ProbMatrix predict_normalized(const TrainedModel& m, std::span<const float> batch, std::size_t n);

inline constexpr std::uint32_t kModelFormatVersion = 1;

std::string serialize_model(const TrainedModel& m);
TrainedModel deserialize_model(std::string_view bytes);
void save_model(const TrainedModel& m, const std::filesystem::path& path);
TrainedModel load_model(const std::filesystem::path& path);

}  // namespace tcube
