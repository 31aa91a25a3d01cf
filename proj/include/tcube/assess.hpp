#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tcube/model.hpp"
#include "tcube/smooth.hpp"

namespace tcube {

// Rows are map (predicted) classes, columns are reference classes.
struct ConfusionMatrix {
  std::vector<std::string> labels;
  std::vector<std::int64_t> counts;  // K x K row-major

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::vector<std::string> l)
      : labels(std::move(l)), counts(labels.size() * labels.size(), 0) {}

  std::size_t size() const { return labels.size(); }
  std::int64_t& at(std::size_t i, std::size_t j) { return counts[i * size() + j]; }
  std::int64_t at(std::size_t i, std::size_t j) const { return counts[i * size() + j]; }
  std::int64_t row_total(std::size_t i) const;
  std::int64_t col_total(std::size_t j) const;
  std::int64_t total() const;
  std::int64_t trace() const;
};

struct ReferencePoint {
  double longitude = 0;
  double latitude = 0;
  std::string label;
};

// CSV with longitude, latitude and label columns.
std::vector<ReferencePoint> parse_references_csv(std::string_view text);
std::vector<ReferencePoint> load_references(const std::filesystem::path& path);

struct ConfusionResult {
  ConfusionMatrix matrix;
  std::size_t dropped_outside = 0;
};

ConfusionResult confusion(const LabelMap& map, std::span<const ReferencePoint> refs);

struct AreaEstimate {
  std::vector<std::string> labels;
  std::vector<double> mapped_area;
  std::vector<double> p_hat;  // K x K row-major
  double overall_accuracy = 0;
  std::optional<double> overall_variance;
  std::vector<std::optional<double>> users_accuracy;
  std::vector<std::optional<double>> producers_accuracy;
  std::vector<double> adjusted_area;
  std::vector<std::optional<double>> ci95_area;
};

AreaEstimate accuracy_area(const ConfusionMatrix& cm, std::span<const double> mapped_area);

nlohmann::json area_estimate_json(const AreaEstimate& e, const ConfusionMatrix& cm);
// Labels / Producer's / User's accuracy table with an overall accuracy footer.
std::string area_estimate_table(const AreaEstimate& e);

struct FoldPlan {
  int k = 0;
  std::vector<int> assignment;  // sample index -> fold
};

// Stratified: every label is shuffled with the seed and dealt round-robin, so
// per-label fold sizes differ by at most one.
FoldPlan make_folds(std::span<const std::string> labels, int k, std::uint64_t seed);

struct KFoldResult {
  int k = 0;
  std::string model_kind;
  FoldPlan folds;
  std::vector<double> fold_accuracy;
  double mean_accuracy = 0;
  ConfusionMatrix pooled;
  std::vector<int> predicted;  // per sample, index into pooled.labels
};

// Model comparison only; these figures are not map accuracy.
KFoldResult kfold_validate(const TimeSeriesTable& t, int k, const std::string& kind, const Hyperparams& h,
                           std::uint64_t seed, std::size_t workers = 1);

nlohmann::json kfold_json(const KFoldResult& r);

}  // namespace tcube
