#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tcube/engine.hpp"
#include "tcube/parallel.hpp"

namespace tcube {

struct SmoothParams {
  int window = 7;
  std::vector<double> sigma;  // K x K row-major prior covariance; empty means 20 * I
  double eps = 1e-4;
  double ridge = 1e-6;
};

// Checks the window and returns the K x K prior, failing unless it is symmetric positive definite.
std::vector<double> resolve_sigma(const SmoothParams& p, std::size_t n_classes);

double logit(double p, double eps);
double inverse_logit(double x);

// Logits in [class][row][col] order.
struct LogitBlock {
  int n_classes = 0;
  int nrows = 0;
  int ncols = 0;
  std::vector<float> values;

  float at(int k, int r, int c) const {
    return values[(static_cast<std::size_t>(k) * nrows + r) * ncols + c];
  }
};

// `probs` holds int16 probabilities (x 10000) in [class][row][col] order.
LogitBlock logit_transform(std::span<const std::int16_t> probs, int n_classes, int nrows, int ncols, double eps);

// Posterior logits for rows [row_begin, row_end) of `x`, [class][row][col] order.
// Windows are cropped at the block edges.
std::vector<double> smooth_logit_rows(const LogitBlock& x, int row_begin, int row_end, const SmoothParams& p,
                                      std::span<const double> sigma);
std::vector<double> smooth_logit_block(const LogitBlock& x, const SmoothParams& p);

// Inverse logit, renormalized and stored as int16 x 10000; [class][pixel] in and out.
std::vector<std::int16_t> posterior_to_probs(std::span<const double> theta, int n_classes, std::size_t pixels);

struct SmoothOptions {
  std::size_t workers = default_workers();
  int rows_per_chunk = 64;
};

// Writes a smoothed probability cube into `out` (must differ from the input root).
ProbCube bayes_smooth(const ProbCube& in, const SmoothParams& params, const std::filesystem::path& out,
                      const SmoothOptions& opt = {});

struct LabelMap {
  std::string id;
  std::string crs;
  Affine affine;
  std::vector<TileGrid> tiles;
  std::vector<std::string> labels;  // legend: index -> label
  std::filesystem::path root;

  const TileGrid& tile(const std::string& name) const;
  std::filesystem::path class_path(const std::string& tile) const { return root / (tile + "_class.bin"); }
  std::filesystem::path image_path(const std::string& tile) const { return root / (tile + "_class_map.ppm"); }
  std::filesystem::path legend_path() const { return root / "legend.json"; }
  std::filesystem::path manifest_path() const { return root / "map.json"; }
  int label_index(const std::string& label) const;
};

// Argmax per pixel, lowest class index on ties.
std::vector<std::uint8_t> argmax_labels(std::span<const std::int16_t> probs, int n_classes, std::size_t pixels);

// Class raster and its rendering for one tile.
void write_class_raster(const LabelMap& m, const std::string& tile, std::span<const std::uint8_t> classes);
// legend.json and map.json.
void write_label_map_metadata(const LabelMap& m);

LabelMap label_map(const ProbCube& p, const std::filesystem::path& out, std::size_t workers = default_workers());
LabelMap load_label_map(const std::filesystem::path& root);
std::vector<std::uint8_t> read_class_raster(const LabelMap& m, const std::string& tile);
// First tile containing the location.
std::optional<PixelLocation> locate(const LabelMap& m, double lon, double lat);
// Mapped area per class in squared CRS units.
std::vector<double> mapped_area(const LabelMap& m);

}  // namespace tcube
