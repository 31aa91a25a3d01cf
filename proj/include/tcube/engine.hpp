#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tcube/cube.hpp"
#include "tcube/model.hpp"

namespace tcube {

// Per-class int16 probability rasters (value / 10000 = probability).
struct ProbCube {
  std::string id;
  std::string crs;
  Affine affine;
  std::vector<TileGrid> tiles;
  std::vector<std::string> labels;
  std::filesystem::path root;

  static constexpr double kScale = 1e-4;

  const TileGrid& tile(const std::string& name) const;
  std::filesystem::path raster_path(const std::string& tile, std::size_t label) const;
  std::filesystem::path manifest_path() const { return root / "probs.json"; }
};

// Filesystem-safe form of a label used in raster names.
std::string label_file_token(const std::string& label);

void write_prob_manifest(const ProbCube& p);
ProbCube load_prob_cube(const std::filesystem::path& root);
// Rows [row0, row0 + nrows) of one class raster.
std::vector<std::int16_t> read_prob_rows(const ProbCube& p, const std::string& tile, std::size_t label, int row0, int nrows);

struct Chunk {
  int chunk_id = 0;
  std::string tile;
  Window window;

  bool operator==(const Chunk&) const = default;
};

struct ChunkPlan {
  std::string cube_id;
  std::vector<Chunk> chunks;
  int max_workers = 1;

  bool operator==(const ChunkPlan&) const = default;
};

// Memory for one chunk of h rows: the float32 input block plus the int16 output.
std::int64_t chunk_bytes(std::int64_t rows, std::int64_t ncols, std::int64_t n_bands, std::int64_t n_times,
                         std::int64_t n_classes);

// Row strips of the largest height h with cores * chunk_bytes(h) <= 0.8 * memory_bytes.
ChunkPlan plan_chunks(const RegularCube& cube, std::int64_t memory_bytes, int cores, int n_classes);
// Row strips of a fixed height.
ChunkPlan plan_strips(const RegularCube& cube, int rows_per_chunk, int cores);

enum class ChunkStatus { pending, done, failed };

struct JobState {
  std::string job_id;
  ChunkPlan plan;
  std::vector<ChunkStatus> status;
  std::vector<int> retries;
  std::filesystem::path out_dir;
  std::filesystem::path cube_root;
  std::filesystem::path model_path;
  std::string cube_hash;
  std::string model_hash;
  std::vector<std::string> labels;
  bool merged = false;
  bool cleaned = false;

  std::filesystem::path job_path() const { return out_dir / "job.json"; }
  std::filesystem::path chunk_path(int id) const;
  std::filesystem::path marker_path(int id) const;
  std::size_t done_count() const;
};

void save_job(const JobState& s);
JobState load_job(const std::filesystem::path& job_dir);

struct ClassifyOptions {
  int max_retries = 3;
  std::size_t batch_rows = 4096;
  bool clean = false;  // delete chunk files once merged
  // Called by a worker before each attempt; throwing fails that attempt.
  std::function<void(const Chunk&, int attempt)> before_chunk;
  // Called by the orchestrator after a chunk is recorded as done in job.json.
  std::function<void(const Chunk&)> after_chunk;
  // Stop handing out work once this many chunks finished in this run (no merge).
  std::optional<std::size_t> stop_after;
};

struct ClassifyResult {
  JobState state;
  std::optional<ProbCube> probs;  // empty when the run stopped early
  std::size_t chunks_executed = 0;
};

// Fresh job in `out_dir` (any previous job there is discarded).
ClassifyResult classify_cube(const RegularCube& cube, const std::filesystem::path& model_path, const ChunkPlan& plan,
                             const std::filesystem::path& out_dir, const ClassifyOptions& opt = {});
// Re-runs only chunks without a valid marker, then merges.
ClassifyResult resume(const std::filesystem::path& job_dir, const ClassifyOptions& opt = {});
ProbCube merge_chunks(JobState& state, bool clean = false);

}  // namespace tcube
