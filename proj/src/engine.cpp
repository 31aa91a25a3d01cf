#include "tcube/engine.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "tcube/error.hpp"
#include "tcube/io.hpp"

namespace tcube {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// ProbCube

const TileGrid& ProbCube::tile(const std::string& name) const {
  for (const auto& t : tiles)
    if (t.tile == name) return t;
  throw ValidationError("probability cube has no tile '" + name + "'");
}

std::string label_file_token(const std::string& label) {
  std::string out;
  for (unsigned char c : label) out.push_back(std::isalnum(c) || c == '-' || c == '.' ? static_cast<char>(c) : '_');
  return out;
}

fs::path ProbCube::raster_path(const std::string& tile, std::size_t label) const {
  return root / (tile + "_prob_" + label_file_token(labels.at(label)) + ".bin");
}

void write_prob_manifest(const ProbCube& p) {
  json j;
  j["id"] = p.id;
  j["crs"] = p.crs;
  j["affine"] = p.affine.c;
  j["labels"] = p.labels;
  j["scale"] = ProbCube::kScale;
  j["tiles"] = json::array();
  for (const auto& t : p.tiles) {
    json files = json::array();
    for (std::size_t k = 0; k < p.labels.size(); ++k) files.push_back(p.raster_path(t.tile, k).filename().string());
    j["tiles"].push_back({{"tile", t.tile},
                          {"nrows", t.nrows},
                          {"ncols", t.ncols},
                          {"origin", t.origin},
                          {"resolution", t.resolution},
                          {"files", files}});
  }
  io::write_file_atomic(p.manifest_path(), j.dump(2) + "\n");
}

ProbCube load_prob_cube(const fs::path& root) {
  const fs::path manifest = root / "probs.json";
  if (!fs::exists(manifest)) throw ValidationError("no probability cube manifest at '" + manifest.string() + "'");
  ProbCube p;
  p.root = root;
  try {
    const json j = json::parse(io::read_file(manifest));
    p.id = j.at("id").get<std::string>();
    p.crs = j.at("crs").get<std::string>();
    p.affine.c = j.at("affine").get<std::array<double, 6>>();
    p.labels = j.at("labels").get<std::vector<std::string>>();
    for (const auto& g : j.at("tiles")) {
      p.tiles.push_back(TileGrid{g.at("tile").get<std::string>(), g.at("nrows").get<int>(), g.at("ncols").get<int>(),
                                 g.at("origin").get<std::array<double, 2>>(),
                                 g.at("resolution").get<std::array<double, 2>>()});
    }
  } catch (const json::exception& e) {
    throw ValidationError("malformed probability manifest '" + manifest.string() + "': " + e.what());
  }
  if (p.labels.empty() || p.tiles.empty()) throw ValidationError("probability manifest '" + manifest.string() + "' is empty");
  return p;
}

std::vector<std::int16_t> read_prob_rows(const ProbCube& p, const std::string& tile, std::size_t label, int row0,
                                         int nrows) {
  const TileGrid& g = p.tile(tile);
  if (row0 < 0 || nrows < 0 || row0 + nrows > g.nrows) throw ValidationError("probability row range outside tile " + tile);
  const fs::path path = p.raster_path(tile, label);
  std::error_code ec;
  const auto size = fs::file_size(path, ec);
  if (ec) throw IntegrityError("missing probability raster '" + path.string() + "'");
  if (size != static_cast<std::uintmax_t>(g.pixels()) * 2) throw IntegrityError("probability raster '" + path.string() + "' has wrong size");
  std::vector<std::int16_t> out(static_cast<std::size_t>(nrows) * static_cast<std::size_t>(g.ncols));
  std::ifstream in(path, std::ios::binary);
  in.seekg(static_cast<std::streamoff>(row0) * g.ncols * 2);
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size() * 2));
  if (!in) throw IntegrityError("short read on '" + path.string() + "'");
  return out;
}

// ---------------------------------------------------------------------------
// Planning

std::int64_t chunk_bytes(std::int64_t rows, std::int64_t ncols, std::int64_t n_bands, std::int64_t n_times,
                         std::int64_t n_classes) {
  return rows * ncols * n_bands * n_times * 4 + rows * ncols * n_classes * 2;
}

namespace {

ChunkPlan strips(const RegularCube& cube, const std::function<int(const TileGrid&)>& height, int cores) {
  ChunkPlan plan;
  plan.cube_id = cube.id;
  for (const auto& g : cube.tiles) {
    const int h = std::clamp(height(g), 1, g.nrows);
    for (int r = 0; r < g.nrows; r += h) {
      plan.chunks.push_back(Chunk{static_cast<int>(plan.chunks.size()), g.tile, Window{r, 0, std::min(h, g.nrows - r), g.ncols}});
    }
  }
  plan.max_workers = std::max(1, std::min(cores, static_cast<int>(plan.chunks.size())));
  return plan;
}

}  // namespace

ChunkPlan plan_chunks(const RegularCube& cube, std::int64_t memory_bytes, int cores, int n_classes) {
  if (memory_bytes < 1 || cores < 1) throw ValidationError("plan: memory and cores must be at least 1");
  const double budget = 0.8 * static_cast<double>(memory_bytes);
  const auto nb = static_cast<std::int64_t>(cube.bands.size());
  const std::int64_t nt = cube.timeline.n;
  for (const auto& g : cube.tiles) {
    const double need = static_cast<double>(cores) * static_cast<double>(chunk_bytes(1, g.ncols, nb, nt, n_classes));
    if (need > budget) {
      throw ValidationError("insufficient memory: one row of tile " + g.tile + " on " + std::to_string(cores) +
                            " cores needs " + std::to_string(static_cast<std::int64_t>(std::ceil(need / 0.8))) +
                            " bytes, budget is " + std::to_string(memory_bytes));
    }
  }
  return strips(
      cube,
      [&](const TileGrid& g) {
        const double per_row = static_cast<double>(cores) * static_cast<double>(chunk_bytes(1, g.ncols, nb, nt, n_classes));
        const double h = std::floor(budget / per_row);
        return h >= g.nrows ? g.nrows : static_cast<int>(h);
      },
      cores);
}

ChunkPlan plan_strips(const RegularCube& cube, int rows_per_chunk, int cores) {
  if (rows_per_chunk < 1 || cores < 1) throw ValidationError("plan: rows per chunk and cores must be at least 1");
  return strips(cube, [&](const TileGrid&) { return rows_per_chunk; }, cores);
}

// ---------------------------------------------------------------------------
// Job state

fs::path JobState::chunk_path(int id) const { return out_dir / "chunks" / ("chunk_" + std::to_string(id) + ".bin"); }
fs::path JobState::marker_path(int id) const { return out_dir / "chunks" / ("chunk_" + std::to_string(id) + ".done"); }

std::size_t JobState::done_count() const {
  return static_cast<std::size_t>(std::count(status.begin(), status.end(), ChunkStatus::done));
}

namespace {

std::string_view status_name(ChunkStatus s) {
  switch (s) {
    case ChunkStatus::pending: return "pending";
    case ChunkStatus::done: return "done";
    case ChunkStatus::failed: return "failed";
  }
  return "pending";
}

ChunkStatus parse_status(const std::string& s) {
  if (s == "pending") return ChunkStatus::pending;
  if (s == "done") return ChunkStatus::done;
  if (s == "failed") return ChunkStatus::failed;
  throw ValidationError("job: unknown chunk status '" + s + "'");
}

std::string file_hash(const fs::path& p) { return io::crc32_hex(io::read_file(p)); }

std::int64_t expected_chunk_bytes(const Chunk& c, std::size_t n_classes) {
  return c.window.pixels() * static_cast<std::int64_t>(n_classes) * 2;
}

bool chunk_valid(const JobState& s, const Chunk& c) {
  std::ifstream marker(s.marker_path(c.chunk_id));
  if (!marker) return false;
  std::int64_t bytes = -1;
  std::string crc;
  marker >> bytes >> crc;
  if (!marker || bytes != expected_chunk_bytes(c, s.labels.size())) return false;
  std::error_code ec;
  const auto size = fs::file_size(s.chunk_path(c.chunk_id), ec);
  if (ec || static_cast<std::int64_t>(size) != bytes) return false;
  return file_hash(s.chunk_path(c.chunk_id)) == crc;
}

}  // namespace

void save_job(const JobState& s) {
  json j;
  j["job_id"] = s.job_id;
  j["cube_id"] = s.plan.cube_id;
  j["cube_root"] = s.cube_root.string();
  j["model_path"] = s.model_path.string();
  j["cube_hash"] = s.cube_hash;
  j["model_hash"] = s.model_hash;
  j["labels"] = s.labels;
  j["max_workers"] = s.plan.max_workers;
  j["chunks"] = json::array();
  for (const auto& c : s.plan.chunks) {
    j["chunks"].push_back({{"id", c.chunk_id},
                           {"tile", c.tile},
                           {"row0", c.window.row0},
                           {"col0", c.window.col0},
                           {"nrows", c.window.nrows},
                           {"ncols", c.window.ncols}});
  }
  j["status"] = json::array();
  for (auto st : s.status) j["status"].push_back(status_name(st));
  j["retries"] = s.retries;
  j["merged"] = s.merged;
  j["cleaned"] = s.cleaned;
  io::write_file_atomic(s.job_path(), j.dump(2) + "\n");
}

JobState load_job(const fs::path& job_dir) {
  const fs::path path = job_dir / "job.json";
  if (!fs::exists(path)) throw ValidationError("no job.json in '" + job_dir.string() + "'");
  JobState s;
  s.out_dir = job_dir;
  try {
    const json j = json::parse(io::read_file(path));
    s.job_id = j.at("job_id").get<std::string>();
    s.plan.cube_id = j.at("cube_id").get<std::string>();
    s.cube_root = j.at("cube_root").get<std::string>();
    s.model_path = j.at("model_path").get<std::string>();
    s.cube_hash = j.at("cube_hash").get<std::string>();
    s.model_hash = j.at("model_hash").get<std::string>();
    s.labels = j.at("labels").get<std::vector<std::string>>();
    s.plan.max_workers = j.at("max_workers").get<int>();
    for (const auto& c : j.at("chunks")) {
      s.plan.chunks.push_back(Chunk{c.at("id").get<int>(), c.at("tile").get<std::string>(),
                                    Window{c.at("row0").get<int>(), c.at("col0").get<int>(), c.at("nrows").get<int>(),
                                           c.at("ncols").get<int>()}});
    }
    for (const auto& st : j.at("status")) s.status.push_back(parse_status(st.get<std::string>()));
    s.retries = j.at("retries").get<std::vector<int>>();
    s.merged = j.value("merged", false);
    s.cleaned = j.value("cleaned", false);
  } catch (const json::exception& e) {
    throw ValidationError("malformed job file '" + path.string() + "': " + e.what());
  }
  if (s.status.size() != s.plan.chunks.size() || s.retries.size() != s.plan.chunks.size()) {
    throw ValidationError("job file '" + path.string() + "' has inconsistent chunk lists");
  }
  for (std::size_t i = 0; i < s.plan.chunks.size(); ++i) {
    if (s.plan.chunks[i].chunk_id != static_cast<int>(i)) throw ValidationError("job file chunk ids are not dense");
  }
  return s;
}

// ---------------------------------------------------------------------------
// Execution

namespace {

std::string compute_chunk(const RegularCube& cube, const TrainedModel& model, const Chunk& chunk, std::size_t batch_rows) {
  const RasterBlock block = read_block(cube, chunk.tile, chunk.window);
  const auto npix = static_cast<std::size_t>(chunk.window.pixels());
  const auto nb = static_cast<std::size_t>(block.n_bands);
  const auto nt = static_cast<std::size_t>(block.n_times);
  const std::size_t K = model.labels.size();
  std::vector<std::int16_t> out(K * npix);
  std::vector<float> rows;
  batch_rows = std::max<std::size_t>(1, batch_rows);
  for (std::size_t start = 0; start < npix; start += batch_rows) {
    const std::size_t m = std::min(batch_rows, npix - start);
    rows.resize(m * nt * nb);
    for (std::size_t p = 0; p < m; ++p)
      for (std::size_t t = 0; t < nt; ++t)
        for (std::size_t b = 0; b < nb; ++b) rows[(p * nt + t) * nb + b] = block.values[(b * nt + t) * npix + start + p];
    const ProbMatrix probs = predict_probs(model, rows, m);
    for (std::size_t p = 0; p < m; ++p) {
      for (std::size_t k = 0; k < K; ++k) {
        const double v = probs.at(p, k);
        if (!(v >= 0.0 && v <= 1.0 + 1e-9)) {
          throw IntegrityError("model produced an invalid probability for chunk " + std::to_string(chunk.chunk_id));
        }
        out[k * npix + start + p] = io::round_to_i16(v * 10000.0);
      }
    }
  }
  return io::encode_i16(out);
}

struct Message {
  std::size_t plan_index = 0;
  bool ok = false;
  bool worker_exit = false;
  int retries = 0;
  std::string error;
};

ClassifyResult run_job(JobState& state, const RegularCube& cube, const TrainedModel& model, const ClassifyOptions& opt) {
  ClassifyResult result;
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < state.plan.chunks.size(); ++i)
    if (state.status[i] != ChunkStatus::done) pending.push_back(i);

  std::mutex mutex;
  std::condition_variable cv;
  std::deque<Message> inbox;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  const std::size_t limit = opt.stop_after ? std::min(pending.size(), *opt.stop_after) : pending.size();
  auto post = [&](Message m) {
    {
      std::lock_guard lock(mutex);
      inbox.push_back(std::move(m));
    }
    cv.notify_one();
  };

  const std::size_t n_workers =
      limit == 0 ? 0 : std::min<std::size_t>(static_cast<std::size_t>(std::max(1, state.plan.max_workers)), limit);
  std::vector<std::jthread> workers;
  for (std::size_t w = 0; w < n_workers; ++w) {
    workers.emplace_back([&] {
      while (!stop.load()) {
        const std::size_t slot = next.fetch_add(1);
        if (slot >= limit) break;
        const std::size_t idx = pending[slot];
        const Chunk& chunk = state.plan.chunks[idx];
        Message msg{idx, false, false, 0, {}};
        for (int attempt = 0; attempt <= opt.max_retries; ++attempt) {
          msg.retries = attempt;
          try {
            if (opt.before_chunk) opt.before_chunk(chunk, attempt);
            const std::string bytes = compute_chunk(cube, model, chunk, opt.batch_rows);
            io::write_file_atomic(state.chunk_path(chunk.chunk_id), bytes);
            io::write_file_atomic(state.marker_path(chunk.chunk_id),
                                  std::to_string(bytes.size()) + " " + io::crc32_hex(bytes) + "\n");
            msg.ok = true;
            break;
          } catch (const std::exception& e) {
            msg.error = e.what();
          }
        }
        post(std::move(msg));
      }
      post(Message{0, false, true, 0, {}});
    });
  }

  std::size_t exited = 0;
  std::optional<std::string> failure;
  while (exited < n_workers) {
    Message msg;
    {
      std::unique_lock lock(mutex);
      cv.wait(lock, [&] { return !inbox.empty(); });
      msg = std::move(inbox.front());
      inbox.pop_front();
    }
    if (msg.worker_exit) {
      ++exited;
      continue;
    }
    const Chunk& chunk = state.plan.chunks[msg.plan_index];
    state.retries[msg.plan_index] += msg.retries;
    if (msg.ok) {
      state.status[msg.plan_index] = ChunkStatus::done;
      save_job(state);
      ++result.chunks_executed;
      if (opt.after_chunk) opt.after_chunk(chunk);
      if (opt.stop_after && result.chunks_executed >= *opt.stop_after) stop = true;
    } else {
      state.status[msg.plan_index] = ChunkStatus::failed;
      save_job(state);
      if (!failure) {
        failure = "chunk " + std::to_string(chunk.chunk_id) + " failed after " + std::to_string(opt.max_retries) +
                  " retries: " + msg.error;
      }
      stop = true;
    }
  }
  workers.clear();

  if (failure) {
    throw RuntimeFailure(*failure + "; job state saved in " + state.job_path().string() + ", rerun with --resume");
  }
  if (state.done_count() == state.plan.chunks.size()) result.probs = merge_chunks(state, opt.clean);
  result.state = state;
  return result;
}

void check_layout(const RegularCube& cube, const TrainedModel& model) {
  const FeatureLayout cube_layout{cube.timeline.n, static_cast<int>(cube.bands.size())};
  if (!(cube_layout == model.layout)) {
    throw ValidationError("model expects " + std::to_string(model.layout.n_times) + " instants x " +
                          std::to_string(model.layout.n_bands) + " bands, cube has " + std::to_string(cube_layout.n_times) +
                          " x " + std::to_string(cube_layout.n_bands));
  }
}

void check_plan(const RegularCube& cube, const ChunkPlan& plan) {
  if (plan.cube_id != cube.id) throw ValidationError("chunk plan was made for cube '" + plan.cube_id + "'");
  for (const auto& g : cube.tiles) {
    int next_row = 0;
    for (std::size_t i = 0; i < plan.chunks.size(); ++i) {
      const Chunk& c = plan.chunks[i];
      if (c.chunk_id != static_cast<int>(i)) throw ValidationError("chunk ids must be dense 0..n-1");
      if (c.tile != g.tile) continue;
      if (c.window.row0 != next_row || c.window.col0 != 0 || c.window.ncols != g.ncols || c.window.nrows < 1) {
        throw ValidationError("chunk plan does not partition tile " + g.tile + " into row strips");
      }
      next_row += c.window.nrows;
    }
    if (next_row != g.nrows) throw ValidationError("chunk plan does not cover tile " + g.tile);
  }
  for (const auto& c : plan.chunks) cube.tile(c.tile);
}

}  // namespace

ClassifyResult classify_cube(const RegularCube& cube, const fs::path& model_path, const ChunkPlan& plan,
                             const fs::path& out_dir, const ClassifyOptions& opt) {
  const TrainedModel model = load_model(model_path);
  check_layout(cube, model);
  check_plan(cube, plan);
  std::set<std::string> tokens;
  for (const auto& l : model.labels) {
    if (!tokens.insert(label_file_token(l)).second) throw ValidationError("labels collide after file-name sanitizing: " + l);
  }

  JobState s;
  s.plan = plan;
  s.status.assign(plan.chunks.size(), ChunkStatus::pending);
  s.retries.assign(plan.chunks.size(), 0);
  s.out_dir = out_dir;
  s.cube_root = fs::absolute(cube.root);
  s.model_path = fs::absolute(model_path);
  s.cube_hash = file_hash(cube.manifest_path());
  s.model_hash = file_hash(model_path);
  s.labels = model.labels;
  s.job_id = "job-" + io::crc32_hex(s.cube_hash + s.model_hash + std::to_string(plan.chunks.size()));

  std::error_code ec;
  fs::remove_all(out_dir / "chunks", ec);
  fs::create_directories(out_dir / "chunks");
  save_job(s);
  return run_job(s, cube, model, opt);
}

ClassifyResult resume(const fs::path& job_dir, const ClassifyOptions& opt) {
  JobState s = load_job(job_dir);
  const RegularCube cube = load_cube(s.cube_root);
  if (file_hash(cube.manifest_path()) != s.cube_hash) {
    throw ValidationError("cube at '" + s.cube_root.string() + "' changed since the job was created; refusing to resume");
  }
  if (!fs::exists(s.model_path) || file_hash(s.model_path) != s.model_hash) {
    throw ValidationError("model '" + s.model_path.string() + "' changed since the job was created; refusing to resume");
  }
  check_plan(cube, s.plan);
  const TrainedModel model = load_model(s.model_path);
  check_layout(cube, model);
  if (model.labels != s.labels) throw ValidationError("model labels differ from the job's labels");

  if (s.merged && s.cleaned) {
    ProbCube p = load_prob_cube(s.out_dir);
    for (const auto& g : p.tiles) {
      for (std::size_t k = 0; k < p.labels.size(); ++k) {
        std::error_code ec;
        const auto size = fs::file_size(p.raster_path(g.tile, k), ec);
        if (ec || size != static_cast<std::uintmax_t>(g.pixels()) * 2) {
          throw IntegrityError("merged output '" + p.raster_path(g.tile, k).string() +
                               "' is missing or truncated and chunk files were cleaned; rerun classification");
        }
      }
    }
    ClassifyResult r;
    r.state = s;
    r.probs = std::move(p);
    return r;
  }

  fs::create_directories(s.out_dir / "chunks");
  for (std::size_t i = 0; i < s.plan.chunks.size(); ++i) {
    s.status[i] = chunk_valid(s, s.plan.chunks[i]) ? ChunkStatus::done : ChunkStatus::pending;
  }
  s.merged = false;
  save_job(s);
  return run_job(s, cube, model, opt);
}

ProbCube merge_chunks(JobState& s, bool clean) {
  const RegularCube cube = load_cube(s.cube_root);
  ProbCube p;
  p.id = cube.id;
  p.crs = cube.crs;
  p.affine = cube.affine;
  p.tiles = cube.tiles;
  p.labels = s.labels;
  p.root = s.out_dir;
  const std::size_t K = p.labels.size();

  for (const auto& g : p.tiles) {
    std::vector<std::ofstream> outs;
    std::vector<fs::path> tmp_paths;
    for (std::size_t k = 0; k < K; ++k) {
      auto tmp = p.raster_path(g.tile, k);
      tmp += ".tmp";
      tmp_paths.push_back(tmp);
      outs.emplace_back(tmp, std::ios::binary | std::ios::trunc);
      if (!outs.back()) throw RuntimeFailure("cannot write '" + tmp.string() + "'");
    }
    for (const auto& c : s.plan.chunks) {
      if (c.tile != g.tile) continue;
      if (!chunk_valid(s, c)) {
        throw IntegrityError("missing or corrupt chunk output '" + s.chunk_path(c.chunk_id).string() + "'");
      }
      const std::string bytes = io::read_file(s.chunk_path(c.chunk_id));
      const std::size_t slice = static_cast<std::size_t>(c.window.pixels()) * 2;
      for (std::size_t k = 0; k < K; ++k) outs[k].write(bytes.data() + k * slice, static_cast<std::streamsize>(slice));
    }
    for (std::size_t k = 0; k < K; ++k) {
      outs[k].close();
      if (!outs[k]) throw RuntimeFailure("write error on '" + tmp_paths[k].string() + "'");
      fs::rename(tmp_paths[k], p.raster_path(g.tile, k));
    }
  }
  write_prob_manifest(p);
  s.merged = true;
  if (clean) {
    std::error_code ec;
    fs::remove_all(s.out_dir / "chunks", ec);
    s.cleaned = true;
  }
  save_job(s);
  return p;
}

}  // namespace tcube
