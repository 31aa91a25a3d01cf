#include "tcube/smooth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "tcube/error.hpp"
#include "tcube/io.hpp"
#include "tcube/palette.hpp"

namespace tcube {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// In-place lower Cholesky factor of an n x n row-major matrix; false if not positive definite.
bool cholesky(std::vector<double>& a, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) {
    double d = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) d -= a[j * n + k] * a[j * n + k];
    if (!(d > 0.0)) return false;
    const double l = std::sqrt(d);
    a[j * n + j] = l;
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) v -= a[i * n + k] * a[j * n + k];
      a[i * n + j] = v / l;
    }
  }
  return true;
}

void cholesky_solve(const std::vector<double>& l, std::size_t n, std::vector<double>& b) {
  for (std::size_t i = 0; i < n; ++i) {
    double v = b[i];
    for (std::size_t k = 0; k < i; ++k) v -= l[i * n + k] * b[k];
    b[i] = v / l[i * n + i];
  }
  for (std::size_t i = n; i-- > 0;) {
    double v = b[i];
    for (std::size_t k = i + 1; k < n; ++k) v -= l[k * n + i] * b[k];
    b[i] = v / l[i * n + i];
  }
}

void check_probs(std::span<const std::int16_t> probs) {
  for (auto v : probs) {
    if (v < 0 || v > 10000) throw IntegrityError("probability value " + std::to_string(v) + " outside [0, 10000]");
  }
}

json grid_json(const std::vector<TileGrid>& tiles) {
  json out = json::array();
  for (const auto& t : tiles) {
    out.push_back(
        {{"tile", t.tile}, {"nrows", t.nrows}, {"ncols", t.ncols}, {"origin", t.origin}, {"resolution", t.resolution}});
  }
  return out;
}

}  // namespace

std::vector<double> resolve_sigma(const SmoothParams& p, std::size_t n_classes) {
  if (p.window < 1 || p.window % 2 == 0) throw ValidationError("smoothing window must be an odd integer >= 1");
  if (!(p.eps > 0.0 && p.eps < 0.5)) throw ValidationError("smoothing eps must lie in (0, 0.5)");
  if (!(p.ridge >= 0.0)) throw ValidationError("smoothing ridge must be >= 0");
  const std::size_t K = n_classes;
  std::vector<double> sigma = p.sigma;
  if (sigma.empty()) {
    sigma.assign(K * K, 0.0);
    for (std::size_t i = 0; i < K; ++i) sigma[i * K + i] = 20.0;
  }
  if (sigma.size() != K * K) {
    throw ValidationError("sigma must have " + std::to_string(K * K) + " entries for " + std::to_string(K) + " classes");
  }
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = 0; j < K; ++j) {
      const double a = sigma[i * K + j];
      const double b = sigma[j * K + i];
      if (!std::isfinite(a) || std::abs(a - b) > 1e-12 * std::max(1.0, std::abs(a))) {
        throw ValidationError("sigma must be symmetric and finite");
      }
    }
  auto l = sigma;
  if (!cholesky(l, K)) throw ValidationError("sigma must be positive definite");
  return sigma;
}

double logit(double p, double eps) {
  p = std::clamp(p, eps, 1.0 - eps);
  return std::log(p / (1.0 - p));
}

double inverse_logit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

LogitBlock logit_transform(std::span<const std::int16_t> probs, int n_classes, int nrows, int ncols, double eps) {
  LogitBlock b{n_classes, nrows, ncols, {}};
  const std::size_t n = static_cast<std::size_t>(n_classes) * nrows * ncols;
  if (probs.size() != n) throw ValidationError("probability block has the wrong size");
  check_probs(probs);
  b.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) b.values[i] = static_cast<float>(logit(probs[i] * ProbCube::kScale, eps));
  return b;
}

std::vector<double> smooth_logit_rows(const LogitBlock& x, int row_begin, int row_end, const SmoothParams& p,
                                      std::span<const double> sigma) {
  const auto K = static_cast<std::size_t>(x.n_classes);
  if (sigma.size() != K * K) throw ValidationError("sigma size does not match the class count");
  if (row_begin < 0 || row_end > x.nrows || row_begin > row_end) throw ValidationError("smoothing row range out of block");
  for (float v : x.values)
    if (!std::isfinite(v)) throw IntegrityError("non-finite logit in smoothing input");

  const int half = p.window / 2;
  const auto out_rows = static_cast<std::size_t>(row_end - row_begin);
  const auto pixels = out_rows * static_cast<std::size_t>(x.ncols);
  std::vector<double> theta(K * pixels);
  std::vector<double> m(K), s(K * K), a(K * K), v(K), am(K), ax(K), xi(K);

  for (int r = row_begin; r < row_end; ++r) {
    const int r0 = std::max(0, r - half);
    const int r1 = std::min(x.nrows - 1, r + half);
    for (int c = 0; c < x.ncols; ++c) {
      const int c0 = std::max(0, c - half);
      const int c1 = std::min(x.ncols - 1, c + half);
      const int n = (r1 - r0 + 1) * (c1 - c0 + 1);

      std::fill(m.begin(), m.end(), 0.0);
      for (int rr = r0; rr <= r1; ++rr)
        for (int cc = c0; cc <= c1; ++cc)
          for (std::size_t k = 0; k < K; ++k) m[k] += x.at(static_cast<int>(k), rr, cc);
      for (auto& mk : m) mk /= n;

      std::fill(s.begin(), s.end(), 0.0);
      if (n > 1) {
        for (int rr = r0; rr <= r1; ++rr)
          for (int cc = c0; cc <= c1; ++cc) {
            for (std::size_t k = 0; k < K; ++k) v[k] = x.at(static_cast<int>(k), rr, cc) - m[k];
            for (std::size_t i = 0; i < K; ++i)
              for (std::size_t j = 0; j < K; ++j) s[i * K + j] += v[i] * v[j];
          }
        for (auto& e : s) e /= (n - 1);
      }
      for (std::size_t i = 0; i < K; ++i) s[i * K + i] += p.ridge;

      for (std::size_t i = 0; i < K * K; ++i) a[i] = sigma[i] + s[i];
      if (!cholesky(a, K)) throw IntegrityError("smoothing system is not positive definite");
      for (std::size_t k = 0; k < K; ++k) xi[k] = x.at(static_cast<int>(k), r, c);
      am = m;
      ax = xi;
      cholesky_solve(a, K, am);
      cholesky_solve(a, K, ax);

      const std::size_t px = static_cast<std::size_t>(r - row_begin) * x.ncols + c;
      for (std::size_t i = 0; i < K; ++i) {
        double t = 0.0;
        for (std::size_t j = 0; j < K; ++j) t += sigma[i * K + j] * am[j] + s[i * K + j] * ax[j];
        theta[i * pixels + px] = t;
      }
    }
  }
  return theta;
}

std::vector<double> smooth_logit_block(const LogitBlock& x, const SmoothParams& p) {
  const auto sigma = resolve_sigma(p, static_cast<std::size_t>(x.n_classes));
  return smooth_logit_rows(x, 0, x.nrows, p, sigma);
}

std::vector<std::int16_t> posterior_to_probs(std::span<const double> theta, int n_classes, std::size_t pixels) {
  const auto K = static_cast<std::size_t>(n_classes);
  std::vector<std::int16_t> out(K * pixels);
  std::vector<double> q(K);
  for (std::size_t px = 0; px < pixels; ++px) {
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      q[k] = inverse_logit(theta[k * pixels + px]);
      total += q[k];
    }
    if (!(total > 0.0) || !std::isfinite(total)) throw IntegrityError("smoothing produced a degenerate probability vector");
    for (std::size_t k = 0; k < K; ++k) out[k * pixels + px] = io::round_to_i16(q[k] / total * 10000.0);
  }
  return out;
}

ProbCube bayes_smooth(const ProbCube& in, const SmoothParams& params, const fs::path& out, const SmoothOptions& opt) {
  const std::size_t K = in.labels.size();
  const auto sigma = resolve_sigma(params, K);
  if (opt.rows_per_chunk < 1) throw ValidationError("rows per chunk must be >= 1");
  std::error_code ec;
  if (fs::exists(out) && fs::equivalent(out, in.root, ec)) {
    throw ValidationError("smoothing output directory must differ from the input '" + in.root.string() + "'");
  }
  fs::create_directories(out);

  ProbCube result = in;
  result.root = out;

  struct Task {
    const TileGrid* grid;
    int row0;
    int row1;
  };
  std::vector<Task> tasks;
  for (const auto& g : in.tiles) {
    for (int r = 0; r < g.nrows; r += opt.rows_per_chunk) tasks.push_back({&g, r, std::min(g.nrows, r + opt.rows_per_chunk)});
    for (std::size_t k = 0; k < K; ++k) {
      auto tmp = result.raster_path(g.tile, k);
      tmp += ".tmp";
      { std::ofstream create(tmp, std::ios::binary | std::ios::trunc); }
      fs::resize_file(tmp, static_cast<std::uintmax_t>(g.pixels()) * 2);
    }
  }

  const int half = params.window / 2;
  parallel_for(tasks.size(), opt.workers, [&](std::size_t i) {
    const Task& t = tasks[i];
    const TileGrid& g = *t.grid;
    const int a = std::max(0, t.row0 - half);
    const int b = std::min(g.nrows, t.row1 + half);
    std::vector<std::int16_t> block;
    block.reserve(K * static_cast<std::size_t>(b - a) * g.ncols);
    for (std::size_t k = 0; k < K; ++k) {
      const auto rows = read_prob_rows(in, g.tile, k, a, b - a);
      block.insert(block.end(), rows.begin(), rows.end());
    }
    const LogitBlock x = logit_transform(block, static_cast<int>(K), b - a, g.ncols, params.eps);
    const auto theta = smooth_logit_rows(x, t.row0 - a, t.row1 - a, params, sigma);
    const std::size_t pixels = static_cast<std::size_t>(t.row1 - t.row0) * g.ncols;
    const auto probs = posterior_to_probs(theta, static_cast<int>(K), pixels);
    for (std::size_t k = 0; k < K; ++k) {
      auto tmp = result.raster_path(g.tile, k);
      tmp += ".tmp";
      std::fstream f(tmp, std::ios::binary | std::ios::in | std::ios::out);
      f.seekp(static_cast<std::streamoff>(t.row0) * g.ncols * 2);
      f.write(reinterpret_cast<const char*>(probs.data() + k * pixels), static_cast<std::streamsize>(pixels * 2));
      if (!f) throw RuntimeFailure("write error on '" + tmp.string() + "'");
    }
  });

  for (const auto& g : in.tiles) {
    for (std::size_t k = 0; k < K; ++k) {
      auto tmp = result.raster_path(g.tile, k);
      tmp += ".tmp";
      fs::rename(tmp, result.raster_path(g.tile, k));
    }
  }
  write_prob_manifest(result);
  return result;
}

// ---------------------------------------------------------------------------
// Label maps

const TileGrid& LabelMap::tile(const std::string& name) const {
  for (const auto& t : tiles)
    if (t.tile == name) return t;
  throw ValidationError("label map has no tile '" + name + "'");
}

int LabelMap::label_index(const std::string& label) const {
  const auto it = std::find(labels.begin(), labels.end(), label);
  return it == labels.end() ? -1 : static_cast<int>(it - labels.begin());
}

std::vector<std::uint8_t> argmax_labels(std::span<const std::int16_t> probs, int n_classes, std::size_t pixels) {
  std::vector<std::uint8_t> out(pixels, 0);
  for (std::size_t px = 0; px < pixels; ++px) {
    int best = 0;
    for (int k = 1; k < n_classes; ++k) {
      if (probs[static_cast<std::size_t>(k) * pixels + px] > probs[static_cast<std::size_t>(best) * pixels + px]) best = k;
    }
    out[px] = static_cast<std::uint8_t>(best);
  }
  return out;
}

void write_class_raster(const LabelMap& m, const std::string& tile, std::span<const std::uint8_t> classes) {
  const TileGrid& g = m.tile(tile);
  if (classes.size() != static_cast<std::size_t>(g.pixels())) throw ValidationError("class raster size does not match tile " + tile);
  io::write_file_atomic(m.class_path(tile), std::string_view(reinterpret_cast<const char*>(classes.data()), classes.size()));
  std::string ppm = "P6\n" + std::to_string(g.ncols) + " " + std::to_string(g.nrows) + "\n255\n";
  ppm.reserve(ppm.size() + classes.size() * 3);
  for (auto c : classes) {
    const auto& rgb = palette_color(c);
    ppm.append(reinterpret_cast<const char*>(rgb.data()), 3);
  }
  io::write_file_atomic(m.image_path(tile), ppm);
}

void write_label_map_metadata(const LabelMap& m) {
  json legend = json::object();
  for (std::size_t i = 0; i < m.labels.size(); ++i) legend[std::to_string(i)] = m.labels[i];
  io::write_file_atomic(m.legend_path(), legend.dump(2) + "\n");
  json j{{"id", m.id}, {"crs", m.crs}, {"affine", m.affine.c}, {"tiles", grid_json(m.tiles)}};
  io::write_file_atomic(m.manifest_path(), j.dump(2) + "\n");
}

LabelMap label_map(const ProbCube& p, const fs::path& out, std::size_t workers) {
  if (p.labels.size() > 256) throw ValidationError("label maps hold at most 256 classes");
  fs::create_directories(out);
  LabelMap m{p.id, p.crs, p.affine, p.tiles, p.labels, out};
  const int K = static_cast<int>(p.labels.size());

  parallel_for(m.tiles.size(), workers, [&](std::size_t ti) {
    const TileGrid& g = m.tiles[ti];
    std::vector<std::uint8_t> classes;
    classes.reserve(static_cast<std::size_t>(g.pixels()));
    constexpr int kStrip = 256;
    for (int r = 0; r < g.nrows; r += kStrip) {
      const int h = std::min(kStrip, g.nrows - r);
      std::vector<std::int16_t> block;
      for (int k = 0; k < K; ++k) {
        const auto rows = read_prob_rows(p, g.tile, static_cast<std::size_t>(k), r, h);
        block.insert(block.end(), rows.begin(), rows.end());
      }
      check_probs(block);
      const auto lab = argmax_labels(block, K, static_cast<std::size_t>(h) * g.ncols);
      classes.insert(classes.end(), lab.begin(), lab.end());
    }
    write_class_raster(m, g.tile, classes);
  });

  write_label_map_metadata(m);
  return m;
}

LabelMap load_label_map(const fs::path& root) {
  LabelMap m;
  m.root = root;
  if (!fs::exists(m.manifest_path())) throw ValidationError("no label map manifest at '" + m.manifest_path().string() + "'");
  if (!fs::exists(m.legend_path())) throw ValidationError("no legend at '" + m.legend_path().string() + "'");
  try {
    const json j = json::parse(io::read_file(m.manifest_path()));
    m.id = j.at("id").get<std::string>();
    m.crs = j.at("crs").get<std::string>();
    m.affine.c = j.at("affine").get<std::array<double, 6>>();
    for (const auto& g : j.at("tiles")) {
      m.tiles.push_back(TileGrid{g.at("tile").get<std::string>(), g.at("nrows").get<int>(), g.at("ncols").get<int>(),
                                 g.at("origin").get<std::array<double, 2>>(),
                                 g.at("resolution").get<std::array<double, 2>>()});
    }
    const json legend = json::parse(io::read_file(m.legend_path()));
    m.labels.resize(legend.size());
    for (auto it = legend.begin(); it != legend.end(); ++it) {
      const std::size_t idx = std::stoul(it.key());
      if (idx >= m.labels.size()) throw ValidationError("legend indices must be dense");
      m.labels[idx] = it.value().get<std::string>();
    }
  } catch (const json::exception& e) {
    throw ValidationError("malformed label map in '" + root.string() + "': " + e.what());
  } catch (const std::invalid_argument&) {
    throw ValidationError("legend keys must be class indices");
  }
  return m;
}

std::vector<std::uint8_t> read_class_raster(const LabelMap& m, const std::string& tile) {
  const TileGrid& g = m.tile(tile);
  const std::string bytes = io::read_file(m.class_path(tile));
  if (bytes.size() != static_cast<std::size_t>(g.pixels())) {
    throw IntegrityError("class raster '" + m.class_path(tile).string() + "' has wrong size");
  }
  std::vector<std::uint8_t> out(bytes.begin(), bytes.end());
  for (auto c : out)
    if (c >= m.labels.size()) throw IntegrityError("class raster for tile " + tile + " holds an index outside the legend");
  return out;
}

std::optional<PixelLocation> locate(const LabelMap& m, double lon, double lat) {
  for (const auto& g : m.tiles) {
    if (auto px = grid_pixel(g, m.affine, lon, lat)) return PixelLocation{g.tile, *px};
  }
  return std::nullopt;
}

std::vector<double> mapped_area(const LabelMap& m) {
  std::vector<double> area(m.labels.size(), 0.0);
  for (const auto& g : m.tiles) {
    const double px_area = g.resolution[0] * g.resolution[1];
    for (auto c : read_class_raster(m, g.tile)) area[c] += px_area;
  }
  return area;
}

}  // namespace tcube
