#include "tcube/quality.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>

#include "tcube/csv.hpp"
#include "tcube/error.hpp"
#include "tcube/io.hpp"
#include "tcube/palette.hpp"

namespace tcube {

int default_som_side(std::size_t n) {
  return std::max(1, static_cast<int>(std::ceil(std::sqrt(5.0 * std::sqrt(static_cast<double>(n))))));
}

std::string SOMGrid::majority(std::size_t i) const {
  std::string best;
  double best_p = -1;
  for (const auto& [label, p] : label_dist[i]) {  // map order = lexicographic, strict > keeps the smallest
    if (p > best_p) {
      best = label;
      best_p = p;
    }
  }
  return best;
}

double SOMGrid::purity(std::size_t i) const {
  double best = 0;
  for (const auto& [label, p] : label_dist[i]) best = std::max(best, p);
  return best;
}

namespace {

void resolve_size(SomParams& p, std::size_t n) {
  if (p.width <= 0 && p.height <= 0) p.width = p.height = default_som_side(n);
  if (p.width <= 0) p.width = p.height;
  if (p.height <= 0) p.height = p.width;
}

double squared_distance(std::span<const float> a, std::span<const float> b) {
  double d = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double diff = static_cast<double>(a[k]) - b[k];
    d += diff * diff;
  }
  return d;
}

}  // namespace

SOMGrid som_initialize(const TimeSeriesTable& t, const SomParams& params) {
  if (t.rows.empty()) throw ValidationError("som: empty table");
  SomParams p = params;
  resolve_size(p, t.rows.size());
  if (p.epochs < 1) throw ValidationError("som: epochs must be at least 1");
  SOMGrid g;
  g.width = p.width;
  g.height = p.height;
  g.dim = t.n_features();
  g.weights.resize(g.size() * g.dim);
  g.label_dist.resize(g.size());
  g.counts.assign(g.size(), 0);
  std::mt19937_64 rng(p.seed);
  std::uniform_int_distribution<std::size_t> pick(0, t.rows.size() - 1);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& s = t.rows[pick(rng)].series;
    std::copy(s.begin(), s.end(), g.weights.begin() + static_cast<std::ptrdiff_t>(i * g.dim));
  }
  return g;
}

SOMGrid som_train(const TimeSeriesTable& t, const SomParams& params) {
  SomParams p = params;
  if (!t.rows.empty()) resolve_size(p, t.rows.size());
  SOMGrid g = som_initialize(t, p);
  const double radius0 = p.radius_start > 0 ? p.radius_start : std::max(g.width, g.height) / 2.0;

  // a separate stream from initialization so the visiting order does not depend on grid size
  std::mt19937_64 rng(p.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(t.rows.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t total = static_cast<std::size_t>(p.epochs) * t.rows.size();
  std::size_t step = 0;
  std::vector<double> scale(g.size());
  for (int epoch = 0; epoch < p.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t idx : order) {
      const double frac = total > 1 ? static_cast<double>(step) / static_cast<double>(total - 1) : 1.0;
      ++step;
      const double lr = p.learning_rate_start + (p.learning_rate_end - p.learning_rate_start) * frac;
      const double sigma = radius0 + (p.radius_end - radius0) * frac;
      const auto& x = t.rows[idx].series;
      const std::size_t bmu = som_assign(g, x);
      const int br = static_cast<int>(bmu) / g.width;
      const int bc = static_cast<int>(bmu) % g.width;
      for (std::size_t n = 0; n < g.size(); ++n) {
        const int r = static_cast<int>(n) / g.width;
        const int c = static_cast<int>(n) % g.width;
        const double d = std::max(std::abs(r - br), std::abs(c - bc));
        const double h = std::exp(-(d * d) / (2.0 * sigma * sigma));
        const double a = lr * h;
        float* w = g.weights.data() + n * g.dim;
        for (std::size_t k = 0; k < g.dim; ++k) {
          w[k] = static_cast<float>(w[k] + a * (static_cast<double>(x[k]) - w[k]));
        }
      }
    }
  }
  som_label(g, t);
  return g;
}

void som_label(SOMGrid& g, const TimeSeriesTable& t) {
  std::vector<std::map<std::string, std::size_t>> tallies(g.size());
  g.counts.assign(g.size(), 0);
  for (const auto& row : t.rows) {
    const std::size_t n = som_assign(g, row.series);
    ++tallies[n][row.point.label];
    ++g.counts[n];
  }
  g.label_dist.assign(g.size(), {});
  for (std::size_t n = 0; n < g.size(); ++n) {
    for (const auto& [label, c] : tallies[n]) {
      g.label_dist[n][label] = static_cast<double>(c) / static_cast<double>(g.counts[n]);
    }
  }
}

std::size_t som_assign(const SOMGrid& g, std::span<const float> v) {
  if (v.size() != g.dim) {
    throw ValidationError("som: vector of dimension " + std::to_string(v.size()) + " does not match grid dimension " +
                          std::to_string(g.dim));
  }
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n < g.size(); ++n) {
    const double d = squared_distance(g.neuron(n), v);
    if (d < best_d) {
      best_d = d;
      best = n;
    }
  }
  return best;
}

double quantization_error(const SOMGrid& g, const TimeSeriesTable& t) {
  if (t.rows.empty()) return 0;
  double sum = 0;
  for (const auto& row : t.rows) sum += std::sqrt(squared_distance(g.neuron(som_assign(g, row.series)), row.series));
  return sum / static_cast<double>(t.rows.size());
}

std::string_view to_string(SampleStatus s) {
  switch (s) {
    case SampleStatus::clean: return "clean";
    case SampleStatus::analyze: return "analyze";
    case SampleStatus::remove: return "remove";
  }
  return "";
}

std::vector<SampleEvaluation> som_evaluate(const SOMGrid& g, const TimeSeriesTable& t, double threshold) {
  std::vector<SampleEvaluation> out;
  out.reserve(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const std::size_t n = som_assign(g, t.rows[i].series);
    if (g.counts[n] == 0) {
      throw IntegrityError("som: sample " + std::to_string(i) + " maps to neuron " + std::to_string(n) +
                           " which has no training samples");
    }
    SampleEvaluation e{i, n, g.purity(n), SampleStatus::clean};
    if (t.rows[i].point.label != g.majority(n)) {
      e.status = SampleStatus::remove;
    } else if (e.purity < threshold) {
      e.status = SampleStatus::analyze;
    }
    out.push_back(e);
  }
  return out;
}


void som_export(const SOMGrid& g, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw RuntimeFailure("som: cannot create '" + dir.string() + "': " + ec.message());

  std::string text = "neuron,row,col,majority_label,purity,count\n";
  char buf[64];
  for (std::size_t n = 0; n < g.size(); ++n) {
    std::snprintf(buf, sizeof buf, "%zu,%d,%d,", n, static_cast<int>(n) / g.width, static_cast<int>(n) % g.width);
    text += buf;
    text += csv::quote(g.majority(n));
    std::snprintf(buf, sizeof buf, ",%.6f,%zu\n", g.purity(n), g.counts[n]);
    text += buf;
  }
  io::write_file_atomic(dir / "som_grid.csv", text);

  std::set<std::string> labels;
  for (const auto& d : g.label_dist)
    for (const auto& [l, p] : d) labels.insert(l);
  const std::vector<std::string> sorted(labels.begin(), labels.end());
  constexpr int kCell = 16;
  const int w = g.width * kCell;
  const int h = g.height * kCell;
  std::string ppm = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t n = static_cast<std::size_t>((y / kCell) * g.width + x / kCell);
      std::array<std::uint8_t, 3> rgb{0, 0, 0};
      if (g.counts[n] > 0) {
        const auto idx = std::lower_bound(sorted.begin(), sorted.end(), g.majority(n)) - sorted.begin();
        rgb = palette_color(static_cast<std::size_t>(idx));
      }
      ppm.append(reinterpret_cast<const char*>(rgb.data()), 3);
    }
  }
  io::write_file_atomic(dir / "som_map.ppm", ppm);
}

void write_som_evaluation(std::span<const SampleEvaluation> evals, const std::filesystem::path& path) {
  std::string text = "sample_index,neuron,purity,status\n";
  char buf[96];
  for (const auto& e : evals) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.6f,%s\n", e.sample_index, e.neuron, e.purity,
                  std::string(to_string(e.status)).c_str());
    text += buf;
  }
  io::write_file_atomic(path, text);
}

}  // namespace tcube
