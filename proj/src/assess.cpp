#include "tcube/assess.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "tcube/csv.hpp"
#include "tcube/error.hpp"
#include "tcube/io.hpp"
#include "tcube/parallel.hpp"

namespace tcube {

using nlohmann::json;

std::int64_t ConfusionMatrix::row_total(std::size_t i) const {
  std::int64_t s = 0;
  for (std::size_t j = 0; j < size(); ++j) s += at(i, j);
  return s;
}

std::int64_t ConfusionMatrix::col_total(std::size_t j) const {
  std::int64_t s = 0;
  for (std::size_t i = 0; i < size(); ++i) s += at(i, j);
  return s;
}

std::int64_t ConfusionMatrix::total() const { return std::accumulate(counts.begin(), counts.end(), std::int64_t{0}); }

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t s = 0;
  for (std::size_t i = 0; i < size(); ++i) s += at(i, i);
  return s;
}

// ---------------------------------------------------------------------------
// Reference points

std::vector<ReferencePoint> parse_references_csv(std::string_view text) {
  const auto records = csv::parse(text);
  if (records.empty()) throw ValidationError("references: empty file");
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < records[0].fields.size(); ++i) col[records[0].fields[i]] = i;
  for (const char* name : {"longitude", "latitude", "label"}) {
    if (!col.contains(name)) throw ValidationError(std::string("references: missing column '") + name + "'");
  }
  auto number = [](const std::string& s, const char* what, std::size_t line) {
    double v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) {
      throw ValidationError("line " + std::to_string(line) + ": bad " + what + " '" + s + "'");
    }
    return v;
  };
  std::vector<ReferencePoint> out;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.fields.size() != records[0].fields.size()) {
      throw ValidationError("line " + std::to_string(rec.line) + ": expected " + std::to_string(records[0].fields.size()) +
                            " fields, found " + std::to_string(rec.fields.size()));
    }
    ReferencePoint p{number(rec.fields[col["longitude"]], "longitude", rec.line),
                     number(rec.fields[col["latitude"]], "latitude", rec.line), rec.fields[col["label"]]};
    if (p.label.empty()) throw ValidationError("line " + std::to_string(rec.line) + ": empty label");
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<ReferencePoint> load_references(const std::filesystem::path& path) {
  try {
    return parse_references_csv(io::read_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

ConfusionResult confusion(const LabelMap& map, std::span<const ReferencePoint> refs) {
  if (refs.empty()) throw ValidationError("no reference points");
  std::set<std::string> unknown;
  for (const auto& r : refs)
    if (map.label_index(r.label) < 0) unknown.insert(r.label);
  if (!unknown.empty()) {
    std::string list;
    for (const auto& l : unknown) list += (list.empty() ? "" : ", ") + l;
    throw ValidationError("reference labels not in the map legend: " + list);
  }
  ConfusionResult out{ConfusionMatrix(map.labels), 0};
  std::map<std::string, std::vector<std::uint8_t>> rasters;
  for (const auto& r : refs) {
    const auto loc = locate(map, r.longitude, r.latitude);
    if (!loc) {
      ++out.dropped_outside;
      continue;
    }
    auto it = rasters.find(loc->tile);
    if (it == rasters.end()) it = rasters.emplace(loc->tile, read_class_raster(map, loc->tile)).first;
    const auto& g = map.tile(loc->tile);
    const std::uint8_t mapped = it->second[static_cast<std::size_t>(loc->pixel.row) * g.ncols + loc->pixel.col];
    ++out.matrix.at(mapped, static_cast<std::size_t>(map.label_index(r.label)));
  }
  if (out.matrix.total() == 0) throw EmptyResultError("all " + std::to_string(refs.size()) + " reference points fall outside the map");
  return out;
}

// ---------------------------------------------------------------------------
// Area-weighted estimates

AreaEstimate accuracy_area(const ConfusionMatrix& cm, std::span<const double> mapped_area) {
  const std::size_t K = cm.size();
  if (K == 0 || cm.counts.size() != K * K) throw ValidationError("confusion matrix is empty or malformed");
  if (mapped_area.size() != K) {
    throw ValidationError("expected " + std::to_string(K) + " mapped areas, got " + std::to_string(mapped_area.size()));
  }
  for (auto c : cm.counts)
    if (c < 0) throw ValidationError("confusion matrix counts must be >= 0");
  if (cm.total() == 0) throw ValidationError("confusion matrix has no samples");

  double total_area = 0;
  for (std::size_t i = 0; i < K; ++i) {
    if (!(mapped_area[i] >= 0) || !std::isfinite(mapped_area[i])) throw ValidationError("mapped areas must be finite and >= 0");
    total_area += mapped_area[i];
  }
  for (std::size_t i = 0; i < K; ++i) {
    const auto n = cm.row_total(i);
    if (n > 0 && mapped_area[i] == 0) {
      throw ValidationError("class '" + cm.labels[i] + "' has reference samples but zero mapped area");
    }
    if (n == 0 && mapped_area[i] > 0) {
      throw ValidationError("class '" + cm.labels[i] + "' has mapped area but no reference samples mapped to it");
    }
  }

  AreaEstimate e;
  e.labels = cm.labels;
  e.mapped_area.assign(mapped_area.begin(), mapped_area.end());
  e.p_hat.assign(K * K, 0.0);
  std::vector<double> w(K);
  for (std::size_t i = 0; i < K; ++i) {
    w[i] = mapped_area[i] / total_area;
    const auto n = cm.row_total(i);
    if (n == 0) continue;
    for (std::size_t j = 0; j < K; ++j) e.p_hat[i * K + j] = w[i] * static_cast<double>(cm.at(i, j)) / static_cast<double>(n);
  }

  bool ci_defined = true;
  for (std::size_t i = 0; i < K; ++i)
    if (w[i] > 0 && cm.row_total(i) < 2) ci_defined = false;

  e.overall_accuracy = 0;
  for (std::size_t i = 0; i < K; ++i) e.overall_accuracy += e.p_hat[i * K + i];

  e.users_accuracy.resize(K);
  e.producers_accuracy.resize(K);
  e.adjusted_area.resize(K);
  e.ci95_area.resize(K);
  double oa_var = 0;
  for (std::size_t i = 0; i < K; ++i) {
    double row = 0;
    for (std::size_t j = 0; j < K; ++j) row += e.p_hat[i * K + j];
    if (row > 0) e.users_accuracy[i] = e.p_hat[i * K + i] / row;
    if (ci_defined && w[i] > 0) {
      const double ua = *e.users_accuracy[i];
      oa_var += w[i] * w[i] * ua * (1 - ua) / static_cast<double>(cm.row_total(i) - 1);
    }
  }
  if (ci_defined) e.overall_variance = oa_var;

  for (std::size_t j = 0; j < K; ++j) {
    double col = 0;
    for (std::size_t i = 0; i < K; ++i) col += e.p_hat[i * K + j];
    if (col > 0) e.producers_accuracy[j] = e.p_hat[j * K + j] / col;
    e.adjusted_area[j] = col * total_area;
    if (ci_defined) {
      double var = 0;
      for (std::size_t i = 0; i < K; ++i) {
        if (w[i] == 0) continue;
        const double ni = static_cast<double>(cm.row_total(i));
        const double f = static_cast<double>(cm.at(i, j)) / ni;
        var += w[i] * w[i] * f * (1 - f) / (ni - 1);
      }
      e.ci95_area[j] = 1.96 * std::sqrt(var) * total_area;
    }
  }
  return e;
}

namespace {

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json opt_array(const std::vector<std::optional<double>>& v) {
  json a = json::array();
  for (const auto& x : v) a.push_back(opt_json(x));
  return a;
}

json matrix_json(const ConfusionMatrix& cm) {
  json rows = json::array();
  for (std::size_t i = 0; i < cm.size(); ++i) {
    json r = json::array();
    for (std::size_t j = 0; j < cm.size(); ++j) r.push_back(cm.at(i, j));
    rows.push_back(r);
  }
  return {{"labels", cm.labels}, {"rows", "map"}, {"columns", "reference"}, {"counts", rows}};
}

}  // namespace

json area_estimate_json(const AreaEstimate& e, const ConfusionMatrix& cm) {
  const std::size_t K = e.labels.size();
  json p = json::array();
  for (std::size_t i = 0; i < K; ++i) p.push_back(std::vector<double>(e.p_hat.begin() + i * K, e.p_hat.begin() + (i + 1) * K));
  return {{"labels", e.labels},
          {"mapped_area", e.mapped_area},
          {"p_hat", p},
          {"overall_accuracy", e.overall_accuracy},
          {"overall_variance", opt_json(e.overall_variance)},
          {"users_accuracy", opt_array(e.users_accuracy)},
          {"producers_accuracy", opt_array(e.producers_accuracy)},
          {"adjusted_area", e.adjusted_area},
          {"ci95_area", opt_array(e.ci95_area)},
          {"confusion_matrix", matrix_json(cm)}};
}

std::string area_estimate_table(const AreaEstimate& e) {
  std::size_t width = 6;
  for (const auto& l : e.labels) width = std::max(width, l.size());
  auto cell = [](const std::optional<double>& v) {
    char buf[32];
    if (!v) return std::string("undefined");
    std::snprintf(buf, sizeof buf, "%.4f", *v);
    return std::string(buf);
  };
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof buf, "%-*s  %-20s  %-16s\n", static_cast<int>(width), "Labels", "Producer's Accuracy",
                "User's Accuracy");
  out += buf;
  for (std::size_t i = 0; i < e.labels.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%-*s  %-20s  %-16s\n", static_cast<int>(width), e.labels[i].c_str(),
                  cell(e.producers_accuracy[i]).c_str(), cell(e.users_accuracy[i]).c_str());
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "Overall accuracy: %.4f\n", e.overall_accuracy);
  out += buf;
  return out;
}

// ---------------------------------------------------------------------------
// k-fold

FoldPlan make_folds(std::span<const std::string> labels, int k, std::uint64_t seed) {
  if (k < 2) throw ValidationError("k-fold needs k >= 2");
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
  for (const auto& [label, idx] : groups) {
    if (idx.size() < static_cast<std::size_t>(k)) {
      throw ValidationError("cannot stratify into " + std::to_string(k) + " folds: label '" + label + "' has only " +
                            std::to_string(idx.size()) + " samples");
    }
  }
  FoldPlan plan{k, std::vector<int>(labels.size(), -1)};
  std::mt19937_64 rng(seed);
  std::size_t offset = 0;
  for (auto& [label, idx] : groups) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < idx.size(); ++i) plan.assignment[idx[i]] = static_cast<int>((offset + i) % k);
    offset = (offset + idx.size()) % static_cast<std::size_t>(k);
  }
  return plan;
}

KFoldResult kfold_validate(const TimeSeriesTable& t, int k, const std::string& kind, const Hyperparams& h,
                           std::uint64_t seed, std::size_t workers) {
  std::vector<std::string> labels;
  labels.reserve(t.rows.size());
  for (const auto& r : t.rows) labels.push_back(r.point.label);

  KFoldResult res;
  res.k = k;
  res.model_kind = kind;
  res.folds = make_folds(labels, k, seed);
  res.pooled = ConfusionMatrix(t.labels());
  res.predicted.assign(t.rows.size(), -1);
  res.fold_accuracy.assign(static_cast<std::size_t>(k), 0.0);
  const std::size_t F = t.n_features();

  parallel_for(static_cast<std::size_t>(k), workers, [&](std::size_t f) {
    TimeSeriesTable train = t;
    train.rows.clear();
    std::vector<std::size_t> test;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      if (res.folds.assignment[i] == static_cast<int>(f)) {
        test.push_back(i);
      } else {
        train.rows.push_back(t.rows[i]);
      }
    }
    const TrainedModel m = train_model(train, kind, h, seed + 1 + f);
    std::vector<float> x(test.size() * F);
    for (std::size_t i = 0; i < test.size(); ++i) std::copy_n(t.rows[test[i]].series.begin(), F, x.begin() + i * F);
    const ProbMatrix probs = predict_probs(m, x, test.size());
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      const auto row = probs.row(i);
      const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      const auto& name = m.labels[best];
      const auto idx = std::lower_bound(res.pooled.labels.begin(), res.pooled.labels.end(), name) - res.pooled.labels.begin();
      res.predicted[test[i]] = static_cast<int>(idx);
      if (name == t.rows[test[i]].point.label) ++correct;
    }
    res.fold_accuracy[f] = static_cast<double>(correct) / static_cast<double>(test.size());
  });

  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto ref = std::lower_bound(res.pooled.labels.begin(), res.pooled.labels.end(), t.rows[i].point.label) -
                     res.pooled.labels.begin();
    ++res.pooled.at(static_cast<std::size_t>(res.predicted[i]), static_cast<std::size_t>(ref));
  }
  res.mean_accuracy = std::accumulate(res.fold_accuracy.begin(), res.fold_accuracy.end(), 0.0) / k;
  return res;
}

json kfold_json(const KFoldResult& r) {
  return {{"purpose", "model comparison only; not a map accuracy measure"},
          {"k", r.k},
          {"model", r.model_kind},
          {"fold_accuracy", r.fold_accuracy},
          {"mean_accuracy", r.mean_accuracy},
          {"pooled_confusion_matrix", matrix_json(r.pooled)}};
}

}  // namespace tcube
