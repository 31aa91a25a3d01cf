#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "tcube/assess.hpp"
#include "tcube/catalog.hpp"
#include "tcube/cube.hpp"
#include "tcube/engine.hpp"
#include "tcube/error.hpp"
#include "tcube/io.hpp"
#include "tcube/model.hpp"
#include "tcube/quality.hpp"
#include "tcube/samples.hpp"
#include "tcube/smooth.hpp"
#include "tcube/synth.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "1.0.0";

struct Opts {
  bool json_out = false;
  std::string config;

  // shared
  std::string out;
  std::size_t cores = tcube::default_workers();
  std::uint64_t seed = 42;

  // cube
  std::string catalog;
  std::vector<std::string> tiles;
  std::vector<double> roi;
  std::string start, end;
  int period = 16;
  std::vector<std::string> bands;

  // get-data, som, train, kfold
  std::string cube;
  std::string samples;
  std::string table;
  int width = 0, height = 0, epochs = 50;
  std::string method = "rf";
  std::vector<std::string> params;
  int k = 5;

  // classify
  std::string model;
  std::string memory = "1G";
  bool resume = false;
  bool clean = false;
  int max_retries = 3;
  int rows_per_chunk = 0;

  // smooth, label
  std::string probs;
  int window = 7;
  std::vector<double> sigma;
  double eps = 1e-4;
  double ridge = 1e-6;

  // accuracy-area
  std::string map;
  std::string refs;
  std::vector<double> areas;

  // synth
  std::string spec;
};

void emit(const Opts& o, const json& summary, const std::string& text) {
  if (o.json_out) {
    std::cout << summary.dump() << "\n";
  } else {
    std::cout << text;
  }
}

std::int64_t parse_memory(const std::string& s) {
  if (s.empty()) throw tcube::ValidationError("--memory: empty value");
  std::int64_t mult = 1;
  std::string digits = s;
  const char suffix = static_cast<char>(std::toupper(static_cast<unsigned char>(s.back())));
  if (suffix == 'K' || suffix == 'M' || suffix == 'G') {
    mult = suffix == 'K' ? 1LL << 10 : suffix == 'M' ? 1LL << 20 : 1LL << 30;
    digits.pop_back();
  }
  std::int64_t v = 0;
  const auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
  if (ec != std::errc{} || p != digits.data() + digits.size() || v <= 0) {
    throw tcube::ValidationError("--memory: expected a positive byte count such as 4G, got '" + s + "'");
  }
  return v * mult;
}

tcube::Hyperparams parse_params(const std::vector<std::string>& kv) {
  tcube::Hyperparams h = tcube::Hyperparams::object();
  for (const auto& item : kv) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw tcube::ValidationError("--param: expected key=value, got '" + item + "'");
    const std::string key = item.substr(0, eq);
    const std::string value = item.substr(eq + 1);
    const json parsed = json::parse(value, nullptr, false);
    h[key] = parsed.is_discarded() ? json(value) : parsed;
  }
  return h;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------

int cmd_cube(const Opts& o) {
  auto coll = tcube::parse_catalog(o.catalog);
  tcube::ItemFilter f;
  f.start = tcube::Date::parse(o.start);
  f.end = tcube::Date::parse(o.end);
  if (!o.tiles.empty()) f.tiles = o.tiles;
  if (!o.roi.empty()) {
    if (o.roi.size() != 4) throw tcube::ValidationError("--roi: expected min_lon min_lat max_lon max_lat");
    f.roi = tcube::BBox{o.roi[0], o.roi[1], o.roi[2], o.roi[3]};
  }
  if (!o.bands.empty()) {
    std::vector<tcube::BandDef> keep;
    for (const auto& b : o.bands) {
      const auto* def = coll.find_band(b);
      if (!def || def->is_cloud_mask) throw tcube::ValidationError("--bands: unknown data band '" + b + "'");
      keep.push_back(*def);
    }
    if (const auto* mask = coll.cloud_band()) keep.push_back(*mask);
    coll.bands = keep;
  }
  const auto filtered = tcube::filter_items(coll, f);
  const auto timeline = tcube::build_timeline(f.start, f.end, o.period);
  const auto cube = tcube::regularize(filtered, timeline, o.out, o.cores);
  json tiles = json::array();
  for (const auto& t : cube.tiles) tiles.push_back(t.tile);
  emit(o,
       {{"command", "cube"},
        {"cube", cube.id},
        {"path", cube.root.string()},
        {"tiles", tiles},
        {"instants", cube.timeline.n},
        {"bands", cube.bands.size()},
        {"items_used", filtered.items.size()},
        {"filled_pixel_count", cube.filled_pixel_count}},
       "cube " + cube.id + " written to " + cube.root.string() + ": " + std::to_string(cube.tiles.size()) + " tile(s), " +
           std::to_string(cube.timeline.n) + " instants, " + std::to_string(cube.bands.size()) + " band(s), " +
           std::to_string(cube.filled_pixel_count) + " pixel series filled from the tile median\n");
  return 0;
}

int cmd_get_data(const Opts& o) {
  const auto cube = tcube::load_cube(o.cube);
  const auto points = tcube::load_samples(o.samples);
  const auto ex = tcube::get_data(cube, points, o.cores);
  if (ex.table.rows.empty()) throw tcube::EmptyResultError("get-data: no sample survived extraction");
  tcube::write_table(ex.table, o.out);
  emit(o,
       {{"command", "get-data"},
        {"table", o.out},
        {"rows", ex.table.rows.size()},
        {"dropped_outside", ex.dropped_outside},
        {"rejected_span", ex.rejected_span},
        {"labels", ex.table.labels()}},
       "extracted " + std::to_string(ex.table.rows.size()) + " time series to " + o.out + " (" +
           std::to_string(ex.dropped_outside) + " outside the cube, " + std::to_string(ex.rejected_span) +
           " not covering the timeline)\n");
  return 0;
}

int cmd_som(const Opts& o) {
  const auto raw = tcube::read_table(o.table);
  const auto table = tcube::apply_normalization(raw, tcube::fit_normalization(raw));
  tcube::SomParams p;
  p.width = o.width;
  p.height = o.height;
  p.epochs = o.epochs;
  p.seed = o.seed;
  const auto grid = tcube::som_train(table, p);
  const auto evals = tcube::som_evaluate(grid, table);
  tcube::som_export(grid, o.out);
  tcube::write_som_evaluation(evals, fs::path(o.out) / "som_eval.csv");
  std::map<std::string, int> status;
  for (const auto& e : evals) ++status[std::string(tcube::to_string(e.status))];
  const double qe = tcube::quantization_error(grid, table);
  emit(o,
       {{"command", "som"},
        {"width", grid.width},
        {"height", grid.height},
        {"quantization_error", qe},
        {"clean", status["clean"]},
        {"analyze", status["analyze"]},
        {"remove", status["remove"]},
        {"out", o.out}},
       "SOM " + std::to_string(grid.width) + "x" + std::to_string(grid.height) + ", quantization error " +
           fmt("%.4f", qe) + "; samples clean " + std::to_string(status["clean"]) + ", analyze " +
           std::to_string(status["analyze"]) + ", remove " + std::to_string(status["remove"]) + "; outputs in " +
           o.out + "\n");
  return 0;
}

int cmd_train(const Opts& o) {
  const auto table = tcube::read_table(o.table);
  const auto model = tcube::train_model(table, o.method, parse_params(o.params), o.seed);
  tcube::save_model(model, o.out);
  emit(o,
       {{"command", "train"},
        {"model", o.out},
        {"kind", model.kind},
        {"labels", model.labels},
        {"samples", table.rows.size()},
        {"hyperparams", model.hyperparams}},
       "trained " + model.kind + " on " + std::to_string(table.rows.size()) + " samples (" +
           std::to_string(model.labels.size()) + " classes); model saved to " + o.out + "\n");
  return 0;
}

int cmd_classify(const Opts& o) {
  tcube::ClassifyOptions opt;
  opt.max_retries = o.max_retries;
  opt.clean = o.clean;
  tcube::ClassifyResult r;
  if (o.resume) {
    r = tcube::resume(o.out, opt);
  } else {
    if (o.cube.empty() || o.model.empty()) throw tcube::ValidationError("classify: --cube and --model are required");
    const auto cube = tcube::load_cube(o.cube);
    const auto model = tcube::load_model(o.model);
    const int cores = static_cast<int>(o.cores);
    const auto plan = o.rows_per_chunk > 0
                          ? tcube::plan_strips(cube, o.rows_per_chunk, cores)
                          : tcube::plan_chunks(cube, parse_memory(o.memory), cores, static_cast<int>(model.labels.size()));
    r = tcube::classify_cube(cube, o.model, plan, o.out, opt);
  }
  emit(o,
       {{"command", "classify"},
        {"job", r.state.job_id},
        {"out", o.out},
        {"chunks", r.state.plan.chunks.size()},
        {"chunks_executed", r.chunks_executed},
        {"workers", r.state.plan.max_workers},
        {"labels", r.state.labels}},
       "job " + r.state.job_id + ": " + std::to_string(r.chunks_executed) + " of " +
           std::to_string(r.state.plan.chunks.size()) + " chunks run on up to " +
           std::to_string(r.state.plan.max_workers) + " workers; probabilities in " + o.out + "\n");
  return 0;
}

int cmd_smooth(const Opts& o) {
  const auto in = tcube::load_prob_cube(o.probs);
  tcube::SmoothParams p;
  p.window = o.window;
  p.eps = o.eps;
  p.ridge = o.ridge;
  const std::size_t K = in.labels.size();
  if (o.sigma.size() == 1) {
    p.sigma.assign(K * K, 0.0);
    for (std::size_t i = 0; i < K; ++i) p.sigma[i * K + i] = o.sigma[0];
  } else {
    p.sigma = o.sigma;
  }
  tcube::SmoothOptions so;
  so.workers = o.cores;
  const auto out = tcube::bayes_smooth(in, p, o.out, so);
  emit(o, {{"command", "smooth"}, {"out", out.root.string()}, {"window", p.window}, {"classes", K}},
       "smoothed probabilities (window " + std::to_string(p.window) + ") written to " + out.root.string() + "\n");
  return 0;
}

int cmd_label(const Opts& o) {
  const auto in = tcube::load_prob_cube(o.probs);
  const auto m = tcube::label_map(in, o.out, o.cores);
  const auto area = tcube::mapped_area(m);
  emit(o, {{"command", "label"}, {"out", m.root.string()}, {"labels", m.labels}, {"mapped_area", area}},
       "label map written to " + m.root.string() + "\n");
  return 0;
}

int cmd_kfold(const Opts& o) {
  const auto table = tcube::read_table(o.table);
  const auto r = tcube::kfold_validate(table, o.k, o.method, parse_params(o.params), o.seed, o.cores);
  json j = tcube::kfold_json(r);
  j["command"] = "kfold";
  std::string text = std::to_string(r.k) + "-fold validation of " + r.model_kind +
                     " (model comparison only, not map accuracy)\n";
  for (std::size_t f = 0; f < r.fold_accuracy.size(); ++f) {
    text += "  fold " + std::to_string(f) + ": " + fmt("%.4f", r.fold_accuracy[f]) + "\n";
  }
  text += "  mean accuracy: " + fmt("%.4f", r.mean_accuracy) + "\n";
  emit(o, j, text);
  return 0;
}

int cmd_accuracy_area(const Opts& o) {
  const auto m = tcube::load_label_map(o.map);
  const auto refs = tcube::load_references(o.refs);
  const auto cm = tcube::confusion(m, refs);
  const auto area = o.areas.empty() ? tcube::mapped_area(m) : o.areas;
  const auto est = tcube::accuracy_area(cm.matrix, area);
  json j = tcube::area_estimate_json(est, cm.matrix);
  j["command"] = "accuracy-area";
  j["dropped_outside"] = cm.dropped_outside;
  if (!o.out.empty()) tcube::io::write_file_atomic(o.out, j.dump(2) + "\n");
  emit(o, j, tcube::area_estimate_table(est));
  return 0;
}

int cmd_synth(const Opts& o) {
  tcube::ScenarioSpec spec;
  if (!o.spec.empty()) {
    json j;
    try {
      j = json::parse(tcube::io::read_file(o.spec));
    } catch (const json::exception& e) {
      throw tcube::ValidationError(o.spec + ": " + e.what());
    }
    spec = tcube::scenario_from_json(j);
  }
  const auto r = tcube::generate_scenario(spec, o.seed, o.out);
  emit(o,
       {{"command", "synth"},
        {"catalog", r.catalog_path.string()},
        {"samples", r.samples_path.string()},
        {"refs", r.refs_path.string()},
        {"truth", r.truth.root.string()},
        {"items", r.catalog.items.size()},
        {"start", r.timeline.start.str()},
        {"end", (r.timeline.end_exclusive() + (-1)).str()},
        {"period", r.timeline.period_days}},
       "synthetic scenario written to " + o.out + " (" + std::to_string(r.catalog.items.size()) + " items, timeline " +
           r.timeline.start.str() + " .. " + (r.timeline.end_exclusive() + (-1)).str() + ")\n");
  return 0;
}

// Options the config file may set, keyed by long name.
std::set<std::string> all_option_names(CLI::App& app) {
  std::set<std::string> names;
  for (const auto* sub : app.get_subcommands([](CLI::App*) { return true; })) {
    for (const auto* opt : sub->get_options()) {
      for (const auto& n : opt->get_lnames()) names.insert(n);
    }
  }
  return names;
}

// Extra arguments supplying config values for options the user did not set.
std::vector<std::string> config_args(const json& cfg, CLI::App& sub) {
  std::vector<std::string> extra;
  for (auto it = cfg.begin(); it != cfg.end(); ++it) {
    const CLI::Option* opt = sub.get_option_no_throw("--" + it.key());
    if (!opt || opt->count() > 0) continue;
    const json& v = it.value();
    if (v.is_boolean()) {
      if (v.get<bool>()) extra.push_back("--" + it.key());
      continue;
    }
    auto token = [](const json& x) { return x.is_string() ? x.get<std::string>() : x.dump(); };
    extra.push_back("--" + it.key());
    if (v.is_array()) {
      for (const auto& x : v) extra.push_back(token(x));
    } else {
      extra.push_back(token(v));
    }
  }
  return extra;
}

}  // namespace

int main(int argc, char** argv) {
  Opts o;
  CLI::App app{"tcube: time-first, space-later land classification of satellite image time series"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string("tcube ") + kVersion + " (model format " +
                                        std::to_string(tcube::kModelFormatVersion) +
                                        ", cube manifest 1, job file 1, table format 1)");
  app.add_flag("--json", o.json_out, "Print a JSON summary on stdout");
  app.add_option("--config", o.config, "Flat JSON file of option defaults; command-line flags win");

  auto* cube = app.add_subcommand("cube", "Build a regular data cube from an image collection catalog");
  cube->add_option("--catalog", o.catalog, "Catalog JSON path or http:// URL")->required();
  cube->add_option("--tiles", o.tiles, "Tiles to include");
  cube->add_option("--roi", o.roi, "Region of interest: min_lon min_lat max_lon max_lat")->expected(4);
  cube->add_option("--start", o.start, "First date, YYYY-MM-DD")->required();
  cube->add_option("--end", o.end, "Last date, YYYY-MM-DD")->required();
  cube->add_option("--period", o.period, "Interval length in days")->capture_default_str();
  cube->add_option("--bands", o.bands, "Data bands to keep");
  cube->add_option("--out", o.out, "Output cube directory")->required();
  cube->add_option("--cores", o.cores, "Worker threads");

  auto* gd = app.add_subcommand("get-data", "Extract labelled time series at sample locations");
  gd->add_option("--cube", o.cube, "Cube directory")->required();
  gd->add_option("--samples", o.samples, "Samples CSV or GeoJSON")->required();
  gd->add_option("--out", o.out, "Output table CSV")->required();
  gd->add_option("--cores", o.cores, "Worker threads");

  auto* som = app.add_subcommand("som", "Assess sample quality with a self-organizing map");
  som->add_option("--table", o.table, "Time-series table CSV")->required();
  som->add_option("--width", o.width, "Grid width (0 = automatic)");
  som->add_option("--height", o.height, "Grid height (0 = automatic)");
  som->add_option("--epochs", o.epochs, "Training epochs")->capture_default_str();
  som->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  som->add_option("--out", o.out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train a classification model");
  train->add_option("--table", o.table, "Time-series table CSV")->required();
  train->add_option("--method", o.method, "rf, mlp or tempcnn")->capture_default_str();
  train->add_option("--param", o.params, "Hyperparameter key=value (repeatable)");
  train->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  train->add_option("--out", o.out, "Output model file")->required();

  auto* cls = app.add_subcommand("classify", "Classify a cube into per-class probability rasters");
  cls->add_option("--cube", o.cube, "Cube directory");
  cls->add_option("--model", o.model, "Model file");
  cls->add_option("--memory", o.memory, "Memory budget, e.g. 512M or 4G")->capture_default_str();
  cls->add_option("--cores", o.cores, "Worker processes");
  cls->add_option("--rows-per-chunk", o.rows_per_chunk, "Fixed chunk height instead of the memory-based plan");
  cls->add_option("--max-retries", o.max_retries, "Retries per chunk")->capture_default_str();
  cls->add_flag("--clean", o.clean, "Remove chunk files after merging");
  cls->add_flag("--resume", o.resume, "Resume the job in --out");
  cls->add_option("--out", o.out, "Job / output directory")->required();

  auto* sm = app.add_subcommand("smooth", "Bayesian spatial smoothing of probability rasters");
  sm->add_option("--probs", o.probs, "Probability cube directory")->required();
  sm->add_option("--window", o.window, "Odd neighbourhood size")->capture_default_str();
  sm->add_option("--sigma", o.sigma, "Prior covariance: one variance for all classes or K*K values");
  sm->add_option("--eps", o.eps, "Probability clamp")->capture_default_str();
  sm->add_option("--ridge", o.ridge, "Covariance ridge")->capture_default_str();
  sm->add_option("--out", o.out, "Output directory")->required();
  sm->add_option("--cores", o.cores, "Worker threads");

  auto* lab = app.add_subcommand("label", "Label each pixel with its most likely class");
  lab->add_option("--probs", o.probs, "Probability cube directory")->required();
  lab->add_option("--out", o.out, "Output directory")->required();
  lab->add_option("--cores", o.cores, "Worker threads");

  auto* kf = app.add_subcommand("kfold", "k-fold cross-validation (model comparison)");
  kf->add_option("--table", o.table, "Time-series table CSV")->required();
  kf->add_option("--k", o.k, "Number of folds")->capture_default_str();
  kf->add_option("--method", o.method, "rf, mlp or tempcnn")->capture_default_str();
  kf->add_option("--param", o.params, "Hyperparameter key=value (repeatable)");
  kf->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  kf->add_option("--cores", o.cores, "Concurrent folds");

  auto* aa = app.add_subcommand("accuracy-area", "Area-weighted accuracy and error-adjusted areas");
  aa->add_option("--map", o.map, "Label map directory")->required();
  aa->add_option("--refs", o.refs, "Reference CSV (longitude,latitude,label)")->required();
  aa->add_option("--areas", o.areas, "Mapped area per class in legend order (default: pixel areas)");
  aa->add_option("--out", o.out, "Write the JSON report here");

  auto* syn = app.add_subcommand("synth", "Generate a synthetic scenario");
  syn->add_option("--spec", o.spec, "Scenario JSON (defaults if omitted)");
  syn->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  syn->add_option("--out", o.out, "Output directory")->required();

  std::vector<std::string> args;
  for (int i = argc - 1; i >= 1; --i) args.emplace_back(argv[i]);

  try {
    try {
      app.parse(args);
    } catch (const CLI::ParseError& e) {
      // A missing required option may be supplied by the config file.
      if (dynamic_cast<const CLI::RequiredError*>(&e) == nullptr || o.config.empty()) throw;
    }
    if (!o.config.empty()) {
      json cfg;
      try {
        cfg = json::parse(tcube::io::read_file(o.config));
      } catch (const json::exception& e) {
        throw tcube::ValidationError("--config " + o.config + ": " + e.what());
      }
      if (!cfg.is_object()) throw tcube::ValidationError("--config " + o.config + ": expected a flat JSON object");
      const auto known = all_option_names(app);
      for (auto it = cfg.begin(); it != cfg.end(); ++it) {
        if (!known.contains(it.key()) || it.value().is_object()) {
          throw tcube::ValidationError("--config " + o.config + ": unknown key '" + it.key() + "'");
        }
      }
      auto* sub = app.get_subcommands().front();
      auto extra = config_args(cfg, *sub);
      std::vector<std::string> full(argv + 1, argv + argc);
      full.insert(full.end(), extra.begin(), extra.end());
      app.clear();
      o = Opts{};
      std::vector<std::string> rev(full.rbegin(), full.rend());
      app.parse(rev);
    }
  } catch (const CLI::CallForVersion& e) {
    std::cout << e.what() << "\n";
    return 0;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const tcube::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    const auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "cube") return cmd_cube(o);
    if (name == "get-data") return cmd_get_data(o);
    if (name == "som") return cmd_som(o);
    if (name == "train") return cmd_train(o);
    if (name == "classify") return cmd_classify(o);
    if (name == "smooth") return cmd_smooth(o);
    if (name == "label") return cmd_label(o);
    if (name == "kfold") return cmd_kfold(o);
    if (name == "accuracy-area") return cmd_accuracy_area(o);
    if (name == "synth") return cmd_synth(o);
  } catch (const tcube::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const tcube::RuntimeFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
