#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <random>
#include <set>

#include "support.hpp"
#include "tcube/engine.hpp"
#include "tcube/error.hpp"

using namespace tcube;
using test::TempDir;

namespace {

constexpr int kRows = 21;
constexpr int kCols = 5;

// kRows x kCols cube with 3 instants of one band, a left-to-right gradient plus noise.
RegularCube gradient_cube(const fs::path& dir) {
  const std::vector<Date> dates{Date::parse("2020-01-01"), Date::parse("2020-01-17"), Date::parse("2020-02-02")};
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> noise(-30, 30);
  std::vector<std::vector<std::int16_t>> values(3, std::vector<std::int16_t>(kRows * kCols));
  for (int t = 0; t < 3; ++t)
    for (int p = 0; p < kRows * kCols; ++p) values[t][p] = static_cast<std::int16_t>(100 * (p % kCols) + 10 * t + noise(rng));
  const auto cat = test::write_simple_catalog(dir / "in", kRows, kCols, dates, values);
  return regularize(parse_catalog(cat.string()), build_timeline(dates[0], dates[2], 16), dir / "cube");
}

fs::path train_forest(const RegularCube& cube, const fs::path& path) {
  TimeSeriesTable t;
  t.band_names = {"v"};
  t.timeline = cube.timeline;
  const char* names[] = {"left", "middle", "right"};
  for (int i = 0; i < 60; ++i) {
    const int c = i % kCols;
    const float base = 100.0f * c;
    t.rows.push_back({SamplePoint{0, 0, {}, {}, names[c * 3 / kCols]},
                      {base + static_cast<float>(i % 7), base + 10, base + 20 - static_cast<float>(i % 5)}});
  }
  save_model(train_random_forest(t, {{"trees", 15}}, 3), path);
  return path;
}

std::vector<std::string> prob_bytes(const ProbCube& p) {
  std::vector<std::string> out;
  for (const auto& g : p.tiles)
    for (std::size_t k = 0; k < p.labels.size(); ++k) out.push_back(test::bytes_of(p.raster_path(g.tile, k)));
  return out;
}

class EngineTest : public ::testing::Test {
 protected:
  void SetUp() override {
    cube = gradient_cube(dir.path());
    model = train_forest(cube, dir / "rf.model");
    reference = prob_bytes(*classify_cube(cube, model, plan_strips(cube, kRows, 1), dir / "ref").probs);
  }

  TempDir dir;
  RegularCube cube;
  fs::path model;
  std::vector<std::string> reference;
};

RegularCube tall_cube(int nrows, int ncols) {
  RegularCube c;
  c.id = "tall";
  c.bands = {BandDef{}};
  c.timeline = Timeline{Date::parse("2020-01-01"), 16, 10};
  c.tiles = {TileGrid{"A", nrows, ncols}};
  return c;
}

}  // namespace

TEST(Planner, StripsPartitionTiles) {
  const auto c = tall_cube(7324, 100);
  const auto plan = plan_strips(c, 512, 4);
  ASSERT_EQ(plan.chunks.size(), 15u);
  int row = 0;
  for (std::size_t i = 0; i < plan.chunks.size(); ++i) {
    EXPECT_EQ(plan.chunks[i].chunk_id, static_cast<int>(i));
    EXPECT_EQ(plan.chunks[i].window.row0, row);
    EXPECT_EQ(plan.chunks[i].window.ncols, 100);
    row += plan.chunks[i].window.nrows;
  }
  EXPECT_EQ(row, 7324);
  EXPECT_EQ(plan.chunks.back().window.nrows, 7324 - 14 * 512);
}

TEST(Planner, MemoryBudgetSetsStripHeight) {
  const auto c = tall_cube(1000, 100);
  EXPECT_EQ(plan_chunks(c, std::int64_t{1} << 40, 4, 3).chunks.size(), 1u);
  const std::int64_t row = chunk_bytes(1, 100, 1, 10, 3);
  EXPECT_EQ(row, 100 * 10 * 4 + 100 * 3 * 2);
  // 0.8 * mem / (2 * row) = 50 rows
  const auto plan = plan_chunks(c, static_cast<std::int64_t>(125 * row), 2, 3);
  ASSERT_EQ(plan.chunks.size(), 20u);
  for (const auto& ch : plan.chunks) EXPECT_LE(2 * chunk_bytes(ch.window.nrows, 100, 1, 10, 3), 0.8 * 125 * row);
  try {
    plan_chunks(c, row, 2, 3);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("insufficient memory"), std::string::npos);
  }
}

TEST_F(EngineTest, ChunkingDoesNotChangeOutput) {
  for (int rows : {1, 3, 4, 20}) {
    const auto out = dir / ("rows" + std::to_string(rows));
    const auto r = classify_cube(cube, model, plan_strips(cube, rows, 3), out);
    EXPECT_EQ(prob_bytes(*r.probs), reference) << rows;
    EXPECT_TRUE(r.state.merged);
  }
}

TEST_F(EngineTest, ProbabilitiesSumToOne) {
  const auto p = load_prob_cube(dir / "ref");
  ASSERT_EQ(p.labels, (std::vector<std::string>{"left", "middle", "right"}));
  std::vector<std::vector<std::int16_t>> cls;
  for (std::size_t k = 0; k < 3; ++k) cls.push_back(read_prob_rows(p, "T1", k, 0, kRows));
  for (int i = 0; i < kRows * kCols; ++i) {
    const int s = cls[0][i] + cls[1][i] + cls[2][i];
    EXPECT_GE(s, 9990);
    EXPECT_LE(s, 10010);
  }
  EXPECT_GT(cls[0][0], 5000);
  EXPECT_GT(cls[2][kCols - 1], 5000);
}

TEST_F(EngineTest, ResumeAfterStopCompletesTheJob) {
  const auto plan = plan_strips(cube, 3, 2);
  for (std::size_t stop : {std::size_t{1}, std::size_t{4}, std::size_t{6}}) {
    const auto out = dir / ("stop" + std::to_string(stop));
    ClassifyOptions opt;
    opt.stop_after = stop;
    const auto first = classify_cube(cube, model, plan, out, opt);
    EXPECT_FALSE(first.probs.has_value());
    const auto saved = load_job(out);
    EXPECT_EQ(saved.done_count(), stop);
    const auto second = resume(out);
    EXPECT_EQ(second.chunks_executed, plan.chunks.size() - stop);
    EXPECT_EQ(prob_bytes(*second.probs), reference);
  }
}

TEST_F(EngineTest, DamagedChunksAreRecomputed) {
  const auto plan = plan_strips(cube, 4, 1);
  const auto out = dir / "damaged";
  ClassifyOptions opt;
  opt.stop_after = plan.chunks.size();
  classify_cube(cube, model, plan, out, opt);
  auto job = load_job(out);
  fs::remove(job.marker_path(2));
  fs::resize_file(job.chunk_path(4), fs::file_size(job.chunk_path(4)) - 2);
  std::set<int> ran;
  ClassifyOptions watch;
  watch.before_chunk = [&](const Chunk& c, int) { ran.insert(c.chunk_id); };
  const auto r = resume(out, watch);
  EXPECT_EQ(ran, (std::set<int>{2, 4}));
  EXPECT_EQ(prob_bytes(*r.probs), reference);
}

TEST_F(EngineTest, CompletedJobIsANoOp) {
  const auto out = dir / "complete";
  classify_cube(cube, model, plan_strips(cube, 5, 1), out, ClassifyOptions{.clean = true});
  EXPECT_FALSE(fs::exists(out / "chunks"));
  EXPECT_TRUE(load_job(out).cleaned);
  const auto r = resume(out);
  EXPECT_EQ(r.chunks_executed, 0u);
  EXPECT_EQ(prob_bytes(*r.probs), reference);
  fs::resize_file(r.probs->raster_path("T1", 1), 10);
  EXPECT_THROW(resume(out), IntegrityError);
}

TEST_F(EngineTest, ResumeRefusesChangedInputs) {
  const auto out = dir / "changed";
  ClassifyOptions opt;
  opt.stop_after = 1;
  classify_cube(cube, model, plan_strips(cube, 5, 1), out, opt);
  save_model(train_random_forest(
                 [&] {
                   TimeSeriesTable t;
                   t.band_names = {"v"};
                   t.timeline = cube.timeline;
                   for (int i = 0; i < 6; ++i) t.rows.push_back({SamplePoint{0, 0, {}, {}, i % 2 ? "x" : "y"}, {1.0f * i, 2, 3}});
                   return t;
                 }(),
                 {{"trees", 2}}, 1),
             model);
  EXPECT_THROW(resume(out), ValidationError);
}

TEST_F(EngineTest, RetriesThenFailsResumably) {
  const auto plan = plan_strips(cube, 7, 1);
  {
    ClassifyOptions opt;
    opt.max_retries = 2;
    opt.before_chunk = [](const Chunk& c, int attempt) {
      if (c.chunk_id == 1 && attempt < 2) throw RuntimeFailure("transient");
    };
    const auto r = classify_cube(cube, model, plan, dir / "flaky", opt);
    EXPECT_EQ(r.state.retries[1], 2);
    EXPECT_EQ(prob_bytes(*r.probs), reference);
  }
  ClassifyOptions opt;
  opt.max_retries = 1;
  opt.before_chunk = [](const Chunk& c, int) {
    if (c.chunk_id == 2) throw RuntimeFailure("broken");
  };
  EXPECT_THROW(classify_cube(cube, model, plan, dir / "broken", opt), RuntimeFailure);
  const auto job = load_job(dir / "broken");
  EXPECT_EQ(job.status[2], ChunkStatus::failed);
  EXPECT_FALSE(job.merged);
  EXPECT_EQ(prob_bytes(*resume(dir / "broken").probs), reference);
}

TEST_F(EngineTest, SurvivesAProcessCrash) {
  const auto plan = plan_strips(cube, 2, 2);
  const auto out = dir / "crash";
  const pid_t pid = fork();
  ASSERT_GE(pid, 0);
  if (pid == 0) {
    std::size_t seen = 0;
    ClassifyOptions opt;
    opt.after_chunk = [&](const Chunk&) {
      if (++seen == 5) _exit(17);
    };
    try {
      classify_cube(cube, model, plan, out, opt);
    } catch (...) {
    }
    _exit(0);
  }
  int status = 0;
  waitpid(pid, &status, 0);
  ASSERT_TRUE(WIFEXITED(status));
  ASSERT_EQ(WEXITSTATUS(status), 17);
  const auto job = load_job(out);
  EXPECT_GE(job.done_count(), 5u);
  EXPECT_FALSE(job.merged);
  const auto r = resume(out);
  EXPECT_LE(r.chunks_executed, plan.chunks.size() - 5);
  EXPECT_EQ(load_job(out).done_count(), plan.chunks.size());
  EXPECT_EQ(prob_bytes(*r.probs), reference);
}

TEST(Engine, ConstantPluginFillsEveryPixel) {
  struct Fixed final : Classifier {
    void predict(std::span<const float>, std::size_t n, std::span<double> out) const override {
      for (std::size_t i = 0; i < n; ++i) {
        out[2 * i] = 0.25;
        out[2 * i + 1] = 0.75;
      }
    }
    std::vector<std::vector<float>> blobs() const override { return {}; }
  };
  register_model_kind(ModelKind{
      "fixed", [](const Hyperparams& u) { return merge_hyperparams("fixed", Hyperparams::object(), u); },
      [](const TrainingData&, const Hyperparams&, std::uint64_t) -> std::shared_ptr<const Classifier> {
        return std::make_shared<Fixed>();
      },
      [](const Hyperparams&, const FeatureLayout&, int, std::vector<std::vector<float>>) -> std::shared_ptr<const Classifier> {
        return std::make_shared<Fixed>();
      }});
  TempDir dir;
  const std::vector<Date> dates{Date::parse("2020-01-01")};
  const auto cat = test::write_simple_catalog(dir / "in", 4, 4, dates, {std::vector<std::int16_t>(16, 3)});
  const auto cube = regularize(parse_catalog(cat.string()), build_timeline(dates[0], dates[0], 16), dir / "cube");
  TimeSeriesTable t;
  t.band_names = {"v"};
  t.timeline = cube.timeline;
  for (int i = 0; i < 4; ++i) t.rows.push_back({SamplePoint{0, 0, {}, {}, i % 2 ? "b" : "a"}, {1.0f * i}});
  save_model(train_model(t, "fixed", Hyperparams::object(), 0), dir / "fixed.model");
  const auto r = classify_cube(cube, dir / "fixed.model", plan_strips(cube, 3, 2), dir / "out");
  EXPECT_EQ(read_prob_rows(*r.probs, "T1", 0, 0, 4), std::vector<std::int16_t>(16, 2500));
  EXPECT_EQ(read_prob_rows(*r.probs, "T1", 1, 0, 4), std::vector<std::int16_t>(16, 7500));
}

TEST(Engine, LabelTokensAreFileSafe) {
  EXPECT_EQ(label_file_token("Soy/Corn rotation"), "Soy_Corn_rotation");
  EXPECT_EQ(label_file_token("Forest-1.a"), "Forest-1.a");
}
