#include <gtest/gtest.h>

#include <limits>
#include <random>

#include "support.hpp"
#include "tcube/error.hpp"
#include "tcube/quality.hpp"

using namespace tcube;
using test::TempDir;

namespace {

TimeSeriesTable table_of(const std::vector<std::pair<std::vector<float>, std::string>>& rows) {
  TimeSeriesTable t;
  t.band_names = {"v"};
  t.timeline = Timeline{Date::parse("2020-01-01"), 16, static_cast<int>(rows.front().first.size())};
  for (const auto& [v, l] : rows) t.rows.push_back({SamplePoint{0, 0, {}, {}, l}, v});
  return t;
}

TimeSeriesTable two_clusters(int per_class, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> noise(0.0f, 0.03f);
  std::vector<std::pair<std::vector<float>, std::string>> rows;
  for (int i = 0; i < per_class; ++i) {
    rows.push_back({{0.1f + noise(rng), 0.1f + noise(rng), 0.1f + noise(rng)}, "A"});
    rows.push_back({{0.9f + noise(rng), 0.9f + noise(rng), 0.9f + noise(rng)}, "B"});
  }
  return table_of(rows);
}

std::size_t brute_bmu(const SOMGrid& g, std::span<const float> v) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n < g.size(); ++n) {
    double d = 0;
    for (std::size_t j = 0; j < g.dim; ++j) {
      const double x = static_cast<double>(v[j]) - g.neuron(n)[j];
      d += x * x;
    }
    if (d < best_d) {
      best_d = d;
      best = n;
    }
  }
  return best;
}

}  // namespace

TEST(Som, DefaultSide) {
  EXPECT_EQ(default_som_side(100), 8);   // sqrt(50) = 7.07
  EXPECT_EQ(default_som_side(1), 3);     // sqrt(5) = 2.24
  EXPECT_EQ(default_som_side(10000), 23);
}

TEST(Som, BmuMatchesExhaustiveSearch) {
  const auto t = two_clusters(50, 1);
  SomParams p;
  p.width = 6;
  p.height = 5;
  p.epochs = 3;
  const auto g = som_train(t, p);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<float> u(-0.2f, 1.2f);
  for (int i = 0; i < 1000; ++i) {
    std::vector<float> v{u(rng), u(rng), u(rng)};
    ASSERT_EQ(som_assign(g, v), brute_bmu(g, v));
  }
}

TEST(Som, BmuTieGoesToLowestIndex) {
  SOMGrid g;
  g.width = 3;
  g.height = 1;
  g.dim = 1;
  g.weights = {1.0f, 1.0f, 1.0f};
  EXPECT_EQ(som_assign(g, std::vector<float>{0.0f}), 0u);
  g.weights = {2.0f, 0.0f, 0.0f};
  EXPECT_EQ(som_assign(g, std::vector<float>{0.0f}), 1u);
}

TEST(Som, SeparatesTwoClustersIntoPureNeurons) {
  const auto t = two_clusters(100, 2);
  SomParams p;
  p.width = 4;
  p.height = 4;
  p.epochs = 30;
  const auto g = som_train(t, p);
  for (std::size_t n = 0; n < g.size(); ++n)
    if (g.counts[n] > 0) EXPECT_DOUBLE_EQ(g.purity(n), 1.0) << n;
  for (const auto& e : som_evaluate(g, t)) EXPECT_EQ(e.status, SampleStatus::clean);
}

TEST(Som, SingleSampleOnOneNeuron) {
  const auto t = table_of({{{0.3f, 0.7f}, "A"}});
  SomParams p;
  p.width = 1;
  p.height = 1;
  p.epochs = 5;
  const auto g = som_train(t, p);
  EXPECT_EQ(g.counts, std::vector<std::size_t>{1});
  EXPECT_EQ(g.majority(0), "A");
  const auto ev = som_evaluate(g, t);
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].status, SampleStatus::clean);
}

TEST(Som, DeterministicForSeed) {
  const auto t = two_clusters(40, 3);
  SomParams p;
  p.width = 3;
  p.height = 3;
  p.epochs = 10;
  EXPECT_EQ(som_train(t, p), som_train(t, p));
  auto q = p;
  q.seed = 43;
  EXPECT_NE(som_train(t, p).weights, som_train(t, q).weights);
}

TEST(Som, EvaluationStatuses) {
  SOMGrid g;
  g.width = 2;
  g.height = 1;
  g.dim = 1;
  g.weights = {0.0f, 10.0f};
  // neuron 0: A,A,A,B ; neuron 1: A,B (tie, majority A)
  const auto t = table_of({{{0.0f}, "A"}, {{0.1f}, "A"}, {{0.2f}, "A"}, {{0.3f}, "B"},
                           {{10.0f}, "A"}, {{9.9f}, "B"}});
  som_label(g, t);
  EXPECT_EQ(g.counts, (std::vector<std::size_t>{4, 2}));
  EXPECT_EQ(g.majority(1), "A");
  EXPECT_DOUBLE_EQ(g.purity(0), 0.75);
  const auto ev = som_evaluate(g, t);
  const std::vector<SampleStatus> want{SampleStatus::clean,  SampleStatus::clean,   SampleStatus::clean,
                                       SampleStatus::remove, SampleStatus::analyze, SampleStatus::remove};
  for (std::size_t i = 0; i < ev.size(); ++i) EXPECT_EQ(ev[i].status, want[i]) << i;
  EXPECT_EQ(to_string(SampleStatus::analyze), "analyze");
}

TEST(Som, ExportWritesOneRowPerNeuron) {
  TempDir dir;
  const auto t = two_clusters(10, 5);
  SomParams p;
  p.width = 2;
  p.height = 2;
  p.epochs = 2;
  som_export(som_train(t, p), dir.path());
  const auto rows = csv::parse(io::read_file(dir / "som_grid.csv"));
  EXPECT_EQ(rows.size(), 5u);
  EXPECT_EQ(io::read_file(dir / "som_map.ppm").substr(0, 2), "P6");
}
