#include <gtest/gtest.h>

#include <random>

#include "support.hpp"
#include "tcube/assess.hpp"
#include "tcube/error.hpp"

using namespace tcube;
using test::TempDir;

namespace {

ConfusionMatrix matrix(std::vector<std::string> labels, std::vector<std::int64_t> counts) {
  ConfusionMatrix cm(std::move(labels));
  cm.counts = std::move(counts);
  return cm;
}

// Labels in a 4x4 map with two classes split by column; pixel size 1, origin (0, 4).
LabelMap two_class_map(const fs::path& root) {
  LabelMap m;
  m.id = "map";
  m.crs = "EPSG:4326";
  m.tiles = {TileGrid{"T1", 4, 4, {0.0, 4.0}, {1.0, 1.0}}};
  m.labels = {"east", "west"};
  m.root = root;
  fs::create_directories(root);
  std::vector<std::uint8_t> cls(16);
  for (int i = 0; i < 16; ++i) cls[i] = i % 4 < 2 ? 1 : 0;
  write_class_raster(m, "T1", cls);
  write_label_map_metadata(m);
  return m;
}

TimeSeriesTable separable(int n) {
  TimeSeriesTable t;
  t.band_names = {"v"};
  t.timeline = Timeline{Date::parse("2020-01-01"), 16, 2};
  const char* names[] = {"a", "b", "c"};
  for (int i = 0; i < n; ++i) {
    const int c = i % 3;
    t.rows.push_back({SamplePoint{0, 0, {}, {}, names[c]}, {static_cast<float>(10 * c + i % 4), static_cast<float>(i % 5)}});
  }
  return t;
}

}  // namespace

TEST(AreaEstimate, WorkedExample) {
  const auto cm = matrix({"A", "B"}, {45, 5, 10, 40});
  const std::vector<double> area{80, 20};
  const auto e = accuracy_area(cm, area);
  const double W[2] = {0.8, 0.2};
  const double n[2][2] = {{45, 5}, {10, 40}};
  double p[2][2];
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) p[i][j] = W[i] * n[i][j] / (n[i][0] + n[i][1]);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(e.p_hat[i], p[i / 2][i % 2], 1e-12);
  EXPECT_NEAR(e.overall_accuracy, p[0][0] + p[1][1], 1e-12);
  EXPECT_NEAR(e.overall_accuracy, 0.88, 1e-12);
  EXPECT_NEAR(*e.users_accuracy[0], 0.9, 1e-12);
  EXPECT_NEAR(*e.users_accuracy[1], 0.8, 1e-12);
  EXPECT_NEAR(*e.producers_accuracy[0], p[0][0] / (p[0][0] + p[1][0]), 1e-12);
  EXPECT_NEAR(*e.producers_accuracy[0], 0.9473684210526315, 1e-12);
  EXPECT_NEAR(e.adjusted_area[0] / 100.0, 0.76, 1e-12);
  EXPECT_NEAR(e.adjusted_area[1], 24.0, 1e-9);
  const double var = 0.64 * 0.9 * 0.1 / 49 + 0.04 * 0.8 * 0.2 / 49;
  ASSERT_TRUE(e.overall_variance.has_value());
  EXPECT_NEAR(*e.overall_variance, var, 1e-15);
  const auto table = area_estimate_table(e);
  EXPECT_NE(table.find("Producer's Accuracy"), std::string::npos);
  EXPECT_NE(table.find("Overall accuracy: 0.8800"), std::string::npos);
  const auto j = area_estimate_json(e, cm);
  EXPECT_NEAR(j["overall_accuracy"].get<double>(), 0.88, 1e-12);
}

TEST(AreaEstimate, IdentitiesOnRandomMatrices) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> cnt(0, 30);
  std::uniform_real_distribution<double> ar(1.0, 100.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t K = 2 + trial % 4;
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < K; ++i) labels.push_back("c" + std::to_string(i));
    ConfusionMatrix cm(labels);
    std::vector<double> area(K);
    for (std::size_t i = 0; i < K; ++i) {
      area[i] = ar(rng);
      for (std::size_t j = 0; j < K; ++j) cm.at(i, j) = cnt(rng);
      cm.at(i, i) += 1;
    }
    const auto e = accuracy_area(cm, area);
    double total = 0, area_total = 0, adjusted = 0;
    for (double v : e.p_hat) total += v;
    EXPECT_NEAR(total, 1.0, 1e-12);
    for (std::size_t i = 0; i < K; ++i) {
      area_total += area[i];
      adjusted += e.adjusted_area[i];
      double row = 0;
      for (std::size_t j = 0; j < K; ++j) {
        EXPECT_GE(e.p_hat[i * K + j], 0.0);
        row += e.p_hat[i * K + j];
      }
      EXPECT_NEAR(*e.users_accuracy[i], e.p_hat[i * K + i] / row, 1e-12);
      EXPECT_NEAR(*e.users_accuracy[i], static_cast<double>(cm.at(i, i)) / cm.row_total(i), 1e-12);
    }
    EXPECT_NEAR(adjusted, area_total, 1e-9 * area_total);
  }
}

TEST(AreaEstimate, ProportionalSamplingGivesRawProportions) {
  // Row totals proportional to mapped area.
  const auto cm = matrix({"a", "b", "c"}, {40, 8, 2, 5, 25, 0, 1, 3, 16});
  const auto e = accuracy_area(cm, std::vector<double>{50, 30, 20});
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(e.p_hat[i], cm.counts[i] / 100.0, 1e-12);
  EXPECT_NEAR(e.overall_accuracy, 81.0 / 100.0, 1e-12);
}

TEST(AreaEstimate, DiagonalAndScaling) {
  const auto e = accuracy_area(matrix({"a", "b"}, {10, 0, 0, 5}), std::vector<double>{3, 7});
  EXPECT_DOUBLE_EQ(e.overall_accuracy, 1.0);
  EXPECT_DOUBLE_EQ(e.adjusted_area[0], 3.0);
  EXPECT_DOUBLE_EQ(*e.overall_variance, 0.0);
  const auto a = accuracy_area(matrix({"a", "b"}, {3, 1, 2, 5}), std::vector<double>{4, 6});
  const auto b = accuracy_area(matrix({"a", "b"}, {6, 2, 4, 10}), std::vector<double>{40, 60});
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(a.p_hat[i], b.p_hat[i], 1e-15);
  EXPECT_NEAR(b.adjusted_area[1], 10 * a.adjusted_area[1], 1e-9);
}

TEST(AreaEstimate, UndefinedAndInvalidCases) {
  EXPECT_THROW(accuracy_area(matrix({"a", "b"}, {3, 1, 2, 5}), std::vector<double>{0, 6}), ValidationError);
  EXPECT_THROW(accuracy_area(matrix({"a", "b"}, {3, 1, 0, 0}), std::vector<double>{4, 6}), ValidationError);
  EXPECT_THROW(accuracy_area(matrix({"a", "b"}, {3, 1, 2, 5}), std::vector<double>{4}), ValidationError);
  // No samples and no area for class c: its producer's accuracy is undefined.
  const auto e = accuracy_area(matrix({"a", "b", "c"}, {3, 1, 0, 1, 1, 0, 0, 0, 0}), std::vector<double>{5, 5, 0});
  EXPECT_FALSE(e.users_accuracy[2].has_value());
  EXPECT_FALSE(e.producers_accuracy[2].has_value());
  const auto j = area_estimate_json(e, matrix({"a", "b", "c"}, {3, 1, 0, 1, 1, 0, 0, 0, 0}));
  EXPECT_NE(j.dump().find("null"), std::string::npos);
  EXPECT_NE(area_estimate_table(e).find("undefined"), std::string::npos);
  // A single sample in a mapped class leaves the variance undefined.
  EXPECT_FALSE(accuracy_area(matrix({"a", "b"}, {3, 1, 0, 1}), std::vector<double>{5, 5}).overall_variance.has_value());
}

TEST(Confusion, CountsReferencesInsideTheMap) {
  TempDir dir;
  const auto m = two_class_map(dir / "map");
  const auto refs = parse_references_csv(
      "label,longitude,latitude\n"
      "west,0.5,3.5\nwest,1.5,0.5\nwest,3.5,2.5\neast,2.5,1.5\neast,3.5,3.5\neast,0.5,0.5\neast,3.2,0.1\n"
      "east,-1,2\nwest,5,2\neast,2,9\n");
  const auto r = confusion(m, refs);
  EXPECT_EQ(r.dropped_outside, 3u);
  EXPECT_EQ(r.matrix.total(), 7);
  EXPECT_EQ(r.matrix.labels, (std::vector<std::string>{"east", "west"}));
  EXPECT_EQ(r.matrix.counts, (std::vector<std::int64_t>{3, 1, 1, 2}));
  EXPECT_EQ(r.matrix.trace(), 5);

  try {
    confusion(m, parse_references_csv("longitude,latitude,label\n0.5,0.5,north\n1.5,1.5,south\n"));
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("north"), std::string::npos);
  }
  EXPECT_THROW(confusion(m, parse_references_csv("longitude,latitude,label\n9,9,east\n")), EmptyResultError);
}

TEST(Folds, StratifiedDisjointAndCovering) {
  std::vector<std::string> labels;
  for (int i = 0; i < 100; ++i) labels.push_back(i % 5 < 3 ? "a" : "b");
  const auto f = make_folds(labels, 5, 7);
  ASSERT_EQ(f.assignment.size(), 100u);
  std::vector<int> size(5), a(5);
  for (std::size_t i = 0; i < 100; ++i) {
    ASSERT_GE(f.assignment[i], 0);
    ASSERT_LT(f.assignment[i], 5);
    ++size[f.assignment[i]];
    a[f.assignment[i]] += labels[i] == "a";
  }
  EXPECT_EQ(size, std::vector<int>(5, 20));
  EXPECT_EQ(a, std::vector<int>(5, 12));
  EXPECT_EQ(make_folds(labels, 5, 7).assignment, f.assignment);
  EXPECT_NE(make_folds(labels, 5, 8).assignment, f.assignment);

  std::vector<std::string> odd{"x", "x", "x", "y", "y", "y", "y", "x", "y", "y", "x"};
  const auto g = make_folds(odd, 3, 1);
  std::vector<int> xs(3), ys(3);
  for (std::size_t i = 0; i < odd.size(); ++i) ++(odd[i] == "x" ? xs : ys)[g.assignment[i]];
  EXPECT_LE(*std::max_element(xs.begin(), xs.end()) - *std::min_element(xs.begin(), xs.end()), 1);
  EXPECT_LE(*std::max_element(ys.begin(), ys.end()) - *std::min_element(ys.begin(), ys.end()), 1);
  EXPECT_THROW(make_folds(std::vector<std::string>{"x", "x", "y"}, 2, 1), ValidationError);
}

TEST(KFold, SeparableDataIsPerfect) {
  const auto t = separable(60);
  const auto r = kfold_validate(t, 4, "rf", {{"trees", 5}}, 3, 2);
  EXPECT_DOUBLE_EQ(r.mean_accuracy, 1.0);
  ASSERT_EQ(r.predicted.size(), t.rows.size());
  EXPECT_EQ(r.pooled.total(), 60);
  EXPECT_EQ(r.pooled.trace(), 60);
  for (std::size_t i = 0; i < t.rows.size(); ++i) EXPECT_EQ(r.pooled.labels[r.predicted[i]], t.rows[i].point.label);
  const auto again = kfold_validate(t, 4, "rf", {{"trees", 5}}, 3, 1);
  EXPECT_EQ(again.fold_accuracy, r.fold_accuracy);
  EXPECT_EQ(again.predicted, r.predicted);
  EXPECT_NE(kfold_json(r).dump().find("not a map accuracy"), std::string::npos);
}
