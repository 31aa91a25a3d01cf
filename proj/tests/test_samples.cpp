#include <gtest/gtest.h>

#include <numeric>

#include "support.hpp"
#include "tcube/error.hpp"
#include "tcube/samples.hpp"

using namespace tcube;
using test::TempDir;

namespace {

Date day(const char* s) { return Date::parse(s); }

// 3x3 tile, two instants, pixel value = 10*row + col + 100*instant.
RegularCube small_cube(const fs::path& dir) {
  const std::vector<Date> dates{day("2020-01-01"), day("2020-01-17")};
  std::vector<std::vector<std::int16_t>> values(2, std::vector<std::int16_t>(9));
  for (int t = 0; t < 2; ++t)
    for (int p = 0; p < 9; ++p) values[t][p] = static_cast<std::int16_t>(10 * (p / 3) + p % 3 + 100 * t);
  const auto cat = test::write_simple_catalog(dir / "in", 3, 3, dates, values);
  return regularize(parse_catalog(cat.string()), build_timeline(dates[0], dates[1], 16), dir / "cube");
}

SamplePoint point(double lon, double lat, const char* label, const char* start = "2020-01-01",
                  const char* end = "2020-01-17") {
  return SamplePoint{lon, lat, day(start), day(end), label};
}

}  // namespace

TEST(SamplesCsv, ParsesByColumnName) {
  const auto pts = parse_samples_csv(
      "label,end_date,latitude,start_date,longitude,extra\n"
      "Cerrado,2018-08-31,-10.5,2017-09-01,-45.25,x\n"
      "\"Pasture, wet\",2018-08-31,-11,2017-09-01,-46,y\n");
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_EQ(pts[0].label, "Cerrado");
  EXPECT_DOUBLE_EQ(pts[0].longitude, -45.25);
  EXPECT_DOUBLE_EQ(pts[0].latitude, -10.5);
  EXPECT_EQ(pts[0].start_date, day("2017-09-01"));
  EXPECT_EQ(pts[1].label, "Pasture, wet");
}

TEST(SamplesCsv, ErrorsNameTheLine) {
  const std::string header = "longitude,latitude,start_date,end_date,label\n";
  try {
    parse_samples_csv(header + "1,2,2020-01-01,2020-02-01,A\n1,2,2020-01-01,2020-02-01,\n");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_samples_csv(header + "1,2,2020-13-01,2020-02-01,A\n"), ValidationError);
  EXPECT_THROW(parse_samples_csv(header + "1,2,2020-03-01,2020-02-01,A\n"), ValidationError);
  EXPECT_THROW(parse_samples_csv("longitude,latitude,label\n1,2,A\n"), ValidationError);
  EXPECT_THROW(parse_samples_csv(""), ValidationError);
}

TEST(SamplesGeoJson, LoadsPointFeatures) {
  TempDir dir;
  io::write_file_atomic(dir / "s.geojson", R"({"type":"FeatureCollection","features":[
    {"type":"Feature","geometry":{"type":"Point","coordinates":[1.5,2.5]},
     "properties":{"label":"A","start_date":"2020-01-01","end_date":"2020-12-31"}}]})");
  const auto pts = load_samples(dir / "s.geojson");
  ASSERT_EQ(pts.size(), 1u);
  EXPECT_EQ(pts[0], point(1.5, 2.5, "A", "2020-01-01", "2020-12-31"));
}

TEST(GetData, ExtractsPixelSeriesAndCountsDrops) {
  TempDir dir;
  const auto cube = small_cube(dir.path());
  const std::vector<SamplePoint> pts{point(1.5, 1.5, "A"), point(9, 9, "B"), point(0.5, 2.5, "B"),
                                     point(2.5, 0.5, "C", "2020-01-05", "2020-02-01"),
                                     point(2.5, 0.5, "C", "2019-12-01", "2020-01-16")};
  const auto ex = get_data(cube, pts);
  EXPECT_EQ(ex.dropped_outside, 1u);
  EXPECT_EQ(ex.rejected_span, 2u);
  ASSERT_EQ(ex.table.rows.size(), 2u);
  EXPECT_EQ(ex.table.rows.size() + ex.dropped_outside + ex.rejected_span, pts.size());
  EXPECT_EQ(ex.table.rows[0].series, (std::vector<float>{11, 111}));
  EXPECT_EQ(ex.table.rows[1].series, (std::vector<float>{0, 100}));
  EXPECT_EQ(ex.table.labels(), (std::vector<std::string>{"A", "B"}));
  const auto again = get_data(cube, pts, 1);
  EXPECT_EQ(again.table.rows.size(), ex.table.rows.size());
  for (std::size_t i = 0; i < ex.table.rows.size(); ++i) EXPECT_EQ(again.table.rows[i].series, ex.table.rows[i].series);
  EXPECT_THROW(get_data(cube, std::vector<SamplePoint>{point(9, 9, "B")}), EmptyResultError);
}

TEST(Quantile, SortAndIndexDefinition) {
  std::vector<float> v(101);
  std::iota(v.begin(), v.end(), 0.0f);
  EXPECT_EQ(sorted_quantile(v, 0.02), 2.0f);
  EXPECT_EQ(sorted_quantile(v, 0.98), 98.0f);
  const std::vector<float> ten{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  EXPECT_EQ(sorted_quantile(ten, 0.02), 1.0f);  // ceil(0.18)
  EXPECT_EQ(sorted_quantile(ten, 0.98), 9.0f);  // ceil(8.82)
  EXPECT_EQ(sorted_quantile(std::vector<float>{4}, 0.5), 4.0f);
}

TEST(Normalization, MapsIntoUnitIntervalMonotonically) {
  TimeSeriesTable t;
  t.band_names = {"a", "c"};
  t.timeline = Timeline{day("2020-01-01"), 16, 1};
  for (int i = 0; i <= 100; ++i) t.rows.push_back({point(0, 0, "A"), {static_cast<float>(i), 7.0f}});
  const auto s = fit_normalization(t);
  EXPECT_EQ(s.q02[0], 2.0f);
  EXPECT_EQ(s.q98[0], 98.0f);
  EXPECT_EQ(constant_bands(s), std::vector<std::size_t>{1});
  const auto n = apply_normalization(t, s);
  for (std::size_t r = 0; r < n.rows.size(); ++r) {
    EXPECT_GE(n.rows[r].series[0], 0.0f);
    EXPECT_LE(n.rows[r].series[0], 1.0f);
    EXPECT_EQ(n.rows[r].series[1], 0.5f);
    if (r > 0) EXPECT_GE(n.rows[r].series[0], n.rows[r - 1].series[0]);
  }
  EXPECT_FLOAT_EQ(n.rows[50].series[0], 0.5f);
}

TEST(Table, WriteReadRoundTripIsExact) {
  TempDir dir;
  TimeSeriesTable t;
  t.cube_id = "c1";
  t.band_names = {"ndvi", "evi"};
  t.timeline = Timeline{day("2020-01-01"), 16, 2};
  t.rows.push_back({point(-47.000250000000001, -15.1, "a,b"), {0.1f, 1e-7f, -3.4028235e38f, 0.33333334f}});
  t.rows.push_back({point(1, 2, "plain"), {1, 2, 3, 4}});
  write_table(t, dir / "t.csv");
  const auto header = io::read_file(dir / "t.csv").substr(0, 100);
  EXPECT_NE(header.find("bndvi_t0,bevi_t0,bndvi_t1"), std::string::npos);
  const auto back = read_table(dir / "t.csv");
  EXPECT_EQ(back.cube_id, t.cube_id);
  EXPECT_EQ(back.band_names, t.band_names);
  EXPECT_EQ(back.timeline, t.timeline);
  ASSERT_EQ(back.rows.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.rows[i].point, t.rows[i].point);
    EXPECT_EQ(back.rows[i].series, t.rows[i].series);
  }
}
