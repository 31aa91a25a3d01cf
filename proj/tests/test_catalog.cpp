#include <gtest/gtest.h>

#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "support.hpp"
#include "tcube/catalog.hpp"
#include "tcube/error.hpp"

using namespace tcube;
using nlohmann::json;

namespace {

json minimal_catalog() {
  return json::parse(R"({
    "id": "mini", "crs": "EPSG:4326", "resolution": [10, 10],
    "bands": [{"name": "B04", "dtype": "int16", "scale": 0.0001, "nodata": -9999, "cloud_mask": false},
              {"name": "NDVI", "dtype": "float32", "scale": 1, "nodata": -3.0e38, "cloud_mask": false}],
    "items": [{"tile": "20LKP", "datetime": "2018-07-18", "cloud_cover": 12.5, "nrows": 2, "ncols": 3,
               "origin": [100, 200], "assets": {"B04": "a.bin", "NDVI": "b.bin"}}]
  })");
}

// Two tiles with 144 and 71 dates, one band each.
json two_tile_catalog() {
  json j{{"id", "two"}, {"crs", "EPSG:4326"}, {"resolution", {1, 1}}};
  j["bands"] = json::array({{{"name", "NDVI"}, {"dtype", "int16"}, {"scale", 1e-4}, {"nodata", -9999}, {"cloud_mask", false}}});
  j["items"] = json::array();
  auto add = [&](const std::string& tile, int n, int step, double x0) {
    for (int i = 0; i < n; ++i) {
      const Date d = Date::parse("2017-09-01") + i * step;
      j["items"].push_back({{"tile", tile},
                            {"datetime", d.str()},
                            {"cloud_cover", nullptr},
                            {"nrows", 4},
                            {"ncols", 4},
                            {"origin", {x0, 10.0}},
                            {"assets", {{"NDVI", tile + "/" + d.str() + ".bin"}}}});
    }
  };
  add("20LLP", 144, 2, 0.0);
  add("20LKP", 71, 5, 50.0);
  return j;
}

}  // namespace

TEST(Catalog, ParsesMinimalCatalog) {
  const auto c = parse_catalog_json(minimal_catalog().dump(), "/data");
  ASSERT_EQ(c.items.size(), 1u);
  ASSERT_EQ(c.bands.size(), 2u);
  EXPECT_EQ(c.bands[1].dtype, DType::float32);
  EXPECT_DOUBLE_EQ(*c.items[0].cloud_cover, 12.5);
  EXPECT_EQ(c.resolve_asset(c.items[0], "B04"), "/data/a.bin");
  const BBox fp = c.footprint(c.items[0]);
  EXPECT_DOUBLE_EQ(fp.min_lon, 100);
  EXPECT_DOUBLE_EQ(fp.max_lon, 130);
  EXPECT_DOUBLE_EQ(fp.min_lat, 180);
  EXPECT_DOUBLE_EQ(fp.max_lat, 200);
}

TEST(Catalog, RejectsUnknownBand) {
  auto j = minimal_catalog();
  j["items"][0]["assets"]["B99"] = "x.bin";
  try {
    parse_catalog_json(j.dump(), "");
    FAIL() << "expected an error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("unknown band"), std::string::npos);
  }
}

TEST(Catalog, RejectsSchemaViolations) {
  auto dup_item = minimal_catalog();
  dup_item["items"].push_back(dup_item["items"][0]);
  EXPECT_THROW(parse_catalog_json(dup_item.dump(), ""), ValidationError);

  auto dup_band = minimal_catalog();
  dup_band["bands"].push_back(dup_band["bands"][0]);
  EXPECT_THROW(parse_catalog_json(dup_band.dump(), ""), ValidationError);

  auto two_masks = minimal_catalog();
  two_masks["bands"][0]["cloud_mask"] = true;
  two_masks["bands"][1]["cloud_mask"] = true;
  EXPECT_THROW(parse_catalog_json(two_masks.dump(), ""), ValidationError);

  auto bad_size = minimal_catalog();
  bad_size["items"][0]["nrows"] = 0;
  EXPECT_THROW(parse_catalog_json(bad_size.dump(), ""), ValidationError);

  EXPECT_THROW(parse_catalog_json("{not json", ""), ValidationError);
  EXPECT_THROW(parse_catalog_json("{\"id\": \"x\"}", ""), ValidationError);
}

TEST(Catalog, TwoTileCatalogHas215SortedItems) {
  auto j = two_tile_catalog();
  std::reverse(j["items"].begin(), j["items"].end());
  const auto c = parse_catalog_json(j.dump(), "");
  ASSERT_EQ(c.items.size(), 215u);
  EXPECT_EQ(c.tiles(), (std::vector<std::string>{"20LKP", "20LLP"}));
  std::map<std::string, std::set<Date>> dates;
  for (const auto& it : c.items) dates[it.tile].insert(it.datetime);
  EXPECT_EQ(dates["20LLP"].size(), 144u);
  EXPECT_EQ(dates["20LKP"].size(), 71u);
  EXPECT_TRUE(std::is_sorted(c.items.begin(), c.items.end(), [](const auto& a, const auto& b) {
    return std::tie(a.tile, a.datetime) < std::tie(b.tile, b.datetime);
  }));
}

TEST(Catalog, SerializeRoundTrips) {
  const auto c = parse_catalog_json(two_tile_catalog().dump(), "/base");
  const auto again = parse_catalog_json(serialize_catalog(c), "/base");
  EXPECT_EQ(c, again);
  auto with_affine = c;
  with_affine.affine.c = {1, 0.5, 0, 2, 0, 0.5};
  EXPECT_EQ(parse_catalog_json(serialize_catalog(with_affine), "/base"), with_affine);
}

TEST(Catalog, FilterByTileAndDates) {
  const auto c = parse_catalog_json(two_tile_catalog().dump(), "");
  ItemFilter f;
  f.tiles = std::vector<std::string>{"20LKP"};
  f.start = Date::parse("2018-07-18");
  f.end = Date::parse("2018-07-23");
  const auto out = filter_items(c, f);
  ASSERT_FALSE(out.items.empty());
  for (const auto& it : out.items) {
    EXPECT_EQ(it.tile, "20LKP");
    EXPECT_GE(it.datetime, f.start);
    EXPECT_LE(it.datetime, f.end);
  }
  EXPECT_EQ(out.bands, c.bands);
  EXPECT_EQ(filter_items(out, f), out);
  for (const auto& it : out.items) {
    EXPECT_NE(std::find(c.items.begin(), c.items.end(), it), c.items.end());
  }
}

TEST(Catalog, FilterPointIntervalAndRoi) {
  const auto c = parse_catalog_json(two_tile_catalog().dump(), "");
  ItemFilter f;
  f.start = f.end = Date::parse("2017-09-11");
  const auto out = filter_items(c, f);
  ASSERT_EQ(out.items.size(), 2u);
  for (const auto& it : out.items) EXPECT_EQ(it.datetime, f.start);

  f.start = Date::parse("2017-01-01");
  f.end = Date::parse("2019-01-01");
  f.roi = BBox{45, 0, 60, 20};
  const auto roi = filter_items(c, f);
  EXPECT_EQ(roi.tiles(), std::vector<std::string>{"20LKP"});
  f.roi = BBox{500, 500, 600, 600};
  EXPECT_THROW(filter_items(c, f), EmptyResultError);
}

TEST(Catalog, LoadsOverHttpWithRedirects) {
  httplib::Server server;
  const std::string body = minimal_catalog().dump();
  server.Get("/cat/catalog.json", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content(body, "application/json");
  });
  server.Get("/moved", [](const httplib::Request&, httplib::Response& res) { res.set_redirect("/cat/catalog.json"); });
  server.Get("/loop", [](const httplib::Request&, httplib::Response& res) { res.set_redirect("/loop"); });
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  const std::string root = "http://127.0.0.1:" + std::to_string(port);

  const auto c = parse_catalog(root + "/cat/catalog.json");
  EXPECT_EQ(c.id, "mini");
  EXPECT_EQ(c.resolve_asset(c.items[0], "B04"), root + "/cat/a.bin");
  EXPECT_EQ(parse_catalog(root + "/moved").id, "mini");
  EXPECT_THROW(parse_catalog(root + "/loop"), RuntimeFailure);
  EXPECT_THROW(parse_catalog(root + "/missing.json"), RuntimeFailure);
  EXPECT_THROW(parse_catalog("https://127.0.0.1/x.json"), RuntimeFailure);

  server.stop();
  th.join();
}
