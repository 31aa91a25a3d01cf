#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tcube/date.hpp"

namespace tcube {

enum class DType { int16, float32 };

std::string_view to_string(DType t);
DType parse_dtype(std::string_view s);
std::size_t dtype_size(DType t);

struct BandDef {
  std::string name;
  DType dtype = DType::int16;
  double scale = 1.0;    // stored value * scale = physical value
  double nodata = -9999;  // sentinel in stored units
  bool is_cloud_mask = false;

  bool operator==(const BandDef&) const = default;
};

/// Maps collection CRS coordinates to lon/lat:
///   lon = c[0] + c[1]*x + c[2]*y
///   lat = c[3] + c[4]*x + c[5]*y
/// The identity (CRS units are degrees) is the default.
struct Affine {
  std::array<double, 6> c{0.0, 1.0, 0.0, 0.0, 0.0, 1.0};

  std::array<double, 2> to_lonlat(double x, double y) const;
  std::array<double, 2> to_crs(double lon, double lat) const;
  bool operator==(const Affine&) const = default;
};

struct BBox {
  double min_lon = 0, min_lat = 0, max_lon = 0, max_lat = 0;

  bool intersects(const BBox& o) const {
    return min_lon <= o.max_lon && o.min_lon <= max_lon && min_lat <= o.max_lat && o.min_lat <= max_lat;
  }
  bool operator==(const BBox&) const = default;
};

struct ItemDescriptor {
  std::string tile;
  Date datetime;
  std::optional<double> cloud_cover;
  std::map<std::string, std::string> assets;  // band name -> relative path, absolute path or URL
  int nrows = 0;
  int ncols = 0;
  std::array<double, 2> origin{0.0, 0.0};  // upper-left corner, CRS units

  bool operator==(const ItemDescriptor&) const = default;
};

struct CollectionDescriptor {
  std::string id;
  std::string crs;
  std::array<double, 2> resolution{1.0, 1.0};
  Affine affine;
  std::vector<BandDef> bands;
  std::vector<ItemDescriptor> items;  // sorted by (tile, datetime)
  std::string base;  // directory or URL prefix against which relative asset paths resolve

  const BandDef* find_band(std::string_view name) const;
  const BandDef* cloud_band() const;
  std::string resolve_asset(const ItemDescriptor& item, const std::string& band) const;
  BBox footprint(const ItemDescriptor& item) const;
  std::vector<std::string> tiles() const;

  bool operator==(const CollectionDescriptor&) const = default;
};

// Loads a catalog from a local path or http:// URL and validates it.
CollectionDescriptor parse_catalog(const std::string& source);
CollectionDescriptor parse_catalog_json(std::string_view text, std::string base);
std::string serialize_catalog(const CollectionDescriptor& c);

struct ItemFilter {
  std::optional<std::vector<std::string>> tiles;
  std::optional<BBox> roi;
  Date start;
  Date end;
};

// Throws EmptyResultError when nothing survives the filter.
CollectionDescriptor filter_items(const CollectionDescriptor& c, const ItemFilter& f);

}  // namespace tcube
