#include "tcube/catalog.hpp"

#include <algorithm>
#include <filesystem>
#include <set>
#include <tuple>

#include "json.hpp"
#include "tcube/error.hpp"
#include "tcube/io.hpp"

namespace tcube {

using nlohmann::json;

std::string_view to_string(DType t) { return t == DType::int16 ? "int16" : "float32"; }

DType parse_dtype(std::string_view s) {
  if (s == "int16") return DType::int16;
  if (s == "float32") return DType::float32;
  throw ValidationError("unsupported dtype '" + std::string(s) + "' (expected int16 or float32)");
}

std::size_t dtype_size(DType t) { return t == DType::int16 ? 2 : 4; }

std::array<double, 2> Affine::to_lonlat(double x, double y) const {
  return {c[0] + c[1] * x + c[2] * y, c[3] + c[4] * x + c[5] * y};
}

std::array<double, 2> Affine::to_crs(double lon, double lat) const {
  const double det = c[1] * c[5] - c[2] * c[4];
  if (det == 0.0) throw ValidationError("catalog affine transform is singular");
  const double dl = lon - c[0];
  const double dp = lat - c[3];
  return {(c[5] * dl - c[2] * dp) / det, (c[1] * dp - c[4] * dl) / det};
}

const BandDef* CollectionDescriptor::find_band(std::string_view name) const {
  for (const auto& b : bands)
    if (b.name == name) return &b;
  return nullptr;
}

const BandDef* CollectionDescriptor::cloud_band() const {
  for (const auto& b : bands)
    if (b.is_cloud_mask) return &b;
  return nullptr;
}

std::string CollectionDescriptor::resolve_asset(const ItemDescriptor& item, const std::string& band) const {
  const auto it = item.assets.find(band);
  if (it == item.assets.end()) {
    throw ValidationError("item " + item.tile + "/" + item.datetime.str() + " has no asset for band " + band);
  }
  const std::string& a = it->second;
  if (io::is_url(a) || std::filesystem::path(a).is_absolute() || base.empty()) return a;
  if (io::is_url(base)) return base + (base.ends_with('/') ? "" : "/") + a;
  return (std::filesystem::path(base) / a).string();
}

BBox CollectionDescriptor::footprint(const ItemDescriptor& item) const {
  const double x0 = item.origin[0];
  const double y0 = item.origin[1];
  const double x1 = x0 + item.ncols * resolution[0];
  const double y1 = y0 - item.nrows * resolution[1];
  BBox box{1e300, 1e300, -1e300, -1e300};
  for (double x : {x0, x1}) {
    for (double y : {y0, y1}) {
      const auto ll = affine.to_lonlat(x, y);
      box.min_lon = std::min(box.min_lon, ll[0]);
      box.max_lon = std::max(box.max_lon, ll[0]);
      box.min_lat = std::min(box.min_lat, ll[1]);
      box.max_lat = std::max(box.max_lat, ll[1]);
    }
  }
  return box;
}

std::vector<std::string> CollectionDescriptor::tiles() const {
  std::vector<std::string> out;
  for (const auto& it : items)
    if (out.empty() || out.back() != it.tile) out.push_back(it.tile);
  return out;
}

namespace {

template <typename T>
T get_required(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ValidationError("catalog: missing key '" + std::string(key) + "' in " + where);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError("catalog: bad value for '" + std::string(key) + "' in " + where + ": " + e.what());
  }
}

void sort_and_validate(CollectionDescriptor& c) {
  std::set<std::string> names;
  int masks = 0;
  for (const auto& b : c.bands) {
    if (b.name.empty()) throw ValidationError("catalog: band with empty name");
    if (!names.insert(b.name).second) throw ValidationError("catalog: duplicate band '" + b.name + "'");
    if (b.is_cloud_mask) ++masks;
    if (!(b.scale > 0)) throw ValidationError("catalog: band '" + b.name + "' has non-positive scale");
  }
  if (masks > 1) throw ValidationError("catalog: more than one cloud mask band");
  if (!(c.resolution[0] > 0 && c.resolution[1] > 0)) throw ValidationError("catalog: resolution must be positive");

  std::stable_sort(c.items.begin(), c.items.end(), [](const ItemDescriptor& a, const ItemDescriptor& b) {
    return std::tie(a.tile, a.datetime) < std::tie(b.tile, b.datetime);
  });

  std::set<std::tuple<std::string, Date, std::string>> seen;
  for (const auto& it : c.items) {
    const std::string where = it.tile + "/" + it.datetime.str();
    if (it.tile.empty()) throw ValidationError("catalog: item with empty tile id");
    if (it.nrows <= 0 || it.ncols <= 0) throw ValidationError("catalog: item " + where + " has non-positive size");
    if (it.cloud_cover && (*it.cloud_cover < 0 || *it.cloud_cover > 100)) {
      throw ValidationError("catalog: item " + where + " cloud_cover outside [0,100]");
    }
    for (const auto& [band, path] : it.assets) {
      if (!names.contains(band)) throw ValidationError("catalog: unknown band '" + band + "' referenced by item " + where);
      if (!seen.emplace(it.tile, it.datetime, band).second) {
        throw ValidationError("catalog: duplicate (tile, datetime, band) " + where + "/" + band);
      }
    }
  }
}

}  // namespace

CollectionDescriptor parse_catalog_json(std::string_view text, std::string base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("catalog: malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("catalog: top level must be an object");

  CollectionDescriptor c;
  c.base = std::move(base);
  c.id = get_required<std::string>(j, "id", "catalog");
  c.crs = get_required<std::string>(j, "crs", "catalog");
  const auto res = get_required<std::vector<double>>(j, "resolution", "catalog");
  if (res.size() != 2) throw ValidationError("catalog: resolution must be [x, y]");
  c.resolution = {res[0], res[1]};
  if (j.contains("affine")) {
    const auto a = get_required<std::vector<double>>(j, "affine", "catalog");
    if (a.size() != 6) throw ValidationError("catalog: affine must have 6 coefficients");
    std::copy(a.begin(), a.end(), c.affine.c.begin());
  }

  for (const auto& jb : get_required<json>(j, "bands", "catalog")) {
    BandDef b;
    b.name = get_required<std::string>(jb, "name", "band");
    b.dtype = parse_dtype(get_required<std::string>(jb, "dtype", "band " + b.name));
    b.scale = get_required<double>(jb, "scale", "band " + b.name);
    b.nodata = get_required<double>(jb, "nodata", "band " + b.name);
    b.is_cloud_mask = jb.value("cloud_mask", false);
    c.bands.push_back(std::move(b));
  }

  for (const auto& ji : get_required<json>(j, "items", "catalog")) {
    ItemDescriptor it;
    it.tile = get_required<std::string>(ji, "tile", "item");
    it.datetime = Date::parse(get_required<std::string>(ji, "datetime", "item " + it.tile));
    const std::string where = "item " + it.tile + "/" + it.datetime.str();
    if (ji.contains("cloud_cover") && !ji.at("cloud_cover").is_null()) {
      it.cloud_cover = get_required<double>(ji, "cloud_cover", where);
    }
    it.nrows = get_required<int>(ji, "nrows", where);
    it.ncols = get_required<int>(ji, "ncols", where);
    const auto o = get_required<std::vector<double>>(ji, "origin", where);
    if (o.size() != 2) throw ValidationError("catalog: origin must be [x, y] in " + where);
    it.origin = {o[0], o[1]};
    it.assets = get_required<std::map<std::string, std::string>>(ji, "assets", where);
    c.items.push_back(std::move(it));
  }

  sort_and_validate(c);
  return c;
}

CollectionDescriptor parse_catalog(const std::string& source) {
  std::string base;
  if (io::is_url(source)) {
    base = source.substr(0, source.rfind('/') + 1);
  } else {
    base = std::filesystem::absolute(source).parent_path().string();
  }
  return parse_catalog_json(io::read_source(source), std::move(base));
}

std::string serialize_catalog(const CollectionDescriptor& c) {
  json j;
  j["id"] = c.id;
  j["crs"] = c.crs;
  j["resolution"] = c.resolution;
  if (c.affine != Affine{}) j["affine"] = c.affine.c;
  j["bands"] = json::array();
  for (const auto& b : c.bands) {
    j["bands"].push_back({{"name", b.name},
                          {"dtype", to_string(b.dtype)},
                          {"scale", b.scale},
                          {"nodata", b.nodata},
                          {"cloud_mask", b.is_cloud_mask}});
  }
  j["items"] = json::array();
  for (const auto& it : c.items) {
    json ji{{"tile", it.tile},
            {"datetime", it.datetime.str()},
            {"cloud_cover", it.cloud_cover ? json(*it.cloud_cover) : json(nullptr)},
            {"nrows", it.nrows},
            {"ncols", it.ncols},
            {"origin", it.origin},
            {"assets", it.assets}};
    j["items"].push_back(std::move(ji));
  }
  return j.dump(2);
}

CollectionDescriptor filter_items(const CollectionDescriptor& c, const ItemFilter& f) {
  if (f.end < f.start) throw ValidationError("filter: start date after end date");
  CollectionDescriptor out = c;
  out.items.clear();
  for (const auto& it : c.items) {
    if (it.datetime < f.start || f.end < it.datetime) continue;
    if (f.tiles && std::find(f.tiles->begin(), f.tiles->end(), it.tile) == f.tiles->end()) continue;
    if (f.roi && !c.footprint(it).intersects(*f.roi)) continue;
    out.items.push_back(it);
  }
  if (out.items.empty()) throw EmptyResultError("filter: no catalog items match the requested tiles, region and dates");
  return out;
}

}  // namespace tcube
