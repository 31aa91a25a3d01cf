#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

#include "tcube/catalog.hpp"
#include "tcube/csv.hpp"
#include "tcube/cube.hpp"
#include "tcube/io.hpp"
#include "tcube/synth.hpp"

namespace tcube::test {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("tcube_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter.fetch_add(1)));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline std::string bytes_of(const fs::path& p) { return io::read_file(p); }

// One int16 band ("v", scale 1, nodata -9999) plus an optional cloud mask band.
// values[item][pixel]; clouds, when given, mark masked pixels per item.
inline fs::path write_simple_catalog(const fs::path& dir, int nrows, int ncols, const std::vector<Date>& dates,
                                     const std::vector<std::vector<std::int16_t>>& values,
                                     const std::vector<std::vector<std::int16_t>>& clouds = {},
                                     const std::string& tile = "T1") {
  CollectionDescriptor c;
  c.id = "simple";
  c.crs = "EPSG:4326";
  c.resolution = {1.0, 1.0};
  c.bands.push_back(BandDef{"v", DType::int16, 1.0, -9999, false});
  if (!clouds.empty()) c.bands.push_back(BandDef{"cloud", DType::int16, 1.0, -1, true});
  fs::create_directories(dir);
  for (std::size_t i = 0; i < dates.size(); ++i) {
    ItemDescriptor it;
    it.tile = tile;
    it.datetime = dates[i];
    it.nrows = nrows;
    it.ncols = ncols;
    it.origin = {0.0, static_cast<double>(nrows)};
    const std::string name = tile + "_v_" + dates[i].str() + ".bin";
    io::write_file_atomic(dir / name, io::encode_i16(values[i]));
    it.assets["v"] = name;
    if (!clouds.empty()) {
      const std::string cname = tile + "_cloud_" + dates[i].str() + ".bin";
      io::write_file_atomic(dir / cname, io::encode_i16(clouds[i]));
      it.assets["cloud"] = cname;
    }
    c.items.push_back(std::move(it));
  }
  io::write_file_atomic(dir / "catalog.json", serialize_catalog(c));
  return dir / "catalog.json";
}

// Generates a scenario under dir/scenario and regularizes it into dir/cube.
inline RegularCube synth_cube(const fs::path& dir, const ScenarioSpec& spec, std::uint64_t seed,
                              SynthOutput* out = nullptr) {
  const SynthOutput s = generate_scenario(spec, seed, dir / "scenario");
  if (out) *out = s;
  return regularize(s.catalog, s.timeline, dir / "cube");
}

}  // namespace tcube::test

namespace tcube {
namespace fs = std::filesystem;
}
