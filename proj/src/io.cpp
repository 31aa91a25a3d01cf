#include "tcube/io.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#define CPPHTTPLIB_REDIRECT_MAX_COUNT 5
#include "httplib.h"

#include "tcube/error.hpp"

namespace tcube::io {

static_assert(std::endian::native == std::endian::little, "raster I/O assumes a little-endian host");

bool is_url(std::string_view s) {
  return s.starts_with("http://") || s.starts_with("https://");
}

std::string read_file(const std::filesystem::path& p) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(p, ec)) throw ValidationError("no such file '" + p.string() + "'");
  std::ifstream in(p, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot open '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw RuntimeFailure("read error on '" + p.string() + "'");
  return std::move(ss).str();
}

std::string http_get(const std::string& url) {
  if (url.starts_with("https://")) {
    throw RuntimeFailure("https is not supported (plain http only): " + url);
  }
  const std::string rest = url.substr(7);
  const auto slash = rest.find('/');
  const std::string host_port = rest.substr(0, slash);
  const std::string path = slash == std::string::npos ? "/" : rest.substr(slash);
  httplib::Client client("http://" + host_port);
  client.set_follow_location(true);
  client.set_connection_timeout(10);
  client.set_read_timeout(60);
  auto res = client.Get(path);
  if (!res) {
    throw RuntimeFailure("GET " + url + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw RuntimeFailure("GET " + url + " returned HTTP " + std::to_string(res->status));
  }
  return res->body;
}

std::string read_source(const std::string& path_or_url) {
  return is_url(path_or_url) ? http_get(path_or_url) : read_file(path_or_url);
}

void write_file_atomic(const std::filesystem::path& p, std::string_view bytes) {
  if (p.has_parent_path()) {
    std::error_code dir_ec;
    std::filesystem::create_directories(p.parent_path(), dir_ec);
  }
  auto tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw RuntimeFailure("write error on '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, p, ec);
  if (ec) throw RuntimeFailure("cannot rename '" + tmp.string() + "': " + ec.message());
}

std::uint32_t crc32(std::string_view bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  const auto* data = reinterpret_cast<const Bytef*>(bytes.data());
  std::size_t left = bytes.size();
  while (left > 0) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
    crc = ::crc32(crc, data, n);
    data += n;
    left -= n;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string crc32_hex(std::string_view bytes) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", crc32(bytes));
  return buf;
}

std::string encode_i16(std::span<const std::int16_t> values) {
  std::string out(values.size() * 2, '\0');
  std::memcpy(out.data(), values.data(), out.size());
  return out;
}

std::vector<std::int16_t> decode_i16(std::string_view bytes) {
  if (bytes.size() % 2 != 0) throw IntegrityError("int16 raster with odd byte length");
  std::vector<std::int16_t> out(bytes.size() / 2);
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

std::string encode_f32(std::span<const float> values) {
  std::string out(values.size() * 4, '\0');
  std::memcpy(out.data(), values.data(), out.size());
  return out;
}

std::vector<float> decode_f32(std::string_view bytes) {
  if (bytes.size() % 4 != 0) throw IntegrityError("float32 raster with byte length not a multiple of 4");
  std::vector<float> out(bytes.size() / 4);
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

std::int16_t round_to_i16(double v) {
  const double r = std::round(v);
  if (r < std::numeric_limits<std::int16_t>::min()) return std::numeric_limits<std::int16_t>::min();
  if (r > std::numeric_limits<std::int16_t>::max()) return std::numeric_limits<std::int16_t>::max();
  return static_cast<std::int16_t>(r);
}

}  // namespace tcube::io
