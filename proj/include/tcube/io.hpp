#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tcube::io {

bool is_url(std::string_view s);

// Reads a local file or an http:// URL (plain GET, up to 5 redirects).
std::string read_source(const std::string& path_or_url);
std::string read_file(const std::filesystem::path& p);
std::string http_get(const std::string& url);

// Write to `p.tmp` then rename over `p`.
void write_file_atomic(const std::filesystem::path& p, std::string_view bytes);

std::uint32_t crc32(std::string_view bytes);
std::string crc32_hex(std::string_view bytes);

// Little-endian int16 raster helpers.
std::string encode_i16(std::span<const std::int16_t> values);
std::vector<std::int16_t> decode_i16(std::string_view bytes);
std::string encode_f32(std::span<const float> values);
std::vector<float> decode_f32(std::string_view bytes);

std::int16_t round_to_i16(double v);

}  // namespace tcube::io
