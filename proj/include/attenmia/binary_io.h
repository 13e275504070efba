#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace attenmia {

using Bytes = std::vector<std::uint8_t>;

// FNV-1a, 64-bit.
std::uint64_t fnv1a64(std::span<const std::uint8_t> data);
std::uint64_t fnv1a64(std::string_view text);
std::string hash_hex(std::uint64_t hash);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data);

// Little-endian append helpers.
void put_u16(Bytes& out, std::uint16_t v);
void put_u32(Bytes& out, std::uint32_t v);
void put_f32(Bytes& out, float v);
void put_f64(Bytes& out, double v);

std::uint16_t get_u16(std::span<const std::uint8_t> in, std::size_t pos);
std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t pos);
float get_f32(std::span<const std::uint8_t> in, std::size_t pos);
double get_f64(std::span<const std::uint8_t> in, std::size_t pos);

// Shared framing of every binary format in the toolkit:
//   magic (4 bytes) | version u16 LE | header_len u32 LE | JSON header | payload
struct Container {
  std::uint16_t version = 0;
  std::string header;          // raw UTF-8 JSON
  std::size_t payload_start = 0;  // absolute offset of the payload in the file
};

Bytes frame_header(std::string_view magic, std::uint16_t version,
                   std::string_view header_json);

// Throws BadMagic / TruncatedFile.
Container parse_container(std::span<const std::uint8_t> file,
                          std::string_view magic, const std::string& what);

// Path next to `path` with its extension replaced by `suffix`, e.g.
// companion_path("run/x.atnd", ".lgpd") == "run/x.lgpd".
std::filesystem::path companion_path(const std::filesystem::path& path,
                                     std::string_view suffix);

}  // namespace attenmia
