#include "attenmia/binary_io.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "attenmia/error.h"

namespace attenmia {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

std::uint64_t fnv1a64(std::span<const std::uint8_t> data) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : data) {
    hash ^= b;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::uint64_t fnv1a64(std::string_view text) {
  return fnv1a64(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string hash_hex(std::uint64_t hash) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = kDigits[hash & 0xf];
    hash >>= 4;
  }
  return out;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoFailure, "cannot open " + path.string());
  Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorCode::kIoFailure, "read failed for " + path.string());
  return data;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoFailure, "cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size()));
  if (!out) fail(ErrorCode::kIoFailure, "write failed for " + path.string());
}

namespace {

template <typename T>
void put_raw(Bytes& out, T v) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T get_raw(std::span<const std::uint8_t> in, std::size_t pos) {
  if (pos + sizeof(T) > in.size()) {
    fail(ErrorCode::kTruncatedFile, "read past end of buffer at byte " + std::to_string(pos));
  }
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  return v;
}

}  // namespace

void put_u16(Bytes& out, std::uint16_t v) { put_raw(out, v); }
void put_u32(Bytes& out, std::uint32_t v) { put_raw(out, v); }
void put_f32(Bytes& out, float v) { put_raw(out, v); }
void put_f64(Bytes& out, double v) { put_raw(out, v); }

std::uint16_t get_u16(std::span<const std::uint8_t> in, std::size_t pos) {
  return get_raw<std::uint16_t>(in, pos);
}
std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t pos) {
  return get_raw<std::uint32_t>(in, pos);
}
float get_f32(std::span<const std::uint8_t> in, std::size_t pos) {
  return get_raw<float>(in, pos);
}
double get_f64(std::span<const std::uint8_t> in, std::size_t pos) {
  return get_raw<double>(in, pos);
}

Bytes frame_header(std::string_view magic, std::uint16_t version,
                   std::string_view header_json) {
  Bytes out(magic.begin(), magic.end());
  put_u16(out, version);
  put_u32(out, static_cast<std::uint32_t>(header_json.size()));
  out.insert(out.end(), header_json.begin(), header_json.end());
  return out;
}

Container parse_container(std::span<const std::uint8_t> file,
                          std::string_view magic, const std::string& what) {
  if (file.size() < 4 || std::memcmp(file.data(), magic.data(), 4) != 0) {
    fail(ErrorCode::kBadMagic, what + " is not a " + std::string(magic) + " file");
  }
  if (file.size() < 10) fail(ErrorCode::kTruncatedFile, what + ": header truncated");
  Container c;
  c.version = get_u16(file, 4);
  std::uint32_t header_len = get_u32(file, 6);
  if (10 + static_cast<std::size_t>(header_len) > file.size()) {
    fail(ErrorCode::kTruncatedFile, what + ": JSON header truncated");
  }
  c.header.assign(reinterpret_cast<const char*>(file.data() + 10), header_len);
  c.payload_start = 10 + header_len;
  return c;
}

std::filesystem::path companion_path(const std::filesystem::path& path,
                                     std::string_view suffix) {
  std::filesystem::path out = path;
  out.replace_extension();
  out += std::string(suffix);
  return out;
}

}  // namespace attenmia
