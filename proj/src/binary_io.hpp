#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "pseudolabel/error.hpp"

namespace pseudolabel::detail {

// float32 blobs are always little-endian on disk.
inline void append_f32_le(std::vector<char>& out, std::span<const float> values) {
  const std::size_t start = out.size();
  out.resize(start + values.size() * 4);
  char* p = out.data() + start;
  for (float v : values) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    p[0] = static_cast<char>(bits & 0xFF);
    p[1] = static_cast<char>((bits >> 8) & 0xFF);
    p[2] = static_cast<char>((bits >> 16) & 0xFF);
    p[3] = static_cast<char>((bits >> 24) & 0xFF);
    p += 4;
  }
}

inline void decode_f32_le(const char* bytes, std::span<float> out) {
  for (float& v : out) {
    const std::uint32_t bits = static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[0])) |
                               static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[1])) << 8 |
                               static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[2])) << 16 |
                               static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[3])) << 24;
    v = std::bit_cast<float>(bits);
    bytes += 4;
  }
}

inline void write_file(const std::filesystem::path& path, const char* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(data, static_cast<std::streamsize>(size));
  if (!out) throw IoError("write failed: " + path.string());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, text.data(), text.size());
}

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void ensure_directory(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

// Byte offset of `"key"` in a JSON text, or 0 when absent.
inline std::uint64_t key_offset(const std::string& text, const std::string& key) {
  const auto pos = text.find('"' + key + '"');
  return pos == std::string::npos ? 0 : pos;
}

}  // namespace pseudolabel::detail
