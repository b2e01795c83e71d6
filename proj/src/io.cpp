#include "jm3d/core/io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace jm3d::io {

namespace {
void write_bytes_le(std::ostream& os, const unsigned char* b, int n) {
  os.write(reinterpret_cast<const char*>(b), n);
}
}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  write_bytes_le(os, b, 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("unexpected end of file reading u32");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  write_u32(os, static_cast<std::uint32_t>(v));
  write_u32(os, static_cast<std::uint32_t>(v >> 32));
}

std::uint64_t read_u64(std::istream& is) {
  const std::uint64_t lo = read_u32(is);
  const std::uint64_t hi = read_u32(is);
  return lo | (hi << 32);
}

void write_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(os, bits);
}

float read_f32(std::istream& is) {
  const std::uint32_t bits = read_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

void write_magic(std::ostream& os, const char magic[4]) { os.write(magic, 4); }

void expect_magic(std::istream& is, const char magic[4], const std::string& what) {
  char b[4];
  is.read(b, 4);
  if (!is || std::memcmp(b, magic, 4) != 0)
    throw std::runtime_error(what + ": bad magic, expected '" + std::string(magic, 4) + "'");
}

void write_f32_payload(std::ostream& os, const Matrix& m) {
  for (std::size_t i = 0; i < m.size(); ++i) write_f32(os, static_cast<float>(m[i]));
}

void read_f32_payload(std::istream& is, Matrix& m) {
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<double>(read_f32(is));
}

void quantize_f32(Matrix& m) {
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<double>(static_cast<float>(m[i]));
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write file: " + path);
  os << content;
}

}  // namespace jm3d::io
