#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "jm3d/core/matrix.hpp"

namespace jm3d::io {

// Little-endian primitives. The file formats are pinned to LE regardless of
// host order.
void write_u32(std::ostream& os, std::uint32_t v);
std::uint32_t read_u32(std::istream& is);
void write_u64(std::ostream& os, std::uint64_t v);
std::uint64_t read_u64(std::istream& is);
void write_f32(std::ostream& os, float v);
float read_f32(std::istream& is);

void write_magic(std::ostream& os, const char magic[4]);
void expect_magic(std::istream& is, const char magic[4], const std::string& what);

/// Matrix payload as little-endian 32-bit floats, row-major. Values round
/// through float32 on write; read widens back to double.
void write_f32_payload(std::ostream& os, const Matrix& m);
void read_f32_payload(std::istream& is, Matrix& m);

/// Rounds every entry through float32. Applied to train state at checkpoint
/// boundaries so an uninterrupted run and a resumed run see identical values.
void quantize_f32(Matrix& m);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace jm3d::io
