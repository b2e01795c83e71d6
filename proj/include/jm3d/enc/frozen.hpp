#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "jm3d/data/views.hpp"
#include "jm3d/enc/embedding.hpp"

namespace jm3d::enc {

/// Frozen, referentially transparent encoder standing in for a pretrained
/// vision-language model. Stub kinds hash their input through a seeded random
/// projection; the table kind serves precomputed vectors by exact key, so
/// real externally-computed features can be dropped in.
class FrozenEncoder {
 public:
  enum class Kind { StubText, StubImage, Table };

  static constexpr std::uint64_t kDefaultTextSeed = 0x1a2b3c4d5e6f7788ULL;
  static constexpr std::uint64_t kDefaultImageSeed = 0x8877665544332211ULL;

  static FrozenEncoder stub_text(int dim, std::uint64_t seed = kDefaultTextSeed);
  static FrozenEncoder stub_image(int dim, std::uint64_t seed = kDefaultImageSeed);
  static FrozenEncoder table_from_file(const std::string& path);

  Kind kind() const { return kind_; }
  int dim() const { return dim_; }

  /// Character n-gram + word counts through a seeded projection, unit norm.
  /// Table kind: exact-string lookup; unknown keys are an error.
  Embedding encode_text(const std::string& text) const;

  /// Pooled patch statistics of (rgb, depth) through a seeded projection,
  /// unit norm. Table kind requires a lookup key (e.g. "<cloud id>:<angle>").
  Embedding encode_image(const data::ViewImage& img, const std::string& table_key = "") const;

 private:
  FrozenEncoder(Kind kind, int dim, std::uint64_t seed) : kind_(kind), dim_(dim), seed_(seed) {}

  Embedding project_counts(const std::map<std::string, double>& counts) const;
  Embedding project_features(const std::vector<double>& features) const;

  Kind kind_;
  int dim_;
  std::uint64_t seed_ = 0;
  std::map<std::string, Embedding> table_;
};

/// "EMB1" table file: magic + u32 count + u32 dim, then per entry a u32
/// length-prefixed UTF-8 key and dim f32 LE values.
void save_embedding_table(const std::string& path, const std::map<std::string, Embedding>& table, int dim);
std::map<std::string, Embedding> load_embedding_table(const std::string& path, int* dim_out = nullptr);

}  // namespace jm3d::enc
