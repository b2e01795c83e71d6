#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jm3d/data/point_cloud.hpp"

namespace jm3d::data {

struct CorpusSpec {
  int parents = 6;
  int subs_per_parent = 2;
  int samples_per_sub = 10;
  int points = 256;
  std::uint64_t seed = 0;
};

struct CorpusEntry {
  PointCloud cloud;
  std::string parent;
  std::string sub;
};

/// Deterministic parametric shape corpus. Each subcategory is a distinct
/// variant of its parent family (aspect ratio, shell thickness, ...), and
/// subcategory names embed the parent word ("flat box", "thin ring") the way
/// real taxonomy subcategories tend to ("bunk bed", "school bus").
std::vector<CorpusEntry> generate_synthetic_corpus(const CorpusSpec& spec);

}  // namespace jm3d::data
