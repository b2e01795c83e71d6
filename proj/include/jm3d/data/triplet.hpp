#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jm3d/data/category_tree.hpp"
#include "jm3d/data/point_cloud.hpp"
#include "jm3d/data/synthetic.hpp"
#include "jm3d/data/views.hpp"

namespace jm3d::data {

/// One training unit: a point cloud, its sampled view list and the
/// (parent, subcategory) annotation.
struct TripletSample {
  PointCloud cloud;
  std::vector<ViewImage> views;
  std::string parent;
  std::string sub;
};

struct TripletOptions {
  int views = 2;
  double omega_deg = 60.0;
  int render_height = 16;
  int render_width = 16;
};

/// Re-renders the candidate set per entry and draws the within-window views.
/// A fresh draw per epoch is obtained by calling again with a new seed; the
/// per-entry draw seed is derived from (seed, entry index).
std::vector<TripletSample> assemble_triplets(const std::vector<CorpusEntry>& corpus,
                                             const CategoryTree& tree, const TripletOptions& opts,
                                             std::uint64_t seed);

/// Line-delimited manifest records: {id, parent, sub, points_path,
/// view_angle_indices}. Point payloads go to <dir>/points/<id>.pcv.
void save_manifest(const std::string& dir, const std::vector<TripletSample>& samples);
struct ManifestRecord {
  std::string id;
  std::string parent;
  std::string sub;
  std::string points_path;
  std::vector<int> view_angle_indices;
};
std::vector<ManifestRecord> load_manifest(const std::string& path);

/// Loads the point clouds referenced by a manifest back into corpus entries.
std::vector<CorpusEntry> corpus_from_manifest(const std::string& path);

}  // namespace jm3d::data
