#include "jm3d/data/point_cloud.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "jm3d/core/io.hpp"
#include "jm3d/core/rng.hpp"

namespace jm3d::data {

void normalize_to_unit_sphere(PointCloud& cloud) {
  if (cloud.points.empty()) throw std::runtime_error("cannot normalize an empty point cloud");
  Vec3 centroid{0.0, 0.0, 0.0};
  for (const auto& p : cloud.points)
    for (int c = 0; c < 3; ++c) centroid[c] += p[c];
  for (int c = 0; c < 3; ++c) centroid[c] /= static_cast<double>(cloud.points.size());
  double max_norm = 0.0;
  for (auto& p : cloud.points) {
    for (int c = 0; c < 3; ++c) p[c] -= centroid[c];
    max_norm = std::max(max_norm, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
  }
  if (max_norm < 1e-12) throw std::runtime_error("degenerate point cloud: all points coincident");
  for (auto& p : cloud.points)
    for (int c = 0; c < 3; ++c) p[c] /= max_norm;
}

bool is_normalized(const PointCloud& cloud) {
  if (cloud.points.empty()) return false;
  Vec3 centroid{0.0, 0.0, 0.0};
  double max_norm = 0.0;
  for (const auto& p : cloud.points) {
    for (int c = 0; c < 3; ++c) centroid[c] += p[c];
    max_norm = std::max(max_norm, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
  }
  for (int c = 0; c < 3; ++c)
    if (std::fabs(centroid[c] / static_cast<double>(cloud.points.size())) > 1e-6) return false;
  return max_norm <= 1.0 + 1e-6;
}

bool is_valid(const PointCloud& cloud) {
  if (cloud.points.empty()) return false;
  for (const auto& p : cloud.points)
    for (int c = 0; c < 3; ++c)
      if (!std::isfinite(p[c])) return false;
  return true;
}

PointCloud sample_points(const PointCloud& cloud, int n, std::uint64_t seed) {
  if (n < 1) throw std::runtime_error("sample_points: n must be >= 1");
  if (!is_valid(cloud)) throw std::runtime_error("sample_points: invalid input cloud");
  Rng rng(seed);
  PointCloud out;
  out.id = cloud.id;
  out.points.reserve(static_cast<std::size_t>(n));
  const int total = cloud.size();
  if (n <= total) {
    // Partial Fisher-Yates over an index vector.
    std::vector<int> idx(total);
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < n; ++i) {
      const int j = i + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(total - i)));
      std::swap(idx[i], idx[j]);
      out.points.push_back(cloud.points[idx[i]]);
    }
  } else {
    for (int i = 0; i < n; ++i)
      out.points.push_back(cloud.points[rng.next_below(static_cast<std::uint64_t>(total))]);
  }
  return out;
}

void save_pcv(const std::string& path, const PointCloud& cloud) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write point file: " + path);
  io::write_magic(os, "PCV1");
  io::write_u32(os, static_cast<std::uint32_t>(cloud.points.size()));
  for (const auto& p : cloud.points)
    for (int c = 0; c < 3; ++c) io::write_f32(os, static_cast<float>(p[c]));
}

PointCloud load_pcv(const std::string& path, const std::string& id) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open point file: " + path);
  io::expect_magic(is, "PCV1", path);
  const std::uint32_t count = io::read_u32(is);
  PointCloud cloud;
  cloud.id = id;
  cloud.points.resize(count);
  for (auto& p : cloud.points)
    for (int c = 0; c < 3; ++c) p[c] = static_cast<double>(io::read_f32(is));
  if (!is) throw std::runtime_error("truncated point file: " + path);
  return cloud;
}

}  // namespace jm3d::data
