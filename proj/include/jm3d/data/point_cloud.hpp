#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "jm3d/core/matrix.hpp"

namespace jm3d::data {

using Vec3 = std::array<double, 3>;

/// A point set in model coordinates. Corpus clouds are centered at the origin
/// and scaled so the farthest point sits on the unit sphere; subsets produced
/// by sample_points keep the parent's frame and are not re-normalized.
struct PointCloud {
  std::string id;
  std::vector<Vec3> points;

  int size() const { return static_cast<int>(points.size()); }

  /// N x 3 matrix view for the encoder.
  Matrix as_matrix() const {
    Matrix m(size(), 3);
    for (int i = 0; i < size(); ++i)
      for (int c = 0; c < 3; ++c) m.at(i, c) = points[i][c];
    return m;
  }
};

/// Center at the centroid, then scale by the max point norm. Throws on an
/// empty cloud or a degenerate (all points coincident) one.
void normalize_to_unit_sphere(PointCloud& cloud);

/// True when centroid is within 1e-6 of the origin and max norm <= 1 + 1e-6.
bool is_normalized(const PointCloud& cloud);

/// All coordinates finite and at least one point.
bool is_valid(const PointCloud& cloud);

/// Uniform sample of n points: without replacement when n <= size, with
/// replacement otherwise. Deterministic per seed.
PointCloud sample_points(const PointCloud& cloud, int n, std::uint64_t seed);

/// "PCV1" point file: 4-byte magic + u32 count, then count x 3 f32 LE.
void save_pcv(const std::string& path, const PointCloud& cloud);
PointCloud load_pcv(const std::string& path, const std::string& id);

}  // namespace jm3d::data
