#include "jm3d/enc/fusion.hpp"

#include <cmath>
#include <stdexcept>

namespace jm3d::enc {

Matrix sinusoidal_table(int positions, int dim) {
  Matrix t(positions, dim);
  for (int pos = 0; pos < positions; ++pos) {
    for (int i = 0; i < dim; ++i) {
      const double wavelength = std::pow(10000.0, static_cast<double>(2 * (i / 2)) / dim);
      const double angle = pos / wavelength;
      t.at(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return t;
}

FusionTables::FusionTables(int dim, nn::ParamStore& params, const std::string& prefix,
                           double depth_range)
    : dim_(dim), depth_range_(depth_range) {
  if (dim < 1) throw std::runtime_error("fusion: dim must be >= 1");
  if (depth_range <= 0.0) throw std::runtime_error("fusion: depth_range must be positive");
  // Sinusoidal init, scaled so the positional signal does not drown the
  // unit-norm encoder features it is added to.
  auto scaled = [dim](int positions) {
    Matrix t = sinusoidal_table(positions, dim);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] *= kPositionalInitScale;
    return t;
  };
  angle_ = &params.add(prefix + "angle", scaled(data::kCandidateViews));
  depth_ = &params.add(prefix + "depth", scaled(kDepthBuckets));
  scale_ = &params.add(prefix + "ln.scale", Matrix::filled(1, dim, 1.0));
  shift_ = &params.add(prefix + "ln.shift", Matrix(1, dim));
}

FusionTables::FusionTables(int dim, nn::ParamStore& params, bool /*attach*/, const std::string& prefix,
                           double depth_range)
    : dim_(dim), depth_range_(depth_range) {
  angle_ = &params.get(prefix + "angle");
  depth_ = &params.get(prefix + "depth");
  scale_ = &params.get(prefix + "ln.scale");
  shift_ = &params.get(prefix + "ln.shift");
}

int FusionTables::depth_bucket(double mean_depth) const {
  const int b = static_cast<int>(std::floor(mean_depth / depth_range_ * kDepthBuckets));
  return std::max(0, std::min(kDepthBuckets - 1, b));
}

nn::Value FusionTables::fuse(nn::Tape& tape, nn::Value raw, const std::vector<int>& angle_indices,
                             const std::vector<double>& mean_depths) const {
  if (raw.cols != dim_) throw std::runtime_error("fuse: raw feature dim mismatch");
  if (static_cast<int>(angle_indices.size()) != raw.rows ||
      static_cast<int>(mean_depths.size()) != raw.rows)
    throw std::runtime_error("fuse: metadata length mismatch");
  std::vector<int> depth_ids;
  depth_ids.reserve(mean_depths.size());
  for (const double d : mean_depths) depth_ids.push_back(depth_bucket(d));
  for (const int a : angle_indices)
    if (a < 0 || a >= data::kCandidateViews)
      throw std::runtime_error("fuse: angle_index " + std::to_string(a) + " outside [0, 30)");

  nn::Value x = tape.add(raw, tape.gather_rows(tape.param(*angle_), angle_indices));
  x = tape.add(x, tape.gather_rows(tape.param(*depth_), depth_ids));
  x = tape.row_standardize(x, kLayerNormEps);
  x = tape.mul_rowvec(x, tape.param(*scale_));
  return tape.add_rowvec(x, tape.param(*shift_));
}

}  // namespace jm3d::enc
