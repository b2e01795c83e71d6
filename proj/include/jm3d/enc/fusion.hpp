#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jm3d/core/tape.hpp"
#include "jm3d/data/views.hpp"

namespace jm3d::enc {

inline constexpr int kDepthBuckets = 16;
inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kPositionalInitScale = 0.25;

/// Learnable angle/depth embedding tables plus the LayerNorm affine applied
/// after the additive fusion. The angle table has one row per 12-degree view
/// bucket; the depth table has 16 rows indexed by quantized mean view depth
/// over [0, depth_range].
class FusionTables {
 public:
  FusionTables(int dim, nn::ParamStore& params, const std::string& prefix = "fuse.",
               double depth_range = 2.0 + 0.1);
  /// Attach to previously registered parameters.
  FusionTables(int dim, nn::ParamStore& params, bool attach, const std::string& prefix,
               double depth_range);

  int dim() const { return dim_; }
  double depth_range() const { return depth_range_; }
  int depth_bucket(double mean_depth) const;

  /// Fused rows: LayerNorm(raw_v + angle_emb[angle_v] + depth_emb[bucket_v])
  /// with the learnable scale/shift applied after standardization.
  nn::Value fuse(nn::Tape& tape, nn::Value raw, const std::vector<int>& angle_indices,
                 const std::vector<double>& mean_depths) const;

  nn::Parameter& angle_table() { return *angle_; }
  nn::Parameter& depth_table() { return *depth_; }
  nn::Parameter& scale() { return *scale_; }
  nn::Parameter& shift() { return *shift_; }

 private:
  void init_tables(std::uint64_t unused = 0);

  int dim_;
  double depth_range_;
  nn::Parameter* angle_ = nullptr;
  nn::Parameter* depth_ = nullptr;
  nn::Parameter* scale_ = nullptr;
  nn::Parameter* shift_ = nullptr;
};

/// Sinusoidal position table (sin/cos pairs over geometric wavelengths).
Matrix sinusoidal_table(int positions, int dim);

}  // namespace jm3d::enc
