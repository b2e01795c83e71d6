#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jm3d/core/tape.hpp"
#include "jm3d/data/point_cloud.hpp"

namespace jm3d::enc {

struct PointEncoderConfig {
  std::vector<int> point_widths = {64, 128};  // per-point MLP widths
  std::vector<int> head_widths = {64};        // hidden widths after pooling
  int dim = 32;                               // embedding width D
};

/// Trainable permutation-invariant point encoder: a per-point MLP, a
/// column-wise max pool over points, then a small head. Pooling makes the
/// output exactly invariant to point order.
class PointEncoder {
 public:
  PointEncoder(const PointEncoderConfig& config, nn::ParamStore& params, std::uint64_t init_seed,
               const std::string& prefix = "enc.");
  /// Attach to parameters previously registered under the same prefix.
  PointEncoder(const PointEncoderConfig& config, nn::ParamStore& params, const std::string& prefix);

  const PointEncoderConfig& config() const { return config_; }
  /// Width of the per-point features that get pooled.
  int pooled_feature_dim() const { return config_.point_widths.empty() ? 3 : config_.point_widths.back(); }

  /// points is (B * points_per_cloud) x 3; returns B x dim.
  nn::Value encode_batch(nn::Tape& tape, nn::Value points, int points_per_cloud) const;

  nn::Value encode(nn::Tape& tape, nn::Value points) const {
    return encode_batch(tape, points, points.rows);
  }

  /// Per-point features before pooling, N x pooled_feature_dim.
  nn::Value per_point_features(nn::Tape& tape, nn::Value points) const;

  /// Head applied to a pooled B x pooled_feature_dim matrix.
  nn::Value head(nn::Tape& tape, nn::Value pooled) const;

  /// n point tokens for language-model injection: the top n-1 per-point
  /// feature rows by pooling contribution (columns where the row attains the
  /// pool max), plus one max-pooled row over the remaining points. With n=1
  /// this degenerates to the global pooled feature. Ranking ties break on row
  /// content, so the result is invariant to point order.
  nn::Value extract_point_tokens(nn::Tape& tape, nn::Value points, int n) const;

 private:
  PointEncoderConfig config_;
  std::vector<nn::Parameter*> pp_w_, pp_b_;
  std::vector<nn::Parameter*> head_w_, head_b_;
};

/// Gaussian init scaled by 1/sqrt(fan_in), deterministic per seed.
Matrix gaussian_init(int rows, int cols, std::uint64_t seed, double scale);

}  // namespace jm3d::enc
