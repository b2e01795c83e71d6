#pragma once

#include <vector>

#include "jm3d/core/tape.hpp"
#include "jm3d/enc/embedding.hpp"

namespace jm3d::align {

/// Text-conditioned convex combination of view features. weights sum to 1 and
/// vec = sum_v weights[v] * views[v], so vec stays inside the componentwise
/// envelope of the view rows.
struct JointFeature {
  std::vector<double> vec;
  std::vector<double> weights;
};

/// Scores each view row against the text embedding (rows are L2-normalized
/// for scoring only; the combination uses the raw rows), softmaxes the scores
/// and mixes the rows.
JointFeature joint_feature(const Matrix& views, const enc::Embedding& text);

/// Batched tape version: fused is (B*views_per_sample) x D, text is B x D.
/// Returns B x D joint features. The text rows are consumed as given.
nn::Value joint_feature_batch(nn::Tape& tape, nn::Value fused, nn::Value text, int views_per_sample);

}  // namespace jm3d::align
