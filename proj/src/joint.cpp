#include "jm3d/align/joint.hpp"

#include <cmath>
#include <stdexcept>

namespace jm3d::align {

JointFeature joint_feature(const Matrix& views, const enc::Embedding& text) {
  if (views.rows() < 1) throw std::runtime_error("joint_feature: need at least one view row");
  if (views.cols() != text.dim()) throw std::runtime_error("joint_feature: dimension mismatch");
  const int v = views.rows(), d = views.cols();

  std::vector<double> scores(v);
  for (int i = 0; i < v; ++i) {
    double norm2 = 0.0, dot = 0.0;
    for (int c = 0; c < d; ++c) norm2 += views.at(i, c) * views.at(i, c);
    const double n = std::max(std::sqrt(norm2), 1e-12);
    for (int c = 0; c < d; ++c) dot += views.at(i, c) / n * text.vec[c];
    scores[i] = dot;
  }
  double mx = scores[0];
  for (const double s : scores) mx = std::max(mx, s);
  double z = 0.0;
  JointFeature out;
  out.weights.resize(v);
  for (int i = 0; i < v; ++i) {
    out.weights[i] = std::exp(scores[i] - mx);
    z += out.weights[i];
  }
  out.vec.assign(d, 0.0);
  for (int i = 0; i < v; ++i) {
    out.weights[i] /= z;
    for (int c = 0; c < d; ++c) out.vec[c] += out.weights[i] * views.at(i, c);
  }
  return out;
}

nn::Value joint_feature_batch(nn::Tape& tape, nn::Value fused, nn::Value text, int views_per_sample) {
  if (views_per_sample < 1) throw std::runtime_error("joint_feature_batch: views_per_sample < 1");
  if (fused.rows != text.rows * views_per_sample)
    throw std::runtime_error("joint_feature_batch: row count mismatch");
  if (fused.cols != text.cols) throw std::runtime_error("joint_feature_batch: dimension mismatch");
  const int v = views_per_sample;

  const nn::Value scored = tape.row_sum(tape.mul(tape.row_l2norm(fused), tape.segment_repeat(text, v)));
  const nn::Value shifted = tape.sub(scored, tape.segment_repeat(tape.segment_colmax(scored, v), v));
  const nn::Value expd = tape.exp(shifted);
  const nn::Value weights = tape.div(expd, tape.segment_repeat(tape.segment_sum(expd, v), v));
  return tape.segment_sum(tape.mul_colvec(fused, weights), v);
}

}  // namespace jm3d::align
