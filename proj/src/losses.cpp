#include "jm3d/align/losses.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "jm3d/align/joint.hpp"
#include "jm3d/enc/point_encoder.hpp"

namespace jm3d::align {

void LossWeights::validate() const {
  if (!(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda3 >= 0.0))
    throw std::runtime_error("loss weights must be nonnegative");
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw std::runtime_error("temperature must be positive and finite");
  if (!std::isfinite(lambda1) || !std::isfinite(lambda2) || !std::isfinite(lambda3))
    throw std::runtime_error("loss weights must be finite");
}

nn::Value contrastive_loss(nn::Tape& tape, nn::Value a, nn::Value b, double temperature) {
  if (a.rows != b.rows || a.cols != b.cols)
    throw std::runtime_error("contrastive_loss: shape mismatch");
  if (a.rows < 2) throw std::runtime_error("contrastive_loss: need at least 2 rows (no negatives)");
  if (!(temperature > 0.0)) throw std::runtime_error("contrastive_loss: temperature must be positive");

  const nn::Value an = tape.row_l2norm(a);
  const nn::Value bn = tape.row_l2norm(b);
  const nn::Value logits = tape.scale(tape.matmul(an, tape.transpose(bn)), 1.0 / temperature);
  std::vector<int> diag(a.rows);
  std::iota(diag.begin(), diag.end(), 0);
  const nn::Value fwd = tape.pick_per_row(tape.row_log_softmax(logits), diag);
  const nn::Value bwd = tape.pick_per_row(tape.row_log_softmax(tape.transpose(logits)), diag);
  return tape.scale(tape.mean_all(tape.vconcat(fwd, bwd)), -1.0);
}

double contrastive_loss_value(const Matrix& a, const Matrix& b, double temperature) {
  nn::Tape tape;
  return tape.scalar(contrastive_loss(tape, tape.constant(a), tape.constant(b), temperature));
}

nn::Value softmax_cross_entropy(nn::Tape& tape, nn::Value logits, const std::vector<int>& codes) {
  if (static_cast<int>(codes.size()) != logits.rows)
    throw std::runtime_error("softmax_cross_entropy: batch size mismatch");
  for (const int c : codes)
    if (c < 0 || c >= logits.cols)
      throw std::runtime_error("softmax_cross_entropy: code " + std::to_string(c) +
                               " outside [0, " + std::to_string(logits.cols) + ")");
  return tape.scale(tape.mean_all(tape.pick_per_row(tape.row_log_softmax(logits), codes)), -1.0);
}

ClassifierHead::ClassifierHead(int dim, int hidden, int classes, nn::ParamStore& params,
                               std::uint64_t init_seed, const std::string& prefix)
    : classes_(classes) {
  if (classes < 1 || hidden < 1) throw std::runtime_error("classifier head: bad dimensions");
  w1_ = &params.add(prefix + "w1", enc::gaussian_init(dim, hidden, init_seed ^ 0x11, 1.0 / std::sqrt(dim)));
  b1_ = &params.add(prefix + "b1", Matrix(1, hidden));
  w2_ = &params.add(prefix + "w2", Matrix(hidden, classes));
  b2_ = &params.add(prefix + "b2", Matrix(1, classes));
}

ClassifierHead::ClassifierHead(int /*dim*/, int /*hidden*/, int classes, nn::ParamStore& params,
                               const std::string& prefix)
    : classes_(classes) {
  w1_ = &params.get(prefix + "w1");
  b1_ = &params.get(prefix + "b1");
  w2_ = &params.get(prefix + "w2");
  b2_ = &params.get(prefix + "b2");
}

nn::Value ClassifierHead::logits(nn::Tape& tape, nn::Value x) const {
  return tape.affine(tape.tanh(tape.affine(x, *w1_, *b1_)), *w2_, *b2_);
}

nn::Value parent_classification_loss(nn::Tape& tape, const ClassifierHead& head, nn::Value features,
                                     const std::vector<int>& parent_codes) {
  return softmax_cross_entropy(tape, head.logits(tape, features), parent_codes);
}

LossBreakdown total_loss(nn::Tape& tape, nn::Value cloud, nn::Value fused, nn::Value text,
                         int views_per_sample, const ClassifierHead& head,
                         const std::vector<int>& parent_codes, const LossWeights& weights,
                         bool independent_alignment) {
  weights.validate();
  LossBreakdown out{};
  if (independent_alignment) {
    // Joint modeling off: align the cloud against the per-sample mean view
    // feature and the text independently.
    const nn::Value mean_view =
        tape.scale(tape.segment_sum(fused, views_per_sample), 1.0 / views_per_sample);
    out.cloud_joint = contrastive_loss(tape, cloud, mean_view, weights.temperature);
    out.cloud_text = contrastive_loss(tape, cloud, text, weights.temperature);
    out.text_joint = tape.constant(Matrix(1, 1));
  } else {
    const nn::Value joint = joint_feature_batch(tape, fused, text, views_per_sample);
    out.cloud_joint = contrastive_loss(tape, cloud, joint, weights.temperature);
    out.cloud_text = contrastive_loss(tape, cloud, text, weights.temperature);
    out.text_joint = contrastive_loss(tape, text, joint, weights.temperature);
  }
  out.classed = parent_classification_loss(tape, head, cloud, parent_codes);
  out.total = tape.add(tape.add(tape.scale(out.cloud_joint, weights.lambda1),
                                tape.scale(out.cloud_text, weights.lambda2)),
                       tape.add(tape.scale(out.text_joint, weights.lambda3), out.classed));
  return out;
}

}  // namespace jm3d::align
