#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jm3d/core/tape.hpp"

namespace jm3d::align {

struct LossWeights {
  double lambda1 = 1.0;  // point cloud vs joint feature
  double lambda2 = 1.0;  // point cloud vs subcategory text
  double lambda3 = 1.0;  // subcategory text vs joint feature
  double temperature = 0.07;

  void validate() const;
};

/// Symmetric InfoNCE over matched rows: both softmax directions, averaged.
/// Rows are L2-normalized internally before the dot products. Needs at least
/// two rows (no negatives otherwise).
nn::Value contrastive_loss(nn::Tape& tape, nn::Value a, nn::Value b, double temperature);
double contrastive_loss_value(const Matrix& a, const Matrix& b, double temperature);

/// Mean negative log-likelihood of codes under row softmax of logits.
nn::Value softmax_cross_entropy(nn::Tape& tape, nn::Value logits, const std::vector<int>& codes);

/// Two-layer perceptron mapping embeddings to parent-category logits.
class ClassifierHead {
 public:
  ClassifierHead(int dim, int hidden, int classes, nn::ParamStore& params, std::uint64_t init_seed,
                 const std::string& prefix = "cls.");
  ClassifierHead(int dim, int hidden, int classes, nn::ParamStore& params, const std::string& prefix);

  int classes() const { return classes_; }
  nn::Value logits(nn::Tape& tape, nn::Value x) const;

 private:
  int classes_;
  nn::Parameter* w1_;
  nn::Parameter* b1_;
  nn::Parameter* w2_;
  nn::Parameter* b2_;
};

nn::Value parent_classification_loss(nn::Tape& tape, const ClassifierHead& head, nn::Value features,
                                     const std::vector<int>& parent_codes);

struct LossBreakdown {
  nn::Value total;
  nn::Value cloud_joint;
  nn::Value cloud_text;
  nn::Value text_joint;
  nn::Value classed;
};

/// Weighted tri-term contrastive objective plus the parent classification
/// loss. With independent_alignment the joint-feature terms are replaced by
/// alignment against the per-sample mean view feature and the lambda3 term is
/// dropped.
LossBreakdown total_loss(nn::Tape& tape, nn::Value cloud, nn::Value fused, nn::Value text,
                         int views_per_sample, const ClassifierHead& head,
                         const std::vector<int>& parent_codes, const LossWeights& weights,
                         bool independent_alignment = false);

}  // namespace jm3d::align
