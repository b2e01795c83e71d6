#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "jm3d/align/losses.hpp"
#include "jm3d/core/rng.hpp"
#include "jm3d/core/tape.hpp"
#include "jm3d/enc/fusion.hpp"
#include "jm3d/enc/point_encoder.hpp"

namespace jm3d::align {

struct ModelConfig {
  int dim = 32;
  std::vector<int> point_widths{64, 128};
  std::vector<int> head_widths{64};
  int classifier_hidden = 32;
  int parent_classes = 6;
  double depth_range = 2.1;
};

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-2;
  bool cosine = true;
  long total_steps = 0;  // cosine horizon; 0 means constant
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Everything the pretraining stage updates: point encoder, fusion tables,
/// LayerNorm affine and the parent classifier head. Frozen encoders live
/// outside this state.
class TrainState {
 public:
  TrainState(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  enc::PointEncoder& encoder() { return *encoder_; }
  const enc::PointEncoder& encoder() const { return *encoder_; }
  enc::FusionTables& fusion() { return *fusion_; }
  const enc::FusionTables& fusion() const { return *fusion_; }
  ClassifierHead& head() { return *head_; }
  const ClassifierHead& head() const { return *head_; }

  long step() const { return step_; }
  Rng& rng() { return rng_; }

  /// Rounds parameters and moments through float32, matching what a
  /// checkpoint stores. Called at every checkpoint boundary so resumed and
  /// uninterrupted runs continue from identical values.
  void quantize_to_storage();

  /// "JMCK" checkpoint: magic + version + JSON manifest (model config, step,
  /// rng state, tensor shapes) + f32 payloads (value, moment1, moment2 per
  /// parameter, in manifest order).
  void save_checkpoint(const std::string& path) const;
  static TrainState load_checkpoint(const std::string& path);

  /// One AdamW apply over accumulated gradients. A zero base learning rate is
  /// a complete no-op (moments and step counter included).
  void apply_adamw(const OptimizerConfig& opt);

  double current_learning_rate(const OptimizerConfig& opt) const;

  void set_step(long s) { step_ = s; }

 private:
  ModelConfig config_;
  nn::ParamStore params_;
  std::unique_ptr<enc::PointEncoder> encoder_;
  std::unique_ptr<enc::FusionTables> fusion_;
  std::unique_ptr<ClassifierHead> head_;
  long step_ = 0;
  Rng rng_{0};
};

/// One batch worth of pre-encoded tensors. Frozen-encoder outputs enter as
/// constants; only the point path, tables, affine and head carry gradients.
struct TrainBatch {
  Matrix points;  // (B * points_per_cloud) x 3
  int points_per_cloud = 0;
  Matrix raw_views;  // (B * views_per_sample) x D, frozen image features
  std::vector<int> view_angles;
  std::vector<double> view_depths;
  int views_per_sample = 0;
  Matrix text;  // B x D, frozen subcategory text features
  std::vector<int> parent_codes;
};

struct TrainStepMetrics {
  double total = 0.0;
  double cloud_joint = 0.0;
  double cloud_text = 0.0;
  double text_joint = 0.0;
  double classed = 0.0;
  double learning_rate = 0.0;
};

/// Forward, backward and an AdamW update. Throws on a non-finite loss with
/// the term breakdown in the message. Deterministic given state and batch.
TrainStepMetrics train_step(TrainState& state, const TrainBatch& batch, const LossWeights& weights,
                            const OptimizerConfig& opt, bool independent_alignment = false);

}  // namespace jm3d::align
