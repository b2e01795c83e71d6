#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "jm3d/align/trainer.hpp"
#include "jm3d/core/tape.hpp"
#include "jm3d/data/point_cloud.hpp"
#include "jm3d/enc/point_encoder.hpp"
#include "jm3d/llm/conversation.hpp"
#include "jm3d/llm/tiny_lm.hpp"
#include "jm3d/llm/vocab.hpp"

namespace jm3d::llm {

enum class ProjectorInit { Gaussian, Identity, Zero };

/// Row-wise map from point-token width to the language-model width. A single
/// linear layer by default; a two-layer variant is available.
class Projector {
 public:
  Projector(int in_dim, int out_dim, bool two_layer, nn::ParamStore& params, std::uint64_t init_seed,
            ProjectorInit init = ProjectorInit::Gaussian, const std::string& prefix = "proj.");
  Projector(int in_dim, int out_dim, bool two_layer, nn::ParamStore& params, const std::string& prefix);

  nn::Value project(nn::Tape& tape, nn::Value tokens) const;

 private:
  bool two_layer_;
  nn::Parameter *w1_ = nullptr, *b1_ = nullptr;
  nn::Parameter *w2_ = nullptr, *b2_ = nullptr;
};

/// The embedded conversation with target ids and mask aligned to the spliced
/// sequence: point rows carry sentinel target -1 and are never masked.
struct AssembledConversation {
  nn::Value embedded;
  std::vector<int> target_ids;
  std::vector<bool> loss_mask;
};

/// Replaces the single point placeholder with the projected rows and embeds
/// every other token through the language model table. Total length is the
/// language token count plus the projected row count.
AssembledConversation assemble_input(nn::Tape& tape, const ConversationRecord& record,
                                     nn::Value projected_tokens, const TinyCausalLM& lm,
                                     int point_id);

/// Mean next-token cross-entropy over masked positions: position t
/// contributes -log p(target[t] | tokens before t). Targets at unmasked
/// positions never enter the loss. Throws when the mask selects nothing.
nn::Value sft_loss(nn::Tape& tape, const TinyCausalLM& lm, nn::Value embedded,
                   const std::vector<int>& target_ids, const std::vector<bool>& mask);

struct BridgeConfig {
  int point_tokens = 8;
  bool projector_two_layer = false;
  TinyLmConfig lm;
};

struct BridgeLrConfig {
  double lr_main = 2e-3;  // projector (and the language model during warmup)
  double lr_low = 2e-5;   // point encoder
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct BridgeStepMetrics {
  double loss = 0.0;
};

/// Projector + point encoder + tiny language model with the vocabulary they
/// were built against. The encoder parameters start from a pretraining
/// checkpoint; the language model is frozen in llm_train_step and only moves
/// during lm_warmup_step.
class BridgeState {
 public:
  BridgeState(const BridgeConfig& config, const align::TrainState& pretrained, Vocab vocab,
              std::uint64_t seed);

  const BridgeConfig& config() const { return config_; }
  Vocab& vocab() { return vocab_; }
  const Vocab& vocab() const { return vocab_; }
  nn::ParamStore& params() { return params_; }
  const enc::PointEncoder& encoder() const { return *encoder_; }
  const Projector& projector() const { return *projector_; }
  const TinyCausalLM& lm() const { return *lm_; }
  long step() const { return step_; }

  /// Point tokens for a cloud, projected into LM space.
  nn::Value projected_tokens(nn::Tape& tape, const data::PointCloud& cloud) const;

  /// Embedded prompt prefix of a record (everything before the caption) for
  /// greedy decoding.
  Matrix decode_prefix(const ConversationRecord& record, const data::PointCloud& cloud) const;

  void save_checkpoint(const std::string& path) const;
  static BridgeState load_checkpoint(const std::string& path, const align::TrainState& pretrained);

 private:
  friend BridgeStepMetrics bridge_step(BridgeState&, const std::vector<const ConversationRecord*>&,
                                       const std::map<std::string, data::PointCloud>&,
                                       const BridgeLrConfig&, bool);
  BridgeConfig config_;
  Vocab vocab_;
  nn::ParamStore params_;
  std::unique_ptr<Projector> projector_;
  std::unique_ptr<enc::PointEncoder> encoder_;
  std::unique_ptr<TinyCausalLM> lm_;
  long step_ = 0;
};

/// Two-tier update: projector at lr_main, point encoder at lr_low, language
/// model bitwise untouched.
BridgeStepMetrics llm_train_step(BridgeState& state, const std::vector<const ConversationRecord*>& batch,
                                 const std::map<std::string, data::PointCloud>& clouds,
                                 const BridgeLrConfig& cfg);

/// Warmup stand-in for starting from a pretrained language model: identical
/// objective, but the language model trains at lr_main as well.
BridgeStepMetrics lm_warmup_step(BridgeState& state, const std::vector<const ConversationRecord*>& batch,
                                 const std::map<std::string, data::PointCloud>& clouds,
                                 const BridgeLrConfig& cfg);

/// Greedy caption for one record; exact_match compares the decoded token
/// sequence against the caption's.
struct DecodeResult {
  std::string id;
  std::string prediction;
  bool exact_match = false;
};
DecodeResult decode_record(const BridgeState& state, const ConversationRecord& record,
                           const data::PointCloud& cloud, int max_len = 32);

}  // namespace jm3d::llm
