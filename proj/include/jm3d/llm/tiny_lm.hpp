#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jm3d/core/tape.hpp"

namespace jm3d::llm {

struct TinyLmConfig {
  int vocab = 0;
  int dim = 64;
  int blocks = 2;
  int max_seq = 96;
  int mlp_mult = 4;
};

/// Small causal transformer: learned token and position embeddings,
/// single-head pre-norm blocks, final norm and an untied output projection.
/// Visibility is lower-triangular (a position attends to itself and earlier
/// positions only).
class TinyCausalLM {
 public:
  TinyCausalLM(const TinyLmConfig& config, nn::ParamStore& params, std::uint64_t init_seed,
               const std::string& prefix = "lm.");
  TinyCausalLM(const TinyLmConfig& config, nn::ParamStore& params, const std::string& prefix);

  const TinyLmConfig& config() const { return config_; }

  /// Token embedding rows for a list of ids (no positions added).
  nn::Value embed_tokens(nn::Tape& tape, const std::vector<int>& ids) const;

  /// Embedded sequence (L x dim) -> logits (L x vocab). Adds position
  /// embeddings for the final sequence, so injected rows are positioned where
  /// they land after splicing.
  nn::Value forward_embedded(nn::Tape& tape, nn::Value seq) const;

  /// Token embedding matrix value (host side), for greedy decoding.
  const Matrix& token_table() const { return tok_->value; }

  const std::vector<nn::Parameter*>& parameters() const { return owned_; }

  /// FNV-1a over the raw bytes of every parameter value.
  std::uint64_t checksum() const;

 private:
  void collect(nn::ParamStore& params, const std::string& prefix);

  TinyLmConfig config_;
  nn::Parameter* tok_ = nullptr;
  nn::Parameter* pos_ = nullptr;
  struct Block {
    nn::Parameter *ln1_s, *ln1_b;
    nn::Parameter *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
    nn::Parameter *ln2_s, *ln2_b;
    nn::Parameter *w1, *b1, *w2, *b2;
  };
  std::vector<Block> blocks_;
  nn::Parameter *lnf_s_ = nullptr, *lnf_b_ = nullptr;
  nn::Parameter *out_w_ = nullptr, *out_b_ = nullptr;
  std::vector<nn::Parameter*> owned_;
};

/// Iterative argmax decoding from an embedded prefix; stops at eos_id or
/// after max_len emitted tokens. Ties resolve to the lowest id. Returns the
/// emitted ids without the end token.
std::vector<int> decode_greedy_ids(const TinyCausalLM& lm, const Matrix& prefix_embedded,
                                   int max_len, int eos_id);

}  // namespace jm3d::llm
