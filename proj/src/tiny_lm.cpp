#include "jm3d/llm/tiny_lm.hpp"

#include <cmath>
#include <stdexcept>

#include "jm3d/core/rng.hpp"
#include "jm3d/enc/fusion.hpp"
#include "jm3d/enc/point_encoder.hpp"

namespace jm3d::llm {

namespace {
constexpr double kMaskedScore = -1e30;
}

TinyCausalLM::TinyCausalLM(const TinyLmConfig& config, nn::ParamStore& params,
                           std::uint64_t init_seed, const std::string& prefix)
    : config_(config) {
  if (config.vocab < 2) throw std::runtime_error("tiny lm: vocabulary too small");
  if (config.dim < 1 || config.blocks < 1 || config.max_seq < 2)
    throw std::runtime_error("tiny lm: bad dimensions");
  const int d = config.dim;
  auto init = [&](const std::string& name, int rows, int cols, double scale) -> nn::Parameter* {
    return &params.add(prefix + name,
                       enc::gaussian_init(rows, cols, derive_seed(init_seed, prefix + name), scale));
  };
  auto zeros = [&](const std::string& name, int rows, int cols) -> nn::Parameter* {
    return &params.add(prefix + name, Matrix(rows, cols));
  };
  auto ones = [&](const std::string& name, int cols) -> nn::Parameter* {
    return &params.add(prefix + name, Matrix::filled(1, cols, 1.0));
  };

  tok_ = init("tok", config.vocab, d, 0.5 / std::sqrt(d));
  pos_ = init("pos", config.max_seq, d, 0.5 / std::sqrt(d));
  for (int b = 0; b < config.blocks; ++b) {
    const std::string tag = "b" + std::to_string(b) + ".";
    Block blk{};
    blk.ln1_s = ones(tag + "ln1.scale", d);
    blk.ln1_b = zeros(tag + "ln1.shift", 1, d);
    blk.wq = init(tag + "wq", d, d, 1.0 / std::sqrt(d));
    blk.bq = zeros(tag + "bq", 1, d);
    blk.wk = init(tag + "wk", d, d, 1.0 / std::sqrt(d));
    blk.bk = zeros(tag + "bk", 1, d);
    blk.wv = init(tag + "wv", d, d, 1.0 / std::sqrt(d));
    blk.bv = zeros(tag + "bv", 1, d);
    blk.wo = init(tag + "wo", d, d, 1.0 / std::sqrt(d));
    blk.bo = zeros(tag + "bo", 1, d);
    blk.ln2_s = ones(tag + "ln2.scale", d);
    blk.ln2_b = zeros(tag + "ln2.shift", 1, d);
    blk.w1 = init(tag + "w1", d, d * config.mlp_mult, 1.0 / std::sqrt(d));
    blk.b1 = zeros(tag + "b1", 1, d * config.mlp_mult);
    blk.w2 = init(tag + "w2", d * config.mlp_mult, d, 1.0 / std::sqrt(d * config.mlp_mult));
    blk.b2 = zeros(tag + "b2", 1, d);
    blocks_.push_back(blk);
  }
  lnf_s_ = ones("lnf.scale", d);
  lnf_b_ = zeros("lnf.shift", 1, d);
  out_w_ = init("out.w", d, config.vocab, 1.0 / std::sqrt(d));
  out_b_ = zeros("out.b", 1, config.vocab);
  collect(params, prefix);
}

TinyCausalLM::TinyCausalLM(const TinyLmConfig& config, nn::ParamStore& params,
                           const std::string& prefix)
    : config_(config) {
  tok_ = &params.get(prefix + "tok");
  pos_ = &params.get(prefix + "pos");
  for (int b = 0; b < config.blocks; ++b) {
    const std::string tag = prefix + "b" + std::to_string(b) + ".";
    Block blk{};
    blk.ln1_s = &params.get(tag + "ln1.scale");
    blk.ln1_b = &params.get(tag + "ln1.shift");
    blk.wq = &params.get(tag + "wq");
    blk.bq = &params.get(tag + "bq");
    blk.wk = &params.get(tag + "wk");
    blk.bk = &params.get(tag + "bk");
    blk.wv = &params.get(tag + "wv");
    blk.bv = &params.get(tag + "bv");
    blk.wo = &params.get(tag + "wo");
    blk.bo = &params.get(tag + "bo");
    blk.ln2_s = &params.get(tag + "ln2.scale");
    blk.ln2_b = &params.get(tag + "ln2.shift");
    blk.w1 = &params.get(tag + "w1");
    blk.b1 = &params.get(tag + "b1");
    blk.w2 = &params.get(tag + "w2");
    blk.b2 = &params.get(tag + "b2");
    blocks_.push_back(blk);
  }
  lnf_s_ = &params.get(prefix + "lnf.scale");
  lnf_b_ = &params.get(prefix + "lnf.shift");
  out_w_ = &params.get(prefix + "out.w");
  out_b_ = &params.get(prefix + "out.b");
  collect(params, prefix);
}

void TinyCausalLM::collect(nn::ParamStore& params, const std::string& prefix) {
  owned_.clear();
  for (auto* p : params.all())
    if (p->name.rfind(prefix, 0) == 0) owned_.push_back(p);
}

nn::Value TinyCausalLM::embed_tokens(nn::Tape& tape, const std::vector<int>& ids) const {
  for (const int id : ids)
    if (id < 0 || id >= config_.vocab) throw std::runtime_error("tiny lm: token id out of range");
  return tape.gather_rows(tape.param(*tok_), ids);
}

nn::Value TinyCausalLM::forward_embedded(nn::Tape& tape, nn::Value seq) const {
  if (seq.cols != config_.dim) throw std::runtime_error("tiny lm: sequence width mismatch");
  if (seq.rows > config_.max_seq)
    throw std::runtime_error("tiny lm: sequence longer than max_seq (" + std::to_string(seq.rows) +
                             " > " + std::to_string(config_.max_seq) + ")");
  const int L = seq.rows;
  std::vector<int> positions(L);
  for (int i = 0; i < L; ++i) positions[i] = i;
  nn::Value x = tape.add(seq, tape.gather_rows(tape.param(*pos_), positions));

  Matrix mask(L, L);
  for (int i = 0; i < L; ++i)
    for (int j = i + 1; j < L; ++j) mask.at(i, j) = kMaskedScore;
  const nn::Value mask_v = tape.constant(std::move(mask));
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(config_.dim));

  auto layernorm = [&](nn::Value h, nn::Parameter* s, nn::Parameter* b) {
    return tape.add_rowvec(
        tape.mul_rowvec(tape.row_standardize(h, enc::kLayerNormEps), tape.param(*s)),
        tape.param(*b));
  };

  for (const Block& blk : blocks_) {
    const nn::Value h = layernorm(x, blk.ln1_s, blk.ln1_b);
    const nn::Value q = tape.affine(h, *blk.wq, *blk.bq);
    const nn::Value k = tape.affine(h, *blk.wk, *blk.bk);
    const nn::Value v = tape.affine(h, *blk.wv, *blk.bv);
    const nn::Value scores =
        tape.add(tape.scale(tape.matmul(q, tape.transpose(k)), inv_sqrt_d), mask_v);
    const nn::Value ctx = tape.matmul(tape.row_softmax(scores), v);
    x = tape.add(x, tape.affine(ctx, *blk.wo, *blk.bo));
    const nn::Value h2 = layernorm(x, blk.ln2_s, blk.ln2_b);
    const nn::Value mlp = tape.affine(tape.tanh(tape.affine(h2, *blk.w1, *blk.b1)), *blk.w2, *blk.b2);
    x = tape.add(x, mlp);
  }
  return tape.affine(layernorm(x, lnf_s_, lnf_b_), *out_w_, *out_b_);
}

std::uint64_t TinyCausalLM::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto* p : owned_) {
    const auto* bytes = reinterpret_cast<const char*>(p->value.data());
    h = fnv1a(std::string_view(bytes, p->value.size() * sizeof(double)), h);
  }
  return h;
}

std::vector<int> decode_greedy_ids(const TinyCausalLM& lm, const Matrix& prefix_embedded,
                                   int max_len, int eos_id) {
  if (max_len < 1) throw std::runtime_error("decode_greedy: max_len must be >= 1");
  if (prefix_embedded.rows() < 1) throw std::runtime_error("decode_greedy: empty prefix");
  Matrix seq = prefix_embedded;
  std::vector<int> emitted;
  for (int step = 0; step < max_len; ++step) {
    if (seq.rows() >= lm.config().max_seq) break;
    nn::Tape tape;
    const nn::Value logits = lm.forward_embedded(tape, tape.constant(seq));
    const Matrix& lv = tape.value(logits);
    const int last = lv.rows() - 1;
    int best = 0;
    for (int c = 1; c < lv.cols(); ++c)
      if (lv.at(last, c) > lv.at(last, best)) best = c;
    if (best == eos_id) break;
    emitted.push_back(best);
    Matrix grown(seq.rows() + 1, seq.cols());
    for (int r = 0; r < seq.rows(); ++r)
      for (int c = 0; c < seq.cols(); ++c) grown.at(r, c) = seq.at(r, c);
    for (int c = 0; c < seq.cols(); ++c) grown.at(seq.rows(), c) = lm.token_table().at(best, c);
    seq = std::move(grown);
  }
  return emitted;
}

}  // namespace jm3d::llm
