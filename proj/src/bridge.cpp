#include "jm3d/llm/bridge.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "jm3d/core/io.hpp"
#include "jm3d/core/rng.hpp"

namespace jm3d::llm {

Projector::Projector(int in_dim, int out_dim, bool two_layer, nn::ParamStore& params,
                     std::uint64_t init_seed, ProjectorInit init, const std::string& prefix)
    : two_layer_(two_layer) {
  auto first = [&]() -> Matrix {
    switch (init) {
      case ProjectorInit::Identity:
        if (in_dim != out_dim && !two_layer)
          throw std::runtime_error("projector: identity init needs a square map");
        return Matrix::identity(in_dim);
      case ProjectorInit::Zero:
        return Matrix(in_dim, two_layer ? in_dim : out_dim);
      default:
        return enc::gaussian_init(in_dim, two_layer ? in_dim : out_dim,
                                  derive_seed(init_seed, prefix + "w1"), 1.0 / std::sqrt(in_dim));
    }
  };
  w1_ = &params.add(prefix + "w1", first());
  b1_ = &params.add(prefix + "b1", Matrix(1, two_layer ? in_dim : out_dim));
  if (two_layer) {
    w2_ = &params.add(prefix + "w2",
                      init == ProjectorInit::Zero
                          ? Matrix(in_dim, out_dim)
                          : enc::gaussian_init(in_dim, out_dim, derive_seed(init_seed, prefix + "w2"),
                                               1.0 / std::sqrt(in_dim)));
    b2_ = &params.add(prefix + "b2", Matrix(1, out_dim));
  }
}

Projector::Projector(int /*in_dim*/, int /*out_dim*/, bool two_layer, nn::ParamStore& params,
                     const std::string& prefix)
    : two_layer_(two_layer) {
  w1_ = &params.get(prefix + "w1");
  b1_ = &params.get(prefix + "b1");
  if (two_layer) {
    w2_ = &params.get(prefix + "w2");
    b2_ = &params.get(prefix + "b2");
  }
}

nn::Value Projector::project(nn::Tape& tape, nn::Value tokens) const {
  if (tokens.cols != w1_->value.rows()) throw std::runtime_error("projector: token width mismatch");
  nn::Value h = tape.affine(tokens, *w1_, *b1_);
  if (two_layer_) h = tape.affine(tape.tanh(h), *w2_, *b2_);
  return h;
}

AssembledConversation assemble_input(nn::Tape& tape, const ConversationRecord& record,
                                     nn::Value projected_tokens, const TinyCausalLM& lm,
                                     int point_id) {
  int placeholder = -1;
  // Record tokens are ids into the same vocab the LM was built over.
  for (std::size_t i = 0; i < record.token_ids.size(); ++i) {
    if (record.token_ids[i] >= lm.config().vocab)
      throw std::runtime_error("assemble_input: record token outside LM vocabulary");
    if (record.token_ids[i] == point_id) {
      if (placeholder >= 0) throw std::runtime_error("assemble_input: multiple point placeholders");
      placeholder = static_cast<int>(i);
    }
  }
  if (placeholder < 0) throw std::runtime_error("assemble_input: no point placeholder");
  if (projected_tokens.cols != lm.config().dim)
    throw std::runtime_error("assemble_input: projected token width mismatch");

  const std::vector<int> before(record.token_ids.begin(), record.token_ids.begin() + placeholder);
  const std::vector<int> after(record.token_ids.begin() + placeholder + 1, record.token_ids.end());

  nn::Value seq = projected_tokens;
  if (!before.empty()) seq = tape.vconcat(lm.embed_tokens(tape, before), seq);
  if (!after.empty()) seq = tape.vconcat(seq, lm.embed_tokens(tape, after));

  AssembledConversation out;
  out.embedded = seq;
  const int n = projected_tokens.rows;
  for (int i = 0; i < placeholder; ++i) {
    out.target_ids.push_back(record.token_ids[i]);
    out.loss_mask.push_back(record.loss_mask[i]);
  }
  for (int i = 0; i < n; ++i) {
    out.target_ids.push_back(-1);
    out.loss_mask.push_back(false);
  }
  for (std::size_t i = placeholder + 1; i < record.token_ids.size(); ++i) {
    out.target_ids.push_back(record.token_ids[i]);
    out.loss_mask.push_back(record.loss_mask[i]);
  }
  return out;
}

nn::Value sft_loss(nn::Tape& tape, const TinyCausalLM& lm, nn::Value embedded,
                   const std::vector<int>& target_ids, const std::vector<bool>& mask) {
  if (static_cast<int>(mask.size()) != embedded.rows ||
      static_cast<int>(target_ids.size()) != embedded.rows)
    throw std::runtime_error("sft_loss: mask length must match the sequence");
  std::vector<int> rows;
  std::vector<int> codes;
  for (std::size_t t = 0; t < mask.size(); ++t) {
    if (!mask[t]) continue;
    if (t == 0) throw std::runtime_error("sft_loss: first position cannot be a target");
    if (target_ids[t] < 0) throw std::runtime_error("sft_loss: masked position lacks a target id");
    rows.push_back(static_cast<int>(t) - 1);
    codes.push_back(target_ids[t]);
  }
  if (rows.empty()) throw std::runtime_error("sft_loss: mask selects no positions");
  const nn::Value logits = lm.forward_embedded(tape, embedded);
  const nn::Value picked = tape.pick_per_row(tape.row_log_softmax(tape.gather_rows(logits, rows)), codes);
  return tape.scale(tape.mean_all(picked), -1.0);
}

BridgeState::BridgeState(const BridgeConfig& config, const align::TrainState& pretrained, Vocab vocab,
                         std::uint64_t seed)
    : config_(config), vocab_(std::move(vocab)) {
  config_.lm.vocab = vocab_.size();
  projector_ = std::make_unique<Projector>(pretrained.encoder().pooled_feature_dim(), config_.lm.dim,
                                           config_.projector_two_layer, params_,
                                           derive_seed(seed, "projector"));
  // Copy the pretrained encoder parameters into this store under the same
  // names, then attach an encoder over them.
  for (const auto* p : pretrained.params().all())
    if (p->name.rfind("enc.", 0) == 0) params_.add(p->name, p->value);
  encoder_ = std::make_unique<enc::PointEncoder>(pretrained.encoder().config(), params_, "enc.");
  lm_ = std::make_unique<TinyCausalLM>(config_.lm, params_, derive_seed(seed, "lm"));
}

nn::Value BridgeState::projected_tokens(nn::Tape& tape, const data::PointCloud& cloud) const {
  const nn::Value points = tape.constant(cloud.as_matrix());
  const nn::Value tokens = encoder_->extract_point_tokens(tape, points, config_.point_tokens);
  return projector_->project(tape, tokens);
}

Matrix BridgeState::decode_prefix(const ConversationRecord& record,
                                  const data::PointCloud& cloud) const {
  // Everything up to and including the assistant marker.
  int cut = -1;
  for (std::size_t i = 0; i < record.token_ids.size(); ++i)
    if (record.token_ids[i] == vocab_.assistant_id()) cut = static_cast<int>(i);
  if (cut < 0) throw std::runtime_error("decode_prefix: record lacks the assistant marker");
  ConversationRecord prompt = record;
  prompt.token_ids.resize(cut + 1);
  prompt.loss_mask.assign(prompt.token_ids.size(), false);

  nn::Tape tape;
  const AssembledConversation assembled =
      assemble_input(tape, prompt, projected_tokens(tape, cloud), *lm_, vocab_.point_id());
  return tape.value(assembled.embedded);
}

namespace {
void adamw_group(std::vector<nn::Parameter*>& group, double lr, const BridgeLrConfig& cfg, long t) {
  if (lr == 0.0) return;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (auto* p : group) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      p->moment1[i] = cfg.beta1 * p->moment1[i] + (1.0 - cfg.beta1) * g;
      p->moment2[i] = cfg.beta2 * p->moment2[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = p->moment1[i] / bc1;
      const double vhat = p->moment2[i] / bc2;
      p->value[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p->value[i]);
    }
  }
}
}  // namespace

BridgeStepMetrics bridge_step(BridgeState& state, const std::vector<const ConversationRecord*>& batch,
                              const std::map<std::string, data::PointCloud>& clouds,
                              const BridgeLrConfig& cfg, bool update_lm) {
  if (batch.empty()) throw std::runtime_error("bridge step: empty batch");
  nn::Tape tape;
  nn::Value total{};
  bool first = true;
  for (const auto* record : batch) {
    auto it = clouds.find(record->id);
    if (it == clouds.end())
      throw std::runtime_error("bridge step: no point cloud for record '" + record->id + "'");
    const AssembledConversation assembled =
        assemble_input(tape, *record, state.projected_tokens(tape, it->second), state.lm(),
                       state.vocab().point_id());
    const nn::Value loss =
        sft_loss(tape, state.lm(), assembled.embedded, assembled.target_ids, assembled.loss_mask);
    total = first ? loss : tape.add(total, loss);
    first = false;
  }
  total = tape.scale(total, 1.0 / static_cast<double>(batch.size()));

  BridgeStepMetrics metrics;
  metrics.loss = tape.scalar(total);
  if (!std::isfinite(metrics.loss))
    throw std::runtime_error("bridge step: non-finite loss " + std::to_string(metrics.loss));

  state.params_.zero_grads();
  tape.backward(total);

  std::vector<nn::Parameter*> proj_group, enc_group, lm_group;
  for (auto* p : state.params_.all()) {
    if (p->name.rfind("proj.", 0) == 0) proj_group.push_back(p);
    else if (p->name.rfind("enc.", 0) == 0) enc_group.push_back(p);
    else lm_group.push_back(p);
  }
  const long t = state.step_ + 1;
  adamw_group(proj_group, cfg.lr_main, cfg, t);
  adamw_group(enc_group, cfg.lr_low, cfg, t);
  if (update_lm) adamw_group(lm_group, cfg.lr_main, cfg, t);
  state.step_ = t;
  return metrics;
}

BridgeStepMetrics llm_train_step(BridgeState& state, const std::vector<const ConversationRecord*>& batch,
                                 const std::map<std::string, data::PointCloud>& clouds,
                                 const BridgeLrConfig& cfg) {
  return bridge_step(state, batch, clouds, cfg, false);
}

BridgeStepMetrics lm_warmup_step(BridgeState& state, const std::vector<const ConversationRecord*>& batch,
                                 const std::map<std::string, data::PointCloud>& clouds,
                                 const BridgeLrConfig& cfg) {
  return bridge_step(state, batch, clouds, cfg, true);
}

DecodeResult decode_record(const BridgeState& state, const ConversationRecord& record,
                           const data::PointCloud& cloud, int max_len) {
  const Matrix prefix = state.decode_prefix(record, cloud);
  const std::vector<int> ids = decode_greedy_ids(state.lm(), prefix, max_len, state.vocab().eos_id());
  DecodeResult out;
  out.id = record.id;
  out.prediction = state.vocab().decode_words(ids);
  out.exact_match = ids == state.vocab().encode_words(record.caption);
  return out;
}

void BridgeState::save_checkpoint(const std::string& path) const {
  nlohmann::json manifest;
  manifest["bridge"] = {{"point_tokens", config_.point_tokens},
                        {"projector_two_layer", config_.projector_two_layer},
                        {"lm_dim", config_.lm.dim},
                        {"lm_blocks", config_.lm.blocks},
                        {"lm_max_seq", config_.lm.max_seq},
                        {"lm_mlp_mult", config_.lm.mlp_mult}};
  manifest["step"] = step_;
  std::vector<std::string> words;
  for (int i = 0; i < vocab_.size(); ++i) words.push_back(vocab_.token_of(i));
  manifest["vocab"] = words;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto* p : params_.all())
    tensors.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  manifest["params"] = tensors;
  const std::string mtext = manifest.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write bridge checkpoint: " + path);
  io::write_magic(os, "JMCK");
  io::write_u32(os, 2);  // bridge flavor
  io::write_u32(os, static_cast<std::uint32_t>(mtext.size()));
  os.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
  for (const auto* p : params_.all()) {
    io::write_f32_payload(os, p->value);
    io::write_f32_payload(os, p->moment1);
    io::write_f32_payload(os, p->moment2);
  }
}

BridgeState BridgeState::load_checkpoint(const std::string& path, const align::TrainState& pretrained) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open bridge checkpoint: " + path);
  io::expect_magic(is, "JMCK", path);
  if (io::read_u32(is) != 2) throw std::runtime_error("not a bridge checkpoint: " + path);
  const std::uint32_t mlen = io::read_u32(is);
  std::string mtext(mlen, '\0');
  is.read(mtext.data(), mlen);
  const nlohmann::json manifest = nlohmann::json::parse(mtext);

  BridgeConfig bc;
  const auto& jb = manifest.at("bridge");
  bc.point_tokens = jb.at("point_tokens").get<int>();
  bc.projector_two_layer = jb.at("projector_two_layer").get<bool>();
  bc.lm.dim = jb.at("lm_dim").get<int>();
  bc.lm.blocks = jb.at("lm_blocks").get<int>();
  bc.lm.max_seq = jb.at("lm_max_seq").get<int>();
  bc.lm.mlp_mult = jb.at("lm_mlp_mult").get<int>();

  Vocab vocab;
  for (const auto& w : manifest.at("vocab").get<std::vector<std::string>>()) vocab.add(w);

  BridgeState state(bc, pretrained, std::move(vocab), 0);
  state.step_ = manifest.at("step").get<long>();
  const auto tensors = manifest.at("params");
  if (tensors.size() != state.params_.all().size())
    throw std::runtime_error("bridge checkpoint parameter count mismatch: " + path);
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    nn::Parameter* p = state.params_.all()[i];
    if (tensors[i].at("name").get<std::string>() != p->name)
      throw std::runtime_error("bridge checkpoint manifest mismatch at " + p->name);
    io::read_f32_payload(is, p->value);
    io::read_f32_payload(is, p->moment1);
    io::read_f32_payload(is, p->moment2);
  }
  if (!is) throw std::runtime_error("truncated bridge checkpoint: " + path);
  return state;
}

}  // namespace jm3d::llm
