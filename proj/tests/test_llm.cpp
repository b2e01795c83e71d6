#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "gradcheck.hpp"
#include "jm3d/align/trainer.hpp"
#include "jm3d/core/rng.hpp"
#include "jm3d/data/synthetic.hpp"
#include "jm3d/llm/bridge.hpp"
#include "jm3d/llm/conversation.hpp"
#include "jm3d/llm/tiny_lm.hpp"
#include "jm3d/llm/vocab.hpp"

using namespace jm3d;
using namespace jm3d::llm;

namespace {

align::TrainState tiny_pretrained(int dim = 6) {
  align::ModelConfig mc;
  mc.dim = dim;
  mc.point_widths = {4, 5};
  mc.head_widths = {4};
  mc.classifier_hidden = 3;
  mc.parent_classes = 2;
  return align::TrainState(mc, 19);
}

data::PointCloud cloud_of(std::uint64_t seed, int points = 12) {
  return data::generate_synthetic_corpus(data::CorpusSpec{1, 1, 1, points, seed})[0].cloud;
}

}  // namespace

TEST_CASE("vocab: bijection, specials and word round trip") {
  Vocab vocab;
  CHECK(vocab.point_id() == vocab.id_of(kPointToken));
  CHECK(vocab.eos_id() == vocab.id_of(kEosToken));
  const int a = vocab.add("teapot");
  CHECK(vocab.add("teapot") == a);  // idempotent
  CHECK(vocab.token_of(a) == "teapot");
  CHECK(vocab.id_of("unknown-word") == vocab.unk_id());

  vocab.add_corpus_text("A yellow horned teapot.");
  const auto ids = vocab.encode_words("A yellow horned teapot.");
  CHECK(vocab.decode_words(ids) == "A yellow horned teapot.");

  std::set<std::string> seen;
  for (int i = 0; i < vocab.size(); ++i) CHECK(seen.insert(vocab.token_of(i)).second);
}

TEST_CASE("default instruction set has eleven templates") {
  CHECK(default_instruction_templates().size() == 11);
}

TEST_CASE("conversations: rendering, mask span, placeholder discipline") {
  Vocab vocab;
  const auto records =
      build_conversations({{"id0", "a small teal teapot."}}, {"What is this?"}, vocab, 5);
  REQUIRE(records.size() == 1);
  const ConversationRecord& r = records[0];
  CHECK(r.instruction == "What is this?");

  // Exactly one placeholder.
  int placeholders = 0;
  for (const int id : r.token_ids)
    if (id == vocab.point_id()) ++placeholders;
  CHECK(placeholders == 1);

  // The mask covers exactly the caption tokens plus the end token.
  const auto caption_ids = vocab.encode_words(r.caption);
  int masked = 0;
  for (std::size_t i = 0; i < r.token_ids.size(); ++i)
    if (r.loss_mask[i]) ++masked;
  CHECK(masked == static_cast<int>(caption_ids.size()) + 1);
  CHECK(r.loss_mask.back());
  CHECK(r.token_ids.back() == vocab.eos_id());
  for (std::size_t i = 0; i + caption_ids.size() + 1 < r.token_ids.size(); ++i)
    CHECK_FALSE(r.loss_mask[i]);

  CHECK_THROWS_WITH_AS(
      build_conversations({{"x", std::string("bad ") + kPointToken}}, {"t"}, vocab, 1),
      doctest::Contains("placeholder"), std::runtime_error);
  CHECK_THROWS(build_conversations({}, {"t"}, vocab, 1));
  CHECK_THROWS(build_conversations({{"x", "ok"}}, {}, vocab, 1));
}

TEST_CASE("conversation layouts are near-uniform over 1000 seeded builds") {
  Vocab vocab;
  std::vector<std::pair<std::string, std::string>> captions;
  for (int i = 0; i < 1000; ++i) captions.emplace_back("id" + std::to_string(i), "a box.");
  const auto records = build_conversations(captions, default_instruction_templates(), vocab, 99);
  int first = 0;
  for (const auto& r : records)
    if (r.layout == Layout::PointFirst) ++first;
  const double frac = first / 1000.0;
  CHECK(frac >= 0.45);
  CHECK(frac <= 0.55);

  // Deterministic per seed.
  Vocab vocab2;
  const auto again = build_conversations(captions, default_instruction_templates(), vocab2, 99);
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(again[i].layout == records[i].layout);
    CHECK(again[i].instruction == records[i].instruction);
  }
}

TEST_CASE("projector: identity and zero inits, gradients") {
  {
    nn::ParamStore params;
    const Projector proj(5, 5, false, params, 1, ProjectorInit::Identity);
    const Matrix tokens = enc::gaussian_init(4, 5, 9, 1.0);
    nn::Tape tape;
    const Matrix& out = tape.value(proj.project(tape, tape.constant(tokens)));
    CHECK(max_abs_diff(out, tokens) == 0.0);
  }
  {
    nn::ParamStore params;
    const Projector proj(5, 7, false, params, 1, ProjectorInit::Zero);
    nn::Tape tape;
    const Matrix& out = tape.value(proj.project(tape, tape.constant(enc::gaussian_init(3, 5, 2, 1.0))));
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0);
  }
  {
    nn::ParamStore params;
    const Projector proj(4, 6, false, params, 3);
    const Matrix tokens = enc::gaussian_init(3, 4, 5, 1.0);
    const Matrix probe = enc::gaussian_init(3, 6, 6, 1.0);
    const auto report = gradcheck::check(
        [&](nn::Tape& t) {
          return t.sum_all(t.mul(proj.project(t, t.constant(tokens)), t.constant(probe)));
        },
        params.all());
    CHECK_MESSAGE(report.max_rel_err <= 1e-4, "worst=", report.worst);
  }
}

TEST_CASE("point tokens: degenerate pooling, permutation invariance, determinism") {
  align::TrainState state = tiny_pretrained();
  const data::PointCloud cloud = cloud_of(3, 16);

  // n = 1 degenerates to the global pooled feature.
  Matrix token1, pooled;
  {
    nn::Tape tape;
    token1 = tape.value(state.encoder().extract_point_tokens(tape, tape.constant(cloud.as_matrix()), 1));
  }
  {
    nn::Tape tape;
    const nn::Value feats = state.encoder().per_point_features(tape, tape.constant(cloud.as_matrix()));
    pooled = tape.value(tape.colmax(feats));
  }
  REQUIRE(token1.rows() == 1);
  CHECK(max_abs_diff(token1, pooled) == 0.0);

  // Permutation invariance of the full token block.
  Matrix base;
  {
    nn::Tape tape;
    base = tape.value(state.encoder().extract_point_tokens(tape, tape.constant(cloud.as_matrix()), 5));
  }
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    data::PointCloud shuffled = cloud;
    for (int i = shuffled.size() - 1; i > 0; --i)
      std::swap(shuffled.points[i], shuffled.points[rng.next_below(i + 1)]);
    nn::Tape tape;
    const Matrix out =
        tape.value(state.encoder().extract_point_tokens(tape, tape.constant(shuffled.as_matrix()), 5));
    CHECK(max_abs_diff(base, out) <= 1e-9);
  }

  // Determinism across calls.
  {
    nn::Tape tape;
    const Matrix again =
        tape.value(state.encoder().extract_point_tokens(tape, tape.constant(cloud.as_matrix()), 5));
    CHECK(max_abs_diff(base, again) == 0.0);
  }

  {
    nn::Tape tape;
    CHECK_THROWS(state.encoder().extract_point_tokens(tape, tape.constant(cloud.as_matrix()), 17));
  }

  // An encoder without a per-point stage cannot provide tokens.
  nn::ParamStore params;
  enc::PointEncoderConfig cfg;
  cfg.point_widths = {};
  cfg.head_widths = {4};
  cfg.dim = 3;
  const enc::PointEncoder flat(cfg, params, 2);
  nn::Tape tape;
  CHECK_THROWS_WITH_AS(flat.extract_point_tokens(tape, tape.constant(cloud.as_matrix()), 2),
                       doctest::Contains("intermediate"), std::runtime_error);
}

TEST_CASE("assemble_input: lengths, layouts, placeholder errors") {
  Vocab vocab;
  const auto records = build_conversations({{"id0", "a candid mug."}, {"id1", "a candid mug."}},
                                           {"Describe it."}, vocab, 3);
  nn::ParamStore params;
  TinyLmConfig lm_cfg;
  lm_cfg.vocab = vocab.size();
  lm_cfg.dim = 8;
  lm_cfg.blocks = 1;
  lm_cfg.max_seq = 64;
  const TinyCausalLM lm(lm_cfg, params, 5);

  const ConversationRecord& r = records[0];
  const int m = static_cast<int>(r.token_ids.size()) - 1;  // language tokens

  for (const int n : {0, 3}) {
    nn::Tape tape;
    const Matrix projected = enc::gaussian_init(n, 8, 77, 1.0);
    const AssembledConversation asm_seq =
        assemble_input(tape, r, tape.constant(projected), lm, vocab.point_id());
    CHECK(asm_seq.embedded.rows == m + n);
    CHECK(static_cast<int>(asm_seq.target_ids.size()) == m + n);

    // The projected rows sit exactly where the placeholder was.
    int placeholder_pos = 0;
    while (r.token_ids[placeholder_pos] != vocab.point_id()) ++placeholder_pos;
    const Matrix& emb = tape.value(asm_seq.embedded);
    for (int i = 0; i < n; ++i) {
      CHECK(asm_seq.target_ids[placeholder_pos + i] == -1);
      CHECK_FALSE(asm_seq.loss_mask[placeholder_pos + i]);
      for (int c = 0; c < 8; ++c)
        CHECK(emb.at(placeholder_pos + i, c) == doctest::Approx(projected.at(i, c)));
    }
  }

  // Layout decides whether the block precedes or follows the instruction.
  Vocab v2;
  const ConversationRecord first = render_conversation("a", "Say what.", "a cap.", Layout::PointFirst, v2);
  const ConversationRecord last = render_conversation("b", "Say what.", "a cap.", Layout::PointLast, v2);
  CHECK(first.token_ids[1] == v2.point_id());
  const auto instr_len = v2.encode_words("Say what.").size();
  CHECK(last.token_ids[1 + instr_len] == v2.point_id());

  // Zero or multiple placeholders are rejected.
  ConversationRecord none = r;
  none.token_ids.erase(std::remove(none.token_ids.begin(), none.token_ids.end(), vocab.point_id()),
                       none.token_ids.end());
  none.loss_mask.resize(none.token_ids.size());
  ConversationRecord twice = r;
  twice.token_ids.insert(twice.token_ids.begin(), vocab.point_id());
  twice.loss_mask.insert(twice.loss_mask.begin(), false);
  nn::Tape tape;
  const nn::Value block = tape.constant(enc::gaussian_init(2, 8, 3, 1.0));
  CHECK_THROWS_WITH_AS(assemble_input(tape, none, block, lm, vocab.point_id()),
                       doctest::Contains("no point placeholder"), std::runtime_error);
  CHECK_THROWS_WITH_AS(assemble_input(tape, twice, block, lm, vocab.point_id()),
                       doctest::Contains("multiple"), std::runtime_error);
}

TEST_CASE("sft loss: uniform value, target saturation, mask discipline") {
  Vocab vocab;
  // Pad the vocabulary to exactly 50 entries.
  for (int i = vocab.size(); i < 50; ++i) vocab.add("w" + std::to_string(i));
  REQUIRE(vocab.size() == 50);
  const ConversationRecord r = render_conversation("id", "w6 w7", "w8 w9 w10", Layout::PointFirst, vocab);

  nn::ParamStore params;
  TinyLmConfig cfg;
  cfg.vocab = 50;
  cfg.dim = 6;
  cfg.blocks = 1;
  cfg.max_seq = 32;
  const TinyCausalLM lm(cfg, params, 9);

  // Zeroed output projection -> uniform distribution -> loss = ln 50.
  auto& out_w = params.get("lm.out.w");
  auto& out_b = params.get("lm.out.b");
  const Matrix saved_w = out_w.value;
  for (std::size_t i = 0; i < out_w.value.size(); ++i) out_w.value[i] = 0.0;
  {
    nn::Tape tape;
    const AssembledConversation a =
        assemble_input(tape, r, tape.constant(Matrix(0, 6)), lm, vocab.point_id());
    const nn::Value loss = sft_loss(tape, lm, a.embedded, a.target_ids, a.loss_mask);
    CHECK(tape.scalar(loss) == doctest::Approx(std::log(50.0)).epsilon(1e-9));
  }

  // A huge bias on one token makes its probability one; a caption of that
  // token alone drives the loss to zero.
  {
    Vocab v50 = vocab;
    const ConversationRecord rep = render_conversation("id", "w6", "w8 w8 w8", Layout::PointFirst, v50);
    out_b.value.at(0, v50.id_of("w8")) = 1000.0;
    nn::Tape tape;
    const AssembledConversation a =
        assemble_input(tape, rep, tape.constant(Matrix(0, 6)), lm, v50.point_id());
    // Mask only the caption tokens (drop the end token whose target differs).
    auto mask = a.loss_mask;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i] && a.target_ids[i] != v50.id_of("w8")) mask[i] = false;
    const nn::Value loss = sft_loss(tape, lm, a.embedded, a.target_ids, mask);
    CHECK(tape.scalar(loss) < 1e-6);
    out_b.value.at(0, v50.id_of("w8")) = 0.0;
  }
  out_w.value = saved_w;

  // Replacing target ids at unmasked positions leaves the loss unchanged.
  {
    nn::Tape tape;
    const AssembledConversation a =
        assemble_input(tape, r, tape.constant(Matrix(0, 6)), lm, vocab.point_id());
    const double base = tape.scalar(sft_loss(tape, lm, a.embedded, a.target_ids, a.loss_mask));
    auto perturbed = a.target_ids;
    for (std::size_t i = 0; i < perturbed.size(); ++i)
      if (!a.loss_mask[i]) perturbed[i] = 7;
    const double after = tape.scalar(sft_loss(tape, lm, a.embedded, perturbed, a.loss_mask));
    CHECK(std::fabs(base - after) <= 1e-8);
  }

  // An all-false mask is an error.
  {
    nn::Tape tape;
    const AssembledConversation a =
        assemble_input(tape, r, tape.constant(Matrix(0, 6)), lm, vocab.point_id());
    CHECK_THROWS_WITH_AS(
        sft_loss(tape, lm, a.embedded, a.target_ids, std::vector<bool>(a.target_ids.size(), false)),
        doctest::Contains("mask"), std::runtime_error);
  }
}

TEST_CASE("tiny lm: causal visibility and gradient oracle") {
  nn::ParamStore params;
  TinyLmConfig cfg;
  cfg.vocab = 9;
  cfg.dim = 4;
  cfg.blocks = 2;
  cfg.max_seq = 16;
  const TinyCausalLM lm(cfg, params, 13);

  // Changing a later token cannot change earlier logits.
  {
    nn::Tape t1, t2;
    const nn::Value l1 = lm.forward_embedded(t1, lm.embed_tokens(t1, {1, 2, 3, 4}));
    const nn::Value l2 = lm.forward_embedded(t2, lm.embed_tokens(t2, {1, 2, 3, 8}));
    for (int pos = 0; pos < 3; ++pos)
      for (int c = 0; c < 9; ++c)
        CHECK(t1.value(l1).at(pos, c) == doctest::Approx(t2.value(l2).at(pos, c)).epsilon(1e-12));
  }

  // Full finite-difference sweep over every language-model parameter.
  const std::vector<int> ids{1, 4, 2, 7};
  const std::vector<int> targets{-1, 4, 2, 7};
  const std::vector<bool> mask{false, true, true, true};
  const auto report = gradcheck::check(
      [&](nn::Tape& t) {
        return sft_loss(t, lm, lm.embed_tokens(t, ids), targets, mask);
      },
      params.all());
  CHECK_MESSAGE(report.max_rel_err <= 1e-4, "worst=", report.worst);
}

TEST_CASE("greedy decode: forced end token, determinism") {
  Vocab vocab;
  vocab.add("hat");
  nn::ParamStore params;
  TinyLmConfig cfg;
  cfg.vocab = vocab.size();
  cfg.dim = 4;
  cfg.blocks = 1;
  cfg.max_seq = 16;
  const TinyCausalLM lm(cfg, params, 3);

  // A huge end-of-sequence bias stops decoding immediately.
  params.get("lm.out.b").value.at(0, vocab.eos_id()) = 1000.0;
  const Matrix prefix = enc::gaussian_init(3, 4, 21, 1.0);
  CHECK(decode_greedy_ids(lm, prefix, 8, vocab.eos_id()).empty());

  params.get("lm.out.b").value.at(0, vocab.eos_id()) = 0.0;
  const auto a = decode_greedy_ids(lm, prefix, 8, vocab.eos_id());
  const auto b = decode_greedy_ids(lm, prefix, 8, vocab.eos_id());
  CHECK(a == b);
}

TEST_CASE("bridge steps: frozen language model and tiered learning rates") {
  align::TrainState pretrained = tiny_pretrained();
  Vocab vocab;
  const data::PointCloud cloud = cloud_of(7, 12);
  const auto records = build_conversations({{cloud.id, "a tidy shape."}}, {"Name it."}, vocab, 2);

  BridgeConfig bc;
  bc.point_tokens = 3;
  bc.lm.dim = 8;
  bc.lm.blocks = 1;
  bc.lm.max_seq = 32;
  BridgeState state(bc, pretrained, vocab, 55);
  std::map<std::string, data::PointCloud> clouds{{cloud.id, cloud}};
  const std::vector<const ConversationRecord*> batch{&records[0]};

  // lr_low = 0 leaves the encoder untouched; the LM never moves.
  std::vector<Matrix> enc_before, lm_before;
  for (const auto* p : state.params().all()) {
    if (p->name.rfind("enc.", 0) == 0) enc_before.push_back(p->value);
    if (p->name.rfind("lm.", 0) == 0) lm_before.push_back(p->value);
  }
  const std::uint64_t checksum = state.lm().checksum();
  BridgeLrConfig lrcfg;
  lrcfg.lr_low = 0.0;
  const auto metrics = llm_train_step(state, batch, clouds, lrcfg);
  CHECK(std::isfinite(metrics.loss));
  std::size_t e = 0, l = 0;
  bool projector_moved = false;
  for (const auto* p : state.params().all()) {
    if (p->name.rfind("enc.", 0) == 0) CHECK(p->value == enc_before[e++]);
    if (p->name.rfind("lm.", 0) == 0) CHECK(p->value == lm_before[l++]);
    if (p->name.rfind("proj.", 0) == 0 && !(p->value == Matrix(p->value.rows(), p->value.cols())))
      projector_moved = true;
  }
  CHECK(state.lm().checksum() == checksum);
  CHECK(projector_moved);

  // With lr_low > 0 the encoder moves too; the LM still does not.
  lrcfg.lr_low = 1e-3;
  llm_train_step(state, batch, clouds, lrcfg);
  bool encoder_moved = false;
  e = 0;
  for (const auto* p : state.params().all())
    if (p->name.rfind("enc.", 0) == 0 && !(p->value == enc_before[e++])) encoder_moved = true;
  CHECK(encoder_moved);
  CHECK(state.lm().checksum() == checksum);

  // Warmup updates the LM.
  lm_warmup_step(state, batch, clouds, lrcfg);
  CHECK(state.lm().checksum() != checksum);
}

TEST_CASE("bridge training is reproducible across runs") {
  auto run = [](int steps) {
    align::TrainState pretrained = tiny_pretrained();
    Vocab vocab;
    const data::PointCloud c0 = cloud_of(2, 12);
    const data::PointCloud c1 = cloud_of(4, 12);
    const auto records = build_conversations(
        {{c0.id + "#0", "a thin thing."}, {c1.id + "#1", "a wide thing."}}, {"Label it."}, vocab, 9);
    BridgeConfig bc;
    bc.point_tokens = 2;
    bc.lm.dim = 8;
    bc.lm.blocks = 1;
    bc.lm.max_seq = 32;
    BridgeState state(bc, pretrained, vocab, 3);
    std::map<std::string, data::PointCloud> clouds{{records[0].id, c0}, {records[1].id, c1}};
    std::vector<const ConversationRecord*> batch{&records[0], &records[1]};
    BridgeLrConfig lrcfg;
    std::vector<double> losses;
    for (int s = 0; s < steps; ++s) losses.push_back(llm_train_step(state, batch, clouds, lrcfg).loss);
    return losses;
  };
  const auto a = run(10);
  const auto b = run(10);
  for (int i = 0; i < 10; ++i) CHECK(std::fabs(a[i] - b[i]) <= 1e-6);
}

TEST_CASE("conversation files round trip") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "jm3d-test-conv";
  fs::create_directories(dir);
  Vocab vocab;
  const auto records = build_conversations({{"a", "one hat."}, {"b", "two hats."}},
                                           default_instruction_templates(), vocab, 4);
  const std::string path = (dir / "conv.jsonl").string();
  save_conversations_jsonl(path, records);
  Vocab vocab2;
  const auto loaded = load_conversations_jsonl(path, vocab2);
  REQUIRE(loaded.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(loaded[i].id == records[i].id);
    CHECK(loaded[i].caption == records[i].caption);
    CHECK(loaded[i].instruction == records[i].instruction);
    CHECK(loaded[i].layout == records[i].layout);
  }

  const std::string cap_path = (dir / "captions.jsonl").string();
  save_captions_jsonl(cap_path, {{"a", "one hat."}});
  const auto caps = load_captions_jsonl(cap_path);
  REQUIRE(caps.size() == 1);
  CHECK(caps[0].first == "a");
  CHECK(caps[0].second == "one hat.");
}
