#include "jm3d/cli/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "jm3d/align/joint.hpp"
#include "jm3d/core/io.hpp"
#include "jm3d/core/rng.hpp"
#include "jm3d/data/triplet.hpp"

namespace jm3d::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enc::Embedding embedding_from_row(const Matrix& m, int row) {
  enc::Embedding e;
  e.vec.assign(m.row_ptr(row), m.row_ptr(row) + m.cols());
  return e;
}

/// Cloud embeddings for a set of corpus indices, one tape per call.
Matrix encode_clouds(const align::TrainState& state, const std::vector<data::CorpusEntry>& corpus,
                     const std::vector<int>& indices) {
  if (indices.empty()) return Matrix(0, state.config().dim);
  Matrix out(static_cast<int>(indices.size()), state.config().dim);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    nn::Tape tape;
    const nn::Value emb =
        state.encoder().encode(tape, tape.constant(corpus[indices[i]].cloud.as_matrix()));
    const Matrix& v = tape.value(emb);
    for (int c = 0; c < v.cols(); ++c) out.at(static_cast<int>(i), c) = v.at(0, c);
  }
  return out;
}

/// Fused single-view query feature under the trained tables.
enc::Embedding fused_view_embedding(const align::TrainState& state, const enc::FrozenEncoder& image_enc,
                                    const data::ViewImage& view) {
  const enc::Embedding raw = image_enc.encode_image(view);
  nn::Tape tape;
  Matrix row(1, static_cast<int>(raw.vec.size()));
  for (std::size_t c = 0; c < raw.vec.size(); ++c) row.at(0, static_cast<int>(c)) = raw.vec[c];
  const nn::Value fused =
      state.fusion().fuse(tape, tape.constant(std::move(row)), {view.angle_index}, {view.mean_depth()});
  return embedding_from_row(tape.value(fused), 0);
}

int query_angle_for(std::uint64_t seed, int corpus_index) {
  return static_cast<int>(derive_seed(seed, "query-view", corpus_index) % data::kCandidateViews);
}

struct RunPaths {
  fs::path dir;
  fs::path run_json() const { return dir / "run.json"; }
  fs::path metrics() const { return dir / "metrics.jsonl"; }
  fs::path tree() const { return dir / "tree.json"; }
  fs::path ckpt_init() const { return dir / "ckpt-init.jmck"; }
  fs::path ckpt_last() const { return dir / "last.jmck"; }
  fs::path sample_view() const { return dir / "sample_view.json"; }
  fs::path conversations() const { return dir / "conversations.jsonl"; }
  fs::path captions() const { return dir / "captions.jsonl"; }
  fs::path bridge() const { return dir / "bridge.jmck"; }
  fs::path decodes() const { return dir / "decodes.jsonl"; }
  fs::path llm_metrics() const { return dir / "llm_metrics.jsonl"; }
};

RunConfig config_of_run(const std::string& run_dir) {
  const json j = json::parse(io::read_text_file((fs::path(run_dir) / "run.json").string()));
  return parse_run_config(j.at("config").dump());
}

}  // namespace

DatasetView build_dataset(const RunConfig& config) {
  DatasetView ds;
  ds.corpus = config.manifest_path.empty() ? data::generate_synthetic_corpus(config.corpus_spec())
                                           : data::corpus_from_manifest(config.manifest_path);
  if (ds.corpus.empty()) throw std::runtime_error("dataset: empty corpus");

  // Uniform point counts keep training batches stackable.
  for (std::size_t i = 0; i < ds.corpus.size(); ++i) {
    if (ds.corpus[i].cloud.size() != config.corpus_points)
      ds.corpus[i].cloud = data::sample_points(ds.corpus[i].cloud, config.corpus_points,
                                               derive_seed(config.seed, "resample", i));
  }

  std::vector<std::pair<std::string, std::optional<std::string>>> pairs;
  for (const auto& e : ds.corpus) pairs.emplace_back(e.parent, e.sub);
  ds.tree = data::build_category_tree(pairs);

  const std::set<std::string> holdout(config.holdout_subs.begin(), config.holdout_subs.end());
  for (const auto& name : holdout)
    if (!ds.tree.has_sub(name))
      throw std::runtime_error("config.holdout_subs: unknown subcategory '" + name + "'");

  std::map<std::string, std::vector<int>> by_sub;
  for (std::size_t i = 0; i < ds.corpus.size(); ++i)
    by_sub[ds.corpus[i].sub].push_back(static_cast<int>(i));
  for (const auto& [sub, members] : by_sub) {
    if (holdout.count(sub)) {
      ds.zeroshot_indices.insert(ds.zeroshot_indices.end(), members.begin(), members.end());
      continue;
    }
    const int keep = std::max(0, static_cast<int>(members.size()) - config.holdout_samples_per_sub);
    for (std::size_t k = 0; k < members.size(); ++k)
      (static_cast<int>(k) < keep ? ds.train_indices : ds.heldout_indices).push_back(members[k]);
  }
  if (ds.train_indices.size() < 2)
    throw std::runtime_error("dataset: fewer than 2 training samples after holdout");
  return ds;
}

ViewFeatureCache build_view_cache(const std::vector<data::CorpusEntry>& corpus,
                                  const RenderConfig& render, const enc::FrozenEncoder& image_encoder) {
  ViewFeatureCache cache;
  cache.rows = Matrix(static_cast<int>(corpus.size()) * data::kCandidateViews, image_encoder.dim());
  cache.mean_depths.resize(corpus.size() * data::kCandidateViews);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const data::CandidateViewSet cands =
        data::render_candidate_views(corpus[i].cloud, render.height, render.width);
    for (int a = 0; a < data::kCandidateViews; ++a) {
      const enc::Embedding e = image_encoder.encode_image(cands.views[a]);
      const int row = static_cast<int>(i) * data::kCandidateViews + a;
      for (int c = 0; c < cache.rows.cols(); ++c) cache.rows.at(row, c) = e.vec[c];
      cache.mean_depths[row] = cands.views[a].mean_depth();
    }
  }
  return cache;
}

std::string epoch_metrics_to_json(const EpochMetrics& m) {
  json j;
  j["epoch"] = m.epoch;
  j["total"] = m.total;
  j["cloud_joint"] = m.cloud_joint;
  j["cloud_text"] = m.cloud_text;
  j["text_joint"] = m.text_joint;
  j["classed"] = m.classed;
  j["learning_rate"] = m.learning_rate;
  j["checkpoint"] = m.checkpoint;
  return j.dump();
}

EpochMetrics epoch_metrics_from_json(const std::string& line) {
  const json j = json::parse(line);
  EpochMetrics m;
  m.epoch = j.at("epoch").get<int>();
  m.total = j.at("total").get<double>();
  m.cloud_joint = j.at("cloud_joint").get<double>();
  m.cloud_text = j.at("cloud_text").get<double>();
  m.text_joint = j.at("text_joint").get<double>();
  m.classed = j.at("classed").get<double>();
  m.learning_rate = j.at("learning_rate").get<double>();
  m.checkpoint = j.at("checkpoint").get<std::string>();
  return m;
}

PretrainOutcome run_pretrain(const RunConfig& config, bool resume, int stop_after_epochs) {
  validate_run_config(config);
  const RunPaths paths{fs::path(config.out_dir)};
  fs::create_directories(paths.dir);

  const DatasetView ds = build_dataset(config);
  const enc::FrozenEncoder text_enc = enc::FrozenEncoder::stub_text(config.dim);
  const enc::FrozenEncoder image_enc = enc::FrozenEncoder::stub_image(config.dim);
  const eval::LabelBank text_bank =
      eval::build_label_bank(ds.tree.subs_by_code(), eval::kDefaultPromptTemplate, text_enc);

  PretrainOutcome outcome;
  outcome.run_dir = paths.dir.string();
  int completed_epochs = 0;
  std::unique_ptr<align::TrainState> state;

  if (resume) {
    if (!fs::exists(paths.run_json()))
      throw std::runtime_error("resume: no run.json under " + config.out_dir);
    const json stored = json::parse(io::read_text_file(paths.run_json().string()));
    if (stored.at("config_hash").get<std::string>() !=
        std::to_string(config_hash(parse_run_config(stored.at("config").dump()))))
      throw std::runtime_error("resume: stored config hash is corrupt");
    if (stored.at("config").dump() != json::parse(serialize_run_config(config)).dump())
      throw std::runtime_error("resume: config does not match the stored run config byte for byte");
    if (!fs::exists(paths.ckpt_last())) throw std::runtime_error("resume: missing checkpoint last.jmck");
    state = std::make_unique<align::TrainState>(align::TrainState::load_checkpoint(paths.ckpt_last()));
    std::ifstream rows(paths.metrics());
    std::string line;
    while (std::getline(rows, line))
      if (!line.empty()) outcome.rows.push_back(epoch_metrics_from_json(line));
    completed_epochs = outcome.rows.empty() ? 0 : outcome.rows.back().epoch;
  } else {
    json run;
    run["code_version"] = kCodeVersion;
    run["config"] = json::parse(serialize_run_config(config));
    run["config_hash"] = std::to_string(config_hash(config));
    io::write_text_file(paths.run_json().string(), run.dump(2) + "\n");
    io::write_text_file(paths.metrics().string(), "");
    data::save_tree_json(paths.tree().string(), ds.tree);

    // Dataset manifest over the training partition, drawn with the epoch-0
    // view seed, plus one query view for the retrieve command.
    std::vector<data::CorpusEntry> train_corpus;
    for (const int i : ds.train_indices) train_corpus.push_back(ds.corpus[i]);
    data::TripletOptions topts{config.views, config.omega_deg, config.render.height,
                               config.render.width};
    data::save_manifest(paths.dir.string(),
                        data::assemble_triplets(train_corpus, ds.tree, topts,
                                                derive_seed(config.seed, "views", 0)));
    const int demo = ds.heldout_indices.empty() ? 0 : ds.heldout_indices.front();
    const data::CandidateViewSet demo_views = data::render_candidate_views(
        ds.corpus[demo].cloud, config.render.height, config.render.width);
    data::save_view_json(paths.sample_view().string(),
                         demo_views.views[query_angle_for(config.seed, demo)]);

    state = std::make_unique<align::TrainState>(
        config.model_config(ds.tree.parent_count()), derive_seed(config.seed, "init"));
    state->rng().reseed(derive_seed(config.seed, "train-rng"));
    state->save_checkpoint(paths.ckpt_init().string());
    state->save_checkpoint(paths.ckpt_last().string());
    state->quantize_to_storage();
  }

  if (completed_epochs >= config.epochs) return outcome;

  const ViewFeatureCache cache = build_view_cache(ds.corpus, config.render, image_enc);
  const int train_n = static_cast<int>(ds.train_indices.size());
  const int steps_per_epoch = std::max(1, (train_n + config.batch_size - 1) / config.batch_size);

  align::LossWeights weights{config.lambda1, config.lambda2, config.lambda3, config.temperature};
  align::OptimizerConfig opt;
  opt.learning_rate = config.learning_rate;
  opt.weight_decay = config.weight_decay;
  opt.cosine = config.lr_schedule == "cosine";
  opt.total_steps = static_cast<long>(config.epochs) * steps_per_epoch;

  const int points_per_cloud = config.corpus_points;
  std::ofstream metrics_out(paths.metrics(), std::ios::app);

  const int session_last = stop_after_epochs < 0
                               ? config.epochs
                               : std::min(config.epochs, completed_epochs + stop_after_epochs);
  for (int epoch = completed_epochs + 1; epoch <= session_last; ++epoch) {
    const std::uint64_t view_seed =
        derive_seed(config.seed, "views", config.fixed_views ? 0 : static_cast<std::uint64_t>(epoch - 1));

    // Per-sample view draw for this epoch, keyed by position in the train set
    // to match the saved manifest's derivation.
    std::vector<std::vector<int>> angles_of(train_n);
    for (int i = 0; i < train_n; ++i)
      angles_of[i] = data::select_view_indices(config.views, config.omega_deg,
                                               derive_seed(view_seed, "triplet", i));

    std::vector<int> order(train_n);
    std::iota(order.begin(), order.end(), 0);
    for (int i = train_n - 1; i > 0; --i)
      std::swap(order[i], order[state->rng().next_below(static_cast<std::uint64_t>(i + 1))]);

    EpochMetrics row;
    row.epoch = epoch;
    int steps = 0;
    for (int start = 0; start < train_n; start += config.batch_size) {
      int end = std::min(train_n, start + config.batch_size);
      if (train_n - end == 1) end = train_n;  // fold a trailing singleton into this batch
      const int bsz = end - start;
      if (bsz < 2) break;

      align::TrainBatch batch;
      batch.points_per_cloud = points_per_cloud;
      batch.views_per_sample = config.views;
      batch.points = Matrix(bsz * points_per_cloud, 3);
      batch.raw_views = Matrix(bsz * config.views, config.dim);
      batch.text = Matrix(bsz, config.dim);
      for (int b = 0; b < bsz; ++b) {
        const int pos = order[start + b];
        const int ci = ds.train_indices[pos];
        const data::CorpusEntry& entry = ds.corpus[ci];
        const Matrix pts = entry.cloud.as_matrix();
        for (int r = 0; r < points_per_cloud; ++r)
          for (int c = 0; c < 3; ++c) batch.points.at(b * points_per_cloud + r, c) = pts.at(r, c);
        for (int v = 0; v < config.views; ++v) {
          const int cached_row = cache.row_of(ci, angles_of[pos][v]);
          for (int c = 0; c < config.dim; ++c)
            batch.raw_views.at(b * config.views + v, c) = cache.rows.at(cached_row, c);
          batch.view_angles.push_back(angles_of[pos][v]);
          batch.view_depths.push_back(cache.mean_depths[cached_row]);
        }
        const int sub = ds.tree.sub_code.at(entry.sub);
        for (int c = 0; c < config.dim; ++c) batch.text.at(b, c) = text_bank.embeddings.at(sub, c);
        batch.parent_codes.push_back(ds.tree.parent_code.at(entry.parent));
      }

      const align::TrainStepMetrics sm =
          align::train_step(*state, batch, weights, opt, config.independent_alignment);
      row.total += sm.total;
      row.cloud_joint += sm.cloud_joint;
      row.cloud_text += sm.cloud_text;
      row.text_joint += sm.text_joint;
      row.classed += sm.classed;
      row.learning_rate = sm.learning_rate;
      ++steps;
      if (end == train_n) break;
    }
    row.total /= steps;
    row.cloud_joint /= steps;
    row.cloud_text /= steps;
    row.text_joint /= steps;
    row.classed /= steps;

    state->save_checkpoint(paths.ckpt_last().string());
    state->quantize_to_storage();
    row.checkpoint = paths.ckpt_last().string();
    metrics_out << epoch_metrics_to_json(row) << "\n";
    metrics_out.flush();
    outcome.rows.push_back(row);
  }
  return outcome;
}

EvalOutcome run_eval(const std::string& run_dir, const std::vector<std::string>& split_files,
                     bool shrink_bank) {
  const RunPaths paths{fs::path(run_dir)};
  if (!fs::exists(paths.ckpt_last()))
    throw std::runtime_error("eval: missing checkpoint " + paths.ckpt_last().string());
  const RunConfig config = config_of_run(run_dir);
  const DatasetView ds = build_dataset(config);
  align::TrainState state = align::TrainState::load_checkpoint(paths.ckpt_last().string());

  const enc::FrozenEncoder text_enc = enc::FrozenEncoder::stub_text(config.dim);
  const enc::FrozenEncoder image_enc = enc::FrozenEncoder::stub_image(config.dim);
  const eval::LabelBank bank =
      eval::build_label_bank(ds.tree.subs_by_code(), eval::kDefaultPromptTemplate, text_enc);

  std::vector<int> eval_indices = ds.heldout_indices;
  eval_indices.insert(eval_indices.end(), ds.zeroshot_indices.begin(), ds.zeroshot_indices.end());
  if (eval_indices.empty()) throw std::runtime_error("eval: no held-out samples configured");

  const Matrix cloud_embs = encode_clouds(state, ds.corpus, eval_indices);
  Matrix sims(cloud_embs.rows(), bank.size());
  std::vector<int> labels(eval_indices.size());
  for (int i = 0; i < cloud_embs.rows(); ++i) {
    const auto row_sims = eval::bank_similarities(embedding_from_row(cloud_embs, i), bank);
    for (int c = 0; c < bank.size(); ++c) sims.at(i, c) = row_sims[c];
    labels[i] = ds.tree.sub_code.at(ds.corpus[eval_indices[i]].sub);
  }

  EvalOutcome out;
  const eval::EvalSplit all{"All", {}};
  out.all = eval::apply_split(sims, labels, bank, all, shrink_bank);

  auto subset_metrics = [&](const std::vector<int>& subset, const std::string& name) {
    eval::SplitMetrics m;
    m.split = name;
    if (subset.empty()) return m;
    Matrix s(static_cast<int>(subset.size()), bank.size());
    std::vector<int> l(subset.size());
    int r = 0;
    for (std::size_t i = 0; i < eval_indices.size(); ++i) {
      if (std::find(subset.begin(), subset.end(), eval_indices[i]) == subset.end()) continue;
      for (int c = 0; c < bank.size(); ++c) s.at(r, c) = sims.at(static_cast<int>(i), c);
      l[r] = labels[i];
      ++r;
    }
    return eval::apply_split(s, l, bank, {name, {}}, shrink_bank);
  };
  out.trained_heldout = subset_metrics(ds.heldout_indices, "TrainedHeldout");
  out.zeroshot_subs = subset_metrics(ds.zeroshot_indices, "ZeroshotSubs");

  // Self-view retrieval over the clouds the run organized during training:
  // one random candidate view per cloud queries a gallery of their cloud
  // embeddings. Held-out generalization is what the accuracy metrics above
  // measure; this one checks the image-side alignment directly.
  const Matrix train_embs = encode_clouds(state, ds.corpus, ds.train_indices);
  std::vector<std::pair<std::string, enc::Embedding>> gallery;
  for (std::size_t i = 0; i < ds.train_indices.size(); ++i)
    gallery.emplace_back(ds.corpus[ds.train_indices[i]].cloud.id,
                         embedding_from_row(train_embs, static_cast<int>(i)));
  int hits = 0;
  for (std::size_t i = 0; i < ds.train_indices.size(); ++i) {
    const int ci = ds.train_indices[i];
    const data::CandidateViewSet cands = data::render_candidate_views(
        ds.corpus[ci].cloud, config.render.height, config.render.width);
    const enc::Embedding query =
        fused_view_embedding(state, image_enc, cands.views[query_angle_for(config.seed, ci)]);
    const eval::RetrievalResult res = eval::retrieve_by_embedding(
        ds.corpus[ci].cloud.id, query, gallery, std::min<int>(3, gallery.size()));
    for (const auto& [id, sim] : res.ranked)
      if (id == ds.corpus[ci].cloud.id) {
        ++hits;
        break;
      }
  }
  out.retrieval_hit3 = static_cast<double>(hits) / static_cast<double>(ds.train_indices.size());

  for (const auto& file : split_files) {
    const eval::EvalSplit split = eval::load_split_json(file);
    out.file_splits.push_back(eval::apply_split(sims, labels, bank, split, shrink_bank));
  }
  return out;
}

eval::RetrievalResult run_retrieve(const std::string& run_dir, const std::string& image_path, int k) {
  const RunPaths paths{fs::path(run_dir)};
  const RunConfig config = config_of_run(run_dir);
  const DatasetView ds = build_dataset(config);
  align::TrainState state = align::TrainState::load_checkpoint(paths.ckpt_last().string());
  const enc::FrozenEncoder image_enc = enc::FrozenEncoder::stub_image(config.dim);

  const data::ViewImage view = data::load_view_json(image_path);
  const enc::Embedding query = fused_view_embedding(state, image_enc, view);

  std::vector<int> all_indices(ds.corpus.size());
  std::iota(all_indices.begin(), all_indices.end(), 0);
  const Matrix embs = encode_clouds(state, ds.corpus, all_indices);
  std::vector<std::pair<std::string, enc::Embedding>> gallery;
  for (std::size_t i = 0; i < ds.corpus.size(); ++i)
    gallery.emplace_back(ds.corpus[i].cloud.id, embedding_from_row(embs, static_cast<int>(i)));
  return eval::retrieve_by_embedding(image_path, query, gallery, k);
}

LlmOutcome run_llm_train(const RunConfig& config, const std::string& run_dir) {
  const RunPaths paths{fs::path(run_dir)};
  if (!fs::exists(paths.ckpt_last()))
    throw std::runtime_error("llm-train: missing pretrain checkpoint " + paths.ckpt_last().string());
  align::TrainState pretrained = align::TrainState::load_checkpoint(paths.ckpt_last().string());
  const DatasetView ds = build_dataset(config);

  // Captions: evenly spaced corpus entries, one line each.
  std::vector<std::pair<std::string, std::string>> captions;
  const int records = std::min<int>(config.llm.records, static_cast<int>(ds.corpus.size()));
  for (int k = 0; k < records; ++k) {
    const int idx = static_cast<int>(static_cast<long>(k) * ds.corpus.size() / records);
    captions.emplace_back(ds.corpus[idx].cloud.id, "a 3D model of a " + ds.corpus[idx].sub + ".");
  }
  llm::save_captions_jsonl(paths.captions().string(), captions);

  llm::Vocab vocab;
  const std::vector<llm::ConversationRecord> conversations = llm::build_conversations(
      captions, llm::default_instruction_templates(), vocab, config.llm.conversation_seed);
  llm::save_conversations_jsonl(paths.conversations().string(), conversations);

  llm::BridgeConfig bc;
  bc.point_tokens = config.llm.point_tokens;
  bc.projector_two_layer = config.llm.projector_two_layer;
  bc.lm.dim = config.llm.dim;
  bc.lm.blocks = config.llm.blocks;
  bc.lm.max_seq = config.llm.max_seq;
  llm::BridgeState bridge(bc, pretrained, vocab, derive_seed(config.seed, "bridge"));

  std::map<std::string, data::PointCloud> clouds;
  for (const auto& e : ds.corpus) clouds[e.cloud.id] = e.cloud;

  llm::BridgeLrConfig lrcfg;
  lrcfg.lr_main = config.llm.lr_main;
  lrcfg.lr_low = config.llm.lr_low;
  lrcfg.weight_decay = config.llm.weight_decay;

  std::vector<std::vector<const llm::ConversationRecord*>> batches;
  for (std::size_t start = 0; start < conversations.size();
       start += static_cast<std::size_t>(config.llm.batch_size)) {
    std::vector<const llm::ConversationRecord*> batch;
    for (std::size_t i = start;
         i < std::min(conversations.size(), start + static_cast<std::size_t>(config.llm.batch_size));
         ++i)
      batch.push_back(&conversations[i]);
    batches.push_back(std::move(batch));
  }

  LlmOutcome out;
  std::ofstream lm_metrics(paths.llm_metrics());
  for (int s = 0; s < config.llm.warmup_steps; ++s) {
    const auto m = llm::lm_warmup_step(bridge, batches[s % batches.size()], clouds, lrcfg);
    out.warmup_losses.push_back(m.loss);
    lm_metrics << json{{"phase", "warmup"}, {"step", s}, {"loss", m.loss}}.dump() << "\n";
  }
  out.frozen_checksum_before = bridge.lm().checksum();
  for (int s = 0; s < config.llm.bridge_steps; ++s) {
    const auto m = llm::llm_train_step(bridge, batches[s % batches.size()], clouds, lrcfg);
    out.bridge_losses.push_back(m.loss);
    lm_metrics << json{{"phase", "bridge"}, {"step", s}, {"loss", m.loss}}.dump() << "\n";
  }
  out.frozen_checksum_after = bridge.lm().checksum();

  bridge.save_checkpoint(paths.bridge().string());
  out.bridge_checkpoint = paths.bridge().string();

  std::ofstream decodes_out(paths.decodes());
  for (const auto& record : conversations) {
    const llm::DecodeResult r = llm::decode_record(bridge, record, clouds.at(record.id));
    decodes_out << json{{"id", r.id}, {"prediction", r.prediction}, {"exact_match", r.exact_match}}
                       .dump()
                << "\n";
    out.decodes.push_back(r);
    out.exact_matches += r.exact_match ? 1 : 0;
    ++out.total;
  }
  return out;
}

std::vector<llm::DecodeResult> run_llm_decode(const std::string& run_dir,
                                              const std::string& conversations_path) {
  const RunPaths paths{fs::path(run_dir)};
  const RunConfig config = config_of_run(run_dir);
  align::TrainState pretrained = align::TrainState::load_checkpoint(paths.ckpt_last().string());
  llm::BridgeState bridge = llm::BridgeState::load_checkpoint(paths.bridge().string(), pretrained);
  const DatasetView ds = build_dataset(config);
  std::map<std::string, data::PointCloud> clouds;
  for (const auto& e : ds.corpus) clouds[e.cloud.id] = e.cloud;

  const std::vector<llm::ConversationRecord> records =
      llm::load_conversations_jsonl(conversations_path, bridge.vocab());
  std::vector<llm::DecodeResult> out;
  for (const auto& record : records) {
    auto it = clouds.find(record.id);
    if (it == clouds.end())
      throw std::runtime_error("llm-decode: no point cloud for record '" + record.id + "'");
    out.push_back(llm::decode_record(bridge, record, it->second));
  }
  return out;
}

namespace {
int guarded(std::ostream& err, const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}
}  // namespace

int cmd_pretrain(const std::string& config_path, const std::string& out_override, bool resume,
                 std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    RunConfig config = load_run_config(config_path);
    if (!out_override.empty()) config.out_dir = out_override;
    const PretrainOutcome outcome = run_pretrain(config, resume);
    out << "run: " << outcome.run_dir << "\n";
    if (!outcome.rows.empty())
      out << "epochs: " << outcome.rows.back().epoch << " final_loss: " << outcome.rows.back().total
          << "\n";
  });
}

int cmd_eval_zeroshot(const std::string& run_dir, const std::vector<std::string>& split_files,
                      bool keep_full_bank, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const EvalOutcome o = run_eval(run_dir, split_files, !keep_full_bank);
    out << eval::metrics_to_json(o.all) << "\n";
    if (o.trained_heldout.n > 0) out << eval::metrics_to_json(o.trained_heldout) << "\n";
    if (o.zeroshot_subs.n > 0) out << eval::metrics_to_json(o.zeroshot_subs) << "\n";
    for (const auto& m : o.file_splits) out << eval::metrics_to_json(m) << "\n";
    out << json{{"retrieval_hit3", o.retrieval_hit3}}.dump() << "\n";
    std::ofstream report(fs::path(run_dir) / "eval_report.jsonl");
    report << eval::metrics_to_json(o.all) << "\n";
    for (const auto& m : o.file_splits) report << eval::metrics_to_json(m) << "\n";
  });
}

int cmd_retrieve(const std::string& run_dir, const std::string& image_path, int k, std::ostream& out,
                 std::ostream& err) {
  return guarded(err, [&] {
    const eval::RetrievalResult r = run_retrieve(run_dir, image_path, k);
    for (std::size_t i = 0; i < r.ranked.size(); ++i)
      out << (i + 1) << ". " << r.ranked[i].first << " " << r.ranked[i].second << "\n";
  });
}

int cmd_build_tree(const std::string& pairs_path, const std::string& manifest_path,
                   const std::string& out_path, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    std::vector<std::pair<std::string, std::optional<std::string>>> pairs;
    if (!pairs_path.empty()) {
      const json j = json::parse(io::read_text_file(pairs_path));
      for (const auto& item : j) {
        if (item.size() < 1 || item.size() > 2)
          throw std::runtime_error("pairs file: each entry must be [parent] or [parent, sub]");
        if (item.size() == 2 && !item[1].is_null())
          pairs.emplace_back(item[0].get<std::string>(), item[1].get<std::string>());
        else
          pairs.emplace_back(item[0].get<std::string>(), std::nullopt);
      }
    } else if (!manifest_path.empty()) {
      for (const auto& r : data::load_manifest(manifest_path)) pairs.emplace_back(r.parent, r.sub);
    } else {
      throw std::runtime_error("build-tree: provide --pairs or --manifest");
    }
    data::save_tree_json(out_path, data::build_category_tree(pairs));
    out << "tree: " << out_path << "\n";
  });
}

int cmd_make_conversations(const std::string& captions_path, const std::string& templates_path,
                           std::uint64_t seed, const std::string& out_path, std::ostream& out,
                           std::ostream& err) {
  return guarded(err, [&] {
    const auto captions = llm::load_captions_jsonl(captions_path);
    std::vector<std::string> templates = llm::default_instruction_templates();
    if (!templates_path.empty())
      templates = json::parse(io::read_text_file(templates_path)).get<std::vector<std::string>>();
    llm::Vocab vocab;
    llm::save_conversations_jsonl(out_path,
                                  llm::build_conversations(captions, templates, vocab, seed));
    out << "conversations: " << out_path << "\n";
  });
}

int cmd_llm_train(const std::string& config_path, const std::string& run_dir, std::ostream& out,
                  std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig config = load_run_config(config_path);
    const LlmOutcome o = run_llm_train(config, run_dir);
    out << "bridge: " << o.bridge_checkpoint << "\n";
    out << "exact_match: " << o.exact_matches << "/" << o.total << "\n";
    out << "frozen_lm_checksum_stable: "
        << (o.frozen_checksum_before == o.frozen_checksum_after ? "yes" : "no") << "\n";
  });
}

int cmd_llm_decode(const std::string& run_dir, const std::string& conversations_path,
                   const std::string& out_path, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto results = run_llm_decode(run_dir, conversations_path);
    std::ofstream file;
    if (!out_path.empty()) file.open(out_path);
    for (const auto& r : results) {
      const std::string line =
          json{{"id", r.id}, {"prediction", r.prediction}, {"exact_match", r.exact_match}}.dump();
      out << line << "\n";
      if (file.is_open()) file << line << "\n";
    }
  });
}

}  // namespace jm3d::cli
