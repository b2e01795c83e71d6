#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "jm3d/align/trainer.hpp"
#include "jm3d/cli/config.hpp"
#include "jm3d/data/category_tree.hpp"
#include "jm3d/data/synthetic.hpp"
#include "jm3d/enc/frozen.hpp"
#include "jm3d/eval/retrieval.hpp"
#include "jm3d/eval/zeroshot.hpp"
#include "jm3d/llm/bridge.hpp"

namespace jm3d::cli {

/// Corpus plus the train / held-out / never-trained-subcategory partition.
struct DatasetView {
  std::vector<data::CorpusEntry> corpus;
  data::CategoryTree tree;
  std::vector<int> train_indices;
  std::vector<int> heldout_indices;   // held-out samples of trained subcategories
  std::vector<int> zeroshot_indices;  // every sample of the held-out subcategories
};

DatasetView build_dataset(const RunConfig& config);

/// Frozen image features and mean depths for every (cloud, angle) pair,
/// computed once per run.
struct ViewFeatureCache {
  Matrix rows;                     // (corpus size * 30) x D
  std::vector<double> mean_depths;  // corpus size * 30
  int row_of(int corpus_index, int angle_index) const {
    return corpus_index * data::kCandidateViews + angle_index;
  }
};

ViewFeatureCache build_view_cache(const std::vector<data::CorpusEntry>& corpus,
                                  const RenderConfig& render, const enc::FrozenEncoder& image_encoder);

struct EpochMetrics {
  int epoch = 0;
  double total = 0.0;
  double cloud_joint = 0.0;
  double cloud_text = 0.0;
  double text_joint = 0.0;
  double classed = 0.0;
  double learning_rate = 0.0;
  std::string checkpoint;
};

std::string epoch_metrics_to_json(const EpochMetrics& m);
EpochMetrics epoch_metrics_from_json(const std::string& line);

struct PretrainOutcome {
  std::string run_dir;
  std::vector<EpochMetrics> rows;  // full history, including pre-resume epochs
};

/// Full pretraining run: dataset, caches, epoch loop with per-epoch view
/// redraw, checkpointing and append-only metric rows. With resume=true the
/// run continues from the last checkpoint after verifying the stored config
/// hash matches byte for byte. stop_after_epochs caps how many epochs this
/// session executes (an interruption; a later resume picks up from there).
PretrainOutcome run_pretrain(const RunConfig& config, bool resume = false, int stop_after_epochs = -1);

struct EvalOutcome {
  eval::SplitMetrics all;              // every evaluation sample, 12-way bank
  eval::SplitMetrics trained_heldout;  // held-out samples of trained subcategories
  eval::SplitMetrics zeroshot_subs;    // never-trained subcategories (n=0 when none)
  double retrieval_hit3 = 0.0;         // self-view retrieval hit@3 over the eval set
  std::vector<eval::SplitMetrics> file_splits;
};

EvalOutcome run_eval(const std::string& run_dir, const std::vector<std::string>& split_files = {},
                     bool shrink_bank = true);

eval::RetrievalResult run_retrieve(const std::string& run_dir, const std::string& image_path, int k);

struct LlmOutcome {
  int exact_matches = 0;
  int total = 0;
  std::uint64_t frozen_checksum_before = 0;
  std::uint64_t frozen_checksum_after = 0;
  std::vector<double> warmup_losses;
  std::vector<double> bridge_losses;
  std::string bridge_checkpoint;
  std::vector<llm::DecodeResult> decodes;
};

/// Language-model stage: builds conversations from the run corpus, warms the
/// tiny LM up end to end (the stand-in for starting from a pretrained model),
/// then runs the frozen-LM bridge steps and decodes every record.
LlmOutcome run_llm_train(const RunConfig& config, const std::string& run_dir);

std::vector<llm::DecodeResult> run_llm_decode(const std::string& run_dir,
                                              const std::string& conversations_path);

// CLI entry points: translate exceptions into stderr messages and a nonzero
// exit status.
int cmd_pretrain(const std::string& config_path, const std::string& out_override, bool resume,
                 std::ostream& out, std::ostream& err);
int cmd_eval_zeroshot(const std::string& run_dir, const std::vector<std::string>& split_files,
                      bool keep_full_bank, std::ostream& out, std::ostream& err);
int cmd_retrieve(const std::string& run_dir, const std::string& image_path, int k, std::ostream& out,
                 std::ostream& err);
int cmd_build_tree(const std::string& pairs_path, const std::string& manifest_path,
                   const std::string& out_path, std::ostream& out, std::ostream& err);
int cmd_make_conversations(const std::string& captions_path, const std::string& templates_path,
                           std::uint64_t seed, const std::string& out_path, std::ostream& out,
                           std::ostream& err);
int cmd_llm_train(const std::string& config_path, const std::string& run_dir, std::ostream& out,
                  std::ostream& err);
int cmd_llm_decode(const std::string& run_dir, const std::string& conversations_path,
                   const std::string& out_path, std::ostream& out, std::ostream& err);

}  // namespace jm3d::cli
