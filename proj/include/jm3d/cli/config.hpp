#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jm3d/align/trainer.hpp"
#include "jm3d/data/synthetic.hpp"

namespace jm3d::cli {

inline constexpr const char* kCodeVersion = "0.1.0";

struct RenderConfig {
  int height = 16;
  int width = 16;
  bool operator==(const RenderConfig&) const = default;
};

struct LlmSection {
  int dim = 64;
  int blocks = 2;
  int point_tokens = 8;
  int max_seq = 96;
  bool projector_two_layer = false;
  double lr_main = 2e-3;
  double lr_low = 2e-5;
  double weight_decay = 0.0;
  int warmup_steps = 250;
  int bridge_steps = 500;
  int records = 20;
  int batch_size = 20;
  std::uint64_t conversation_seed = 11;
  bool operator==(const LlmSection&) const = default;
};

/// Run configuration. Strictly parsed: unknown keys anywhere are rejected,
/// and every numeric field is range-checked with its field name in the error.
struct RunConfig {
  std::uint64_t seed = 7;
  std::string out_dir = "runs/out";
  int dim = 32;
  int views = 2;
  double omega_deg = 60.0;
  double temperature = 0.04;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double lambda3 = 1.0;
  int batch_size = 16;
  int epochs = 200;
  double learning_rate = 5e-3;
  double weight_decay = 1e-2;
  std::string lr_schedule = "cosine";  // cosine | constant
  int corpus_parents = 6;
  int corpus_subs_per_parent = 2;
  int corpus_samples_per_sub = 10;
  int corpus_points = 256;
  std::string manifest_path;  // when set, overrides the synthetic corpus spec
  RenderConfig render;
  std::vector<int> point_widths{64, 128};
  std::vector<int> head_widths{64};
  int classifier_hidden = 32;
  bool fixed_views = false;
  bool independent_alignment = false;
  int holdout_samples_per_sub = 2;
  std::vector<std::string> holdout_subs{"hollow ball", "tall box"};
  std::vector<std::string> split_files;
  LlmSection llm;

  bool operator==(const RunConfig&) const = default;

  data::CorpusSpec corpus_spec() const {
    return {corpus_parents, corpus_subs_per_parent, corpus_samples_per_sub, corpus_points, seed};
  }
  align::ModelConfig model_config(int parent_classes) const {
    return {dim, point_widths, head_widths, classifier_hidden, parent_classes, 2.1};
  }
};

RunConfig parse_run_config(const std::string& json_text);
std::string serialize_run_config(const RunConfig& config);

/// Reads, parses and validates; the JM3D_OUT environment variable overrides
/// out_dir when set.
RunConfig load_run_config(const std::string& path);

void validate_run_config(const RunConfig& config);

/// FNV-1a over the canonical serialized form.
std::uint64_t config_hash(const RunConfig& config);

/// Full-scale hyperparameter profile (epochs 250, batch 128, 8192 points,
/// full encoder widths) and the CI-sized desk profile.
RunConfig desk_profile();
RunConfig full_scale_profile();

}  // namespace jm3d::cli
