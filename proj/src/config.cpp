#include "jm3d/cli/config.hpp"

#include <cstdlib>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "jm3d/core/io.hpp"
#include "jm3d/core/rng.hpp"

namespace jm3d::cli {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key))
      throw std::runtime_error("config: unknown key '" + where + key + "'");
}

template <typename T>
void read_field(const json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

[[noreturn]] void fail_range(const std::string& field, const std::string& requirement) {
  throw std::runtime_error("config." + field + ": " + requirement);
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("config: malformed JSON: ") + e.what());
  }
  check_keys(j, {"seed", "out_dir", "dim", "views", "omega_deg", "temperature", "lambda1", "lambda2",
                 "lambda3", "batch_size", "epochs", "learning_rate", "weight_decay", "lr_schedule",
                 "corpus", "manifest_path", "render", "point_widths", "head_widths",
                 "classifier_hidden", "fixed_views", "independent_alignment",
                 "holdout_samples_per_sub", "holdout_subs", "split_files", "llm"},
             "");

  RunConfig c;
  read_field(j, "seed", c.seed);
  read_field(j, "out_dir", c.out_dir);
  read_field(j, "dim", c.dim);
  read_field(j, "views", c.views);
  read_field(j, "omega_deg", c.omega_deg);
  read_field(j, "temperature", c.temperature);
  read_field(j, "lambda1", c.lambda1);
  read_field(j, "lambda2", c.lambda2);
  read_field(j, "lambda3", c.lambda3);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "epochs", c.epochs);
  read_field(j, "learning_rate", c.learning_rate);
  read_field(j, "weight_decay", c.weight_decay);
  read_field(j, "lr_schedule", c.lr_schedule);
  read_field(j, "manifest_path", c.manifest_path);
  read_field(j, "point_widths", c.point_widths);
  read_field(j, "head_widths", c.head_widths);
  read_field(j, "classifier_hidden", c.classifier_hidden);
  read_field(j, "fixed_views", c.fixed_views);
  read_field(j, "independent_alignment", c.independent_alignment);
  read_field(j, "holdout_samples_per_sub", c.holdout_samples_per_sub);
  read_field(j, "holdout_subs", c.holdout_subs);
  read_field(j, "split_files", c.split_files);

  if (j.contains("corpus")) {
    const json& jc = j.at("corpus");
    check_keys(jc, {"parents", "subs_per_parent", "samples_per_sub", "points"}, "corpus.");
    read_field(jc, "parents", c.corpus_parents);
    read_field(jc, "subs_per_parent", c.corpus_subs_per_parent);
    read_field(jc, "samples_per_sub", c.corpus_samples_per_sub);
    read_field(jc, "points", c.corpus_points);
  }
  if (j.contains("render")) {
    const json& jr = j.at("render");
    check_keys(jr, {"height", "width"}, "render.");
    read_field(jr, "height", c.render.height);
    read_field(jr, "width", c.render.width);
  }
  if (j.contains("llm")) {
    const json& jl = j.at("llm");
    check_keys(jl, {"dim", "blocks", "point_tokens", "max_seq", "projector_two_layer", "lr_main",
                    "lr_low", "weight_decay", "warmup_steps", "bridge_steps", "records", "batch_size",
                    "conversation_seed"},
               "llm.");
    read_field(jl, "dim", c.llm.dim);
    read_field(jl, "blocks", c.llm.blocks);
    read_field(jl, "point_tokens", c.llm.point_tokens);
    read_field(jl, "max_seq", c.llm.max_seq);
    read_field(jl, "projector_two_layer", c.llm.projector_two_layer);
    read_field(jl, "lr_main", c.llm.lr_main);
    read_field(jl, "lr_low", c.llm.lr_low);
    read_field(jl, "weight_decay", c.llm.weight_decay);
    read_field(jl, "warmup_steps", c.llm.warmup_steps);
    read_field(jl, "bridge_steps", c.llm.bridge_steps);
    read_field(jl, "records", c.llm.records);
    read_field(jl, "batch_size", c.llm.batch_size);
    read_field(jl, "conversation_seed", c.llm.conversation_seed);
  }
  validate_run_config(c);
  return c;
}

void validate_run_config(const RunConfig& c) {
  if (c.out_dir.empty()) fail_range("out_dir", "must not be empty");
  if (c.dim < 2 || c.dim > 4096) fail_range("dim", "must be within [2, 4096]");
  if (c.views < 1 || c.views > 30) fail_range("views", "must be within [1, 30]");
  if (!(c.omega_deg > 0.0) || c.omega_deg > 360.0) fail_range("omega_deg", "must be within (0, 360]");
  if (!(c.temperature > 0.0)) fail_range("temperature", "must be positive");
  if (c.lambda1 < 0.0) fail_range("lambda1", "must be nonnegative");
  if (c.lambda2 < 0.0) fail_range("lambda2", "must be nonnegative");
  if (c.lambda3 < 0.0) fail_range("lambda3", "must be nonnegative");
  if (c.batch_size < 2) fail_range("batch_size", "must be >= 2 (contrastive terms need negatives)");
  if (c.epochs < 0) fail_range("epochs", "must be >= 0");
  if (c.learning_rate < 0.0) fail_range("learning_rate", "must be nonnegative");
  if (c.weight_decay < 0.0) fail_range("weight_decay", "must be nonnegative");
  if (c.lr_schedule != "cosine" && c.lr_schedule != "constant")
    fail_range("lr_schedule", "must be 'cosine' or 'constant'");
  if (c.corpus_parents < 1) fail_range("corpus.parents", "must be >= 1");
  if (c.corpus_subs_per_parent < 1) fail_range("corpus.subs_per_parent", "must be >= 1");
  if (c.corpus_samples_per_sub < 1) fail_range("corpus.samples_per_sub", "must be >= 1");
  if (c.corpus_points < 8) fail_range("corpus.points", "must be >= 8");
  if (c.render.height < 8 || c.render.height > 512) fail_range("render.height", "must be within [8, 512]");
  if (c.render.width < 8 || c.render.width > 512) fail_range("render.width", "must be within [8, 512]");
  for (const int w : c.point_widths)
    if (w < 1) fail_range("point_widths", "entries must be >= 1");
  for (const int w : c.head_widths)
    if (w < 1) fail_range("head_widths", "entries must be >= 1");
  if (c.classifier_hidden < 1) fail_range("classifier_hidden", "must be >= 1");
  if (c.holdout_samples_per_sub < 0 || c.holdout_samples_per_sub >= c.corpus_samples_per_sub)
    fail_range("holdout_samples_per_sub", "must be within [0, samples_per_sub)");
  if (c.llm.dim < 2) fail_range("llm.dim", "must be >= 2");
  if (c.llm.blocks < 1) fail_range("llm.blocks", "must be >= 1");
  if (c.llm.point_tokens < 0) fail_range("llm.point_tokens", "must be >= 0");
  if (c.llm.max_seq < 8) fail_range("llm.max_seq", "must be >= 8");
  if (c.llm.lr_main < 0.0) fail_range("llm.lr_main", "must be nonnegative");
  if (c.llm.lr_low < 0.0) fail_range("llm.lr_low", "must be nonnegative");
  if (c.llm.weight_decay < 0.0) fail_range("llm.weight_decay", "must be nonnegative");
  if (c.llm.warmup_steps < 0) fail_range("llm.warmup_steps", "must be >= 0");
  if (c.llm.bridge_steps < 0) fail_range("llm.bridge_steps", "must be >= 0");
  if (c.llm.records < 1) fail_range("llm.records", "must be >= 1");
  if (c.llm.batch_size < 1) fail_range("llm.batch_size", "must be >= 1");
}

std::string serialize_run_config(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["dim"] = c.dim;
  j["views"] = c.views;
  j["omega_deg"] = c.omega_deg;
  j["temperature"] = c.temperature;
  j["lambda1"] = c.lambda1;
  j["lambda2"] = c.lambda2;
  j["lambda3"] = c.lambda3;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["learning_rate"] = c.learning_rate;
  j["weight_decay"] = c.weight_decay;
  j["lr_schedule"] = c.lr_schedule;
  j["corpus"] = {{"parents", c.corpus_parents},
                 {"subs_per_parent", c.corpus_subs_per_parent},
                 {"samples_per_sub", c.corpus_samples_per_sub},
                 {"points", c.corpus_points}};
  j["manifest_path"] = c.manifest_path;
  j["render"] = {{"height", c.render.height}, {"width", c.render.width}};
  j["point_widths"] = c.point_widths;
  j["head_widths"] = c.head_widths;
  j["classifier_hidden"] = c.classifier_hidden;
  j["fixed_views"] = c.fixed_views;
  j["independent_alignment"] = c.independent_alignment;
  j["holdout_samples_per_sub"] = c.holdout_samples_per_sub;
  j["holdout_subs"] = c.holdout_subs;
  j["split_files"] = c.split_files;
  j["llm"] = {{"dim", c.llm.dim},
              {"blocks", c.llm.blocks},
              {"point_tokens", c.llm.point_tokens},
              {"max_seq", c.llm.max_seq},
              {"projector_two_layer", c.llm.projector_two_layer},
              {"lr_main", c.llm.lr_main},
              {"lr_low", c.llm.lr_low},
              {"weight_decay", c.llm.weight_decay},
              {"warmup_steps", c.llm.warmup_steps},
              {"bridge_steps", c.llm.bridge_steps},
              {"records", c.llm.records},
              {"batch_size", c.llm.batch_size},
              {"conversation_seed", c.llm.conversation_seed}};
  return j.dump(2);
}

RunConfig load_run_config(const std::string& path) {
  RunConfig c = parse_run_config(io::read_text_file(path));
  if (const char* env = std::getenv("JM3D_OUT"); env && *env) c.out_dir = env;
  return c;
}

std::uint64_t config_hash(const RunConfig& config) { return fnv1a(serialize_run_config(config)); }

RunConfig desk_profile() { return RunConfig{}; }

RunConfig full_scale_profile() {
  RunConfig c;
  c.dim = 512;
  c.views = 2;
  c.batch_size = 128;
  c.epochs = 250;
  c.learning_rate = 1e-3;
  c.weight_decay = 1e-2;
  c.temperature = 0.07;
  c.corpus_points = 8192;
  c.corpus_samples_per_sub = 64;
  c.point_widths = {64, 128};
  c.head_widths = {64};
  c.render = {64, 64};
  c.llm.point_tokens = 64;
  c.llm.max_seq = 160;
  c.out_dir = "runs/full";
  return c;
}

}  // namespace jm3d::cli
