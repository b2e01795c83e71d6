#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "jm3d/cli/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Tri-modal (point cloud / image / text) alignment toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 7;
  app.add_option("--config", config_path, "Run configuration JSON")->envname("JM3D_CONFIG");
  app.add_option("--out", out_dir, "Output directory override");
  app.add_option("--seed", seed, "Seed override for commands that take one");

  auto* pretrain = app.add_subcommand("pretrain", "Train the tri-modal alignment model");
  bool resume = false;
  pretrain->add_flag("--resume", resume, "Continue an interrupted run from its last checkpoint");

  auto* evalcmd = app.add_subcommand("eval-zeroshot", "Zero-shot classification metrics");
  std::string run_dir;
  std::vector<std::string> split_files;
  bool keep_full_bank = false;
  evalcmd->add_option("--run", run_dir, "Run directory")->required();
  evalcmd->add_option("--split", split_files, "Split definition file(s)");
  evalcmd->add_flag("--keep-full-bank", keep_full_bank,
                    "Keep excluded categories as ranking candidates");

  auto* retrieve = app.add_subcommand("retrieve", "Image to point cloud retrieval");
  std::string image_path;
  int topk = 3;
  retrieve->add_option("--run", run_dir, "Run directory")->required();
  retrieve->add_option("--image", image_path, "Query view JSON file")->required();
  retrieve->add_option("-k", topk, "Results to return");

  auto* buildtree = app.add_subcommand("build-tree", "Build a category tree file");
  std::string pairs_path, manifest_path, tree_out = "tree.json";
  buildtree->add_option("--pairs", pairs_path, "JSON list of [parent, sub|null] pairs");
  buildtree->add_option("--manifest", manifest_path, "Triplet manifest to derive pairs from");
  buildtree->add_option("--out-file", tree_out, "Output path");

  auto* makeconv = app.add_subcommand("make-conversations", "Build instruction conversations");
  std::string captions_path, templates_path, conv_out = "conversations.jsonl";
  makeconv->add_option("--captions", captions_path, "Captions JSONL ({id, caption})")->required();
  makeconv->add_option("--templates", templates_path, "Instruction templates JSON array");
  makeconv->add_option("--out-file", conv_out, "Output path");

  auto* llmtrain = app.add_subcommand("llm-train", "Train the point-token language bridge");
  llmtrain->add_option("--run", run_dir, "Run directory with a pretrain checkpoint")->required();

  auto* llmdecode = app.add_subcommand("llm-decode", "Greedy decode conversations");
  std::string conv_path, decode_out;
  llmdecode->add_option("--run", run_dir, "Run directory with a bridge checkpoint")->required();
  llmdecode->add_option("--conversations", conv_path, "Conversations JSONL")->required();
  llmdecode->add_option("--out-file", decode_out, "Also write decodes to this path");

  CLI11_PARSE(app, argc, argv);

  using namespace jm3d;
  if (pretrain->parsed())
    return cli::cmd_pretrain(config_path, out_dir, resume, std::cout, std::cerr);
  if (evalcmd->parsed())
    return cli::cmd_eval_zeroshot(run_dir, split_files, keep_full_bank, std::cout, std::cerr);
  if (retrieve->parsed()) return cli::cmd_retrieve(run_dir, image_path, topk, std::cout, std::cerr);
  if (buildtree->parsed())
    return cli::cmd_build_tree(pairs_path, manifest_path, tree_out, std::cout, std::cerr);
  if (makeconv->parsed())
    return cli::cmd_make_conversations(captions_path, templates_path, seed, conv_out, std::cout,
                                       std::cerr);
  if (llmtrain->parsed()) return cli::cmd_llm_train(config_path, run_dir, std::cout, std::cerr);
  if (llmdecode->parsed())
    return cli::cmd_llm_decode(run_dir, conv_path, decode_out, std::cout, std::cerr);
  std::cerr << "error: no subcommand\n";
  return 1;
}
