#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jm3d/llm/vocab.hpp"

namespace jm3d::llm {

enum class Layout { PointFirst, PointLast };

const char* layout_name(Layout layout);
Layout layout_from_name(const std::string& name);

/// One instruction-tuning sample. token_ids renders the conversation
///   USER: <point> <nl> {instruction} ASSISTANT: {caption} </s>   (point-first)
///   USER: {instruction} <point> <nl> ASSISTANT: {caption} </s>   (point-last)
/// with exactly one point placeholder. loss_mask is true exactly on the
/// caption tokens and the trailing end-of-sequence token.
struct ConversationRecord {
  std::string id;
  std::string instruction;
  std::string caption;
  Layout layout = Layout::PointFirst;
  std::vector<int> token_ids;
  std::vector<bool> loss_mask;
};

/// The stock instruction set (project-authored wording).
const std::vector<std::string>& default_instruction_templates();

/// Uniformly random template and layout per caption, deterministic per seed.
/// A caption or template containing the placeholder literal is an error.
std::vector<ConversationRecord> build_conversations(
    const std::vector<std::pair<std::string, std::string>>& captions,
    const std::vector<std::string>& templates, Vocab& vocab, std::uint64_t seed);

/// Re-renders token ids and mask for an already-chosen template and layout.
ConversationRecord render_conversation(const std::string& id, const std::string& instruction,
                                       const std::string& caption, Layout layout, Vocab& vocab);

/// Line-delimited {id, layout, instruction, caption} records.
void save_conversations_jsonl(const std::string& path, const std::vector<ConversationRecord>& records);
std::vector<ConversationRecord> load_conversations_jsonl(const std::string& path, Vocab& vocab);

/// Line-delimited {id, caption} records (caption importer).
std::vector<std::pair<std::string, std::string>> load_captions_jsonl(const std::string& path);
void save_captions_jsonl(const std::string& path,
                         const std::vector<std::pair<std::string, std::string>>& captions);

}  // namespace jm3d::llm
