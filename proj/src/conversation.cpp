#include "jm3d/llm/conversation.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "jm3d/core/rng.hpp"

namespace jm3d::llm {

const char* layout_name(Layout layout) {
  return layout == Layout::PointFirst ? "point-first" : "point-last";
}

Layout layout_from_name(const std::string& name) {
  if (name == "point-first") return Layout::PointFirst;
  if (name == "point-last") return Layout::PointLast;
  throw std::runtime_error("unknown conversation layout: " + name);
}

const std::vector<std::string>& default_instruction_templates() {
  static const std::vector<std::string> templates = {
      "What is this?",
      "What is it?",
      "Describe this 3D object.",
      "Give a short caption for this model.",
      "What does this point cloud show?",
      "Summarize the shape in one sentence.",
      "Identify the object.",
      "Tell me what you see here.",
      "Provide a brief description of this model.",
      "What kind of object is represented?",
      "Caption this 3D shape.",
  };
  return templates;
}

ConversationRecord render_conversation(const std::string& id, const std::string& instruction,
                                       const std::string& caption, Layout layout, Vocab& vocab) {
  if (caption.find(kPointToken) != std::string::npos)
    throw std::runtime_error("caption contains the point placeholder literal: " + id);
  if (instruction.find(kPointToken) != std::string::npos)
    throw std::runtime_error("instruction template contains the point placeholder literal");

  for (const auto& w : tokenize_words(instruction)) vocab.add(w);
  for (const auto& w : tokenize_words(caption)) vocab.add(w);

  ConversationRecord r;
  r.id = id;
  r.instruction = instruction;
  r.caption = caption;
  r.layout = layout;

  const auto instr_ids = vocab.encode_words(instruction);
  const auto caption_ids = vocab.encode_words(caption);

  r.token_ids.push_back(vocab.user_id());
  if (layout == Layout::PointFirst) {
    r.token_ids.push_back(vocab.point_id());
    r.token_ids.push_back(vocab.newline_id());
    r.token_ids.insert(r.token_ids.end(), instr_ids.begin(), instr_ids.end());
  } else {
    r.token_ids.insert(r.token_ids.end(), instr_ids.begin(), instr_ids.end());
    r.token_ids.push_back(vocab.point_id());
    r.token_ids.push_back(vocab.newline_id());
  }
  r.token_ids.push_back(vocab.assistant_id());
  r.loss_mask.assign(r.token_ids.size(), false);
  for (const int id : caption_ids) {
    r.token_ids.push_back(id);
    r.loss_mask.push_back(true);
  }
  r.token_ids.push_back(vocab.eos_id());
  r.loss_mask.push_back(true);
  return r;
}

std::vector<ConversationRecord> build_conversations(
    const std::vector<std::pair<std::string, std::string>>& captions,
    const std::vector<std::string>& templates, Vocab& vocab, std::uint64_t seed) {
  if (captions.empty()) throw std::runtime_error("build_conversations: no captions");
  if (templates.empty()) throw std::runtime_error("build_conversations: no instruction templates");
  std::vector<ConversationRecord> out;
  out.reserve(captions.size());
  for (std::size_t i = 0; i < captions.size(); ++i) {
    Rng rng(derive_seed(seed, "conversation", i));
    const auto& tmpl = templates[rng.next_below(templates.size())];
    const Layout layout = rng.next_below(2) == 0 ? Layout::PointFirst : Layout::PointLast;
    out.push_back(render_conversation(captions[i].first, tmpl, captions[i].second, layout, vocab));
  }
  return out;
}

void save_conversations_jsonl(const std::string& path, const std::vector<ConversationRecord>& records) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write conversations: " + path);
  for (const auto& r : records) {
    nlohmann::json j;
    j["id"] = r.id;
    j["layout"] = layout_name(r.layout);
    j["instruction"] = r.instruction;
    j["caption"] = r.caption;
    os << j.dump() << "\n";
  }
}

std::vector<ConversationRecord> load_conversations_jsonl(const std::string& path, Vocab& vocab) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open conversations: " + path);
  std::vector<ConversationRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    out.push_back(render_conversation(j.at("id").get<std::string>(),
                                      j.at("instruction").get<std::string>(),
                                      j.at("caption").get<std::string>(),
                                      layout_from_name(j.at("layout").get<std::string>()), vocab));
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> load_captions_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open captions: " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    out.emplace_back(j.at("id").get<std::string>(), j.at("caption").get<std::string>());
  }
  return out;
}

void save_captions_jsonl(const std::string& path,
                         const std::vector<std::pair<std::string, std::string>>& captions) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write captions: " + path);
  for (const auto& [id, caption] : captions) {
    nlohmann::json j;
    j["id"] = id;
    j["caption"] = caption;
    os << j.dump() << "\n";
  }
}

}  // namespace jm3d::llm
