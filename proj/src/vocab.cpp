#include "jm3d/llm/vocab.hpp"

#include <cctype>
#include <stdexcept>

namespace jm3d::llm {

std::vector<std::string> tokenize_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (const char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocab::Vocab() {
  point_id_ = add(kPointToken);
  eos_id_ = add(kEosToken);
  unk_id_ = add(kUnkToken);
  newline_id_ = add(kNewlineToken);
  user_id_ = add(kUserToken);
  assistant_id_ = add(kAssistantToken);
}

int Vocab::add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_[token] = id;
  return id;
}

void Vocab::add_corpus_text(const std::string& text) {
  for (const auto& w : tokenize_words(text)) add(w);
}

int Vocab::id_of(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? unk_id_ : it->second;
}

const std::string& Vocab::token_of(int id) const {
  if (id < 0 || id >= size()) throw std::runtime_error("vocab: id out of range");
  return tokens_[id];
}

std::vector<int> Vocab::encode_words(const std::string& text) const {
  std::vector<int> out;
  for (const auto& w : tokenize_words(text)) out.push_back(id_of(w));
  return out;
}

std::string Vocab::decode_words(const std::vector<int>& ids) const {
  std::string out;
  for (const int id : ids) {
    if (id == point_id_ || id == eos_id_ || id == newline_id_ || id == user_id_ ||
        id == assistant_id_)
      continue;
    if (!out.empty()) out.push_back(' ');
    out += token_of(id);
  }
  return out;
}

}  // namespace jm3d::llm
