#pragma once

#include <map>
#include <string>
#include <vector>

namespace jm3d::llm {

inline constexpr const char* kPointToken = "<point>";
inline constexpr const char* kEosToken = "</s>";
inline constexpr const char* kUnkToken = "<unk>";
inline constexpr const char* kNewlineToken = "<nl>";
inline constexpr const char* kUserToken = "USER:";
inline constexpr const char* kAssistantToken = "ASSISTANT:";

/// Whitespace word tokenizer; punctuation stays attached to its word, so a
/// caption round-trips exactly through tokenize + join-with-spaces as long as
/// it uses single spaces.
std::vector<std::string> tokenize_words(const std::string& text);

/// Bijective string <-> id map. Specials occupy the lowest ids; the rest are
/// added in first-seen corpus order.
class Vocab {
 public:
  Vocab();

  int add(const std::string& token);            // id of token, inserting if new
  void add_corpus_text(const std::string& text);

  int id_of(const std::string& token) const;    // unk id when missing
  const std::string& token_of(int id) const;
  bool contains(const std::string& token) const { return index_.count(token) > 0; }
  int size() const { return static_cast<int>(tokens_.size()); }

  int point_id() const { return point_id_; }
  int eos_id() const { return eos_id_; }
  int unk_id() const { return unk_id_; }
  int newline_id() const { return newline_id_; }
  int user_id() const { return user_id_; }
  int assistant_id() const { return assistant_id_; }

  std::vector<int> encode_words(const std::string& text) const;
  /// Joins word tokens with single spaces, skipping structural specials.
  std::string decode_words(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
  int point_id_, eos_id_, unk_id_, newline_id_, user_id_, assistant_id_;
};

}  // namespace jm3d::llm
