#pragma once

#include <string>
#include <vector>

#include "jm3d/core/matrix.hpp"
#include "jm3d/enc/embedding.hpp"
#include "jm3d/enc/frozen.hpp"

namespace jm3d::eval {

inline constexpr const char* kDefaultPromptTemplate = "a 3D representation of [CLASS]";

/// Category names with their prompt-encoded, unit-norm text embeddings.
/// Category codes are positions in the name list.
struct LabelBank {
  std::vector<std::string> categories;
  std::string prompt_template;
  Matrix embeddings;  // K x D, unit rows

  int size() const { return static_cast<int>(categories.size()); }
  int code_of(const std::string& name) const;
};

/// Substitutes each category into the template at "[CLASS]" and encodes it.
/// The template must contain the placeholder; duplicate names are an error.
LabelBank build_label_bank(const std::vector<std::string>& categories, const std::string& prompt_template,
                           const enc::FrozenEncoder& text_encoder);

struct ScoredCategory {
  int code = 0;
  std::string category;
  double similarity = 0.0;
};

/// Top-k categories by cosine similarity, descending; ties break on category
/// code ascending.
std::vector<ScoredCategory> classify_zeroshot(const enc::Embedding& cloud_embedding,
                                              const LabelBank& bank, int k);

/// Cosine similarities of one embedding against every bank row.
std::vector<double> bank_similarities(const enc::Embedding& cloud_embedding, const LabelBank& bank);

struct EvalSplit {
  std::string name;  // All / Medium / Hard
  std::vector<std::string> excluded;
};

EvalSplit load_split_json(const std::string& path);
void save_split_json(const std::string& path, const EvalSplit& split);

/// Medium's exclusions must be a subset of Hard's.
void validate_split_progression(const EvalSplit& medium, const EvalSplit& hard);

struct SplitMetrics {
  std::string split;
  double top1 = 0.0;
  double top5 = 0.0;
  int n = 0;
};

/// Filters samples whose true label is excluded, optionally removes excluded
/// categories from the candidate set, and computes top-1/top-5 accuracy.
/// similarities is N x K (bank order); labels are bank codes.
SplitMetrics apply_split(const Matrix& similarities, const std::vector<int>& labels,
                         const LabelBank& bank, const EvalSplit& split, bool shrink_bank = true);

std::string metrics_to_json(const SplitMetrics& m);
SplitMetrics metrics_from_json(const std::string& text);

}  // namespace jm3d::eval
