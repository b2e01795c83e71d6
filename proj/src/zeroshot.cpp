#include "jm3d/eval/zeroshot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace jm3d::eval {

int LabelBank::code_of(const std::string& name) const {
  for (int i = 0; i < size(); ++i)
    if (categories[i] == name) return i;
  throw std::runtime_error("label bank: unknown category '" + name + "'");
}

LabelBank build_label_bank(const std::vector<std::string>& categories, const std::string& prompt_template,
                           const enc::FrozenEncoder& text_encoder) {
  if (categories.empty()) throw std::runtime_error("build_label_bank: no categories");
  const auto pos = prompt_template.find("[CLASS]");
  if (pos == std::string::npos)
    throw std::runtime_error("build_label_bank: template lacks the [CLASS] placeholder");
  std::set<std::string> seen;
  LabelBank bank;
  bank.categories = categories;
  bank.prompt_template = prompt_template;
  bank.embeddings = Matrix(static_cast<int>(categories.size()), text_encoder.dim());
  for (int i = 0; i < bank.size(); ++i) {
    if (!seen.insert(categories[i]).second)
      throw std::runtime_error("build_label_bank: duplicate category '" + categories[i] + "'");
    std::string prompt = prompt_template;
    prompt.replace(prompt.find("[CLASS]"), 7, categories[i]);
    enc::Embedding e = text_encoder.encode_text(prompt);
    e.l2_normalize();
    for (int c = 0; c < e.dim(); ++c) bank.embeddings.at(i, c) = e.vec[c];
  }
  return bank;
}

std::vector<double> bank_similarities(const enc::Embedding& cloud_embedding, const LabelBank& bank) {
  if (cloud_embedding.dim() != bank.embeddings.cols())
    throw std::runtime_error("bank_similarities: dimension mismatch");
  const double qn = std::max(cloud_embedding.norm(), 1e-12);
  std::vector<double> sims(bank.size());
  for (int i = 0; i < bank.size(); ++i) {
    double dot = 0.0;
    for (int c = 0; c < bank.embeddings.cols(); ++c)
      dot += bank.embeddings.at(i, c) * cloud_embedding.vec[c];
    sims[i] = dot / qn;  // bank rows are unit norm already
  }
  return sims;
}

std::vector<ScoredCategory> classify_zeroshot(const enc::Embedding& cloud_embedding,
                                              const LabelBank& bank, int k) {
  if (k < 1 || k > bank.size()) throw std::runtime_error("classify_zeroshot: k out of range");
  const std::vector<double> sims = bank_similarities(cloud_embedding, bank);
  std::vector<int> order(bank.size());
  for (int i = 0; i < bank.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (sims[a] != sims[b]) return sims[a] > sims[b];
    return a < b;  // ties: category code ascending
  });
  std::vector<ScoredCategory> out;
  out.reserve(k);
  for (int i = 0; i < k; ++i)
    out.push_back({order[i], bank.categories[order[i]], sims[order[i]]});
  return out;
}

EvalSplit load_split_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open split file: " + path);
  nlohmann::json j;
  is >> j;
  EvalSplit s;
  s.name = j.at("name").get<std::string>();
  s.excluded = j.at("excluded").get<std::vector<std::string>>();
  return s;
}

void save_split_json(const std::string& path, const EvalSplit& split) {
  nlohmann::json j;
  j["name"] = split.name;
  j["excluded"] = split.excluded;
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write split file: " + path);
  os << j.dump(2) << "\n";
}

void validate_split_progression(const EvalSplit& medium, const EvalSplit& hard) {
  const std::set<std::string> hard_set(hard.excluded.begin(), hard.excluded.end());
  for (const auto& name : medium.excluded)
    if (!hard_set.count(name))
      throw std::runtime_error("split progression violated: '" + name +
                               "' excluded by Medium but not by Hard");
}

SplitMetrics apply_split(const Matrix& similarities, const std::vector<int>& labels,
                         const LabelBank& bank, const EvalSplit& split, bool shrink_bank) {
  if (similarities.rows() != static_cast<int>(labels.size()))
    throw std::runtime_error("apply_split: label count mismatch");
  if (similarities.cols() != bank.size())
    throw std::runtime_error("apply_split: similarity width does not match bank");

  std::vector<bool> excluded(bank.size(), false);
  for (const auto& name : split.excluded) excluded[bank.code_of(name)] = true;

  std::vector<int> candidates;
  for (int c = 0; c < bank.size(); ++c)
    if (!shrink_bank || !excluded[c]) candidates.push_back(c);

  SplitMetrics m;
  m.split = split.name;
  int hits1 = 0, hits5 = 0;
  for (int i = 0; i < similarities.rows(); ++i) {
    const int truth = labels[i];
    if (truth < 0 || truth >= bank.size()) throw std::runtime_error("apply_split: label out of range");
    if (excluded[truth]) continue;  // sample dropped
    std::vector<int> order = candidates;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (similarities.at(i, a) != similarities.at(i, b))
        return similarities.at(i, a) > similarities.at(i, b);
      return a < b;
    });
    ++m.n;
    if (order[0] == truth) ++hits1;
    const int top = std::min<std::size_t>(5, order.size());
    for (int r = 0; r < top; ++r)
      if (order[r] == truth) {
        ++hits5;
        break;
      }
  }
  if (m.n == 0)
    throw std::runtime_error("apply_split: split '" + split.name + "' excludes every sample");
  m.top1 = static_cast<double>(hits1) / m.n;
  m.top5 = static_cast<double>(hits5) / m.n;
  return m;
}

std::string metrics_to_json(const SplitMetrics& m) {
  nlohmann::json j;
  j["split"] = m.split;
  j["top1"] = m.top1;
  j["top5"] = m.top5;
  j["n"] = m.n;
  return j.dump();
}

SplitMetrics metrics_from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  SplitMetrics m;
  m.split = j.at("split").get<std::string>();
  m.top1 = j.at("top1").get<double>();
  m.top5 = j.at("top5").get<double>();
  m.n = j.at("n").get<int>();
  return m;
}

}  // namespace jm3d::eval
