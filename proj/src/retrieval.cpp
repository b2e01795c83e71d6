#include "jm3d/eval/retrieval.hpp"

#include <algorithm>
#include <stdexcept>

namespace jm3d::eval {

RetrievalResult retrieve_by_embedding(const std::string& query_id, const enc::Embedding& query,
                                      const std::vector<std::pair<std::string, enc::Embedding>>& gallery,
                                      int k) {
  if (gallery.empty()) throw std::runtime_error("retrieve: empty gallery");
  if (k < 1 || k > static_cast<int>(gallery.size()))
    throw std::runtime_error("retrieve: k out of range");
  std::vector<std::pair<double, int>> scored;
  scored.reserve(gallery.size());
  for (int i = 0; i < static_cast<int>(gallery.size()); ++i)
    scored.emplace_back(cosine(query, gallery[i].second), i);
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;  // ties: earlier gallery entry first
  });
  RetrievalResult out;
  out.query_id = query_id;
  out.ranked.reserve(k);
  for (int i = 0; i < k; ++i)
    out.ranked.emplace_back(gallery[scored[i].second].first, scored[i].first);
  return out;
}

}  // namespace jm3d::eval
