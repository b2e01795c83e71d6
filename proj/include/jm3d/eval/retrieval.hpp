#pragma once

#include <string>
#include <vector>

#include "jm3d/enc/embedding.hpp"

namespace jm3d::eval {

struct RetrievalResult {
  std::string query_id;
  std::vector<std::pair<std::string, double>> ranked;  // (cloud id, similarity), non-increasing
};

/// Ranks the gallery by cosine similarity against the query embedding. Ties
/// break on gallery insertion order. k must not exceed the gallery size.
RetrievalResult retrieve_by_embedding(const std::string& query_id, const enc::Embedding& query,
                                      const std::vector<std::pair<std::string, enc::Embedding>>& gallery,
                                      int k);

}  // namespace jm3d::eval
