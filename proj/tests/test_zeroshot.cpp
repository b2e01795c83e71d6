#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "jm3d/core/rng.hpp"
#include "jm3d/enc/point_encoder.hpp"
#include "jm3d/eval/retrieval.hpp"
#include "jm3d/eval/zeroshot.hpp"

using namespace jm3d;
using namespace jm3d::eval;

namespace {

enc::Embedding random_unit(int dim, std::uint64_t seed) {
  Rng rng(seed);
  enc::Embedding e;
  e.vec.resize(dim);
  for (auto& x : e.vec) x = rng.next_gaussian();
  e.l2_normalize();
  return e;
}

/// Independent oracle: cosine against every bank row, full sort, similarity
/// descending with ties broken by code ascending.
std::vector<int> brute_force_ranking(const enc::Embedding& query, const LabelBank& bank) {
  std::vector<double> sims(bank.size());
  for (int i = 0; i < bank.size(); ++i) {
    enc::Embedding row;
    row.vec.assign(bank.embeddings.row_ptr(i), bank.embeddings.row_ptr(i) + bank.embeddings.cols());
    sims[i] = enc::cosine(query, row);
  }
  std::vector<int> order(bank.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (sims[a] != sims[b]) return sims[a] > sims[b];
    return a < b;
  });
  return order;
}

}  // namespace

TEST_CASE("label bank: template substitution, duplicates, norms") {
  const enc::FrozenEncoder text = enc::FrozenEncoder::stub_text(16);
  const LabelBank bank = build_label_bank({"airplane"}, kDefaultPromptTemplate, text);
  // The substituted prompt must match encoding the full string directly.
  const enc::Embedding direct = text.encode_text("a 3D representation of airplane");
  for (int c = 0; c < 16; ++c)
    CHECK(bank.embeddings.at(0, c) == doctest::Approx(direct.vec[c]).epsilon(1e-9));

  CHECK_THROWS_WITH_AS(build_label_bank({"a"}, "no placeholder here", text),
                       doctest::Contains("[CLASS]"), std::runtime_error);
  CHECK_THROWS_WITH_AS(build_label_bank({"a", "a"}, kDefaultPromptTemplate, text),
                       doctest::Contains("duplicate"), std::runtime_error);
  CHECK_THROWS(build_label_bank({}, kDefaultPromptTemplate, text));

  const LabelBank many = build_label_bank({"chair", "table", "lamp"}, kDefaultPromptTemplate, text);
  for (int i = 0; i < many.size(); ++i) {
    double n = 0.0;
    for (int c = 0; c < 16; ++c) n += many.embeddings.at(i, c) * many.embeddings.at(i, c);
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("classify: self similarity, full permutation, oracle agreement") {
  const enc::FrozenEncoder text = enc::FrozenEncoder::stub_text(12);
  const LabelBank bank = build_label_bank({"ant", "bee", "cat"}, kDefaultPromptTemplate, text);

  enc::Embedding self;
  self.vec.assign(bank.embeddings.row_ptr(1), bank.embeddings.row_ptr(1) + 12);
  const auto top = classify_zeroshot(self, bank, 1);
  CHECK(top[0].category == "bee");
  CHECK(top[0].similarity == doctest::Approx(1.0).epsilon(1e-6));

  const auto all = classify_zeroshot(self, bank, 3);
  std::set<int> codes;
  for (const auto& s : all) codes.insert(s.code);
  CHECK(codes.size() == 3);

  for (int trial = 0; trial < 50; ++trial) {
    const enc::Embedding q = random_unit(12, 1000 + trial);
    const auto ranked = classify_zeroshot(q, bank, 3);
    const auto oracle = brute_force_ranking(q, bank);
    for (int i = 0; i < 3; ++i) CHECK(ranked[i].code == oracle[i]);
  }

  // Scale invariance of the cosine ranking.
  enc::Embedding q = random_unit(12, 5);
  enc::Embedding scaled = q;
  for (auto& x : scaled.vec) x *= 37.5;
  const auto r1 = classify_zeroshot(q, bank, 3);
  const auto r2 = classify_zeroshot(scaled, bank, 3);
  for (int i = 0; i < 3; ++i) CHECK(r1[i].code == r2[i].code);

  CHECK_THROWS(classify_zeroshot(q, bank, 4));
  CHECK_THROWS(classify_zeroshot(q, bank, 0));
}

TEST_CASE("apply_split: filtering, degenerate cases, oracle recomputation") {
  const int n = 40, k = 12;
  const enc::FrozenEncoder text = enc::FrozenEncoder::stub_text(10);
  std::vector<std::string> cats;
  for (int i = 0; i < k; ++i) cats.push_back("cat" + std::to_string(i));
  const LabelBank bank = build_label_bank(cats, kDefaultPromptTemplate, text);

  Rng rng(2024);
  Matrix sims(n, k);
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) {
    labels[i] = static_cast<int>(rng.next_below(k));
    for (int c = 0; c < k; ++c) sims.at(i, c) = rng.next_double();
  }

  const SplitMetrics all = apply_split(sims, labels, bank, {"All", {}}, true);
  CHECK(all.n == n);
  CHECK(all.top1 >= 0.0);
  CHECK(all.top1 <= 1.0);
  CHECK(all.top5 >= all.top1);

  // Independent recomputation of top-1/top-5 from the raw similarities.
  {
    int hit1 = 0, hit5 = 0;
    for (int i = 0; i < n; ++i) {
      std::vector<int> order(k);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (sims.at(i, a) != sims.at(i, b)) return sims.at(i, a) > sims.at(i, b);
        return a < b;
      });
      if (order[0] == labels[i]) ++hit1;
      for (int r = 0; r < 5; ++r)
        if (order[r] == labels[i]) {
          ++hit5;
          break;
        }
    }
    CHECK(all.top1 == doctest::Approx(static_cast<double>(hit1) / n));
    CHECK(all.top5 == doctest::Approx(static_cast<double>(hit5) / n));
  }

  // Excluding every category but the true one leaves a single candidate.
  {
    std::vector<std::string> excl;
    for (int i = 1; i < k; ++i) excl.push_back(cats[i]);
    std::vector<int> zero_labels(n, 0);
    const SplitMetrics single = apply_split(sims, zero_labels, bank, {"Single", excl}, true);
    CHECK(single.top1 == doctest::Approx(1.0));
    CHECK(single.n == n);
  }

  // Dropping samples whose label is excluded.
  {
    const SplitMetrics medium = apply_split(sims, labels, bank, {"Medium", {cats[0], cats[1]}}, true);
    int expected = 0;
    for (const int l : labels)
      if (l > 1) ++expected;
    CHECK(medium.n == expected);
  }

  CHECK_THROWS_WITH_AS(apply_split(sims, std::vector<int>(n, 3), bank, {"Empty", {cats[3]}}, true),
                       doctest::Contains("excludes every sample"), std::runtime_error);
  CHECK_THROWS_WITH_AS(apply_split(sims, labels, bank, {"Bad", {"nope"}}, true),
                       doctest::Contains("unknown category"), std::runtime_error);

  // Keeping the full bank can only lower accuracy (more candidates).
  const SplitMetrics shrunk = apply_split(sims, labels, bank, {"M", {cats[2]}}, true);
  const SplitMetrics full = apply_split(sims, labels, bank, {"M", {cats[2]}}, false);
  CHECK(full.top1 <= shrunk.top1 + 1e-12);
  CHECK(full.n == shrunk.n);
}

TEST_CASE("split files: io round trip and progression validation") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "jm3d-test-split";
  fs::create_directories(dir);
  const EvalSplit medium{"Medium", {"chair", "table"}};
  const EvalSplit hard{"Hard", {"chair", "table", "stool"}};
  save_split_json((dir / "medium.json").string(), medium);
  const EvalSplit loaded = load_split_json((dir / "medium.json").string());
  CHECK(loaded.name == medium.name);
  CHECK(loaded.excluded == medium.excluded);

  CHECK_NOTHROW(validate_split_progression(medium, hard));
  CHECK_THROWS_WITH_AS(validate_split_progression(hard, medium), doctest::Contains("progression"),
                       std::runtime_error);

  const SplitMetrics m{"Medium", 0.5, 0.75, 20};
  const SplitMetrics back = metrics_from_json(metrics_to_json(m));
  CHECK(back.split == m.split);
  CHECK(back.top1 == m.top1);
  CHECK(back.top5 == m.top5);
  CHECK(back.n == m.n);
}

TEST_CASE("retrieval: degenerate gallery, self query, oracle agreement") {
  std::vector<std::pair<std::string, enc::Embedding>> gallery;
  for (int i = 0; i < 20; ++i) gallery.emplace_back("cloud" + std::to_string(i), random_unit(8, 60 + i));

  const RetrievalResult one =
      retrieve_by_embedding("q", random_unit(8, 5), {{"only", random_unit(8, 6)}}, 1);
  CHECK(one.ranked.size() == 1);
  CHECK(one.ranked[0].first == "only");

  const RetrievalResult self = retrieve_by_embedding("q", gallery[7].second, gallery, 3);
  CHECK(self.ranked[0].first == "cloud7");
  CHECK(self.ranked[0].second == doctest::Approx(1.0).epsilon(1e-6));

  for (int trial = 0; trial < 25; ++trial) {
    const enc::Embedding q = random_unit(8, 300 + trial);
    const RetrievalResult got = retrieve_by_embedding("q", q, gallery, 20);
    // Oracle: full sort of (similarity, insertion index).
    std::vector<std::pair<double, int>> scored;
    for (int i = 0; i < 20; ++i) scored.emplace_back(enc::cosine(q, gallery[i].second), i);
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (int i = 0; i < 20; ++i) {
      CHECK(got.ranked[i].first == gallery[scored[i].second].first);
      if (i > 0) CHECK(got.ranked[i].second <= got.ranked[i - 1].second);
    }
  }

  CHECK_THROWS(retrieve_by_embedding("q", random_unit(8, 1), gallery, 21));
  CHECK_THROWS(retrieve_by_embedding("q", random_unit(8, 1), {}, 1));
}
