#include "jm3d/data/triplet.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "jm3d/core/rng.hpp"

namespace jm3d::data {

std::vector<TripletSample> assemble_triplets(const std::vector<CorpusEntry>& corpus,
                                             const CategoryTree& tree, const TripletOptions& opts,
                                             std::uint64_t seed) {
  if (corpus.empty()) throw std::runtime_error("assemble_triplets: empty corpus");
  std::vector<TripletSample> out;
  out.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const CorpusEntry& entry = corpus[i];
    if (!tree.has_sub(entry.sub))
      throw std::runtime_error("assemble_triplets: subcategory '" + entry.sub + "' not in tree");
    const CandidateViewSet cands =
        render_candidate_views(entry.cloud, opts.render_height, opts.render_width);
    TripletSample s;
    s.cloud = entry.cloud;
    s.parent = entry.parent;
    s.sub = entry.sub;
    s.views = within_view_sample(cands, opts.views, opts.omega_deg, derive_seed(seed, "triplet", i));
    out.push_back(std::move(s));
  }
  return out;
}

void save_manifest(const std::string& dir, const std::vector<TripletSample>& samples) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "points");
  std::ofstream os(fs::path(dir) / "manifest.jsonl");
  if (!os) throw std::runtime_error("cannot write manifest in " + dir);
  for (const auto& s : samples) {
    const std::string rel = "points/" + s.cloud.id + ".pcv";
    save_pcv((fs::path(dir) / rel).string(), s.cloud);
    nlohmann::json j;
    j["id"] = s.cloud.id;
    j["parent"] = s.parent;
    j["sub"] = s.sub;
    j["points_path"] = rel;
    std::vector<int> angles;
    angles.reserve(s.views.size());
    for (const auto& v : s.views) angles.push_back(v.angle_index);
    j["view_angle_indices"] = angles;
    os << j.dump() << "\n";
  }
}

std::vector<ManifestRecord> load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest: " + path);
  std::vector<ManifestRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    ManifestRecord r;
    r.id = j.at("id").get<std::string>();
    r.parent = j.at("parent").get<std::string>();
    r.sub = j.at("sub").get<std::string>();
    r.points_path = j.at("points_path").get<std::string>();
    r.view_angle_indices = j.at("view_angle_indices").get<std::vector<int>>();
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<CorpusEntry> corpus_from_manifest(const std::string& path) {
  namespace fs = std::filesystem;
  const fs::path base = fs::path(path).parent_path();
  std::vector<CorpusEntry> out;
  for (const auto& r : load_manifest(path)) {
    CorpusEntry e;
    e.parent = r.parent;
    e.sub = r.sub;
    e.cloud = load_pcv((base / r.points_path).string(), r.id);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace jm3d::data
