#include "jm3d/enc/frozen.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <stdexcept>

#include "jm3d/core/io.hpp"
#include "jm3d/core/rng.hpp"

namespace jm3d::enc {

namespace {

/// Deterministic gaussian direction for one feature bucket: the implicit
/// projection matrix is never materialized.
void accumulate_direction(std::vector<double>& acc, std::uint64_t bucket_hash, double weight, int dim) {
  Rng rng(bucket_hash);
  for (int i = 0; i < dim; ++i) acc[i] += weight * rng.next_gaussian();
}

std::vector<std::string> whitespace_tokens(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (const char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

}  // namespace

FrozenEncoder FrozenEncoder::stub_text(int dim, std::uint64_t seed) {
  if (dim < 1) throw std::runtime_error("stub_text: dim must be >= 1");
  return FrozenEncoder(Kind::StubText, dim, seed);
}

FrozenEncoder FrozenEncoder::stub_image(int dim, std::uint64_t seed) {
  if (dim < 1) throw std::runtime_error("stub_image: dim must be >= 1");
  return FrozenEncoder(Kind::StubImage, dim, seed);
}

FrozenEncoder FrozenEncoder::table_from_file(const std::string& path) {
  int dim = 0;
  auto table = load_embedding_table(path, &dim);
  FrozenEncoder enc(Kind::Table, dim, 0);
  enc.table_ = std::move(table);
  return enc;
}

Embedding FrozenEncoder::project_counts(const std::map<std::string, double>& counts) const {
  std::vector<double> acc(dim_, 0.0);
  for (const auto& [gram, count] : counts)
    accumulate_direction(acc, hash_combine(seed_, fnv1a(gram)), count, dim_);
  Embedding e{std::move(acc)};
  e.l2_normalize();
  return e;
}

Embedding FrozenEncoder::project_features(const std::vector<double>& features) const {
  std::vector<double> acc(dim_, 0.0);
  for (std::size_t i = 0; i < features.size(); ++i)
    if (features[i] != 0.0) accumulate_direction(acc, hash_combine(seed_, i + 1), features[i], dim_);
  Embedding e{std::move(acc)};
  e.l2_normalize();
  return e;
}

Embedding FrozenEncoder::encode_text(const std::string& text) const {
  if (text.empty()) throw std::runtime_error("encode_text: empty text");
  if (kind_ == Kind::Table) {
    auto it = table_.find(text);
    if (it == table_.end()) throw std::runtime_error("encode_text: unknown table key: '" + text + "'");
    return it->second;
  }
  if (kind_ != Kind::StubText) throw std::runtime_error("encode_text: encoder is not a text encoder");

  // Whole words count double; character trigrams (with boundary markers)
  // capture sub-word overlap between related names.
  std::map<std::string, double> counts;
  for (const auto& word : whitespace_tokens(text)) {
    counts["w:" + word] += 3.0;
    const std::string marked = "^" + word + "$";
    for (std::size_t i = 0; i + 3 <= marked.size(); ++i) counts["c:" + marked.substr(i, 3)] += 1.0;
  }
  if (counts.empty()) throw std::runtime_error("encode_text: text has no tokens");
  return project_counts(counts);
}

Embedding FrozenEncoder::encode_image(const data::ViewImage& img, const std::string& table_key) const {
  if (kind_ == Kind::Table) {
    if (table_key.empty())
      throw std::runtime_error("encode_image: table-backed encoder needs a lookup key");
    auto it = table_.find(table_key);
    if (it == table_.end())
      throw std::runtime_error("encode_image: unknown table key: '" + table_key + "'");
    return it->second;
  }
  if (kind_ != Kind::StubImage) throw std::runtime_error("encode_image: encoder is not an image encoder");

  // Pooled patch statistics at two granularities plus row/column depth
  // profiles. The fine grid carries the instance-level silhouette detail that
  // cross-modal retrieval depends on.
  std::vector<double> feats;
  for (const int grid : {4, 8}) {
    for (int pr = 0; pr < grid; ++pr) {
      for (int pc = 0; pc < grid; ++pc) {
        const int r0 = pr * img.height / grid, r1 = std::max(r0 + 1, (pr + 1) * img.height / grid);
        const int c0 = pc * img.width / grid, c1 = std::max(c0 + 1, (pc + 1) * img.width / grid);
        double sum_rgb[3] = {0, 0, 0}, sum_d = 0, max_d = 0;
        int occupied = 0;
        const int cells = (r1 - r0) * (c1 - c0);
        for (int r = r0; r < r1; ++r) {
          for (int c = c0; c < c1; ++c) {
            for (int ch = 0; ch < 3; ++ch) sum_rgb[ch] += img.rgb_at(r, c, ch);
            const double d = img.depth_at(r, c);
            sum_d += d;
            max_d = std::max(max_d, d);
            if (d > 0.0) ++occupied;
          }
        }
        for (int ch = 0; ch < 3; ++ch) feats.push_back(sum_rgb[ch] / cells);
        feats.push_back(sum_d / cells);
        feats.push_back(max_d);
        feats.push_back(static_cast<double>(occupied) / cells);
      }
    }
  }
  for (int r = 0; r < img.height; ++r) {
    double s = 0;
    for (int c = 0; c < img.width; ++c) s += img.depth_at(r, c);
    feats.push_back(s / img.width);
  }
  for (int c = 0; c < img.width; ++c) {
    double s = 0;
    for (int r = 0; r < img.height; ++r) s += img.depth_at(r, c);
    feats.push_back(s / img.height);
  }
  // Raw depth pixels: the exact silhouette is what separates instances of the
  // same subcategory.
  for (const double d : img.depth) feats.push_back(0.5 * d);
  double g_sum = 0, g_max = 0, g_occ = 0;
  for (const double d : img.depth) {
    g_sum += d;
    g_max = std::max(g_max, d);
    if (d > 0.0) g_occ += 1.0;
  }
  const double cells = static_cast<double>(img.depth.size());
  feats.push_back(g_sum / cells);
  feats.push_back(g_max);
  feats.push_back(g_occ / cells);
  feats.push_back(1.0);  // bias bucket so an all-zero image still maps to a unit vector
  return project_features(feats);
}

void save_embedding_table(const std::string& path, const std::map<std::string, Embedding>& table, int dim) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write embedding table: " + path);
  io::write_magic(os, "EMB1");
  io::write_u32(os, static_cast<std::uint32_t>(table.size()));
  io::write_u32(os, static_cast<std::uint32_t>(dim));
  for (const auto& [key, emb] : table) {
    if (emb.dim() != dim) throw std::runtime_error("embedding table entry dim mismatch for key: " + key);
    io::write_u32(os, static_cast<std::uint32_t>(key.size()));
    os.write(key.data(), static_cast<std::streamsize>(key.size()));
    for (const double x : emb.vec) io::write_f32(os, static_cast<float>(x));
  }
}

std::map<std::string, Embedding> load_embedding_table(const std::string& path, int* dim_out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open embedding table: " + path);
  io::expect_magic(is, "EMB1", path);
  const std::uint32_t count = io::read_u32(is);
  const std::uint32_t dim = io::read_u32(is);
  std::map<std::string, Embedding> table;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t klen = io::read_u32(is);
    std::string key(klen, '\0');
    is.read(key.data(), klen);
    Embedding e;
    e.vec.resize(dim);
    for (auto& x : e.vec) x = static_cast<double>(io::read_f32(is));
    if (!is) throw std::runtime_error("truncated embedding table: " + path);
    table.emplace(std::move(key), std::move(e));
  }
  if (dim_out) *dim_out = static_cast<int>(dim);
  return table;
}

}  // namespace jm3d::enc
