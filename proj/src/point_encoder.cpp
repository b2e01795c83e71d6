#include "jm3d/enc/point_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "jm3d/core/rng.hpp"

namespace jm3d::enc {

Matrix gaussian_init(int rows, int cols, std::uint64_t seed, double scale) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = scale * rng.next_gaussian();
  return m;
}

PointEncoder::PointEncoder(const PointEncoderConfig& config, nn::ParamStore& params,
                           std::uint64_t init_seed, const std::string& prefix)
    : config_(config) {
  if (config_.dim < 1) throw std::runtime_error("point encoder: dim must be >= 1");
  int in = 3;
  for (std::size_t i = 0; i < config_.point_widths.size(); ++i) {
    const int out = config_.point_widths[i];
    const std::string tag = prefix + "pp" + std::to_string(i);
    pp_w_.push_back(&params.add(tag + ".w", gaussian_init(in, out, derive_seed(init_seed, tag + ".w"),
                                                          1.0 / std::sqrt(in))));
    pp_b_.push_back(&params.add(tag + ".b", Matrix(1, out)));
    in = out;
  }
  std::vector<int> head_dims = config_.head_widths;
  head_dims.push_back(config_.dim);
  for (std::size_t i = 0; i < head_dims.size(); ++i) {
    const int out = head_dims[i];
    const std::string tag = prefix + "head" + std::to_string(i);
    head_w_.push_back(&params.add(tag + ".w", gaussian_init(in, out, derive_seed(init_seed, tag + ".w"),
                                                            1.0 / std::sqrt(in))));
    head_b_.push_back(&params.add(tag + ".b", Matrix(1, out)));
    in = out;
  }
}

PointEncoder::PointEncoder(const PointEncoderConfig& config, nn::ParamStore& params,
                           const std::string& prefix)
    : config_(config) {
  for (std::size_t i = 0; i < config_.point_widths.size(); ++i) {
    const std::string tag = prefix + "pp" + std::to_string(i);
    pp_w_.push_back(&params.get(tag + ".w"));
    pp_b_.push_back(&params.get(tag + ".b"));
  }
  for (std::size_t i = 0; i < config_.head_widths.size() + 1; ++i) {
    const std::string tag = prefix + "head" + std::to_string(i);
    head_w_.push_back(&params.get(tag + ".w"));
    head_b_.push_back(&params.get(tag + ".b"));
  }
}

nn::Value PointEncoder::per_point_features(nn::Tape& tape, nn::Value points) const {
  nn::Value h = points;
  for (std::size_t i = 0; i < pp_w_.size(); ++i)
    h = tape.tanh(tape.affine(h, *pp_w_[i], *pp_b_[i]));
  return h;
}

nn::Value PointEncoder::head(nn::Tape& tape, nn::Value pooled) const {
  nn::Value h = pooled;
  for (std::size_t i = 0; i < head_w_.size(); ++i) {
    h = tape.affine(h, *head_w_[i], *head_b_[i]);
    if (i + 1 < head_w_.size()) h = tape.tanh(h);  // linear final layer
  }
  return h;
}

nn::Value PointEncoder::encode_batch(nn::Tape& tape, nn::Value points, int points_per_cloud) const {
  if (points_per_cloud < 1 || points.rows % points_per_cloud != 0)
    throw std::runtime_error("encode_batch: row count is not a multiple of points_per_cloud");
  const nn::Value features = per_point_features(tape, points);
  const nn::Value pooled = tape.segment_colmax(features, points_per_cloud);
  return head(tape, pooled);
}

nn::Value PointEncoder::extract_point_tokens(nn::Tape& tape, nn::Value points, int n) const {
  if (config_.point_widths.empty())
    throw std::runtime_error("extract_point_tokens: encoder has no intermediate per-point stage");
  const int total = points.rows;
  if (n > total)
    throw std::runtime_error("extract_point_tokens: n exceeds the per-point feature count");
  const nn::Value features = per_point_features(tape, points);
  if (n == 0) return tape.slice_rows(features, 0, 0);

  // Pooling contribution: number of columns where the row attains the column
  // max (all tied rows count, which keeps the score order-independent).
  const Matrix& f = tape.value(features);
  const int cols = f.cols();
  std::vector<double> colmax(cols, -std::numeric_limits<double>::infinity());
  for (int r = 0; r < total; ++r)
    for (int c = 0; c < cols; ++c) colmax[c] = std::max(colmax[c], f.at(r, c));
  std::vector<int> wins(total, 0);
  for (int r = 0; r < total; ++r)
    for (int c = 0; c < cols; ++c)
      if (f.at(r, c) == colmax[c]) ++wins[r];

  std::vector<int> order(total);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (wins[a] != wins[b]) return wins[a] > wins[b];
    for (int c = 0; c < cols; ++c)
      if (f.at(a, c) != f.at(b, c)) return f.at(a, c) > f.at(b, c);
    return false;
  });

  const std::vector<int> top(order.begin(), order.begin() + (n - 1));
  const std::vector<int> rest(order.begin() + (n - 1), order.end());
  const nn::Value pooled_rest = tape.colmax(tape.gather_rows(features, rest));
  if (n == 1) return pooled_rest;
  return tape.vconcat(tape.gather_rows(features, top), pooled_rest);
}

}  // namespace jm3d::enc
