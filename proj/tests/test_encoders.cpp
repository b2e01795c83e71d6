#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>

#include "gradcheck.hpp"
#include "jm3d/core/rng.hpp"
#include "jm3d/data/synthetic.hpp"
#include "jm3d/data/views.hpp"
#include "jm3d/enc/frozen.hpp"
#include "jm3d/enc/fusion.hpp"
#include "jm3d/enc/point_encoder.hpp"

using namespace jm3d;
using namespace jm3d::enc;

namespace {

data::PointCloud sample_cloud(int points, std::uint64_t seed) {
  return data::generate_synthetic_corpus(data::CorpusSpec{1, 1, 1, points, seed})[0].cloud;
}

data::ViewImage sample_view(std::uint64_t seed, int angle = 0) {
  const auto cloud = sample_cloud(48, seed);
  return data::render_candidate_views(cloud, 8, 8).views[angle];
}

}  // namespace

TEST_CASE("point encoder is exactly permutation invariant") {
  nn::ParamStore params;
  PointEncoderConfig cfg;
  cfg.point_widths = {8, 12};
  cfg.head_widths = {8};
  cfg.dim = 6;
  const PointEncoder enc(cfg, params, 31);

  const data::PointCloud cloud = sample_cloud(40, 5);
  Matrix base;
  {
    nn::Tape tape;
    base = tape.value(enc.encode(tape, tape.constant(cloud.as_matrix())));
  }
  Rng rng(99);
  double max_dev = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    data::PointCloud shuffled = cloud;
    for (int i = shuffled.size() - 1; i > 0; --i)
      std::swap(shuffled.points[i], shuffled.points[rng.next_below(i + 1)]);
    nn::Tape tape;
    const Matrix out = tape.value(enc.encode(tape, tape.constant(shuffled.as_matrix())));
    max_dev = std::max(max_dev, max_abs_diff(base, out));
  }
  CHECK(max_dev <= 1e-6);
}

TEST_CASE("zero-parameter encoder maps to the zero vector") {
  nn::ParamStore params;
  PointEncoderConfig cfg;
  cfg.point_widths = {4, 6};
  cfg.head_widths = {4};
  cfg.dim = 5;
  const PointEncoder enc(cfg, params, 1);
  for (auto* p : params.all())
    for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] = 0.0;
  nn::Tape tape;
  const Matrix out = tape.value(enc.encode(tape, tape.constant(sample_cloud(16, 2).as_matrix())));
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0);
}

TEST_CASE("point encoder gradients match finite differences") {
  nn::ParamStore params;
  PointEncoderConfig cfg;
  cfg.point_widths = {4, 6};
  cfg.head_widths = {4};
  cfg.dim = 4;
  const PointEncoder enc(cfg, params, 7);
  const Matrix points = sample_cloud(8, 3).as_matrix();
  const Matrix probe = gaussian_init(1, 4, 123, 1.0);

  const auto report = gradcheck::check(
      [&](nn::Tape& t) {
        return t.sum_all(t.mul(enc.encode(t, t.constant(points)), t.constant(probe)));
      },
      params.all());
  CHECK_MESSAGE(report.max_rel_err <= 1e-4, "worst=", report.worst);
}

TEST_CASE("point encoder is differentiable w.r.t. the points") {
  nn::ParamStore params;
  PointEncoderConfig cfg;
  cfg.point_widths = {4};
  cfg.head_widths = {};
  cfg.dim = 3;
  const PointEncoder enc(cfg, params, 11);
  Matrix points = sample_cloud(8, 9).as_matrix();
  const Matrix probe = gaussian_init(1, 3, 5, 1.0);

  auto loss_at = [&](const Matrix& pts) {
    nn::Tape t;
    return t.scalar(t.sum_all(t.mul(enc.encode(t, t.constant(pts)), t.constant(probe))));
  };
  nn::Tape tape;
  const nn::Value in = tape.leaf(points);
  tape.backward(tape.sum_all(tape.mul(enc.encode(tape, in), tape.constant(probe))));
  const Matrix& analytic = tape.grad(in);
  const double h = 1e-5;
  for (std::size_t i = 0; i < points.size(); ++i) {
    Matrix up = points, down = points;
    up[i] += h;
    down[i] -= h;
    const double numeric = (loss_at(up) - loss_at(down)) / (2 * h);
    CHECK(std::fabs(analytic[i] - numeric) <=
          1e-4 * std::max({1.0, std::fabs(numeric), std::fabs(analytic[i])}));
  }
}

TEST_CASE("frozen text stub: determinism, norm, separation") {
  const FrozenEncoder enc = FrozenEncoder::stub_text(32);
  const Embedding a = enc.encode_text("a 3D representation of flat box");
  const Embedding b = enc.encode_text("a 3D representation of flat box");
  CHECK(a.vec == b.vec);
  CHECK(a.unit_norm());

  // Every pair of distinct subcategory prompts in the default corpus must
  // stay clearly separated under the default stub seed.
  const auto corpus = data::generate_synthetic_corpus(data::CorpusSpec{6, 2, 1, 16, 4});
  std::vector<std::string> names;
  for (const auto& e : corpus) names.push_back(e.sub);
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  REQUIRE(names.size() == 12);
  for (std::size_t i = 0; i < names.size(); ++i)
    for (std::size_t j = i + 1; j < names.size(); ++j) {
      const Embedding x = enc.encode_text("a 3D representation of " + names[i]);
      const Embedding y = enc.encode_text("a 3D representation of " + names[j]);
      CHECK(cosine(x, y) < 0.999);
    }

  CHECK_THROWS(enc.encode_text(""));
}

TEST_CASE("frozen image stub: determinism, norm, sensitivity") {
  const FrozenEncoder enc = FrozenEncoder::stub_image(32);
  const data::ViewImage view = sample_view(8);
  const Embedding a = enc.encode_image(view);
  const Embedding b = enc.encode_image(view);
  CHECK(a.vec == b.vec);
  CHECK(a.unit_norm());

  data::ViewImage blank;
  blank.angle_index = 0;
  blank.angle_deg = 0;
  blank.height = 8;
  blank.width = 8;
  blank.rgb.assign(8 * 8 * 3, 0.0);
  blank.depth.assign(8 * 8, 0.0);
  data::ViewImage splat = blank;
  splat.depth_at(4, 4) = 0.5;
  splat.rgb_at(4, 4, 0) = 1.0;
  const Embedding z = enc.encode_image(blank);
  const Embedding s = enc.encode_image(splat);
  CHECK(z.unit_norm());
  CHECK(cosine(z, s) < 0.999);
}

TEST_CASE("embedding table round trip and unknown keys") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "jm3d-test-emb";
  fs::create_directories(dir);
  const std::string path = (dir / "table.emb").string();

  const FrozenEncoder stub = FrozenEncoder::stub_text(16);
  std::map<std::string, Embedding> table;
  table["alpha"] = stub.encode_text("alpha");
  table["beta"] = stub.encode_text("beta");
  save_embedding_table(path, table, 16);

  const FrozenEncoder enc = FrozenEncoder::table_from_file(path);
  CHECK(enc.dim() == 16);
  const Embedding a = enc.encode_text("alpha");
  for (int i = 0; i < 16; ++i)
    CHECK(a.vec[i] == doctest::Approx(table.at("alpha").vec[i]).epsilon(1e-6));
  CHECK_THROWS_WITH_AS(enc.encode_text("gamma"), doctest::Contains("unknown table key"),
                       std::runtime_error);
}

TEST_CASE("fusion: layernorm semantics and table sensitivity") {
  const int dim = 8;
  nn::ParamStore params;
  FusionTables tables(dim, params);

  SUBCASE("constant row with zero tables maps to zeros") {
    for (std::size_t i = 0; i < tables.angle_table().value.size(); ++i)
      tables.angle_table().value[i] = 0.0;
    for (std::size_t i = 0; i < tables.depth_table().value.size(); ++i)
      tables.depth_table().value[i] = 0.0;
    nn::Tape tape;
    const nn::Value out = tables.fuse(tape, tape.constant(Matrix::filled(1, dim, 3.25)), {4}, {0.5});
    for (int c = 0; c < dim; ++c) CHECK(tape.value(out).at(0, c) == doctest::Approx(0.0));
  }

  SUBCASE("rows standardized before scale and shift") {
    nn::Tape tape;
    const Matrix raw = gaussian_init(5, dim, 17, 1.0);
    const nn::Value pre = tape.row_standardize(
        tape.add(tape.add(tape.constant(raw),
                          tape.gather_rows(tape.param(tables.angle_table()), {0, 1, 2, 3, 4})),
                 tape.gather_rows(tape.param(tables.depth_table()), {0, 0, 1, 1, 2})),
        kLayerNormEps);
    const Matrix& m = tape.value(pre);
    for (int r = 0; r < 5; ++r) {
      double mean = 0.0, var = 0.0;
      for (int c = 0; c < dim; ++c) mean += m.at(r, c);
      mean /= dim;
      for (int c = 0; c < dim; ++c) var += (m.at(r, c) - mean) * (m.at(r, c) - mean);
      var /= dim;
      CHECK(std::fabs(mean) <= 1e-6);
      CHECK(std::fabs(var - 1.0) <= 1e-4);
    }
  }

  SUBCASE("equal raw rows with different angles fuse differently") {
    // Orthogonal one-hot table rows for two angles.
    for (std::size_t i = 0; i < tables.angle_table().value.size(); ++i)
      tables.angle_table().value[i] = 0.0;
    tables.angle_table().value.at(0, 0) = 2.0;
    tables.angle_table().value.at(7, 1) = 2.0;
    nn::Tape tape;
    Matrix raw(2, dim);
    for (int c = 0; c < dim; ++c) raw.at(0, c) = raw.at(1, c) = 0.3 * c;
    const nn::Value out = tables.fuse(tape, tape.constant(std::move(raw)), {0, 7}, {0.5, 0.5});
    CHECK(max_abs_diff(Matrix(1, dim, std::vector<double>(tape.value(out).row_ptr(0),
                                                          tape.value(out).row_ptr(0) + dim)),
                       Matrix(1, dim, std::vector<double>(tape.value(out).row_ptr(1),
                                                          tape.value(out).row_ptr(1) + dim))) >
          1e-3);
  }

  SUBCASE("angle index out of range is rejected") {
    nn::Tape tape;
    CHECK_THROWS_WITH_AS(tables.fuse(tape, tape.constant(Matrix(1, dim)), {30}, {0.1}),
                         doctest::Contains("angle_index"), std::runtime_error);
  }

  SUBCASE("gradients reach tables and affine") {
    const Matrix raw = gaussian_init(4, dim, 23, 1.0);
    const Matrix probe = gaussian_init(4, dim, 29, 1.0);
    const auto report = gradcheck::check(
        [&](nn::Tape& t) {
          const nn::Value fused = tables.fuse(t, t.constant(raw), {0, 5, 5, 29}, {0.1, 0.9, 1.4, 2.0});
          return t.sum_all(t.mul(fused, t.constant(probe)));
        },
        params.all());
    CHECK_MESSAGE(report.max_rel_err <= 1e-4, "worst=", report.worst);
  }
}

TEST_CASE("depth buckets quantize into 16 bins over the range") {
  nn::ParamStore params;
  FusionTables tables(4, params, "f.", 2.0);
  CHECK(tables.depth_bucket(0.0) == 0);
  CHECK(tables.depth_bucket(1.99) == 15);
  CHECK(tables.depth_bucket(5.0) == 15);   // clamped
  CHECK(tables.depth_bucket(-1.0) == 0);   // clamped
  CHECK(tables.depth_bucket(1.0) == 8);
}
