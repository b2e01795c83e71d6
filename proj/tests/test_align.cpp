#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>

#include "gradcheck.hpp"
#include "jm3d/align/joint.hpp"
#include "jm3d/align/losses.hpp"
#include "jm3d/align/trainer.hpp"
#include "jm3d/core/rng.hpp"
#include "jm3d/data/synthetic.hpp"
#include "jm3d/data/views.hpp"
#include "jm3d/enc/frozen.hpp"
#include "jm3d/enc/point_encoder.hpp"

using namespace jm3d;
using namespace jm3d::align;

namespace {

Matrix random_rows(int rows, int cols, std::uint64_t seed, bool normalize = false) {
  Matrix m = enc::gaussian_init(rows, cols, seed, 1.0);
  if (normalize) {
    for (int r = 0; r < rows; ++r) {
      double n = 0.0;
      for (int c = 0; c < cols; ++c) n += m.at(r, c) * m.at(r, c);
      n = std::sqrt(n);
      for (int c = 0; c < cols; ++c) m.at(r, c) /= n;
    }
  }
  return m;
}

enc::Embedding embedding_of(std::vector<double> v) { return enc::Embedding{std::move(v)}; }

/// Small self-contained training batch over random frozen features.
TrainBatch toy_batch(int bsz, int points, int views, int dim, std::uint64_t seed) {
  TrainBatch batch;
  batch.points_per_cloud = points;
  batch.views_per_sample = views;
  batch.points = random_rows(bsz * points, 3, seed);
  batch.raw_views = random_rows(bsz * views, dim, seed + 1);
  batch.text = random_rows(bsz, dim, seed + 2, true);
  Rng rng(seed + 3);
  for (int i = 0; i < bsz * views; ++i) {
    batch.view_angles.push_back(static_cast<int>(rng.next_below(30)));
    batch.view_depths.push_back(rng.next_double() * 2.0);
  }
  for (int i = 0; i < bsz; ++i) batch.parent_codes.push_back(static_cast<int>(rng.next_below(3)));
  return batch;
}

}  // namespace

TEST_CASE("joint feature: singleton, uniform, hand-evaluated softmax") {
  // V = 1: the joint feature is the view row itself, exactly.
  Matrix one(1, 3, {0.4, -1.2, 2.0});
  const JointFeature jf1 = joint_feature(one, embedding_of({1.0, 0.0, 0.0}));
  CHECK(jf1.weights.size() == 1);
  CHECK(jf1.weights[0] == doctest::Approx(1.0).epsilon(1e-12));
  for (int c = 0; c < 3; ++c) CHECK(jf1.vec[c] == one.at(0, c));

  // All views identical: uniform weights, vec equals the shared row.
  Matrix same(3, 2, {0.6, 0.8, 0.6, 0.8, 0.6, 0.8});
  const JointFeature jfu = joint_feature(same, embedding_of({0.3, -0.7}));
  for (const double w : jfu.weights) CHECK(w == doctest::Approx(1.0 / 3).epsilon(1e-9));
  CHECK(jfu.vec[0] == doctest::Approx(0.6));
  CHECK(jfu.vec[1] == doctest::Approx(0.8));

  // V = 2 with scores (0, ln 3) -> weights (0.25, 0.75).
  Matrix two(2, 2, {1.0, 0.0, 0.0, 1.0});
  const JointFeature jf2 = joint_feature(two, embedding_of({0.0, std::log(3.0)}));
  CHECK(jf2.weights[0] == doctest::Approx(0.25).epsilon(1e-9));
  CHECK(jf2.weights[1] == doctest::Approx(0.75).epsilon(1e-9));
  CHECK(jf2.vec[0] == doctest::Approx(0.25).epsilon(1e-9));
  CHECK(jf2.vec[1] == doctest::Approx(0.75).epsilon(1e-9));

  CHECK_THROWS(joint_feature(two, embedding_of({1.0, 0.0, 0.0})));
}

TEST_CASE("joint feature: convex hull and weight-sum properties") {
  Rng rng(404);
  for (int trial = 0; trial < 200; ++trial) {
    const int v = 1 + static_cast<int>(rng.next_below(8));
    const int d = 2 + static_cast<int>(rng.next_below(6));
    const Matrix views = random_rows(v, d, rng.next_u64());
    const Matrix text = random_rows(1, d, rng.next_u64(), true);
    std::vector<double> tv(text.row_ptr(0), text.row_ptr(0) + d);
    const JointFeature jf = joint_feature(views, embedding_of(tv));

    double wsum = 0.0;
    for (const double w : jf.weights) {
      CHECK(w >= 0.0);
      CHECK(w <= 1.0);
      wsum += w;
    }
    CHECK(std::fabs(wsum - 1.0) <= 1e-6);
    for (int c = 0; c < d; ++c) {
      double lo = views.at(0, c), hi = views.at(0, c);
      for (int r = 1; r < v; ++r) {
        lo = std::min(lo, views.at(r, c));
        hi = std::max(hi, views.at(r, c));
      }
      CHECK(jf.vec[c] >= lo - 1e-6);
      CHECK(jf.vec[c] <= hi + 1e-6);
    }
  }
}

TEST_CASE("joint feature: text shifts orthogonal to the views leave weights unchanged") {
  // Views live in the first two dims; the shift lives in the last.
  Matrix views(3, 4);
  views.at(0, 0) = 1.0;
  views.at(1, 1) = 1.0;
  views.at(2, 0) = views.at(2, 1) = 0.707;
  const JointFeature base = joint_feature(views, embedding_of({0.9, -0.3, 0.0, 0.0}));
  const JointFeature shifted = joint_feature(views, embedding_of({0.9, -0.3, 0.0, 5.0}));
  for (int i = 0; i < 3; ++i) CHECK(base.weights[i] == doctest::Approx(shifted.weights[i]).epsilon(1e-9));
}

TEST_CASE("batched joint feature agrees with the scalar form") {
  const int bsz = 4, v = 3, d = 5;
  const Matrix fused = random_rows(bsz * v, d, 51);
  const Matrix text = random_rows(bsz, d, 52, true);
  nn::Tape tape;
  const nn::Value out = joint_feature_batch(tape, tape.constant(fused), tape.constant(text), v);
  for (int b = 0; b < bsz; ++b) {
    Matrix views(v, d);
    for (int r = 0; r < v; ++r)
      for (int c = 0; c < d; ++c) views.at(r, c) = fused.at(b * v + r, c);
    std::vector<double> tv(text.row_ptr(b), text.row_ptr(b) + d);
    const JointFeature jf = joint_feature(views, embedding_of(tv));
    for (int c = 0; c < d; ++c) CHECK(tape.value(out).at(b, c) == doctest::Approx(jf.vec[c]).epsilon(1e-9));
  }
}

TEST_CASE("contrastive loss: hand-evaluated values") {
  // Identity rows, N=2, tau=1: per-direction term -log(e / (e + 1)).
  const Matrix eye = Matrix::identity(2);
  const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  CHECK(contrastive_loss_value(eye, eye, 1.0) == doctest::Approx(expected).epsilon(1e-9));
  CHECK(expected == doctest::Approx(0.31326).epsilon(1e-4));

  // Identical rows: uniform softmax over 2, loss log 2.
  Matrix same(2, 3, {0.6, 0.8, 0.0, 0.6, 0.8, 0.0});
  CHECK(contrastive_loss_value(same, same, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("contrastive loss: symmetry, permutation invariance, errors") {
  const Matrix a = random_rows(5, 4, 61, true);
  const Matrix b = random_rows(5, 4, 62, true);
  CHECK(contrastive_loss_value(a, b, 0.5) ==
        doctest::Approx(contrastive_loss_value(b, a, 0.5)).epsilon(1e-9));

  std::vector<int> perm{3, 0, 4, 1, 2};
  Matrix ap(5, 4), bp(5, 4);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 4; ++c) {
      ap.at(r, c) = a.at(perm[r], c);
      bp.at(r, c) = b.at(perm[r], c);
    }
  CHECK(contrastive_loss_value(ap, bp, 0.5) ==
        doctest::Approx(contrastive_loss_value(a, b, 0.5)).epsilon(1e-6));

  nn::Tape tape;
  CHECK_THROWS_WITH_AS(contrastive_loss(tape, tape.constant(Matrix(1, 4)), tape.constant(Matrix(1, 4)), 1.0),
                       doctest::Contains("at least 2"), std::runtime_error);
  CHECK_THROWS(contrastive_loss(tape, tape.constant(a), tape.constant(b), 0.0));
}

TEST_CASE("temperature rescaling preserves softmax argmax rows") {
  const Matrix a = random_rows(6, 8, 63, true);
  const Matrix b = random_rows(6, 8, 64, true);
  const Matrix sims = matmul(a, transpose(b));
  for (int r = 0; r < 6; ++r) {
    int arg1 = 0, arg2 = 0;
    for (int c = 1; c < 6; ++c) {
      if (sims.at(r, c) / 0.07 > sims.at(r, arg1) / 0.07) arg1 = c;
      if (sims.at(r, c) / 0.7 > sims.at(r, arg2) / 0.7) arg2 = c;
    }
    CHECK(arg1 == arg2);
  }
}

TEST_CASE("parent classification loss: uniform, saturated, errors, gradients") {
  nn::ParamStore params;
  ClassifierHead head(8, 4, 6, params, 71);
  // Zero weights give uniform logits: loss = ln 6.
  for (auto* p : params.all())
    for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] = 0.0;
  {
    nn::Tape tape;
    const nn::Value loss = parent_classification_loss(
        tape, head, tape.constant(random_rows(4, 8, 72)), {0, 5, 3, 2});
    CHECK(tape.scalar(loss) == doctest::Approx(std::log(6.0)).epsilon(1e-9));
  }
  // A +100 logit margin saturates the softmax.
  {
    nn::Tape tape;
    Matrix logits(2, 6);
    logits.at(0, 1) = 100.0;
    logits.at(1, 4) = 100.0;
    const nn::Value loss = softmax_cross_entropy(tape, tape.constant(std::move(logits)), {1, 4});
    CHECK(tape.scalar(loss) < 1e-6);
  }
  {
    nn::Tape tape;
    CHECK_THROWS_WITH_AS(
        parent_classification_loss(tape, head, tape.constant(random_rows(2, 8, 73)), {0, 6}),
        doctest::Contains("outside"), std::runtime_error);
  }

  nn::ParamStore params2;
  ClassifierHead head2(5, 3, 4, params2, 74);
  const Matrix features = random_rows(3, 5, 75);
  const auto report = gradcheck::check(
      [&](nn::Tape& t) {
        return parent_classification_loss(t, head2, t.constant(features), {1, 0, 3});
      },
      params2.all());
  CHECK_MESSAGE(report.max_rel_err <= 1e-4, "worst=", report.worst);
}

TEST_CASE("total loss: weighted sum, lambda zeroing, ablation") {
  const int bsz = 4, v = 2, d = 6;
  const Matrix cloud = random_rows(bsz, d, 81);
  const Matrix fused = random_rows(bsz * v, d, 82);
  const Matrix text = random_rows(bsz, d, 83, true);
  nn::ParamStore params;
  ClassifierHead head(d, 4, 3, params, 84);
  const std::vector<int> codes{0, 2, 1, 0};

  auto eval_total = [&](LossWeights w, bool indep) {
    nn::Tape tape;
    const LossBreakdown l = total_loss(tape, tape.constant(cloud), tape.constant(fused),
                                       tape.constant(text), v, head, codes, w, indep);
    return std::tuple{tape.scalar(l.total), tape.scalar(l.cloud_joint), tape.scalar(l.cloud_text),
                      tape.scalar(l.text_joint), tape.scalar(l.classed)};
  };

  const auto [t0, cj0, ct0, tj0, cl0] = eval_total({0.0, 0.0, 0.0, 0.07}, false);
  CHECK(t0 == doctest::Approx(cl0).epsilon(1e-12));

  const auto [t1, cj1, ct1, tj1, cl1] = eval_total({0.7, 1.3, 0.4, 0.07}, false);
  CHECK(cj1 >= 0.0);
  CHECK(ct1 >= 0.0);
  CHECK(tj1 >= 0.0);
  CHECK(cl1 >= 0.0);
  CHECK(t1 == doctest::Approx(0.7 * cj1 + 1.3 * ct1 + 0.4 * tj1 + cl1).epsilon(1e-6));

  // With skewed similarities the ablation differs from joint modeling.
  const auto [ta, cja, cta, tja, cla] = eval_total({1.0, 1.0, 1.0, 0.07}, true);
  CHECK(tja == 0.0);
  CHECK(std::fabs(ta - t1) > 1e-9);
}

TEST_CASE("end-to-end gradient check through encoder, fusion, joint and losses") {
  ModelConfig mc;
  mc.dim = 4;
  mc.point_widths = {4, 5};
  mc.head_widths = {4};
  mc.classifier_hidden = 3;
  mc.parent_classes = 3;
  TrainState state(mc, 17);
  const TrainBatch batch = toy_batch(3, 5, 2, 4, 900);
  const LossWeights weights{0.8, 1.1, 0.6, 0.2};

  const auto report = gradcheck::check(
      [&](nn::Tape& t) {
        const nn::Value cloud =
            state.encoder().encode_batch(t, t.constant(batch.points), batch.points_per_cloud);
        const nn::Value fused = state.fusion().fuse(t, t.constant(batch.raw_views),
                                                    batch.view_angles, batch.view_depths);
        const LossBreakdown l = total_loss(t, cloud, fused, t.constant(batch.text),
                                           batch.views_per_sample, state.head(),
                                           batch.parent_codes, weights, false);
        return l.total;
      },
      state.params().all());
  CHECK_MESSAGE(report.max_rel_err <= 1e-4, "worst=", report.worst);
}

TEST_CASE("train step: zero learning rate is a bitwise no-op") {
  ModelConfig mc;
  mc.dim = 4;
  mc.point_widths = {4};
  mc.head_widths = {};
  mc.parent_classes = 3;
  TrainState state(mc, 3);
  const TrainBatch batch = toy_batch(3, 4, 2, 4, 31);

  std::vector<Matrix> before;
  for (const auto* p : state.params().all()) {
    before.push_back(p->value);
    before.push_back(p->moment1);
    before.push_back(p->moment2);
  }
  OptimizerConfig opt;
  opt.learning_rate = 0.0;
  const auto metrics = train_step(state, batch, {1, 1, 1, 0.07}, opt);
  CHECK(std::isfinite(metrics.total));
  std::size_t k = 0;
  for (const auto* p : state.params().all()) {
    CHECK(p->value == before[k++]);
    CHECK(p->moment1 == before[k++]);
    CHECK(p->moment2 == before[k++]);
  }
  CHECK(state.step() == 0);
}

TEST_CASE("train step: deterministic trajectories and loss decrease") {
  ModelConfig mc;
  mc.dim = 8;
  mc.point_widths = {8, 12};
  mc.head_widths = {8};
  mc.classifier_hidden = 8;
  mc.parent_classes = 6;

  // 12-subcategory synthetic corpus, one full batch.
  const auto corpus = data::generate_synthetic_corpus(data::CorpusSpec{6, 2, 2, 64, 5});
  const enc::FrozenEncoder text_enc = enc::FrozenEncoder::stub_text(mc.dim);
  const enc::FrozenEncoder image_enc = enc::FrozenEncoder::stub_image(mc.dim);

  std::map<std::string, int> parent_codes;
  for (const auto& e : corpus)
    if (!parent_codes.count(e.parent)) parent_codes[e.parent] = static_cast<int>(parent_codes.size());

  const int bsz = static_cast<int>(corpus.size());
  TrainBatch batch;
  batch.points_per_cloud = 64;
  batch.views_per_sample = 2;
  batch.points = Matrix(bsz * 64, 3);
  batch.raw_views = Matrix(bsz * 2, mc.dim);
  batch.text = Matrix(bsz, mc.dim);
  for (int b = 0; b < bsz; ++b) {
    const Matrix pts = corpus[b].cloud.as_matrix();
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c < 3; ++c) batch.points.at(b * 64 + r, c) = pts.at(r, c);
    const auto cands = data::render_candidate_views(corpus[b].cloud, 8, 8);
    const auto picks = data::select_view_indices(2, 60.0, derive_seed(5, "t", b));
    for (int v = 0; v < 2; ++v) {
      const auto& view = cands.views[picks[v]];
      const enc::Embedding e = image_enc.encode_image(view);
      for (int c = 0; c < mc.dim; ++c) batch.raw_views.at(b * 2 + v, c) = e.vec[c];
      batch.view_angles.push_back(view.angle_index);
      batch.view_depths.push_back(view.mean_depth());
    }
    const enc::Embedding te = text_enc.encode_text("a 3D representation of " + corpus[b].sub);
    for (int c = 0; c < mc.dim; ++c) batch.text.at(b, c) = te.vec[c];
    batch.parent_codes.push_back(parent_codes.at(corpus[b].parent));
  }

  OptimizerConfig opt;
  opt.learning_rate = 1e-3;
  opt.cosine = false;

  auto run_steps = [&](int steps) {
    TrainState state(mc, 77);
    std::vector<double> losses;
    for (int s = 0; s < steps; ++s)
      losses.push_back(train_step(state, batch, {1, 1, 1, 0.07}, opt).total);
    return losses;
  };

  const auto run1 = run_steps(10);
  const auto run2 = run_steps(10);
  for (int s = 0; s < 10; ++s) CHECK(std::fabs(run1[s] - run2[s]) <= 1e-6);

  const auto long_run = run_steps(50);
  CHECK(long_run.back() < long_run.front());
  int non_monotone = 0;
  for (std::size_t s = 1; s < long_run.size(); ++s)
    if (long_run[s] > long_run[s - 1]) ++non_monotone;
  CHECK(non_monotone <= 2);
}

TEST_CASE("checkpoints round trip bitwise after quantization") {
  namespace fs = std::filesystem;
  ModelConfig mc;
  mc.dim = 6;
  mc.point_widths = {5};
  mc.head_widths = {4};
  mc.parent_classes = 4;
  TrainState state(mc, 13);
  const TrainBatch batch = toy_batch(3, 4, 2, 6, 41);
  OptimizerConfig opt;
  for (int s = 0; s < 3; ++s) train_step(state, batch, {1, 1, 1, 0.07}, opt);

  const fs::path dir = fs::temp_directory_path() / "jm3d-test-ckpt";
  fs::create_directories(dir);
  const std::string path = (dir / "state.jmck").string();
  state.rng().next_u64();  // advance so the stored rng state is nontrivial
  state.save_checkpoint(path);
  state.quantize_to_storage();

  TrainState loaded = TrainState::load_checkpoint(path);
  CHECK(loaded.step() == state.step());
  CHECK(loaded.rng().state() == state.rng().state());
  REQUIRE(loaded.params().all().size() == state.params().all().size());
  for (std::size_t i = 0; i < loaded.params().all().size(); ++i) {
    CHECK(loaded.params().all()[i]->name == state.params().all()[i]->name);
    CHECK(loaded.params().all()[i]->value == state.params().all()[i]->value);
    CHECK(loaded.params().all()[i]->moment1 == state.params().all()[i]->moment1);
  }

  // Continuing from the loaded state reproduces the original trajectory.
  const double a = train_step(state, batch, {1, 1, 1, 0.07}, opt).total;
  const double b = train_step(loaded, batch, {1, 1, 1, 0.07}, opt).total;
  CHECK(a == b);
}

TEST_CASE("non-finite losses abort with a diagnostic") {
  ModelConfig mc;
  mc.dim = 4;
  mc.point_widths = {4};
  mc.head_widths = {};
  mc.parent_classes = 2;
  TrainState state(mc, 3);
  TrainBatch batch = toy_batch(2, 3, 1, 4, 51);
  batch.text.at(0, 0) = std::numeric_limits<double>::quiet_NaN();
  OptimizerConfig opt;
  CHECK_THROWS_WITH_AS(train_step(state, batch, {1, 1, 1, 0.07}, opt),
                       doctest::Contains("non-finite"), std::runtime_error);
}
