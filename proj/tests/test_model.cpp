#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numbers>

#include "oracles.hpp"
#include "samcp/decoder.hpp"
#include "samcp/encoder.hpp"
#include "samcp/pipeline.hpp"

using namespace samcp;
using ad::Matrix;

namespace {

ModelConfig tiny_model() {
  ModelConfig m;
  m.dim = 16;
  m.heads = 2;
  m.encoder_layers = 1;
  m.decoder_stages = 2;
  m.ffn_hidden = 8;
  m.roi_size = 3;
  return m;
}

Scene tiny_scene(std::uint64_t seed) {
  CorpusConfig c;
  c.width = c.height = 24;
  c.size_min = 5;
  c.size_max = 9;
  c.instances_max = 2;
  c.num_train = 0;
  c.num_eval = 1;
  return generate_scene(c, make_class_table(c, 1), seed, 0);
}

}  // namespace

TEST_CASE("RoIAlign reproduces a linear ramp at the bin centres") {
  const int W = 10, H = 8;
  PixelGrid<double> grid(W * H, 2);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      grid(y * W + x, 0) = 2.0 * x + 3.0 * y + 1.0;
      grid(y * W + x, 1) = -x;
    }
  for (const BBox& box : {BBox{0, 0, 10, 8}, BBox{2, 1, 7, 6}, BBox{3, 3, 4, 4}, BBox{5, 0, 10, 3}}) {
    const int S = 4;
    const Eigen::MatrixXd roi = roi_align(grid, W, H, box, S);
    for (int i = 0; i < S; ++i)
      for (int j = 0; j < S; ++j) {
        const double x = std::clamp(box.x0 + (j + 0.5) * box.width() / S - 0.5, 0.0, W - 1.0);
        const double y = std::clamp(box.y0 + (i + 0.5) * box.height() / S - 0.5, 0.0, H - 1.0);
        CHECK(roi(i * S + j, 0) == doctest::Approx(2.0 * x + 3.0 * y + 1.0).epsilon(1e-12));
        CHECK(roi(i * S + j, 1) == doctest::Approx(-x).epsilon(1e-12));
      }
  }
  CHECK_THROWS_AS(roi_align(grid, W, H, BBox{0, 0, 11, 8}, 2), std::invalid_argument);
}

TEST_CASE("MaskRoI zeroes bins whose nearest pixel is outside the patch") {
  const int W = 4, H = 4;
  const BinaryMask mask = BinaryMask::from_box(W, H, {0, 0, 2, 4});
  const BBox box{0, 0, 4, 4};
  const Eigen::MatrixXd roi = Eigen::MatrixXd::Ones(4, 1);
  const Eigen::MatrixXd out = mask_roi(roi, mask, box, 2);
  CHECK(out(0, 0) == 1.0);
  CHECK(out(1, 0) == 0.0);
  CHECK(out(2, 0) == 1.0);
  CHECK(out(3, 0) == 0.0);
}

TEST_CASE("position embedding layout") {
  const BBox box{4, 8, 12, 24};
  const Eigen::RowVectorXd e = position_embedding(box, 32, 32, 16);
  const double coords[4] = {0.25, 0.5, 0.25, 0.5};
  for (int c = 0; c < 4; ++c)
    for (int f = 0; f < 2; ++f) {
      const double angle = std::numbers::pi * coords[c] * (1 << f);
      CHECK(e(c * 4 + f) == doctest::Approx(std::sin(angle)));
      CHECK(e(c * 4 + 2 + f) == doctest::Approx(std::cos(angle)));
    }
  CHECK_THROWS_AS(position_embedding(box, 32, 32, 12), std::invalid_argument);
}

TEST_CASE("affinity similarity matches a scalar recomputation") {
  std::mt19937_64 rng(3);
  ad::ParameterStore store;
  const int D = 8, heads = 2;
  nn::init_linear(store, "a.fc_q", D, D, rng);
  nn::init_linear(store, "a.fc_k", D, D, rng);
  std::normal_distribution<double> g(0.0, 0.5);
  auto randm = [&](int r, int c) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    return m;
  };
  store.add("a.mix1.weight", randm(heads, heads));
  store.add("a.mix1.bias", randm(1, heads));
  store.add("a.mix2.weight", randm(heads, 1));
  store.add("a.mix2.bias", randm(1, 1));
  store.add("a.scale", Matrix::Constant(1, 1, 0.7));
  store.add("a.bias_k", randm(D, 1));
  store.add("a.bias_0", Matrix::Constant(1, 1, -1.5));
  const Matrix Q = randm(3, D), K = randm(4, D), prev = randm(3, 4);

  ad::Tape tape;
  const nn::Context ctx{tape, store};
  const ad::Tensor p = tape.constant(prev);
  const Matrix out = affinity_similarity(ctx, "a", tape.constant(Q), tape.constant(K), &p, heads).value();

  auto lin = [&](const std::string& n, const Matrix& x) {
    return Matrix((x * store.value(n + ".weight")).rowwise() + store.value(n + ".bias").row(0));
  };
  const Matrix q = lin("a.fc_q", Q), k = lin("a.fc_k", K);
  const int dh = D / heads;
  for (int m = 0; m < 3; ++m)
    for (int n = 0; n < 4; ++n) {
      Eigen::RowVectorXd per_head(heads);
      for (int h = 0; h < heads; ++h)
        per_head(h) = q.row(m).segment(h * dh, dh).dot(k.row(n).segment(h * dh, dh)) / std::sqrt(double(dh));
      const Eigen::RowVectorXd hidden =
          (per_head * store.value("a.mix1.weight") + store.value("a.mix1.bias")).cwiseMax(0.0);
      const double sim = (hidden * store.value("a.mix2.weight"))(0, 0) + store.value("a.mix2.bias")(0, 0);
      const double bias = (k.row(n) * store.value("a.bias_k"))(0, 0) + store.value("a.bias_0")(0, 0);
      CHECK(out(m, n) == doctest::Approx(sim / 0.7 + bias + prev(m, n)).epsilon(1e-12));
    }
}

TEST_CASE("merged affinity box") {
  const std::vector<BBox> boxes{{0, 0, 2, 2}, {5, 5, 6, 8}, {1, 3, 4, 4}};
  CHECK(merged_affinity_box(Eigen::RowVector3d(0.6, 0.2, 0.5), boxes, 0.5) == BBox{0, 0, 4, 4});
  CHECK_FALSE(merged_affinity_box(Eigen::RowVector3d(0.1, 0.2, 0.3), boxes, 0.5).has_value());
}

TEST_CASE("decoder shapes and the first-stage prior") {
  const ModelConfig cfg = tiny_model();
  const Scene scene = tiny_scene(4);
  const ClassTable classes = make_class_table(CorpusConfig{}, 1);
  const ad::ParameterStore params = init_model(cfg, classes.embed_dim(), 9);
  const PatchInputs inputs = prepare_patches(scene, cfg);
  ad::Tape tape;
  const nn::Context ctx{tape, params};
  const DecoderOutput out = forward_scene(ctx, cfg, scene, inputs, classes.embeddings(classes.all_ids()), nullptr);
  const auto N = static_cast<Eigen::Index>(scene.patches.size());
  REQUIRE(out.stages.size() == 2);
  CHECK(out.num_semantic == classes.size());
  CHECK(out.num_instance == N);
  for (const StageOutput& s : out.stages) {
    CHECK(s.logits.rows() == classes.size() + N);
    CHECK(s.logits.cols() == N);
    CHECK(s.class_logits.cols() == classes.size());
    CHECK(s.affinity.allFinite());
  }
  CHECK(params.value("decoder.stage0.affinity.bias_0")(0, 0) == doctest::Approx(std::log(0.01 / 0.99)));
  CHECK(params.value("decoder.stage1.affinity.bias_0")(0, 0) == 0.0);
  CHECK(params.value("decoder.cls_scale")(0, 0) == 0.1);
}

TEST_CASE("real queries never see denoising queries") {
  const ModelConfig cfg = tiny_model();
  const Scene scene = tiny_scene(6);
  const ClassTable classes = make_class_table(CorpusConfig{}, 1);
  const ad::ParameterStore params = init_model(cfg, classes.embed_dim(), 2);
  const PatchInputs inputs = prepare_patches(scene, cfg);
  const Eigen::MatrixXd emb = classes.embeddings(classes.all_ids());
  std::mt19937_64 rng(5);
  const DenoisingQueries dn =
      denoising_batch(scene.gt, classes, classes.all_ids(), scene.width, scene.height, cfg.dim, 0.4, 0.2, rng);
  REQUIRE(dn.size() > 0);

  ad::Tape t1, t2;
  const DecoderOutput plain = forward_scene({t1, params}, cfg, scene, inputs, emb, nullptr);
  const DecoderOutput noisy = forward_scene({t2, params}, cfg, scene, inputs, emb, &dn);
  const Eigen::Index real = plain.num_real();
  CHECK(noisy.num_denoising == dn.size());
  for (std::size_t s = 0; s < plain.stages.size(); ++s) {
    CHECK((noisy.stages[s].logits.value().topRows(real) - plain.stages[s].logits.value()).cwiseAbs().maxCoeff() <
          1e-12);
    CHECK((noisy.stages[s].class_logits.value().topRows(real) - plain.stages[s].class_logits.value())
              .cwiseAbs()
              .maxCoeff() < 1e-12);
  }
}

TEST_CASE("query enhancement leaves rows without confident patches untouched") {
  const ModelConfig cfg = tiny_model();
  const Scene scene = tiny_scene(8);
  const ClassTable classes = make_class_table(CorpusConfig{}, 1);
  const ad::ParameterStore params = init_model(cfg, classes.embed_dim(), 2);
  const PatchInputs inputs = prepare_patches(scene, cfg);
  const auto N = static_cast<Eigen::Index>(scene.patches.size());
  Eigen::MatrixXd affinity = Eigen::MatrixXd::Zero(3, N);
  affinity(1, 0) = 0.9;
  DecoderInputs din;
  din.patches = &inputs;
  din.image = &scene.image;
  din.width = scene.width;
  din.height = scene.height;
  ad::Tape tape;
  const nn::Context ctx{tape, params};
  std::mt19937_64 rng(1);
  Matrix q(3, cfg.dim);
  std::normal_distribution<double> g;
  for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = g(rng);
  const Matrix out = query_enhance(ctx, tape.constant(q), affinity, din, cfg).value();
  CHECK(out.row(0) == q.row(0));
  CHECK(out.row(2) == q.row(2));
  CHECK((out.row(1) - q.row(1)).norm() > 0.0);
}
