#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "samcp/inference.hpp"
#include "samcp/metrics.hpp"

using namespace samcp;

namespace {

ClassTable two_classes() {
  ClassTable t;
  t.entries.push_back({0, "thing", true, Eigen::Vector2d(1, 0)});
  t.entries.push_back({1, "stuff", false, Eigen::Vector2d(0, 1)});
  return t;
}

Corpus small_corpus(std::uint64_t seed, bool corrupt = false) {
  CorpusConfig c;
  c.num_train = 0;
  c.num_eval = 8;
  if (corrupt) {
    c.corruption.drop_rate = 0.2;
    c.corruption.merge_rate = 0.3;
    c.corruption.jitter_rate = 0.3;
  }
  return generate_corpus(c, seed);
}

}  // namespace

TEST_CASE("single patch, single class") {
  const ClassTable classes = two_classes();
  const BinaryMask patch = BinaryMask::from_box(4, 4, {0, 0, 4, 4});
  // Rows: class 0, class 1, one instance query.
  Eigen::MatrixXd A(3, 1);
  A << 0.2, 0.1, 1.0;
  InstanceScores scores{Eigen::RowVector2d(0.9, 0.1), 0.25};
  const InferenceResult r = infer(A, scores, std::span(&patch, 1), classes, {0, 1}, InferenceConfig{});
  REQUIRE(r.instances.size() == 1);
  CHECK(r.instances[0].mask == patch);
  CHECK(r.instances[0].class_id == 0);
  // Both class rows are below threshold: nothing in the semantic map.
  CHECK(std::all_of(r.semantic.labels.begin(), r.semantic.labels.end(), [](int l) { return l == -1; }));
  REQUIRE(r.panoptic.segments.size() == 1);
  CHECK(r.panoptic.segments[0].mask == patch);
}

TEST_CASE("patch conflicts go to the highest affinity and duplicates are dropped") {
  const ClassTable classes = two_classes();
  const std::vector<BinaryMask> patches{BinaryMask::from_box(6, 2, {0, 0, 2, 2}),
                                        BinaryMask::from_box(6, 2, {2, 0, 4, 2}),
                                        BinaryMask::from_box(6, 2, {4, 0, 6, 2})};
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2 + 3, 3);
  A.row(2) << 0.9, 0.0, 0.0;
  A.row(3) << 0.6, 0.8, 0.0;
  A.row(4) << 0.0, 0.7, 0.0;  // loses patch 1 to query 1, left with nothing
  Eigen::MatrixXd s(3, 2);
  s << 0.9, 0, 0.8, 0, 0.7, 0;
  const InferenceResult r = infer(A, {s, 0.25}, patches, classes, {0, 1}, InferenceConfig{});
  REQUIRE(r.instances.size() == 2);
  CHECK(r.instances[0].patches == std::vector<int>{0});
  CHECK(r.instances[1].patches == std::vector<int>{1});

  // Two queries with the same patch set: the higher score survives.
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(2 + 2, 3);
  B.row(2) << 0.9, 0.9, 0.0;
  B.row(3) << 0.9, 0.9, 0.0;
  Eigen::MatrixXd t(2, 2);
  t << 0.4, 0, 0.6, 0;
  const InferenceResult d = infer(B, {t, 0.25}, patches, classes, {0, 1}, InferenceConfig{});
  REQUIRE(d.instances.size() == 1);
  CHECK(d.instances[0].score == 0.6);
}

TEST_CASE("panoptic segments are disjoint and inside their query's patches") {
  std::mt19937_64 rng(12);
  const Corpus corpus = small_corpus(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::vector<int> active = corpus.classes.all_ids();
  for (const Scene& s : corpus.scenes) {
    const auto N = static_cast<Eigen::Index>(s.patches.size());
    const auto C = static_cast<Eigen::Index>(active.size());
    Eigen::MatrixXd A(C + N, N), scores(N, C);
    for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = u(rng);
    for (Eigen::Index i = 0; i < scores.size(); ++i) scores.data()[i] = u(rng);
    const InferenceResult r = infer(A, {scores, 0.25}, s.patches, corpus.classes, active, InferenceConfig{});
    std::vector<int> seen(static_cast<std::size_t>(s.width * s.height), 0);
    for (const PanopticSegment& seg : r.panoptic.segments)
      for (const Run& run : seg.mask.runs())
        for (std::uint32_t p = run.start; p < run.end(); ++p) ++seen[p];
    CHECK(*std::max_element(seen.begin(), seen.end()) <= 1);
    for (const SegmentPrediction& inst : r.instances) {
      std::vector<BinaryMask> own;
      for (int n : inst.patches) own.push_back(s.patches[static_cast<std::size_t>(n)]);
      CHECK(inst.mask == union_of(own));
      for (int n : inst.patches) CHECK(A(C + inst.query, n) >= 0.5);
    }
  }
}

TEST_CASE("mask pooling") {
  const int W = 5, H = 4, D = 3;
  ImageGrid field(W * H, D);
  std::mt19937_64 rng(2);
  std::normal_distribution<float> g;
  for (Eigen::Index i = 0; i < field.size(); ++i) field.data()[i] = g(rng);
  const Eigen::MatrixXd emb = Eigen::MatrixXd::Identity(D, D);
  const BinaryMask m = BinaryMask::from_box(W, H, {1, 1, 4, 3});
  const Eigen::MatrixXd logits = clip_logits(std::span(&m, 1), field, emb, 0.07);
  Eigen::RowVectorXd pooled = Eigen::RowVectorXd::Zero(D);
  for (int y = 1; y < 3; ++y)
    for (int x = 1; x < 4; ++x) pooled += field.row(y * W + x).cast<double>();
  pooled /= 6.0;
  for (int c = 0; c < D; ++c) CHECK(logits(0, c) == doctest::Approx(pooled(c) / pooled.norm() / 0.07));

  ImageGrid constant = ImageGrid::Zero(W * H, D);
  constant.col(1).setConstant(2.0f);
  const Eigen::MatrixXd l2 = clip_logits(std::span(&m, 1), constant, emb, 0.07);
  CHECK(l2(0, 1) == doctest::Approx(1.0 / 0.07));
  CHECK(l2(0, 0) == doctest::Approx(0.0));

  const BinaryMask empty(W, H);
  CHECK_THROWS_AS(clip_logits(std::span(&empty, 1), field, emb, 0.07), std::invalid_argument);
}

TEST_CASE("score fusion reduces to either branch at the ends") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g(0.0, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::MatrixXd cls(3, 5), clip(3, 5);
    for (Eigen::Index i = 0; i < cls.size(); ++i) {
      cls.data()[i] = g(rng);
      clip.data()[i] = g(rng);
    }
    const Eigen::MatrixXd f0 = fuse_scores(cls, clip, 0.0), f1 = fuse_scores(cls, clip, 1.0);
    for (Eigen::Index m = 0; m < 3; ++m) {
      Eigen::Index a, b, c, d;
      f0.row(m).maxCoeff(&a);
      cls.row(m).maxCoeff(&b);
      f1.row(m).maxCoeff(&c);
      clip.row(m).maxCoeff(&d);
      CHECK(a == b);
      CHECK(c == d);
    }
  }
  CHECK_THROWS_AS(fuse_scores(Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Zero(1, 1), 1.5), std::invalid_argument);
}

TEST_CASE("open mode with kappa 0 keeps the closed-mode decisions") {
  const Corpus corpus = small_corpus(21);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 2.0);
  const std::vector<int> active = corpus.classes.all_ids();
  InferenceConfig cfg;
  cfg.kappa = 0.0;
  for (const Scene& s : corpus.scenes) {
    const auto N = static_cast<Eigen::Index>(s.patches.size());
    const auto C = static_cast<Eigen::Index>(active.size());
    Eigen::MatrixXd A(C + N, N), logits(N, C);
    for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = u(rng);
    for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = g(rng);
    const InferenceResult closed = infer(A, closed_scores(logits, cfg), s.patches, corpus.classes, active, cfg);
    const InstanceScores os =
        open_scores(A.bottomRows(N), logits, s.patches, s.clip_field, corpus.classes.embeddings(active), cfg);
    const InferenceResult open = infer(A, os, s.patches, corpus.classes, active, cfg);
    REQUIRE(closed.instances.size() == open.instances.size());
    for (std::size_t i = 0; i < closed.instances.size(); ++i) {
      CHECK(closed.instances[i].class_id == open.instances[i].class_id);
      CHECK(closed.instances[i].mask == open.instances[i].mask);
    }
  }
}

TEST_CASE("perfect predictions score 100 and empty predictions score 0") {
  const Corpus corpus = small_corpus(2);
  std::vector<SceneEvaluation> good, none;
  for (const Scene& s : corpus.scenes) {
    good.push_back(evaluate_scene(oracle::perfect_prediction(s), s, corpus.classes));
    InferenceResult empty;
    empty.semantic = {s.width, s.height, std::vector<int>(static_cast<std::size_t>(s.width * s.height), -1)};
    none.push_back(evaluate_scene(empty, s, corpus.classes));
  }
  const MetricReport g = summarize(good, corpus.classes), n = summarize(none, corpus.classes);
  CHECK(g.pq == doctest::Approx(100.0));
  CHECK(g.sq == doctest::Approx(100.0));
  CHECK(g.rq == doctest::Approx(100.0));
  CHECK(g.ap == doctest::Approx(100.0));
  CHECK(g.miou == doctest::Approx(100.0));
  CHECK(n.pq == 0.0);
  CHECK(n.ap == 0.0);
  CHECK(n.miou == 0.0);
}

TEST_CASE("panoptic quality on a hand-computed case") {
  // gt: class 0 left half, class 1 right half of a 4x2 grid.
  const int W = 4, H = 2;
  std::vector<GtInstance> gt{{BinaryMask::from_box(W, H, {0, 0, 2, 2}), 0, true},
                             {BinaryMask::from_box(W, H, {2, 0, 4, 2}), 1, false}};
  // Prediction: class 0 covers 3 columns (IoU 4/6), class 1 only the last column (IoU 2/4).
  PanopticMap pred;
  pred.segments.push_back({0, 0, true, 1.0, BinaryMask::from_box(W, H, {0, 0, 3, 2})});
  pred.segments.push_back({1, 1, false, 1.0, BinaryMask::from_box(W, H, {3, 0, 4, 2})});
  const auto counts = panoptic_counts(pred, gt, 2);
  CHECK(counts[0].tp == 1);
  CHECK(counts[0].iou_sum == doctest::Approx(4.0 / 6.0));
  // IoU 0.5 is not a match: one FP and one FN.
  CHECK(counts[1].tp == 0);
  CHECK(counts[1].fp == 1);
  CHECK(counts[1].fn == 1);
  CHECK(counts[0].pq() == doctest::Approx(4.0 / 6.0));
  CHECK(counts[1].pq() == 0.0);
}

TEST_CASE("PQ equals SQ times RQ for every class on random predictions") {
  std::mt19937_64 rng(1);
  const Corpus corpus = small_corpus(7, true);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::vector<int> active = corpus.classes.all_ids();
  std::vector<SceneEvaluation> evals;
  for (const Scene& s : corpus.scenes) {
    const auto N = static_cast<Eigen::Index>(s.patches.size());
    const auto C = static_cast<Eigen::Index>(active.size());
    Eigen::MatrixXd A(C + N, N), scores(N, C);
    for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = u(rng) * u(rng) * 1.5;
    for (Eigen::Index i = 0; i < scores.size(); ++i) scores.data()[i] = u(rng);
    evals.push_back(evaluate_scene(infer(A, {scores, 0.25}, s.patches, corpus.classes, active, InferenceConfig{}), s,
                                   corpus.classes));
  }
  const MetricReport r = summarize(evals, corpus.classes);
  for (const ClassMetrics& m : r.per_class) CHECK(m.pq == doctest::Approx(m.sq * m.rq / 100.0).epsilon(1e-12));
}

TEST_CASE("AP counts the IoU thresholds a single match passes") {
  const std::vector<ApImage> images{{1, {{0.9, {0.6}}}}};
  double sum = 0.0;
  for (double t : coco_iou_thresholds()) sum += average_precision(images, t);
  CHECK(sum / 10.0 == doctest::Approx(0.3));
  // A false positive ranked first halves the precision at full recall.
  const std::vector<ApImage> ranked{{1, {{0.9, {0.1}}, {0.8, {0.95}}}}};
  CHECK(average_precision(ranked, 0.5) == doctest::Approx(0.5));
  const std::vector<ApImage> missed{{2, {}}};
  CHECK(average_precision(missed, 0.5) == 0.0);
}

TEST_CASE("proposal diagnostics") {
  SUBCASE("disjoint patches count toward every miss rate") {
    const std::vector<GtInstance> gt{{BinaryMask::from_box(8, 8, {0, 0, 4, 4}), 0, true}};
    const std::vector<BinaryMask> patches{BinaryMask::from_box(8, 8, {5, 5, 8, 8})};
    const ProposalDiagnostics d = summarize_diagnostics(best_proposal_iou(patches, gt, true, 0.8));
    CHECK(d.mr_25 == 100.0);
    CHECK(d.mr_50 == 100.0);
    CHECK(d.mr_75 == 100.0);
  }
  SUBCASE("merge oracle recovers every instance of a clean corpus") {
    const Corpus corpus = small_corpus(5);
    std::vector<double> all;
    for (const Scene& s : corpus.scenes)
      for (double v : best_proposal_iou(s.patches, s.gt, true, 0.8)) all.push_back(v);
    const ProposalDiagnostics d = summarize_diagnostics(all);
    CHECK(d.mr_50 == 0.0);
    CHECK(d.miou == doctest::Approx(100.0));
  }
  SUBCASE("corrupted corpus agrees with pixel counting") {
    const Corpus corpus = small_corpus(6, true);
    for (const Scene& s : corpus.scenes) {
      const std::vector<double> best = best_proposal_iou(s.patches, s.gt, true, 0.8);
      for (std::size_t k = 0; k < s.gt.size(); ++k) {
        const oracle::Dense g = s.gt[k].mask.to_dense();
        double expected = 0.0;
        oracle::Dense merged(g.size(), 0);
        bool any = false;
        for (const BinaryMask& p : s.patches) {
          const oracle::Dense d = p.to_dense();
          expected = std::max(expected, double(oracle::count_and(d, g)) / double(oracle::count_or(d, g)));
          if (double(oracle::count_and(d, g)) / double(oracle::count(d)) > 0.8) {
            any = true;
            for (std::size_t i = 0; i < d.size(); ++i) merged[i] |= d[i];
          }
        }
        if (any)
          expected = std::max(expected, double(oracle::count_and(merged, g)) / double(oracle::count_or(merged, g)));
        CHECK(best[k] == doctest::Approx(expected).epsilon(1e-12));
      }
    }
  }
}
