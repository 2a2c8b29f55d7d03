#include "samcp/inference.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace samcp {

namespace {

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

BinaryMask merge_patches(std::span<const BinaryMask> patches, const std::vector<int>& ids) {
  std::vector<BinaryMask> parts;
  parts.reserve(ids.size());
  for (int n : ids) parts.push_back(patches[static_cast<std::size_t>(n)]);
  return union_of(parts);
}

}  // namespace

BinaryMask SemanticMap::mask_of(int class_id) const {
  std::vector<std::uint8_t> dense(labels.size());
  for (std::size_t p = 0; p < labels.size(); ++p) dense[p] = labels[p] == class_id;
  return BinaryMask::from_dense(width, height, dense);
}

InstanceScores closed_scores(const Eigen::MatrixXd& class_logits, const InferenceConfig& config) {
  return {class_logits.unaryExpr([](double x) { return sigmoid(x); }), config.score_threshold};
}

Eigen::MatrixXd clip_logits(std::span<const BinaryMask> masks, const ImageGrid& clip_field,
                            const Eigen::MatrixXd& class_embeddings, double temperature) {
  if (class_embeddings.cols() != clip_field.cols()) throw std::invalid_argument("clip_logits: embedding dim mismatch");
  const Eigen::VectorXd norms = class_embeddings.rowwise().norm();
  const Eigen::MatrixXd e_hat = class_embeddings.array().colwise() / norms.array();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(masks.size()), class_embeddings.rows());
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const BinaryMask& m = masks[i];
    if (m.empty()) throw std::invalid_argument("clip_logits: empty mask");
    Eigen::RowVectorXd pooled = Eigen::RowVectorXd::Zero(clip_field.cols());
    for (const Run& r : m.runs())
      for (std::uint32_t p = r.start; p < r.end(); ++p) pooled += clip_field.row(p).cast<double>();
    pooled /= static_cast<double>(m.area());
    const double norm = pooled.norm();
    const Eigen::RowVectorXd cosine =
        norm > 0 ? Eigen::RowVectorXd((e_hat * pooled.transpose()).transpose() / norm)
                 : Eigen::RowVectorXd::Zero(class_embeddings.rows());
    out.row(static_cast<Eigen::Index>(i)) = cosine / temperature;
  }
  return out;
}

Eigen::MatrixXd fuse_scores(const Eigen::MatrixXd& class_logits, const Eigen::MatrixXd& clip, double kappa) {
  if (kappa < 0.0 || kappa > 1.0) throw std::invalid_argument("fuse_scores: kappa must lie in [0, 1]");
  if (class_logits.rows() != clip.rows() || class_logits.cols() != clip.cols())
    throw std::invalid_argument("fuse_scores: shape mismatch");
  Eigen::MatrixXd out(class_logits.rows(), class_logits.cols());
  for (Eigen::Index m = 0; m < clip.rows(); ++m) {
    const double mx = clip.row(m).maxCoeff();
    Eigen::RowVectorXd prob = (clip.row(m).array() - mx).exp();
    prob /= prob.sum();
    for (Eigen::Index c = 0; c < clip.cols(); ++c)
      out(m, c) = std::pow(sigmoid(class_logits(m, c)), 1.0 - kappa) + std::pow(prob(c), kappa);
  }
  return out;
}

InstanceScores open_scores(const Eigen::MatrixXd& instance_affinity, const Eigen::MatrixXd& class_logits,
                           std::span<const BinaryMask> patches, const ImageGrid& clip_field,
                           const Eigen::MatrixXd& class_embeddings, const InferenceConfig& config) {
  const double kappa = config.kappa;
  InstanceScores out;
  out.threshold = std::pow(config.score_threshold, 1.0 - kappa) + std::pow(config.clip_prob_threshold, kappa);
  out.scores = Eigen::MatrixXd::Zero(class_logits.rows(), class_logits.cols());
  for (Eigen::Index q = 0; q < instance_affinity.rows(); ++q) {
    std::vector<int> ids;
    for (Eigen::Index n = 0; n < instance_affinity.cols(); ++n)
      if (instance_affinity(q, n) >= config.affinity_threshold) ids.push_back(static_cast<int>(n));
    if (ids.empty()) continue;
    const BinaryMask mask = merge_patches(patches, ids);
    const Eigen::MatrixXd clip = clip_logits(std::span(&mask, 1), clip_field, class_embeddings, config.clip_temperature);
    out.scores.row(q) = fuse_scores(class_logits.row(q), clip, kappa);
  }
  return out;
}

InferenceResult infer(const Eigen::MatrixXd& affinity, const InstanceScores& scores, std::span<const BinaryMask> patches,
                      const ClassTable& classes, const std::vector<int>& active_classes, const InferenceConfig& config) {
  const auto C = static_cast<Eigen::Index>(active_classes.size());
  const Eigen::Index N = affinity.cols();
  const Eigen::Index Nq = affinity.rows() - C;
  if (static_cast<Eigen::Index>(patches.size()) != N) throw std::invalid_argument("infer: patch count mismatch");
  if (scores.scores.rows() != Nq || scores.scores.cols() != C) throw std::invalid_argument("infer: score shape mismatch");
  const int W = patches.empty() ? 0 : patches.front().width();
  const int H = patches.empty() ? 0 : patches.front().height();
  const double theta = config.affinity_threshold;
  InferenceResult result;

  // Semantic segmentation: each patch joins the class row with the highest
  // affinity among those reaching the threshold.
  result.semantic = {W, H, std::vector<int>(static_cast<std::size_t>(W * H), -1)};
  for (Eigen::Index n = 0; n < N; ++n) {
    int best = -1;
    for (Eigen::Index c = 0; c < C; ++c)
      if (affinity(c, n) >= theta && (best < 0 || affinity(c, n) > affinity(best, n))) best = static_cast<int>(c);
    if (best < 0) continue;
    for (const Run& r : patches[static_cast<std::size_t>(n)].runs())
      std::fill_n(result.semantic.labels.begin() + r.start, r.length, active_classes[static_cast<std::size_t>(best)]);
  }

  // Instance candidates: confident queries with a non-empty thresholded row.
  struct Candidate {
    int query;
    int column;
    double score;
  };
  std::vector<Candidate> candidates;
  for (Eigen::Index q = 0; q < Nq; ++q) {
    if ((affinity.row(C + q).array() < theta).all()) continue;
    Eigen::Index col = 0;
    const double score = scores.scores.row(q).maxCoeff(&col);
    if (score >= scores.threshold) candidates.push_back({static_cast<int>(q), static_cast<int>(col), score});
  }

  // Queries whose thresholded rows select the same patches keep the
  // higher-scoring one.
  auto selected = [&](const Candidate& c) {
    std::vector<int> out;
    for (Eigen::Index n = 0; n < N; ++n)
      if (affinity(C + c.query, n) >= theta) out.push_back(static_cast<int>(n));
    return out;
  };
  std::vector<Candidate> kept;
  std::vector<std::vector<int>> kept_sets;
  for (const Candidate& c : candidates) {
    std::vector<int> set = selected(c);
    const auto it = std::find(kept_sets.begin(), kept_sets.end(), set);
    if (it == kept_sets.end()) {
      kept.push_back(c);
      kept_sets.push_back(std::move(set));
    } else if (Candidate& k = kept[static_cast<std::size_t>(it - kept_sets.begin())]; c.score > k.score) {
      k = c;
    }
  }

  // A patch claimed by several queries goes to the highest affinity, ties to
  // the higher score.
  std::map<int, std::vector<int>> owned;
  for (Eigen::Index n = 0; n < N; ++n) {
    const Candidate* winner = nullptr;
    for (const Candidate& c : kept) {
      const double a = affinity(C + c.query, n);
      if (a < theta) continue;
      if (!winner || a > affinity(C + winner->query, n) ||
          (a == affinity(C + winner->query, n) && c.score > winner->score))
        winner = &c;
    }
    if (winner) owned[winner->query].push_back(static_cast<int>(n));
  }
  std::erase_if(kept, [&](const Candidate& c) { return !owned.contains(c.query); });
  for (const Candidate& c : kept) {
    SegmentPrediction s;
    s.patches = owned[c.query];
    s.mask = merge_patches(patches, s.patches);
    s.class_id = active_classes[static_cast<std::size_t>(c.column)];
    s.score = c.score;
    s.kind = SegmentKind::kInstance;
    s.query = c.query;
    result.instances.push_back(std::move(s));
  }

  // Panoptic: things by descending score, then stuff from the semantic map.
  PanopticMap& pan = result.panoptic;
  pan.width = W;
  pan.height = H;
  pan.segment_of_pixel.assign(static_cast<std::size_t>(W * H), -1);
  std::vector<std::size_t> order(result.instances.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return result.instances[a].score > result.instances[b].score;
  });
  for (std::size_t i : order) {
    const SegmentPrediction& s = result.instances[i];
    if (!classes[s.class_id].is_thing) continue;
    std::vector<std::uint32_t> free_pixels;
    for (const Run& r : s.mask.runs())
      for (std::uint32_t p = r.start; p < r.end(); ++p)
        if (pan.segment_of_pixel[p] < 0) free_pixels.push_back(p);
    if (free_pixels.empty() ||
        static_cast<double>(free_pixels.size()) < config.overlap_keep * static_cast<double>(s.mask.area()))
      continue;
    const int id = static_cast<int>(pan.segments.size());
    std::vector<Run> runs;
    for (std::uint32_t p : free_pixels) {
      pan.segment_of_pixel[p] = id;
      runs.push_back({p, 1});
    }
    pan.segments.push_back({id, s.class_id, true, s.score, BinaryMask(W, H, std::move(runs))});
  }
  for (int cls : active_classes) {
    if (classes[cls].is_thing) continue;
    std::vector<Run> runs;
    for (std::size_t p = 0; p < result.semantic.labels.size(); ++p)
      if (result.semantic.labels[p] == cls && pan.segment_of_pixel[p] < 0) runs.push_back({static_cast<std::uint32_t>(p), 1});
    if (runs.empty()) continue;
    const int id = static_cast<int>(pan.segments.size());
    BinaryMask m(W, H, std::move(runs));
    for (const Run& r : m.runs()) std::fill_n(pan.segment_of_pixel.begin() + r.start, r.length, id);
    pan.segments.push_back({id, cls, false, 1.0, std::move(m)});
  }
  return result;
}

}  // namespace samcp
