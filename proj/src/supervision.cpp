#include "samcp/supervision.hpp"

#include <algorithm>
#include <stdexcept>

#include "samcp/encoder.hpp"

namespace samcp {

int MatchMatrix::semantic_row(int class_id) const {
  for (std::size_t i = 0; i < semantic_classes.size(); ++i)
    if (semantic_classes[i] == class_id) return static_cast<int>(i);
  return -1;
}

Eigen::RowVectorXd match_row(const BinaryMask& target, std::span<const BinaryMask> patches,
                             std::span<const BBox> patch_boxes, const LossConfig& config) {
  const auto N = static_cast<Eigen::Index>(patches.size());
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(N);
  if (target.empty()) return row;
  const BBox target_box = bbox_of(target);
  for (Eigen::Index n = 0; n < N; ++n) {
    const auto i = static_cast<std::size_t>(n);
    double score = 1.0;
    if (config.use_box_iop) score = std::min(score, iop_box(patch_boxes[i], target_box));
    if (config.use_mask_iop) score = std::min(score, iop_mask(patches[i], target));
    if (score > config.tau) row(n) = 1.0;
  }
  if (row.sum() == 0.0) {
    for (Eigen::Index n = 0; n < N; ++n)
      if (iou_mask(patches[static_cast<std::size_t>(n)], target) >= config.low_quality_iou) row(n) = 1.0;
  }
  return row;
}

MatchMatrix build_G(const std::vector<GtInstance>& gt, std::span<const BinaryMask> patches, const LossConfig& config) {
  if (patches.empty()) throw std::invalid_argument("build_G: no patches");
  std::vector<BBox> boxes;
  boxes.reserve(patches.size());
  for (const BinaryMask& p : patches) boxes.push_back(bbox_of(p));

  MatchMatrix G;
  const auto K = static_cast<Eigen::Index>(gt.size());
  const auto N = static_cast<Eigen::Index>(patches.size());
  G.instances = Eigen::MatrixXd::Zero(K, N);
  for (Eigen::Index k = 0; k < K; ++k) G.instances.row(k) = match_row(gt[static_cast<std::size_t>(k)].mask, patches, boxes, config);

  for (const GtInstance& g : gt)
    if (std::find(G.semantic_classes.begin(), G.semantic_classes.end(), g.class_id) == G.semantic_classes.end())
      G.semantic_classes.push_back(g.class_id);
  std::sort(G.semantic_classes.begin(), G.semantic_classes.end());
  G.semantic = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(G.semantic_classes.size()), N);
  for (std::size_t s = 0; s < G.semantic_classes.size(); ++s) {
    std::vector<BinaryMask> members;
    for (const GtInstance& g : gt)
      if (g.class_id == G.semantic_classes[s]) members.push_back(g.mask);
    G.semantic.row(static_cast<Eigen::Index>(s)) = match_row(union_of(members), patches, boxes, config);
  }
  return G;
}

Eigen::Vector4d normalized_cxcywh(const BBox& box, int width, int height) {
  return {(box.x0 + box.x1) / (2.0 * width), (box.y0 + box.y1) / (2.0 * height),
          static_cast<double>(box.width()) / width, static_cast<double>(box.height()) / height};
}

int TargetContext::column_of(int class_id) const {
  for (std::size_t c = 0; c < active_classes.size(); ++c)
    if (active_classes[c] == class_id) return static_cast<int>(c);
  return -1;
}

Eigen::MatrixXd matching_cost(const TargetContext& ctx, const Eigen::MatrixXd& class_logits,
                              const Eigen::MatrixXd& affinity_logits) {
  const LossConfig& cfg = ctx.config;
  const std::vector<GtInstance>& gt = *ctx.gt;
  const auto K = static_cast<Eigen::Index>(gt.size());
  const Eigen::Index Q = affinity_logits.rows();
  const Eigen::Index N = affinity_logits.cols();
  const Eigen::MatrixXd A = affinity_logits.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });

  // Predicted box of each query: merged boxes of its high-affinity patches,
  // falling back to the query's own seed patch.
  std::vector<BBox> query_boxes;
  for (Eigen::Index q = 0; q < Q; ++q) {
    auto box = merged_affinity_box(A.row(q), ctx.patch_boxes, 0.5);
    query_boxes.push_back(box ? *box : ctx.patch_boxes[static_cast<std::size_t>(std::min(q, N - 1))]);
  }

  Eigen::MatrixXd cost = Eigen::MatrixXd::Zero(K, Q);
  for (Eigen::Index k = 0; k < K; ++k) {
    const GtInstance& g = gt[static_cast<std::size_t>(k)];
    const Eigen::RowVectorXd target = ctx.match->instances.row(k);
    const double norm = std::max(target.sum(), 1.0);
    const BBox gt_box = bbox_of(g.mask);
    const Eigen::Vector4d gt_cxcywh = normalized_cxcywh(gt_box, ctx.width, ctx.height);
    const int col = ctx.column_of(g.class_id);
    for (Eigen::Index q = 0; q < Q; ++q) {
      double cls = 0.0;
      if (col >= 0) {
        const double z = class_logits(q, col);
        cls = focal_loss_logit(z, 1.0, cfg.focal_alpha, cfg.focal_gamma) -
              focal_loss_logit(z, 0.0, cfg.focal_alpha, cfg.focal_gamma);
      }
      double mfl = 0.0;
      for (Eigen::Index n = 0; n < N; ++n)
        mfl += focal_loss_logit(affinity_logits(q, n), target(n), cfg.focal_alpha, cfg.focal_gamma);
      mfl /= norm;
      const double dice = soft_dice(A.row(q), target);
      const BBox& qb = query_boxes[static_cast<std::size_t>(q)];
      const double l1 = (normalized_cxcywh(qb, ctx.width, ctx.height) - gt_cxcywh).cwiseAbs().sum();
      const double giou = 1.0 - giou_box(qb, gt_box);
      cost(k, q) = cfg.match_cls * cls + cfg.match_mfl * mfl + cfg.match_dice * dice + cfg.match_bbox * l1 +
                   cfg.match_giou * giou;
    }
  }
  return cost;
}

Eigen::MatrixXd SupervisionTargets::class_onehot(int num_classes) const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(class_targets.size()), num_classes);
  for (std::size_t m = 0; m < class_targets.size(); ++m)
    if (class_targets[m] >= 0) out(static_cast<Eigen::Index>(m), class_targets[m]) = 1.0;
  return out;
}

SupervisionTargets build_targets(const TargetContext& ctx, const Eigen::MatrixXd& class_logits,
                                 const Eigen::MatrixXd& affinity_logits) {
  const Eigen::Index M = affinity_logits.rows();
  const Eigen::Index N = affinity_logits.cols();
  const int C = ctx.num_semantic;
  const int Nq = ctx.num_instance;
  const std::vector<GtInstance>& gt = *ctx.gt;
  const MatchMatrix& G = *ctx.match;

  SupervisionTargets t;
  t.affinity = Eigen::MatrixXd::Zero(M, N);
  t.weights = Eigen::VectorXd::Zero(M);
  t.class_targets.assign(static_cast<std::size_t>(M), -1);
  t.assignment.assign(static_cast<std::size_t>(M), -1);

  // Semantic queries: positive iff the class is present in the image.
  for (int c = 0; c < C; ++c) {
    const int row = G.semantic_row(ctx.active_classes[static_cast<std::size_t>(c)]);
    if (row < 0) continue;
    t.affinity.row(c) = G.semantic.row(row);
    t.weights(c) = 1.0;
    t.class_targets[static_cast<std::size_t>(c)] = c;
  }

  // Instance queries: Hungarian matching against every gt instance.
  const Eigen::MatrixXd cost =
      matching_cost(ctx, class_logits.middleRows(C, Nq), affinity_logits.middleRows(C, Nq));
  const Assignment match = hungarian(cost);
  for (int q = 0; q < Nq; ++q) {
    const Eigen::Index m = C + q;
    const int k = match.col_to_row[static_cast<std::size_t>(q)];
    if (k >= 0) {
      t.affinity.row(m) = G.instances.row(k);
      t.weights(m) = 1.0;
      t.class_targets[static_cast<std::size_t>(m)] = ctx.column_of(gt[static_cast<std::size_t>(k)].class_id);
      t.assignment[static_cast<std::size_t>(m)] = k;
    } else if (ctx.config.negative_self_affinity) {
      t.affinity(m, q) = 1.0;
      t.weights(m) = 1.0;
    }
  }
  t.num_positive = static_cast<int>(t.weights.head(C + Nq).sum());

  // Denoising queries are supervised directly by their source instance.
  if (ctx.denoising) {
    for (int j = 0; j < ctx.denoising->size(); ++j) {
      const Eigen::Index m = C + Nq + j;
      const int k = ctx.denoising->gt_index[static_cast<std::size_t>(j)];
      t.affinity.row(m) = G.instances.row(k);
      t.weights(m) = 1.0;
      t.class_targets[static_cast<std::size_t>(m)] = ctx.column_of(gt[static_cast<std::size_t>(k)].class_id);
      t.assignment[static_cast<std::size_t>(m)] = k;
    }
  }
  return t;
}

ad::Tensor loss_cls(const ad::Tensor& class_logits, const SupervisionTargets& targets, const LossConfig& config) {
  const Eigen::MatrixXd onehot = targets.class_onehot(static_cast<int>(class_logits.cols()));
  const ad::Tensor fl = ad::sigmoid_focal_loss(class_logits, onehot, config.focal_alpha, config.focal_gamma);
  return ad::scale(ad::sum_all(fl), 1.0 / static_cast<double>(class_logits.rows()));
}

std::pair<ad::Tensor, ad::Tensor> loss_masks(const ad::Tensor& affinity_logits, const SupervisionTargets& targets,
                                             const LossConfig& config) {
  ad::Tape& tape = *affinity_logits.tape();
  if (targets.num_positive == 0) {
    return {tape.constant(ad::Matrix::Zero(1, 1)), tape.constant(ad::Matrix::Zero(1, 1))};
  }
  const double inv_pos = 1.0 / static_cast<double>(targets.num_positive);
  const Eigen::MatrixXd& B = targets.affinity;
  const Eigen::VectorXd assigned = B.rowwise().sum().cwiseMax(1.0);
  const Eigen::MatrixXd focal_weights = targets.weights.cwiseQuotient(assigned);

  const ad::Tensor fl = ad::sigmoid_focal_loss(affinity_logits, B, config.focal_alpha, config.focal_gamma);
  const ad::Tensor mfl = ad::scale(ad::sum_all(fl * tape.constant(focal_weights)), inv_pos);

  const ad::Tensor A = ad::sigmoid(affinity_logits);
  const ad::Tensor overlap = ad::sum(A * tape.constant(B), 1);
  const ad::Tensor mass = ad::sum(A, 1) + tape.constant(B.rowwise().sum());
  const ad::Tensor dice_rows = ad::add_constant(ad::scale(overlap / mass, -2.0), 1.0);
  const ad::Tensor dice = ad::scale(ad::sum_all(dice_rows * tape.constant(targets.weights)), inv_pos);
  return {mfl, dice};
}

LossReport total_loss(std::span<const StageLoss> stages, const LossConfig& config) {
  if (stages.empty()) throw std::invalid_argument("total_loss: no stages");
  LossReport report;
  const double inv = 1.0 / static_cast<double>(stages.size());
  ad::Tensor cls = stages[0].cls, mfl = stages[0].mfl, dice = stages[0].dice;
  for (std::size_t s = 1; s < stages.size(); ++s) {
    cls = cls + stages[s].cls;
    mfl = mfl + stages[s].mfl;
    dice = dice + stages[s].dice;
  }
  cls = ad::scale(cls, inv);
  mfl = ad::scale(mfl, inv);
  dice = ad::scale(dice, inv);
  report.total = ad::scale(cls, config.weight_cls) + ad::scale(mfl, config.weight_mfl) +
                 ad::scale(dice, config.weight_dice);
  report.cls = cls.item();
  report.mfl = mfl.item();
  report.dice = dice.item();
  report.all = report.total.item();
  for (const StageLoss& s : stages) report.per_stage.push_back({s.cls.item(), s.mfl.item(), s.dice.item()});
  return report;
}

DenoisingQueries denoising_batch(const std::vector<GtInstance>& gt, const ClassTable& classes,
                                 const std::vector<int>& active_classes, int width, int height, int dim,
                                 double box_noise, double label_flip, std::mt19937_64& rng) {
  DenoisingQueries dn;
  const auto K = static_cast<Eigen::Index>(gt.size());
  dn.positions.resize(K, dim);
  dn.class_embeddings.resize(K, classes.embed_dim());
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (Eigen::Index k = 0; k < K; ++k) {
    const GtInstance& g = gt[static_cast<std::size_t>(k)];
    const BBox box = bbox_of(g.mask);
    BBox jittered = box;
    if (box_noise > 0) {
      const double w = box.width(), h = box.height();
      const double cx = (box.x0 + box.x1) / 2.0 + unit(rng) * box_noise * w / 2.0;
      const double cy = (box.y0 + box.y1) / 2.0 + unit(rng) * box_noise * h / 2.0;
      const double nw = std::max(1.0, w * (1.0 + unit(rng) * box_noise));
      const double nh = std::max(1.0, h * (1.0 + unit(rng) * box_noise));
      jittered.x0 = std::clamp(static_cast<int>(std::lround(cx - nw / 2)), 0, width - 1);
      jittered.y0 = std::clamp(static_cast<int>(std::lround(cy - nh / 2)), 0, height - 1);
      jittered.x1 = std::clamp(static_cast<int>(std::lround(cx + nw / 2)), jittered.x0 + 1, width);
      jittered.y1 = std::clamp(static_cast<int>(std::lround(cy + nh / 2)), jittered.y0 + 1, height);
    }
    int label = g.class_id;
    if (label_flip > 0 && active_classes.size() > 1 && coin(rng) < label_flip) {
      std::vector<int> others;
      for (int c : active_classes)
        if (c != g.class_id) others.push_back(c);
      label = others[std::uniform_int_distribution<std::size_t>(0, others.size() - 1)(rng)];
    }
    dn.positions.row(k) = position_embedding(jittered, width, height, dim);
    dn.class_embeddings.row(k) = classes[label].embedding.transpose();
    dn.gt_index.push_back(static_cast<int>(k));
    dn.boxes.push_back(jittered);
  }
  return dn;
}

}  // namespace samcp
