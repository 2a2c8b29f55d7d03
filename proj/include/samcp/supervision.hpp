#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "samcp/autodiff.hpp"
#include "samcp/config.hpp"
#include "samcp/decoder.hpp"
#include "samcp/hungarian.hpp"
#include "samcp/mask.hpp"
#include "samcp/synth.hpp"

namespace samcp {

// ---------------------------------------------------------------- scalar losses

/// Focal loss of probability p against a {0,1} target.
template <typename Scalar>
Scalar focal_loss(Scalar p, Scalar target, Scalar alpha, Scalar gamma) {
  using std::log;
  using std::pow;
  const Scalar one(1);
  Scalar pos(0), neg(0);
  if (target != Scalar(0) && p != one) pos = alpha * pow(one - p, gamma) * -log(p);
  if (target != one && p != Scalar(0)) neg = (one - alpha) * pow(p, gamma) * -log(one - p);
  return target * pos + (one - target) * neg;
}

/// Focal loss evaluated from a logit; stable for large |z|.
template <typename Scalar>
Scalar focal_loss_logit(Scalar z, Scalar target, Scalar alpha, Scalar gamma) {
  using std::exp;
  using std::log1p;
  using std::pow;
  const Scalar one(1);
  auto softplus = [](Scalar x) { return x > Scalar(0) ? x + log1p(exp(-x)) : log1p(exp(x)); };
  const Scalar p = z >= Scalar(0) ? one / (one + exp(-z)) : exp(z) / (one + exp(z));
  return target * alpha * pow(one - p, gamma) * softplus(-z) + (one - target) * (one - alpha) * pow(p, gamma) * softplus(z);
}

/// Soft Dice loss 1 - 2 sum(a b) / (sum a + sum b); zero when both are empty.
template <typename DerivedA, typename DerivedB>
double soft_dice(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  const double denom = a.sum() + b.sum();
  if (denom <= 0.0) return 0.0;
  return 1.0 - 2.0 * a.cwiseProduct(b).sum() / denom;
}

// ---------------------------------------------------------------- label assignment

/// Patch composition of each ground-truth unit. `instances` has one row per
/// gt instance; `semantic` has one row per class present, built from the
/// union of that class's instances.
struct MatchMatrix {
  Eigen::MatrixXd instances;
  std::vector<int> semantic_classes;
  Eigen::MatrixXd semantic;

  /// Row of `semantic` for a class, or -1 if the class is absent.
  int semantic_row(int class_id) const;
};

/// One G row: patches with min(IoP_box, IoP_mask) > tau; if none, patches
/// with IoU >= low_quality_iou.
Eigen::RowVectorXd match_row(const BinaryMask& target, std::span<const BinaryMask> patches,
                             std::span<const BBox> patch_boxes, const LossConfig& config);

MatchMatrix build_G(const std::vector<GtInstance>& gt, std::span<const BinaryMask> patches, const LossConfig& config);

/// Box as normalized (cx, cy, w, h).
Eigen::Vector4d normalized_cxcywh(const BBox& box, int width, int height);

/// Everything target construction needs besides the stage predictions.
struct TargetContext {
  const std::vector<GtInstance>* gt = nullptr;
  const MatchMatrix* match = nullptr;
  std::span<const BBox> patch_boxes;
  std::vector<int> active_classes;  // class id of each classifier column
  int width = 0;
  int height = 0;
  int num_semantic = 0;
  int num_instance = 0;
  const DenoisingQueries* denoising = nullptr;
  LossConfig config;

  /// Classifier column of a class id, or -1.
  int column_of(int class_id) const;
};

/// Hungarian cost between ground-truth instances (rows) and instance queries
/// (columns): weighted cls, mfl, dice, box L1 and 1 - gIoU terms.
/// `class_logits` and `affinity_logits` hold only the instance-query rows.
Eigen::MatrixXd matching_cost(const TargetContext& ctx, const Eigen::MatrixXd& class_logits,
                              const Eigen::MatrixXd& affinity_logits);

struct SupervisionTargets {
  Eigen::MatrixXd affinity;        // B: M x N
  Eigen::VectorXd weights;         // epsilon per query
  std::vector<int> class_targets;  // classifier column per query, -1 for negatives
  std::vector<int> assignment;     // gt index per query, -1 if none
  int num_positive = 0;            // real queries with epsilon = 1

  /// M x C one-hot class targets.
  Eigen::MatrixXd class_onehot(int num_classes) const;
};

/// Targets for one stage's predictions (all M rows, including denoising).
SupervisionTargets build_targets(const TargetContext& ctx, const Eigen::MatrixXd& class_logits,
                                 const Eigen::MatrixXd& affinity_logits);

// ---------------------------------------------------------------- losses

struct StageLoss {
  ad::Tensor cls;
  ad::Tensor mfl;
  ad::Tensor dice;
};

/// (1/M) sum_m sum_c FL(sigmoid(S[m, c]), 1[c*_m = c]).
ad::Tensor loss_cls(const ad::Tensor& class_logits, const SupervisionTargets& targets, const LossConfig& config);

/// Mask focal and Dice losses over affinity logits, normalized by M*.
std::pair<ad::Tensor, ad::Tensor> loss_masks(const ad::Tensor& affinity_logits, const SupervisionTargets& targets,
                                             const LossConfig& config);

struct LossReport {
  ad::Tensor total;  // differentiable L_all
  double cls = 0.0;
  double mfl = 0.0;
  double dice = 0.0;
  double all = 0.0;
  std::vector<std::array<double, 3>> per_stage;  // (cls, mfl, dice)
};

/// Averages per-stage losses; L_all = w_cls L_cls + w_mfl L_mfl + w_dice L_dice.
LossReport total_loss(std::span<const StageLoss> stages, const LossConfig& config);

// ---------------------------------------------------------------- denoising

/// One query per gt instance from a jittered box and a possibly flipped label.
DenoisingQueries denoising_batch(const std::vector<GtInstance>& gt, const ClassTable& classes,
                                 const std::vector<int>& active_classes, int width, int height, int dim,
                                 double box_noise, double label_flip, std::mt19937_64& rng);

}  // namespace samcp
