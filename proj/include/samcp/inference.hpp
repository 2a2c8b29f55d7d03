#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

#include "samcp/config.hpp"
#include "samcp/mask.hpp"
#include "samcp/synth.hpp"

namespace samcp {

enum class SegmentKind { kSemanticRegion, kInstance };

struct SegmentPrediction {
  BinaryMask mask;
  int class_id = -1;
  double score = 0.0;
  SegmentKind kind = SegmentKind::kInstance;
  int query = -1;             // producing query row (instance-query index)
  std::vector<int> patches;   // merged patch indices
};

struct SemanticMap {
  int width = 0;
  int height = 0;
  std::vector<int> labels;  // class id per pixel, -1 if unlabeled

  BinaryMask mask_of(int class_id) const;
};

struct PanopticSegment {
  int id = 0;
  int class_id = -1;
  bool is_thing = false;
  double score = 0.0;
  BinaryMask mask;
};

struct PanopticMap {
  int width = 0;
  int height = 0;
  std::vector<int> segment_of_pixel;  // index into `segments`, -1 if void
  std::vector<PanopticSegment> segments;
};

struct InferenceResult {
  SemanticMap semantic;
  std::vector<SegmentPrediction> instances;
  PanopticMap panoptic;
};

/// Patch-level class scores of the instance queries plus the keep threshold
/// they are compared against.
struct InstanceScores {
  Eigen::MatrixXd scores;  // Nq x C
  double threshold = 0.25;
};

/// Merges patches into semantic regions (class rows of `affinity`) and
/// instances (instance rows), then combines them into a panoptic map.
/// `affinity` holds the real query rows only: C semantic rows then Nq
/// instance rows. `active_classes` maps score columns to class ids.
InferenceResult infer(const Eigen::MatrixXd& affinity, const InstanceScores& scores, std::span<const BinaryMask> patches,
                      const ClassTable& classes, const std::vector<int>& active_classes, const InferenceConfig& config);

/// Closed-domain scores: sigmoid(S^cls) with threshold score_threshold.
InstanceScores closed_scores(const Eigen::MatrixXd& class_logits, const InferenceConfig& config);

/// Mask-pooled CLIP logits: cosine(mean clip_field over mask, e_c) / temperature.
Eigen::MatrixXd clip_logits(std::span<const BinaryMask> masks, const ImageGrid& clip_field,
                            const Eigen::MatrixXd& class_embeddings, double temperature);

/// S^ov = sigmoid(S^cls)^(1-kappa) + softmax_c(S^CLIP)^kappa.
Eigen::MatrixXd fuse_scores(const Eigen::MatrixXd& class_logits, const Eigen::MatrixXd& clip_logits, double kappa);

/// Open-vocabulary scores for the instance queries. Queries without
/// high-affinity patches get zero scores. The keep threshold is fused the
/// same way as the scores: theta_s^(1-kappa) + theta_clip^kappa.
InstanceScores open_scores(const Eigen::MatrixXd& instance_affinity, const Eigen::MatrixXd& class_logits,
                           std::span<const BinaryMask> patches, const ImageGrid& clip_field,
                           const Eigen::MatrixXd& class_embeddings, const InferenceConfig& config);

}  // namespace samcp
