#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "samcp/config.hpp"
#include "samcp/inference.hpp"
#include "samcp/mask.hpp"
#include "samcp/synth.hpp"

namespace samcp {

// ---------------------------------------------------------------- per-scene records

struct PqCounts {
  double iou_sum = 0.0;
  int tp = 0;
  int fp = 0;
  int fn = 0;

  double denominator() const { return tp + 0.5 * fp + 0.5 * fn; }
  double pq() const { return denominator() > 0 ? iou_sum / denominator() : 0.0; }
  double sq() const { return tp > 0 ? iou_sum / tp : 0.0; }
  double rq() const { return denominator() > 0 ? tp / denominator() : 0.0; }
  PqCounts& operator+=(const PqCounts& o);
};

/// One detection for AP: its score and IoU against every gt of its class in
/// the same scene (gt order fixed).
struct ApDetection {
  double score = 0.0;
  std::vector<double> ious;
};

struct ApImage {
  int num_gt = 0;
  std::vector<ApDetection> detections;
};

struct SceneEvaluation {
  std::vector<PqCounts> pq;                 // per class id
  std::vector<ApImage> ap;                  // per class id (thing classes only populated)
  std::vector<long> intersection;           // per class id, semantic pixels
  std::vector<long> union_area;             // per class id
};

/// Per-class panoptic matching at IoU > 0.5.
std::vector<PqCounts> panoptic_counts(const PanopticMap& pred, const std::vector<GtInstance>& gt, int num_classes);

SemanticMap gt_semantic_map(const std::vector<GtInstance>& gt, int width, int height);

SceneEvaluation evaluate_scene(const InferenceResult& result, const Scene& scene, const ClassTable& classes);

// ---------------------------------------------------------------- aggregation

/// COCO 101-point interpolated AP of one class at one IoU threshold.
double average_precision(std::span<const ApImage> images, double iou_threshold);

/// Thresholds 0.50, 0.55, ..., 0.95.
std::vector<double> coco_iou_thresholds();

struct ClassMetrics {
  int class_id = -1;
  std::string name;
  bool is_thing = false;
  PqCounts counts;
  double pq = 0.0, sq = 0.0, rq = 0.0;
  std::optional<double> ap;   // things with at least one gt
  std::optional<double> iou;  // classes present in gt or prediction
};

struct MetricReport {
  int scenes = 0;
  double pq = 0.0, sq = 0.0, rq = 0.0;
  double pq_things = 0.0, pq_stuff = 0.0;
  double ap = 0.0;
  double miou = 0.0;
  std::vector<ClassMetrics> per_class;

  /// Mean PQ over the listed classes that occur (in gt or prediction).
  double mean_pq(const std::vector<int>& class_ids) const;
};

/// Merges scene records in the given order. All values are percentages.
/// PQ, SQ and RQ are averaged over classes with tp + fp + fn > 0.
MetricReport summarize(std::span<const SceneEvaluation> scenes, const ClassTable& classes);

// ---------------------------------------------------------------- proposal diagnostics

struct ProposalDiagnostics {
  int instances = 0;
  double miou = 0.0;          // mean best IoU
  double miou_above = 0.0;    // mean best IoU over instances with best IoU > 0.5
  double mr_25 = 0.0, mr_50 = 0.0, mr_75 = 0.0;  // percent of instances with best IoU <= x
};

/// Best IoU of each gt instance among the patches, and with `merge_oracle`
/// also the union of the patches with IoP > tau against it.
std::vector<double> best_proposal_iou(std::span<const BinaryMask> patches, const std::vector<GtInstance>& gt,
                                      bool merge_oracle, double tau);

ProposalDiagnostics summarize_diagnostics(std::span<const double> best_ious);

}  // namespace samcp
