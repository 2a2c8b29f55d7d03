#include "samcp/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace samcp {

PqCounts& PqCounts::operator+=(const PqCounts& o) {
  iou_sum += o.iou_sum;
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  return *this;
}

std::vector<PqCounts> panoptic_counts(const PanopticMap& pred, const std::vector<GtInstance>& gt, int num_classes) {
  std::vector<PqCounts> out(static_cast<std::size_t>(num_classes));
  std::vector<bool> gt_matched(gt.size(), false);
  for (const PanopticSegment& s : pred.segments) {
    if (s.class_id < 0 || s.class_id >= num_classes) throw std::invalid_argument("panoptic_counts: class out of range");
    PqCounts& c = out[static_cast<std::size_t>(s.class_id)];
    bool matched = false;
    for (std::size_t k = 0; k < gt.size() && !matched; ++k) {
      if (gt_matched[k] || gt[k].class_id != s.class_id) continue;
      const double iou = iou_mask(s.mask, gt[k].mask);
      if (iou > 0.5) {
        gt_matched[k] = true;
        matched = true;
        c.iou_sum += iou;
        ++c.tp;
      }
    }
    if (!matched) ++c.fp;
  }
  for (std::size_t k = 0; k < gt.size(); ++k)
    if (!gt_matched[k]) ++out[static_cast<std::size_t>(gt[k].class_id)].fn;
  return out;
}

SemanticMap gt_semantic_map(const std::vector<GtInstance>& gt, int width, int height) {
  SemanticMap map{width, height, std::vector<int>(static_cast<std::size_t>(width * height), -1)};
  for (const GtInstance& g : gt)
    for (const Run& r : g.mask.runs()) std::fill_n(map.labels.begin() + r.start, r.length, g.class_id);
  return map;
}

SceneEvaluation evaluate_scene(const InferenceResult& result, const Scene& scene, const ClassTable& classes) {
  const int C = classes.size();
  SceneEvaluation ev;
  ev.pq = panoptic_counts(result.panoptic, scene.gt, C);

  ev.ap.resize(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) {
    if (!classes[c].is_thing) continue;
    ApImage& img = ev.ap[static_cast<std::size_t>(c)];
    std::vector<const BinaryMask*> gts;
    for (const GtInstance& g : scene.gt)
      if (g.class_id == c) gts.push_back(&g.mask);
    img.num_gt = static_cast<int>(gts.size());
    for (const SegmentPrediction& p : result.instances) {
      if (p.class_id != c) continue;
      ApDetection d{p.score, {}};
      for (const BinaryMask* g : gts) d.ious.push_back(iou_mask(p.mask, *g));
      img.detections.push_back(std::move(d));
    }
  }

  ev.intersection.assign(static_cast<std::size_t>(C), 0);
  ev.union_area.assign(static_cast<std::size_t>(C), 0);
  const SemanticMap gt_map = gt_semantic_map(scene.gt, scene.width, scene.height);
  for (std::size_t p = 0; p < gt_map.labels.size(); ++p) {
    const int g = gt_map.labels[p];
    if (g < 0) continue;
    const int q = result.semantic.labels[p];
    if (g == q) {
      ++ev.intersection[static_cast<std::size_t>(g)];
      ++ev.union_area[static_cast<std::size_t>(g)];
    } else {
      ++ev.union_area[static_cast<std::size_t>(g)];
      if (q >= 0) ++ev.union_area[static_cast<std::size_t>(q)];
    }
  }
  return ev;
}

std::vector<double> coco_iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back((50.0 + 5.0 * i) / 100.0);
  return t;
}

double average_precision(std::span<const ApImage> images, double iou_threshold) {
  int num_gt = 0;
  struct Flag {
    double score;
    bool tp;
  };
  std::vector<Flag> flags;
  for (const ApImage& img : images) {
    num_gt += img.num_gt;
    std::vector<std::size_t> order(img.detections.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return img.detections[a].score > img.detections[b].score;
    });
    std::vector<bool> taken(static_cast<std::size_t>(img.num_gt), false);
    for (std::size_t i : order) {
      const ApDetection& d = img.detections[i];
      double best = std::min(iou_threshold, 1.0 - 1e-10);
      int match = -1;
      for (int g = 0; g < img.num_gt; ++g) {
        if (taken[static_cast<std::size_t>(g)] || d.ious[static_cast<std::size_t>(g)] < best) continue;
        best = d.ious[static_cast<std::size_t>(g)];
        match = g;
      }
      if (match >= 0) taken[static_cast<std::size_t>(match)] = true;
      flags.push_back({d.score, match >= 0});
    }
  }
  if (num_gt == 0) throw std::invalid_argument("average_precision: no ground truth");
  std::stable_sort(flags.begin(), flags.end(), [](const Flag& a, const Flag& b) { return a.score > b.score; });

  std::vector<double> recall, precision;
  double tp = 0, fp = 0;
  for (const Flag& f : flags) {
    (f.tp ? tp : fp) += 1.0;
    recall.push_back(tp / num_gt);
    precision.push_back(tp / (tp + fp));
  }
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0.0;
  for (int r = 0; r <= 100; ++r) {
    const double level = r / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), level);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / 101.0;
}

double MetricReport::mean_pq(const std::vector<int>& class_ids) const {
  double sum = 0.0;
  int n = 0;
  for (const ClassMetrics& m : per_class) {
    if (std::find(class_ids.begin(), class_ids.end(), m.class_id) == class_ids.end()) continue;
    if (m.counts.tp + m.counts.fp + m.counts.fn == 0) continue;
    sum += m.pq;
    ++n;
  }
  return n > 0 ? sum / n : 0.0;
}

MetricReport summarize(std::span<const SceneEvaluation> scenes, const ClassTable& classes) {
  const int C = classes.size();
  MetricReport report;
  report.scenes = static_cast<int>(scenes.size());
  std::vector<PqCounts> pq(static_cast<std::size_t>(C));
  std::vector<std::vector<ApImage>> ap(static_cast<std::size_t>(C));
  std::vector<long> inter(static_cast<std::size_t>(C), 0), uni(static_cast<std::size_t>(C), 0);
  for (const SceneEvaluation& ev : scenes) {
    for (int c = 0; c < C; ++c) {
      const auto k = static_cast<std::size_t>(c);
      pq[k] += ev.pq[k];
      if (classes[c].is_thing) ap[k].push_back(ev.ap[k]);
      inter[k] += ev.intersection[k];
      uni[k] += ev.union_area[k];
    }
  }

  double pq_sum = 0, sq_sum = 0, rq_sum = 0, thing_sum = 0, stuff_sum = 0, ap_sum = 0, iou_sum = 0;
  int pq_n = 0, thing_n = 0, stuff_n = 0, ap_n = 0, iou_n = 0;
  for (int c = 0; c < C; ++c) {
    const auto k = static_cast<std::size_t>(c);
    ClassMetrics m;
    m.class_id = c;
    m.name = classes[c].name;
    m.is_thing = classes[c].is_thing;
    m.counts = pq[k];
    m.pq = 100.0 * pq[k].pq();
    m.sq = 100.0 * pq[k].sq();
    m.rq = 100.0 * pq[k].rq();
    if (pq[k].tp + pq[k].fp + pq[k].fn > 0) {
      pq_sum += m.pq;
      sq_sum += m.sq;
      rq_sum += m.rq;
      ++pq_n;
      if (m.is_thing) {
        thing_sum += m.pq;
        ++thing_n;
      } else {
        stuff_sum += m.pq;
        ++stuff_n;
      }
    }
    if (m.is_thing) {
      int num_gt = 0;
      for (const ApImage& img : ap[k]) num_gt += img.num_gt;
      if (num_gt > 0) {
        double a = 0.0;
        for (double t : coco_iou_thresholds()) a += average_precision(ap[k], t);
        m.ap = 100.0 * a / 10.0;
        ap_sum += *m.ap;
        ++ap_n;
      }
    }
    if (uni[k] > 0) {
      m.iou = 100.0 * static_cast<double>(inter[k]) / static_cast<double>(uni[k]);
      iou_sum += *m.iou;
      ++iou_n;
    }
    report.per_class.push_back(std::move(m));
  }
  report.pq = pq_n ? pq_sum / pq_n : 0.0;
  report.sq = pq_n ? sq_sum / pq_n : 0.0;
  report.rq = pq_n ? rq_sum / pq_n : 0.0;
  report.pq_things = thing_n ? thing_sum / thing_n : 0.0;
  report.pq_stuff = stuff_n ? stuff_sum / stuff_n : 0.0;
  report.ap = ap_n ? ap_sum / ap_n : 0.0;
  report.miou = iou_n ? iou_sum / iou_n : 0.0;
  return report;
}

std::vector<double> best_proposal_iou(std::span<const BinaryMask> patches, const std::vector<GtInstance>& gt,
                                      bool merge_oracle, double tau) {
  std::vector<double> out;
  out.reserve(gt.size());
  for (const GtInstance& g : gt) {
    double best = 0.0;
    std::vector<BinaryMask> inside;
    for (const BinaryMask& p : patches) {
      if (p.empty()) continue;
      best = std::max(best, iou_mask(p, g.mask));
      if (merge_oracle && iop_mask(p, g.mask) > tau) inside.push_back(p);
    }
    if (!inside.empty()) best = std::max(best, iou_mask(union_of(inside), g.mask));
    out.push_back(best);
  }
  return out;
}

ProposalDiagnostics summarize_diagnostics(std::span<const double> best_ious) {
  ProposalDiagnostics d;
  d.instances = static_cast<int>(best_ious.size());
  if (best_ious.empty()) return d;
  double sum = 0, above_sum = 0;
  int above = 0, r25 = 0, r50 = 0, r75 = 0;
  for (double v : best_ious) {
    sum += v;
    if (v > 0.5) {
      above_sum += v;
      ++above;
    }
    r25 += v <= 0.25;
    r50 += v <= 0.5;
    r75 += v <= 0.75;
  }
  const double n = static_cast<double>(best_ious.size());
  d.miou = 100.0 * sum / n;
  d.miou_above = above ? 100.0 * above_sum / above : 0.0;
  d.mr_25 = 100.0 * r25 / n;
  d.mr_50 = 100.0 * r50 / n;
  d.mr_75 = 100.0 * r75 / n;
  return d;
}

}  // namespace samcp
