#pragma once

#include <cstdint>
#include <string>

#include "samcp/synth.hpp"

namespace samcp {

struct ModelConfig {
  int dim = 64;
  int heads = 4;
  int encoder_layers = 6;
  int decoder_stages = 6;
  int ffn_hidden = 128;
  int roi_size = 7;
  bool mask_roi = true;
  bool dca = true;
  bool affinity_refine = true;
  bool query_enhance = true;
  double dca_threshold = 0.5;
  double qe_threshold = 0.5;
  double init_score = 0.01;
};

struct LossConfig {
  double weight_cls = 2.0;
  double weight_mfl = 1.0;
  double weight_dice = 1.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double tau = 0.8;
  double low_quality_iou = 0.5;
  bool use_box_iop = true;
  bool use_mask_iop = true;
  // Hungarian cost weights: cls, mfl, dice, bbox, giou.
  double match_cls = 2.0;
  double match_mfl = 1.0;
  double match_dice = 1.0;
  double match_bbox = 1.0;
  double match_giou = 1.0;
  bool negative_self_affinity = true;
  bool denoising = true;
  double dn_box_noise = 0.4;
  double dn_label_flip = 0.2;
};

struct InferenceConfig {
  double affinity_threshold = 0.5;
  double score_threshold = 0.25;
  double kappa = 0.4;
  double clip_temperature = 0.07;
  double clip_prob_threshold = 0.25;
  double overlap_keep = 0.5;
};

struct TrainConfig {
  int epochs = 40;
  int batch_size = 8;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;
  double lr_drop_at = 0.8;
  double lr_drop_factor = 0.1;
};

struct RunConfig {
  CorpusConfig corpus;
  ModelConfig model;
  LossConfig loss;
  InferenceConfig inference;
  TrainConfig train;
  std::uint64_t seed = 7;

  /// Throws ConfigError on inconsistent values.
  void validate() const;
};

std::string config_to_json(const RunConfig& config);
std::string corpus_config_to_json(const CorpusConfig& config);
CorpusConfig corpus_config_from_json(const std::string& text);
RunConfig config_from_json(const std::string& text);

}  // namespace samcp
