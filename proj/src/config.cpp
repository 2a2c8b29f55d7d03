#include "samcp/config.hpp"

#include <json.hpp>

#include "samcp/error.hpp"

namespace samcp {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CorruptionConfig, drop_rate, drop_classes, merge_rate, jitter_rate)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CorpusConfig, height, width, num_thing_classes, num_stuff_classes,
                                                embed_dim, instances_min, instances_max, size_min, size_max, min_gap,
                                                overseg_min, overseg_max, stuff_overseg_min, stuff_overseg_max,
                                                color_noise, instance_tint, clip_noise, clip_instance_noise, num_train,
                                                num_eval, held_out_classes, clip_field_for_train,
                                                max_placement_retries, corruption)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, dim, heads, encoder_layers, decoder_stages, ffn_hidden,
                                                roi_size, mask_roi, dca, affinity_refine, query_enhance, dca_threshold,
                                                qe_threshold, init_score)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossConfig, weight_cls, weight_mfl, weight_dice, focal_alpha,
                                                focal_gamma, tau, low_quality_iou, use_box_iop, use_mask_iop, match_cls,
                                                match_mfl, match_dice, match_bbox, match_giou, negative_self_affinity,
                                                denoising, dn_box_noise, dn_label_flip)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(InferenceConfig, affinity_threshold, score_threshold, kappa,
                                                clip_temperature, clip_prob_threshold, overlap_keep)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, epochs, batch_size, lr, weight_decay, beta1, beta2,
                                                adam_eps, grad_clip, lr_drop_at, lr_drop_factor)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, corpus, model, loss, inference, train, seed)

void RunConfig::validate() const {
  validate_corpus_config(corpus);
  const ModelConfig& m = model;
  if (m.dim <= 0 || m.dim % 8 != 0) throw ConfigError("model: dim must be a positive multiple of 8");
  if (m.heads <= 0 || m.dim % m.heads != 0) throw ConfigError("model: heads must divide dim");
  if (m.encoder_layers < 0 || m.decoder_stages < 1) throw ConfigError("model: need at least one decoder stage");
  if (m.ffn_hidden <= 0 || m.roi_size <= 0) throw ConfigError("model: ffn_hidden and roi_size must be positive");
  if (m.init_score <= 0.0 || m.init_score >= 1.0) throw ConfigError("model: init_score must lie in (0, 1)");
  if (loss.tau < 0.0 || loss.tau >= 1.0) throw ConfigError("loss: tau must lie in [0, 1)");
  if (!loss.use_box_iop && !loss.use_mask_iop) throw ConfigError("loss: at least one IoP criterion is required");
  if (loss.focal_alpha < 0.0 || loss.focal_alpha > 1.0 || loss.focal_gamma < 0.0)
    throw ConfigError("loss: bad focal parameters");
  if (inference.kappa < 0.0 || inference.kappa > 1.0) throw ConfigError("inference: kappa must lie in [0, 1]");
  if (inference.clip_temperature <= 0.0) throw ConfigError("inference: clip_temperature must be positive");
  if (train.epochs < 1 || train.batch_size < 1 || train.lr <= 0.0) throw ConfigError("train: bad schedule");
}

std::string config_to_json(const RunConfig& config) { return nlohmann::json(config).dump(2); }

std::string corpus_config_to_json(const CorpusConfig& config) { return nlohmann::json(config).dump(); }

CorpusConfig corpus_config_from_json(const std::string& text) {
  CorpusConfig config;
  try {
    config = nlohmann::json::parse(text).get<CorpusConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("corpus config: ") + e.what());
  }
  validate_corpus_config(config);
  return config;
}

RunConfig config_from_json(const std::string& text) {
  RunConfig config;
  try {
    config = nlohmann::json::parse(text).get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  config.validate();
  return config;
}

}  // namespace samcp
