#pragma once

#include <functional>
#include <vector>

#include "samcp/autodiff.hpp"
#include "samcp/config.hpp"
#include "samcp/decoder.hpp"
#include "samcp/encoder.hpp"
#include "samcp/inference.hpp"
#include "samcp/metrics.hpp"
#include "samcp/supervision.hpp"
#include "samcp/synth.hpp"

namespace samcp {

/// Fresh parameters for the encoder and decoder, seeded by `seed`.
ad::ParameterStore init_model(const ModelConfig& config, int embed_dim, std::uint64_t seed);

/// Class ids the model is trained on: everything except the held-out classes.
std::vector<int> seen_classes(const Corpus& corpus);

/// Forward pass over one scene on `tape`. `denoising` may be null.
DecoderOutput forward_scene(const nn::Context& ctx, const ModelConfig& config, const Scene& scene,
                            const PatchInputs& inputs, const Eigen::MatrixXd& class_embeddings,
                            const DenoisingQueries* denoising);

struct SceneLoss {
  LossReport report;
  ad::Gradients gradients;
};

/// Forward, supervision and backward for one training scene. Denoising
/// queries are drawn from `dn_seed` when enabled.
SceneLoss scene_loss(const ad::ParameterStore& params, const RunConfig& config, const Scene& scene,
                     const PatchInputs& inputs, const MatchMatrix& match, const ClassTable& classes,
                     const std::vector<int>& active_classes, std::uint64_t dn_seed);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double cls = 0.0;
  double mfl = 0.0;
  double dice = 0.0;
  double all = 0.0;
};

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  /// Called for every scene loss, in scene order within each batch.
  std::function<void(const LossReport&)> on_scene;
};

/// Trains on the train split. Throws NumericError on a non-finite loss or
/// gradient. Results do not depend on `threads`.
ad::ParameterStore train(const RunConfig& config, const Corpus& corpus, int threads, const TrainHooks& hooks = {});

enum class EvalMode { kClosed, kOpen };

/// Runs inference on one scene over `active_classes`.
InferenceResult predict(const ad::ParameterStore& params, const RunConfig& config, const Scene& scene,
                        const ClassTable& classes, const std::vector<int>& active_classes, EvalMode mode);

/// Evaluates the eval split over all classes of the corpus.
MetricReport evaluate(const ad::ParameterStore& params, const RunConfig& config, const Corpus& corpus, EvalMode mode,
                      int threads);

/// Proposal diagnostics over the eval split: (best patch, merge oracle).
std::pair<ProposalDiagnostics, ProposalDiagnostics> diagnose(const Corpus& corpus, double tau);

}  // namespace samcp
