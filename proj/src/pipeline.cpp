#include "samcp/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "samcp/error.hpp"
#include "samcp/parallel.hpp"

namespace samcp {

namespace {

constexpr std::uint64_t kInitTag = 0x1417;
constexpr std::uint64_t kShuffleTag = 0x5487;
constexpr std::uint64_t kDenoiseTag = 0xD4;

void check_finite(const ad::Gradients& grads, const char* where) {
  for (const auto& [name, g] : grads)
    if (!g.allFinite()) throw NumericError(std::string("non-finite gradient in ") + name + " during " + where);
}

}  // namespace

ad::ParameterStore init_model(const ModelConfig& config, int embed_dim, std::uint64_t seed) {
  ad::ParameterStore store;
  nn::Rng rng = make_rng(seed, 0, kInitTag);
  init_encoder(store, config, rng);
  init_decoder(store, config, embed_dim, rng);
  return store;
}

std::vector<int> seen_classes(const Corpus& corpus) {
  std::vector<int> out;
  const auto& held = corpus.config.held_out_classes;
  for (int id : corpus.classes.all_ids())
    if (std::find(held.begin(), held.end(), id) == held.end()) out.push_back(id);
  return out;
}

DecoderOutput forward_scene(const nn::Context& ctx, const ModelConfig& config, const Scene& scene,
                            const PatchInputs& inputs, const Eigen::MatrixXd& class_embeddings,
                            const DenoisingQueries* denoising) {
  const EncodedPatches encoded = encode_patches(ctx, inputs, config);
  DecoderInputs din;
  din.patches = &inputs;
  din.image = &scene.image;
  din.width = scene.width;
  din.height = scene.height;
  din.class_embeddings = class_embeddings;
  din.denoising = denoising;
  return decode(ctx, encoded, din, config);
}

SceneLoss scene_loss(const ad::ParameterStore& params, const RunConfig& config, const Scene& scene,
                     const PatchInputs& inputs, const MatchMatrix& match, const ClassTable& classes,
                     const std::vector<int>& active_classes, std::uint64_t dn_seed) {
  DenoisingQueries dn;
  const bool use_dn = config.loss.denoising && !scene.gt.empty();
  if (use_dn) {
    std::mt19937_64 rng = make_rng(dn_seed, 0, kDenoiseTag);
    dn = denoising_batch(scene.gt, classes, active_classes, scene.width, scene.height, config.model.dim,
                         config.loss.dn_box_noise, config.loss.dn_label_flip, rng);
  }

  ad::Tape tape;
  const nn::Context ctx{tape, params};
  const DecoderOutput out = forward_scene(ctx, config.model, scene, inputs, classes.embeddings(active_classes),
                                          use_dn ? &dn : nullptr);

  TargetContext tctx;
  tctx.gt = &scene.gt;
  tctx.match = &match;
  tctx.patch_boxes = inputs.boxes;
  tctx.active_classes = active_classes;
  tctx.width = scene.width;
  tctx.height = scene.height;
  tctx.num_semantic = out.num_semantic;
  tctx.num_instance = out.num_instance;
  tctx.denoising = use_dn ? &dn : nullptr;
  tctx.config = config.loss;

  std::vector<StageLoss> stages;
  for (const StageOutput& s : out.stages) {
    const SupervisionTargets targets = build_targets(tctx, s.class_logits.value(), s.logits.value());
    auto [mfl, dice] = loss_masks(s.logits, targets, config.loss);
    stages.push_back({loss_cls(s.class_logits, targets, config.loss), mfl, dice});
  }
  SceneLoss result;
  result.report = total_loss(stages, config.loss);
  if (!std::isfinite(result.report.all)) throw NumericError("non-finite loss");
  tape.backward(result.report.total);
  result.gradients = tape.parameter_gradients();
  check_finite(result.gradients, "backward");
  return result;
}

ad::ParameterStore train(const RunConfig& config, const Corpus& corpus, int threads, const TrainHooks& hooks) {
  config.validate();
  const TrainConfig& tc = config.train;
  const std::vector<const Scene*> scenes = corpus.split(Split::kTrain);
  const std::vector<int> active = seen_classes(corpus);
  ad::ParameterStore params = init_model(config.model, corpus.classes.embed_dim(), config.seed);

  // Inputs that do not depend on the parameters are computed once.
  std::vector<PatchInputs> inputs(scenes.size());
  std::vector<MatchMatrix> matches(scenes.size());
  parallel_for(scenes.size(), threads, [&](std::size_t i) {
    inputs[i] = prepare_patches(*scenes[i], config.model);
    matches[i] = build_G(scenes[i]->gt, scenes[i]->patches, config.loss);
  });

  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(tc.batch_size);
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::mt19937_64 shuffle_rng = make_rng(config.seed, static_cast<std::uint64_t>(epoch), kShuffleTag);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const double lr = epoch >= static_cast<int>(std::floor(tc.lr_drop_at * tc.epochs)) ? tc.lr * tc.lr_drop_factor
                                                                                       : tc.lr;
    EpochRecord record;
    record.epoch = epoch;
    record.lr = lr;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t count = std::min(batch, order.size() - start);
      std::vector<SceneLoss> losses(count);
      parallel_for(count, threads, [&](std::size_t j) {
        const std::size_t i = order[start + j];
        const std::uint64_t dn_seed = make_rng(config.seed, static_cast<std::uint64_t>(epoch) * scenes.size() + i,
                                               kDenoiseTag)();
        losses[j] = scene_loss(params, config, *scenes[i], inputs[i], matches[i], corpus.classes, active, dn_seed);
      });

      // Sum in batch order so the result is independent of scheduling.
      ad::Gradients grads;
      for (SceneLoss& l : losses) {
        if (hooks.on_scene) hooks.on_scene(l.report);
        record.cls += l.report.cls;
        record.mfl += l.report.mfl;
        record.dice += l.report.dice;
        record.all += l.report.all;
        for (auto& [name, g] : l.gradients) {
          auto it = grads.find(name);
          if (it == grads.end())
            grads.emplace(name, std::move(g));
          else
            it->second += g;
        }
      }
      double norm_sq = 0.0;
      for (auto& [name, g] : grads) {
        g /= static_cast<double>(count);
        norm_sq += g.squaredNorm();
      }
      const double norm = std::sqrt(norm_sq);
      if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
      if (tc.grad_clip > 0 && norm > tc.grad_clip)
        for (auto& [name, g] : grads) g *= tc.grad_clip / norm;
      ad::step_adam(params, grads, lr, tc.beta1, tc.beta2, tc.adam_eps, tc.weight_decay);
    }
    if (!scenes.empty()) {
      const double n = static_cast<double>(scenes.size());
      record.cls /= n;
      record.mfl /= n;
      record.dice /= n;
      record.all /= n;
    }
    if (hooks.on_epoch) hooks.on_epoch(record);
  }
  return params;
}

InferenceResult predict(const ad::ParameterStore& params, const RunConfig& config, const Scene& scene,
                        const ClassTable& classes, const std::vector<int>& active_classes, EvalMode mode) {
  const PatchInputs inputs = prepare_patches(scene, config.model);
  const Eigen::MatrixXd embeddings = classes.embeddings(active_classes);
  ad::Tape tape;
  const nn::Context ctx{tape, params};
  const DecoderOutput out = forward_scene(ctx, config.model, scene, inputs, embeddings, nullptr);
  const StageOutput& last = out.final_stage();
  const Eigen::Index C = out.num_semantic, Nq = out.num_instance;
  const Eigen::MatrixXd affinity = last.affinity.topRows(C + Nq);
  const Eigen::MatrixXd class_logits = last.class_logits.value().middleRows(C, Nq);
  if (!affinity.allFinite() || !class_logits.allFinite()) throw NumericError("non-finite prediction");

  InstanceScores scores;
  if (mode == EvalMode::kOpen) {
    if (!scene.has_clip_field()) throw DataError("open-vocabulary evaluation needs a clip field");
    scores = open_scores(affinity.bottomRows(Nq), class_logits, scene.patches, scene.clip_field, embeddings,
                         config.inference);
  } else {
    scores = closed_scores(class_logits, config.inference);
  }
  return infer(affinity, scores, scene.patches, classes, active_classes, config.inference);
}

MetricReport evaluate(const ad::ParameterStore& params, const RunConfig& config, const Corpus& corpus, EvalMode mode,
                      int threads) {
  const std::vector<const Scene*> scenes = corpus.split(Split::kEval);
  const std::vector<int> active = corpus.classes.all_ids();
  std::vector<SceneEvaluation> evals(scenes.size());
  parallel_for(scenes.size(), threads, [&](std::size_t i) {
    const InferenceResult r = predict(params, config, *scenes[i], corpus.classes, active, mode);
    evals[i] = evaluate_scene(r, *scenes[i], corpus.classes);
  });
  return summarize(evals, corpus.classes);
}

std::pair<ProposalDiagnostics, ProposalDiagnostics> diagnose(const Corpus& corpus, double tau) {
  std::vector<double> plain, merged;
  for (const Scene* s : corpus.split(Split::kEval)) {
    for (double v : best_proposal_iou(s->patches, s->gt, false, tau)) plain.push_back(v);
    for (double v : best_proposal_iou(s->patches, s->gt, true, tau)) merged.push_back(v);
  }
  return {summarize_diagnostics(plain), summarize_diagnostics(merged)};
}

}  // namespace samcp
