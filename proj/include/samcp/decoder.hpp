#pragma once

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <vector>

#include "samcp/autodiff.hpp"
#include "samcp/config.hpp"
#include "samcp/encoder.hpp"
#include "samcp/nn.hpp"

namespace samcp {

/// Training-only queries built from perturbed ground truth. They come after
/// the real queries and stay invisible to them in self-attention.
struct DenoisingQueries {
  Eigen::MatrixXd positions;         // K x D, embeddings of jittered boxes
  Eigen::MatrixXd class_embeddings;  // K x D_txt, possibly flipped labels
  std::vector<int> gt_index;         // source ground-truth instance per query
  std::vector<BBox> boxes;           // jittered boxes

  int size() const { return static_cast<int>(gt_index.size()); }
};

/// Everything one decoding pass reads besides the encoded patches.
struct DecoderInputs {
  const PatchInputs* patches = nullptr;
  const ImageGrid* image = nullptr;
  int width = 0;
  int height = 0;
  Eigen::MatrixXd class_embeddings;  // C x D_txt for the active classes
  const DenoisingQueries* denoising = nullptr;
};

struct StageOutput {
  ad::Tensor queries;        // M x D after query enhancement
  ad::Tensor logits;         // M x N pre-sigmoid affinity, residually stacked
  Eigen::MatrixXd affinity;  // sigmoid(logits)
  ad::Tensor class_logits;   // M x C
};

/// Query rows are ordered semantic (C), instance (N), then denoising.
struct DecoderOutput {
  std::vector<StageOutput> stages;
  int num_semantic = 0;
  int num_instance = 0;
  int num_denoising = 0;

  int num_real() const { return num_semantic + num_instance; }
  const StageOutput& final_stage() const { return stages.back(); }
};

void init_decoder(ad::ParameterStore& store, const ModelConfig& config, int embed_dim, nn::Rng& rng);

/// Learnable affinity similarity between queries and patch keys. Adds
/// `previous` (the last stage's logits) when given.
ad::Tensor affinity_similarity(const nn::Context& ctx, const std::string& name, const ad::Tensor& queries,
                               const ad::Tensor& keys, const ad::Tensor* previous, int heads);

/// Cross-attention restricted to patches with affinity >= threshold.
ad::Tensor dca(const nn::Context& ctx, const std::string& name, const ad::Tensor& queries, const ad::Tensor& keys,
               const ad::Tensor& values, const Eigen::MatrixXd* affinity, double threshold, int heads);

/// Merged box of the patches whose affinity reaches `threshold`, if any.
std::optional<BBox> merged_affinity_box(const Eigen::Ref<const Eigen::RowVectorXd>& affinity_row,
                                        std::span<const BBox> boxes, double threshold);

/// Averages each query with an RoI feature pooled over the merged box of its
/// high-affinity patches. Queries without such patches pass through.
ad::Tensor query_enhance(const nn::Context& ctx, const ad::Tensor& queries, const Eigen::MatrixXd& affinity,
                         const DecoderInputs& inputs, const ModelConfig& config);

/// Cosine classifier: S = (1/s) * normalize(proj(Q)) . normalize(e)^T + b.
ad::Tensor classify(const nn::Context& ctx, const ad::Tensor& queries, const Eigen::MatrixXd& class_embeddings);

DecoderOutput decode(const nn::Context& ctx, const EncodedPatches& patches, const DecoderInputs& inputs,
                     const ModelConfig& config);

}  // namespace samcp
