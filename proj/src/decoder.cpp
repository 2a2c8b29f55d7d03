#include "samcp/decoder.hpp"

#include <cmath>

namespace samcp {

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }

std::string stage_name(int t) { return "decoder.stage" + std::to_string(t); }

void init_affinity(ad::ParameterStore& store, const std::string& name, int dim, int heads, double bias0,
                   nn::Rng& rng) {
  nn::init_linear(store, name + ".fc_q", dim, dim, rng);
  nn::init_linear(store, name + ".fc_k", dim, dim, rng);
  store.add(name + ".mix1.weight", ad::Matrix::Identity(heads, heads));
  store.add(name + ".mix1.bias", ad::Matrix::Zero(1, heads));
  store.add(name + ".mix2.weight", ad::Matrix::Constant(heads, 1, 1.0 / heads));
  store.add(name + ".mix2.bias", ad::Matrix::Zero(1, 1));
  store.add(name + ".scale", ad::Matrix::Ones(1, 1));
  store.add(name + ".bias_k", ad::Matrix::Zero(dim, 1));
  store.add(name + ".bias_0", ad::Matrix::Constant(1, 1, bias0));
}

}  // namespace

void init_decoder(ad::ParameterStore& store, const ModelConfig& config, int embed_dim, nn::Rng& rng) {
  const int D = config.dim;
  nn::init_linear(store, "decoder.sem_proj", embed_dim, D, rng);
  for (int t = 0; t < config.decoder_stages; ++t) {
    const std::string p = stage_name(t);
    nn::init_layer_norm(store, p + ".norm_cross", D);
    nn::init_attention(store, p + ".cross", D, rng);
    nn::init_layer_norm(store, p + ".norm_self", D);
    nn::init_attention(store, p + ".self", D, rng);
    nn::init_layer_norm(store, p + ".norm_ffn", D);
    nn::init_mlp(store, p + ".ffn", D, config.ffn_hidden, D, rng);
    nn::init_layer_norm(store, p + ".norm_out", D);
    // Only the first stage carries the prior; later stages stack residually.
    init_affinity(store, p + ".affinity", D, config.heads, t == 0 ? logit(config.init_score) : 0.0, rng);
  }
  nn::init_mlp(store, "decoder.qe", config.roi_size * config.roi_size * 3, D, D, rng);
  nn::init_linear(store, "decoder.cls_proj", D, embed_dim, rng);
  store.add("decoder.cls_scale", ad::Matrix::Constant(1, 1, 0.1));
  store.add("decoder.cls_bias", ad::Matrix::Constant(1, 1, logit(config.init_score)));
}

ad::Tensor affinity_similarity(const nn::Context& ctx, const std::string& name, const ad::Tensor& queries,
                               const ad::Tensor& keys, const ad::Tensor* previous, int heads) {
  if (queries.cols() != keys.cols()) throw std::invalid_argument("affinity_similarity: dimension mismatch");
  if (heads <= 0 || queries.cols() % heads != 0)
    throw std::invalid_argument("affinity_similarity: dim not divisible by head count");
  const ad::Tensor q = nn::linear(ctx, name + ".fc_q", queries);
  const ad::Tensor k = nn::linear(ctx, name + ".fc_k", keys);
  const ad::Index M = q.rows(), N = k.rows(), dh = q.cols() / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  // Per-head similarity maps, flattened into the columns of an (M*N) x heads matrix.
  std::vector<ad::Tensor> channels;
  for (int h = 0; h < heads; ++h) {
    const ad::Tensor qh = heads == 1 ? q : ad::slice(q, 1, h * dh, dh);
    const ad::Tensor kh = heads == 1 ? k : ad::slice(k, 1, h * dh, dh);
    channels.push_back(ad::reshape(ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt), M * N, 1));
  }
  const ad::Tensor stacked = heads == 1 ? channels.front() : ad::concat(channels, 1);
  const ad::Tensor hidden =
      ad::relu(ad::matmul(stacked, ctx.param(name + ".mix1.weight")) + ctx.param(name + ".mix1.bias"));
  const ad::Tensor mixed = ad::matmul(hidden, ctx.param(name + ".mix2.weight")) + ctx.param(name + ".mix2.bias");
  const ad::Tensor sim = ad::reshape(mixed, M, N);

  // Per-patch bias b = b1 . K + b0 broadcast over query rows.
  const ad::Tensor bias = ad::transpose(ad::matmul(k, ctx.param(name + ".bias_k"))) + ctx.param(name + ".bias_0");
  ad::Tensor out = ad::div(sim, ctx.param(name + ".scale")) + bias;
  if (previous) out = out + *previous;
  return out;
}

ad::Tensor dca(const nn::Context& ctx, const std::string& name, const ad::Tensor& queries, const ad::Tensor& keys,
               const ad::Tensor& values, const Eigen::MatrixXd* affinity, double threshold, int heads) {
  if (!affinity) return nn::multi_head_attention(ctx, name, queries, keys, values, nullptr, heads);
  const ad::BoolMatrix blocked = affinity->array() < threshold;
  return nn::multi_head_attention(ctx, name, queries, keys, values, &blocked, heads);
}

std::optional<BBox> merged_affinity_box(const Eigen::Ref<const Eigen::RowVectorXd>& affinity_row,
                                        std::span<const BBox> boxes, double threshold) {
  std::optional<BBox> out;
  for (Eigen::Index n = 0; n < affinity_row.size(); ++n) {
    if (affinity_row(n) < threshold) continue;
    const BBox& b = boxes[static_cast<std::size_t>(n)];
    if (!out) {
      out = b;
    } else {
      const BBox pair[] = {*out, b};
      out = merge_bboxes(pair);
    }
  }
  return out;
}

ad::Tensor query_enhance(const nn::Context& ctx, const ad::Tensor& queries, const Eigen::MatrixXd& affinity,
                         const DecoderInputs& inputs, const ModelConfig& config) {
  const ad::Index M = queries.rows();
  const int S = config.roi_size;
  std::vector<ad::Index> enhanced;
  std::vector<Eigen::RowVectorXd> regions;
  for (ad::Index m = 0; m < M; ++m) {
    const auto box = merged_affinity_box(affinity.row(m), inputs.patches->boxes, config.qe_threshold);
    if (!box) continue;
    const Eigen::MatrixXd roi = roi_align(*inputs.image, inputs.width, inputs.height, *box, S);
    regions.push_back(roi.reshaped<Eigen::RowMajor>().transpose());
    enhanced.push_back(m);
  }
  if (enhanced.empty()) return queries;

  ad::Matrix region_inputs(static_cast<ad::Index>(regions.size()), regions.front().size());
  for (std::size_t r = 0; r < regions.size(); ++r) region_inputs.row(static_cast<ad::Index>(r)) = regions[r];
  const ad::Tensor region_features = nn::mlp(ctx, "decoder.qe", ctx.constant(std::move(region_inputs)));

  // Q' = keep .* Q + scatter * region, with weight 1/2 on both sides for enhanced rows.
  ad::Matrix keep = ad::Matrix::Ones(M, 1);
  ad::Matrix scatter = ad::Matrix::Zero(M, static_cast<ad::Index>(enhanced.size()));
  for (std::size_t r = 0; r < enhanced.size(); ++r) {
    keep(enhanced[r], 0) = 0.5;
    scatter(enhanced[r], static_cast<ad::Index>(r)) = 0.5;
  }
  return queries * ctx.constant(std::move(keep)) + ad::matmul(ctx.constant(std::move(scatter)), region_features);
}

ad::Tensor classify(const nn::Context& ctx, const ad::Tensor& queries, const Eigen::MatrixXd& class_embeddings) {
  const Eigen::VectorXd norms = class_embeddings.rowwise().norm();
  if ((norms.array() <= 0.0).any()) throw std::invalid_argument("classify: zero-norm class embedding");
  const Eigen::MatrixXd e_hat = class_embeddings.array().colwise() / norms.array();
  const ad::Tensor q_hat = ad::normalize_rows(nn::linear(ctx, "decoder.cls_proj", queries));
  const ad::Tensor cosine = ad::matmul(q_hat, ctx.constant(e_hat.transpose()));
  return ad::div(cosine, ctx.param("decoder.cls_scale")) + ctx.param("decoder.cls_bias");
}

DecoderOutput decode(const nn::Context& ctx, const EncodedPatches& patches, const DecoderInputs& inputs,
                     const ModelConfig& config) {
  const ad::Index C = inputs.class_embeddings.rows();
  const ad::Index N = patches.features.rows();
  if (N < 1) throw std::invalid_argument("decode: scene has no patches");
  DecoderOutput out;
  out.num_semantic = static_cast<int>(C);
  out.num_instance = static_cast<int>(N);
  out.num_denoising = inputs.denoising ? inputs.denoising->size() : 0;

  // Semantic queries from class embeddings, instance queries from patches (PasQ).
  std::vector<ad::Tensor> parts;
  parts.push_back(nn::linear(ctx, "decoder.sem_proj", ctx.constant(inputs.class_embeddings)));
  parts.push_back(patches.features + patches.positions);
  if (out.num_denoising > 0) {
    const DenoisingQueries& dn = *inputs.denoising;
    parts.push_back(nn::linear(ctx, "decoder.sem_proj", ctx.constant(dn.class_embeddings)) +
                    ctx.constant(dn.positions));
  }
  ad::Tensor q = ad::concat(parts, 0);
  const ad::Index M = q.rows();
  const ad::Tensor keys = patches.features + patches.positions;
  const ad::Tensor& values = patches.features;

  ad::BoolMatrix self_blocked = ad::BoolMatrix::Constant(M, M, false);
  const ad::Index real = out.num_real();
  if (out.num_denoising > 0) self_blocked.topRightCorner(real, M - real).setConstant(true);

  Eigen::MatrixXd affinity = Eigen::MatrixXd::Ones(M, N);
  ad::Tensor previous;
  for (int t = 0; t < config.decoder_stages; ++t) {
    const std::string p = stage_name(t);
    const Eigen::MatrixXd* mask = config.dca && t > 0 ? &affinity : nullptr;
    q = q + dca(ctx, p + ".cross", nn::layer_norm(ctx, p + ".norm_cross", q), keys, values, mask,
                config.dca_threshold, config.heads);
    const ad::Tensor h = nn::layer_norm(ctx, p + ".norm_self", q);
    q = q + nn::multi_head_attention(ctx, p + ".self", h, h, h, out.num_denoising > 0 ? &self_blocked : nullptr,
                                     config.heads);
    q = q + nn::mlp(ctx, p + ".ffn", nn::layer_norm(ctx, p + ".norm_ffn", q));

    const ad::Tensor qn = nn::layer_norm(ctx, p + ".norm_out", q);
    const bool stack = config.affinity_refine && previous.defined();
    const ad::Tensor logits = affinity_similarity(ctx, p + ".affinity", qn, keys, stack ? &previous : nullptr,
                                                  config.heads);
    affinity = logits.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    previous = logits;

    if (config.query_enhance) q = query_enhance(ctx, q, affinity, inputs, config);
    out.stages.push_back({q, logits, affinity, classify(ctx, q, inputs.class_embeddings)});
  }
  return out;
}

}  // namespace samcp
