#include "samcp/encoder.hpp"

#include <numbers>

namespace samcp {

Eigen::MatrixXd mask_roi(const Eigen::MatrixXd& roi, const BinaryMask& mask, const BBox& box, int out_size) {
  Eigen::MatrixXd out = roi;
  const double bw = static_cast<double>(box.width()) / out_size;
  const double bh = static_cast<double>(box.height()) / out_size;
  for (int i = 0; i < out_size; ++i) {
    const int y = box.y0 + static_cast<int>(std::floor((i + 0.5) * bh));
    for (int j = 0; j < out_size; ++j) {
      const int x = box.x0 + static_cast<int>(std::floor((j + 0.5) * bw));
      if (!mask.test(x, y)) out.row(i * out_size + j).setZero();
    }
  }
  return out;
}

Eigen::RowVectorXd position_embedding(const BBox& box, int width, int height, int dim) {
  if (dim % 8 != 0) throw std::invalid_argument("position_embedding: dim must be a multiple of 8");
  if (!box.valid()) throw std::invalid_argument("position_embedding: degenerate box");
  const double coords[4] = {
      (box.x0 + box.x1) / (2.0 * width),
      (box.y0 + box.y1) / (2.0 * height),
      static_cast<double>(box.width()) / width,
      static_cast<double>(box.height()) / height,
  };
  const int freqs = dim / 8;
  Eigen::RowVectorXd out(dim);
  for (int c = 0; c < 4; ++c) {
    for (int f = 0; f < freqs; ++f) {
      const double angle = std::numbers::pi * coords[c] * std::ldexp(1.0, f);
      out(c * 2 * freqs + f) = std::sin(angle);
      out(c * 2 * freqs + freqs + f) = std::cos(angle);
    }
  }
  return out;
}

PatchInputs prepare_patches(const Scene& scene, const ModelConfig& config) {
  const int S = config.roi_size;
  const auto n = static_cast<Eigen::Index>(scene.patches.size());
  PatchInputs in;
  in.features.resize(n, S * S * scene.image.cols());
  in.positions.resize(n, config.dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const BinaryMask& patch = scene.patches[static_cast<std::size_t>(i)];
    const BBox box = bbox_of(patch);
    Eigen::MatrixXd roi = roi_align(scene.image, scene.width, scene.height, box, S);
    if (config.mask_roi) roi = mask_roi(roi, patch, box, S);
    in.features.row(i) = roi.reshaped<Eigen::RowMajor>().transpose();
    in.positions.row(i) = position_embedding(box, scene.width, scene.height, config.dim);
    in.boxes.push_back(box);
  }
  return in;
}

void init_encoder(ad::ParameterStore& store, const ModelConfig& config, nn::Rng& rng) {
  const int in_dim = config.roi_size * config.roi_size * 3;
  nn::init_mlp(store, "encoder.embed", in_dim, config.dim, config.dim, rng);
  for (int l = 0; l < config.encoder_layers; ++l) {
    const std::string p = "encoder.layer" + std::to_string(l);
    nn::init_layer_norm(store, p + ".norm1", config.dim);
    nn::init_attention(store, p + ".attn", config.dim, rng);
    nn::init_layer_norm(store, p + ".norm2", config.dim);
    nn::init_mlp(store, p + ".ffn", config.dim, config.ffn_hidden, config.dim, rng);
  }
  nn::init_layer_norm(store, "encoder.norm", config.dim);
}

EncodedPatches encode_patches(const nn::Context& ctx, const PatchInputs& inputs, const ModelConfig& config) {
  const ad::Tensor positions = ctx.constant(inputs.positions);
  ad::Tensor x = nn::mlp(ctx, "encoder.embed", ctx.constant(inputs.features)) + positions;
  for (int l = 0; l < config.encoder_layers; ++l) {
    const std::string p = "encoder.layer" + std::to_string(l);
    const ad::Tensor h = nn::layer_norm(ctx, p + ".norm1", x);
    x = x + nn::multi_head_attention(ctx, p + ".attn", h, h, h, nullptr, config.heads);
    x = x + nn::mlp(ctx, p + ".ffn", nn::layer_norm(ctx, p + ".norm2", x));
  }
  return {nn::layer_norm(ctx, "encoder.norm", x), positions};
}

}  // namespace samcp
