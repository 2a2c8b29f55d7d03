#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "samcp/autodiff.hpp"
#include "samcp/config.hpp"
#include "samcp/mask.hpp"
#include "samcp/nn.hpp"
#include "samcp/synth.hpp"

namespace samcp {

/// Bilinear RoIAlign with one sample per bin. `grid` holds one pixel per
/// row (row y*width + x). Output row i*out_size + j is bin (i, j).
template <typename Derived>
Eigen::MatrixXd roi_align(const Eigen::MatrixBase<Derived>& grid, int width, int height, const BBox& box,
                          int out_size) {
  if (!box.valid()) throw std::invalid_argument("roi_align: degenerate box");
  if (box.x0 < 0 || box.y0 < 0 || box.x1 > width || box.y1 > height)
    throw std::invalid_argument("roi_align: box outside grid");
  if (out_size < 1) throw std::invalid_argument("roi_align: out_size must be positive");
  const Eigen::Index channels = grid.cols();
  Eigen::MatrixXd out(out_size * out_size, channels);
  const double bw = static_cast<double>(box.width()) / out_size;
  const double bh = static_cast<double>(box.height()) / out_size;
  for (int i = 0; i < out_size; ++i) {
    const double y = std::clamp(box.y0 + (i + 0.5) * bh - 0.5, 0.0, static_cast<double>(height - 1));
    const int y_lo = static_cast<int>(std::floor(y));
    const int y_hi = std::min(y_lo + 1, height - 1);
    const double fy = y - y_lo;
    for (int j = 0; j < out_size; ++j) {
      const double x = std::clamp(box.x0 + (j + 0.5) * bw - 0.5, 0.0, static_cast<double>(width - 1));
      const int x_lo = static_cast<int>(std::floor(x));
      const int x_hi = std::min(x_lo + 1, width - 1);
      const double fx = x - x_lo;
      auto px = [&](int xx, int yy) { return grid.row(yy * width + xx).template cast<double>(); };
      out.row(i * out_size + j) = (1 - fy) * ((1 - fx) * px(x_lo, y_lo) + fx * px(x_hi, y_lo)) +
                                  fy * ((1 - fx) * px(x_lo, y_hi) + fx * px(x_hi, y_hi));
    }
  }
  return out;
}

/// Multiplies RoI bins by the patch mask resampled (nearest) over the box.
Eigen::MatrixXd mask_roi(const Eigen::MatrixXd& roi, const BinaryMask& mask, const BBox& box, int out_size);

/// Sinusoidal embedding of the normalized (cx, cy, w, h) of a box; each
/// coordinate gets dim/4 entries (sines then cosines).
Eigen::RowVectorXd position_embedding(const BBox& box, int width, int height, int dim);

/// Non-learned per-patch inputs: flattened (Mask)RoI features, position
/// embeddings and boxes, in scene patch order.
struct PatchInputs {
  Eigen::MatrixXd features;
  Eigen::MatrixXd positions;
  std::vector<BBox> boxes;
};

PatchInputs prepare_patches(const Scene& scene, const ModelConfig& config);

/// Encoded patch features f_n (N x D) and their position embeddings.
struct EncodedPatches {
  ad::Tensor features;
  ad::Tensor positions;
};

void init_encoder(ad::ParameterStore& store, const ModelConfig& config, nn::Rng& rng);
EncodedPatches encode_patches(const nn::Context& ctx, const PatchInputs& inputs, const ModelConfig& config);

}  // namespace samcp
