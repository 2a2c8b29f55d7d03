#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace samcp {

/// A maximal run of set pixels in row-major index space.
struct Run {
  std::uint32_t start = 0;
  std::uint32_t length = 0;

  std::uint32_t end() const { return start + length; }
  bool operator==(const Run&) const = default;
};

/// Half-open integer pixel rectangle: [x0, x1) x [y0, y1).
struct BBox {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  long area() const { return static_cast<long>(width()) * height(); }
  bool valid() const { return x0 < x1 && y0 < y1; }
  bool operator==(const BBox&) const = default;
};

/// Run-length encoded binary mask over a width x height grid.
///
/// Runs are kept sorted, non-overlapping and maximally merged, so two masks
/// with the same pixels always compare equal.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int width, int height);

  /// Builds a mask from arbitrary runs; overlapping or adjacent runs are
  /// merged. Throws std::invalid_argument for runs outside the grid.
  BinaryMask(int width, int height, std::vector<Run> runs);

  static BinaryMask from_dense(int width, int height, std::span<const std::uint8_t> pixels);
  static BinaryMask from_box(int width, int height, const BBox& box);

  int width() const { return width_; }
  int height() const { return height_; }
  long pixel_count() const { return static_cast<long>(width_) * height_; }
  const std::vector<Run>& runs() const { return runs_; }

  long area() const;
  bool empty() const { return runs_.empty(); }
  bool test(int x, int y) const;
  std::vector<std::uint8_t> to_dense() const;

  bool operator==(const BinaryMask&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<Run> runs_;
};

bool same_grid(const BinaryMask& a, const BinaryMask& b);

long area(const BinaryMask& m);
long intersection_area(const BinaryMask& a, const BinaryMask& b);

BinaryMask intersect(const BinaryMask& a, const BinaryMask& b);
BinaryMask unite(const BinaryMask& a, const BinaryMask& b);
BinaryMask subtract(const BinaryMask& a, const BinaryMask& b);

/// Union of a non-empty list of masks on a common grid.
BinaryMask union_of(std::span<const BinaryMask> masks);

/// area(p ∩ g) / area(p). A zero-area patch is rejected.
double iop_mask(const BinaryMask& p, const BinaryMask& g);
double iou_mask(const BinaryMask& a, const BinaryMask& b);

/// Tight bounding box of a non-empty mask.
BBox bbox_of(const BinaryMask& m);
BBox merge_bboxes(std::span<const BBox> boxes);

double iop_box(const BBox& p, const BBox& g);
double iou_box(const BBox& a, const BBox& b);
double giou_box(const BBox& a, const BBox& b);

}  // namespace samcp
