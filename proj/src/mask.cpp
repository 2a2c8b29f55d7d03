#include "samcp/mask.hpp"

#include <algorithm>
#include <stdexcept>

namespace samcp {

namespace {

void require_same_grid(const BinaryMask& a, const BinaryMask& b) {
  if (!same_grid(a, b)) throw std::invalid_argument("mask grids differ");
}

void require_valid(const BBox& b) {
  if (!b.valid()) throw std::invalid_argument("degenerate box");
}

// Appends a run, merging with the previous one when they touch.
void push_run(std::vector<Run>& out, std::uint32_t start, std::uint32_t end) {
  if (end <= start) return;
  if (!out.empty() && out.back().end() >= start) {
    out.back().length = std::max(out.back().end(), end) - out.back().start;
    return;
  }
  out.push_back({start, end - start});
}

template <typename Keep>
std::vector<Run> sweep(const std::vector<Run>& a, const std::vector<Run>& b, Keep keep) {
  // Boundary sweep over both run lists; keep(in_a, in_b) decides membership.
  std::vector<std::uint32_t> cuts;
  cuts.reserve(2 * (a.size() + b.size()));
  for (const Run& r : a) { cuts.push_back(r.start); cuts.push_back(r.end()); }
  for (const Run& r : b) { cuts.push_back(r.start); cuts.push_back(r.end()); }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  std::vector<Run> out;
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const std::uint32_t lo = cuts[i], hi = cuts[i + 1];
    while (ia < a.size() && a[ia].end() <= lo) ++ia;
    while (ib < b.size() && b[ib].end() <= lo) ++ib;
    const bool in_a = ia < a.size() && a[ia].start <= lo;
    const bool in_b = ib < b.size() && b[ib].start <= lo;
    if (keep(in_a, in_b)) push_run(out, lo, hi);
  }
  return out;
}

}  // namespace

BinaryMask::BinaryMask(int width, int height) : width_(width), height_(height) {
  if (width < 0 || height < 0) throw std::invalid_argument("negative mask size");
}

BinaryMask::BinaryMask(int width, int height, std::vector<Run> runs) : BinaryMask(width, height) {
  const auto limit = static_cast<std::uint64_t>(pixel_count());
  for (const Run& r : runs) {
    if (static_cast<std::uint64_t>(r.start) + r.length > limit)
      throw std::invalid_argument("run outside mask bounds");
  }
  std::sort(runs.begin(), runs.end(), [](const Run& x, const Run& y) { return x.start < y.start; });
  for (const Run& r : runs) push_run(runs_, r.start, r.end());
}

BinaryMask BinaryMask::from_dense(int width, int height, std::span<const std::uint8_t> pixels) {
  BinaryMask m(width, height);
  if (static_cast<long>(pixels.size()) != m.pixel_count())
    throw std::invalid_argument("dense pixel buffer has wrong size");
  std::uint32_t i = 0;
  const auto n = static_cast<std::uint32_t>(pixels.size());
  while (i < n) {
    if (!pixels[i]) { ++i; continue; }
    std::uint32_t j = i;
    while (j < n && pixels[j]) ++j;
    m.runs_.push_back({i, j - i});
    i = j;
  }
  return m;
}

BinaryMask BinaryMask::from_box(int width, int height, const BBox& box) {
  require_valid(box);
  if (box.x0 < 0 || box.y0 < 0 || box.x1 > width || box.y1 > height)
    throw std::invalid_argument("box outside grid");
  BinaryMask m(width, height);
  for (int y = box.y0; y < box.y1; ++y) {
    const auto start = static_cast<std::uint32_t>(y * width + box.x0);
    push_run(m.runs_, start, start + static_cast<std::uint32_t>(box.width()));
  }
  return m;
}

long BinaryMask::area() const {
  long total = 0;
  for (const Run& r : runs_) total += r.length;
  return total;
}

bool BinaryMask::test(int x, int y) const {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) return false;
  const auto idx = static_cast<std::uint32_t>(y * width_ + x);
  auto it = std::upper_bound(runs_.begin(), runs_.end(), idx,
                             [](std::uint32_t v, const Run& r) { return v < r.start; });
  if (it == runs_.begin()) return false;
  --it;
  return idx < it->end();
}

std::vector<std::uint8_t> BinaryMask::to_dense() const {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(pixel_count()), 0);
  for (const Run& r : runs_) std::fill_n(out.begin() + r.start, r.length, std::uint8_t{1});
  return out;
}

bool same_grid(const BinaryMask& a, const BinaryMask& b) {
  return a.width() == b.width() && a.height() == b.height();
}

long area(const BinaryMask& m) { return m.area(); }

long intersection_area(const BinaryMask& a, const BinaryMask& b) {
  require_same_grid(a, b);
  const auto& ra = a.runs();
  const auto& rb = b.runs();
  long total = 0;
  std::size_t i = 0, j = 0;
  while (i < ra.size() && j < rb.size()) {
    const std::uint32_t lo = std::max(ra[i].start, rb[j].start);
    const std::uint32_t hi = std::min(ra[i].end(), rb[j].end());
    if (hi > lo) total += hi - lo;
    if (ra[i].end() < rb[j].end()) ++i; else ++j;
  }
  return total;
}

BinaryMask intersect(const BinaryMask& a, const BinaryMask& b) {
  require_same_grid(a, b);
  return BinaryMask(a.width(), a.height(), sweep(a.runs(), b.runs(), [](bool x, bool y) { return x && y; }));
}

BinaryMask unite(const BinaryMask& a, const BinaryMask& b) {
  require_same_grid(a, b);
  return BinaryMask(a.width(), a.height(), sweep(a.runs(), b.runs(), [](bool x, bool y) { return x || y; }));
}

BinaryMask subtract(const BinaryMask& a, const BinaryMask& b) {
  require_same_grid(a, b);
  return BinaryMask(a.width(), a.height(), sweep(a.runs(), b.runs(), [](bool x, bool y) { return x && !y; }));
}

BinaryMask union_of(std::span<const BinaryMask> masks) {
  if (masks.empty()) throw std::invalid_argument("union of an empty mask list");
  std::vector<Run> all;
  for (const BinaryMask& m : masks) {
    require_same_grid(masks.front(), m);
    all.insert(all.end(), m.runs().begin(), m.runs().end());
  }
  return BinaryMask(masks.front().width(), masks.front().height(), std::move(all));
}

double iop_mask(const BinaryMask& p, const BinaryMask& g) {
  const long ap = p.area();
  if (ap == 0) throw std::invalid_argument("degenerate patch: zero area");
  return static_cast<double>(intersection_area(p, g)) / static_cast<double>(ap);
}

double iou_mask(const BinaryMask& a, const BinaryMask& b) {
  const long inter = intersection_area(a, b);
  const long uni = a.area() + b.area() - inter;
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

BBox bbox_of(const BinaryMask& m) {
  if (m.empty()) throw std::invalid_argument("bounding box of an empty mask");
  const int w = m.width();
  BBox box{w, m.height(), 0, 0};
  for (const Run& r : m.runs()) {
    const int y_first = static_cast<int>(r.start) / w;
    const int y_last = static_cast<int>(r.end() - 1) / w;
    box.y0 = std::min(box.y0, y_first);
    box.y1 = std::max(box.y1, y_last + 1);
    if (y_first != y_last) {
      // The run wraps at least one row boundary.
      box.x0 = 0;
      box.x1 = w;
    } else {
      box.x0 = std::min(box.x0, static_cast<int>(r.start) % w);
      box.x1 = std::max(box.x1, static_cast<int>(r.end() - 1) % w + 1);
    }
  }
  return box;
}

BBox merge_bboxes(std::span<const BBox> boxes) {
  if (boxes.empty()) throw std::invalid_argument("merge of an empty box list");
  BBox out = boxes.front();
  for (const BBox& b : boxes) {
    require_valid(b);
    out.x0 = std::min(out.x0, b.x0);
    out.y0 = std::min(out.y0, b.y0);
    out.x1 = std::max(out.x1, b.x1);
    out.y1 = std::max(out.y1, b.y1);
  }
  return out;
}

namespace {

long box_intersection(const BBox& a, const BBox& b) {
  const int w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const int h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  if (w <= 0 || h <= 0) return 0;
  return static_cast<long>(w) * h;
}

}  // namespace

double iop_box(const BBox& p, const BBox& g) {
  require_valid(p);
  require_valid(g);
  return static_cast<double>(box_intersection(p, g)) / static_cast<double>(p.area());
}

double iou_box(const BBox& a, const BBox& b) {
  require_valid(a);
  require_valid(b);
  const long inter = box_intersection(a, b);
  return static_cast<double>(inter) / static_cast<double>(a.area() + b.area() - inter);
}

double giou_box(const BBox& a, const BBox& b) {
  require_valid(a);
  require_valid(b);
  const long inter = box_intersection(a, b);
  const long uni = a.area() + b.area() - inter;
  const BBox hull{std::min(a.x0, b.x0), std::min(a.y0, b.y0), std::max(a.x1, b.x1), std::max(a.y1, b.y1)};
  const double iou = static_cast<double>(inter) / static_cast<double>(uni);
  return iou - static_cast<double>(hull.area() - uni) / static_cast<double>(hull.area());
}

}  // namespace samcp
