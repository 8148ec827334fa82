#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "msfm/rng.hpp"

namespace msfm {

/// Axis-aligned box in scene coordinates, corner format (x1,y1,x2,y2).
/// A valid box has strictly positive width and height; y grows downward,
/// so y2 is the bottom edge.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }

  bool operator==(const Box&) const = default;
};

inline bool box_valid(const Box& b) {
  return std::isfinite(b.x1) && std::isfinite(b.y1) && std::isfinite(b.x2) &&
         std::isfinite(b.y2) && b.x2 > b.x1 && b.y2 > b.y1;
}

struct ScoredBox {
  Box box;
  double score = 0.0;
};

inline double area(const Box& b) { return b.width() * b.height(); }

inline double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

/// Intersection over union; 0 for disjoint interiors, 1 for identical boxes.
inline double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  return inter / (area(a) + area(b) - inter);
}

/// Returns b restricted to bounds, or nullopt when the intersection is empty.
inline std::optional<Box> clip(const Box& b, const Box& bounds) {
  Box r{std::max(b.x1, bounds.x1), std::max(b.y1, bounds.y1),
        std::min(b.x2, bounds.x2), std::min(b.y2, bounds.y2)};
  if (r.x2 <= r.x1 || r.y2 <= r.y1) return std::nullopt;
  return r;
}

/// Perturbs each corner by up to amplitude * (box size). Amplitude below 0.5
/// keeps the result valid; below ~0.08 the jittered box keeps IoU > 0.5 with
/// the original regardless of the draw.
inline Box jitter_box(const Box& b, double amplitude, Rng& rng) {
  if (!(amplitude > 0.0 && amplitude < 0.5))
    throw std::invalid_argument("jitter_box: amplitude must be in (0, 0.5)");
  const double w = b.width();
  const double h = b.height();
  return Box{b.x1 + amplitude * w * rng.uniform(-1.0, 1.0),
             b.y1 + amplitude * h * rng.uniform(-1.0, 1.0),
             b.x2 + amplitude * w * rng.uniform(-1.0, 1.0),
             b.y2 + amplitude * h * rng.uniform(-1.0, 1.0)};
}

/// Greedy non-maximum suppression. Returns kept indices into dets in
/// descending score order; score ties keep the lower input index first.
/// A box is suppressed when its IoU with an already-kept box exceeds
/// iou_threshold (strictly).
inline std::vector<std::size_t> nms(const std::vector<ScoredBox>& dets,
                                    double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0))
    throw std::invalid_argument("nms: iou_threshold must be in (0, 1)");
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return dets[a].score > dets[b].score;
                   });
  std::vector<std::size_t> kept;
  for (std::size_t idx : order) {
    bool suppressed = false;
    for (std::size_t k : kept) {
      if (iou(dets[idx].box, dets[k].box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(idx);
  }
  return kept;
}

}  // namespace msfm
