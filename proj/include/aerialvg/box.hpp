#pragma once

#include <algorithm>

namespace aerialvg {

// Center-size box in normalized image coordinates, y pointing down.
struct BBox {
  double cx = 0.5, cy = 0.5, w = 0.0, h = 0.0;

  double x1() const { return std::clamp(cx - 0.5 * w, 0.0, 1.0); }
  double y1() const { return std::clamp(cy - 0.5 * h, 0.0, 1.0); }
  double x2() const { return std::clamp(cx + 0.5 * w, 0.0, 1.0); }
  double y2() const { return std::clamp(cy + 0.5 * h, 0.0, 1.0); }
  double area() const { return (x2() - x1()) * (y2() - y1()); }

  bool operator==(const BBox&) const = default;
};

inline double intersection_area(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  return iw > 0 && ih > 0 ? iw * ih : 0.0;
}

inline double iou(const BBox& a, const BBox& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

}  // namespace aerialvg
