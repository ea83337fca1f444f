#include "aerialvg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace aerialvg {

double giou(const BBox& a, const BBox& b) {
  const double area_a = a.area(), area_b = b.area();
  if (!(area_a > 0) || !(area_b > 0)) throw NumericError("giou: degenerate box");
  const double inter = intersection_area(a, b);
  const double uni = area_a + area_b - inter;
  const double enclosure = (std::max(a.x2(), b.x2()) - std::min(a.x1(), b.x1())) *
                           (std::max(a.y2(), b.y2()) - std::min(a.y1(), b.y1()));
  // The enclosure contains the union; clamp so rounding cannot lift GIoU above IoU.
  return inter / uni - std::max(0.0, enclosure - uni) / enclosure;
}

namespace {

struct Corners {
  Tensor x1, y1, x2, y2;
};

Corners corners_of(const Tensor& pred) {
  const Tensor cx = slice(pred, 1, 0, 1), cy = slice(pred, 1, 1, 1);
  const Tensor hw = scale(slice(pred, 1, 2, 1), 0.5), hh = scale(slice(pred, 1, 3, 1), 0.5);
  return {sub(cx, hw), sub(cy, hh), add(cx, hw), add(cy, hh)};
}

Tensor constant(double v) { return Tensor::from({1, 1}, {v}); }

}  // namespace

Tensor giou_tensor(const Tensor& pred, const BBox& gt) {
  const Corners p = corners_of(pred);
  const Tensor gx1 = constant(gt.cx - 0.5 * gt.w), gy1 = constant(gt.cy - 0.5 * gt.h);
  const Tensor gx2 = constant(gt.cx + 0.5 * gt.w), gy2 = constant(gt.cy + 0.5 * gt.h);
  const Tensor iw = relu(sub(minimum(p.x2, gx2), maximum(p.x1, gx1)));
  const Tensor ih = relu(sub(minimum(p.y2, gy2), maximum(p.y1, gy1)));
  const Tensor inter = mul(iw, ih);
  const Tensor area_p = mul(sub(p.x2, p.x1), sub(p.y2, p.y1));
  const Tensor uni = add_scalar(sub(area_p, inter), gt.w * gt.h);
  const Tensor enclosure = mul(sub(maximum(p.x2, gx2), minimum(p.x1, gx1)), sub(maximum(p.y2, gy2), minimum(p.y1, gy1)));
  return sub(div(inter, uni), div(sub(enclosure, uni), enclosure));
}

Tensor l1_tensor(const Tensor& pred, const BBox& gt) {
  return sum(abs(sub(pred, Tensor::from({1, 4}, {gt.cx, gt.cy, gt.w, gt.h}))));
}

Assignment hungarian(const CostMatrix& c) {
  if (c.rows > c.cols) {
    throw std::invalid_argument("hungarian: " + std::to_string(c.rows) + " ground truths but only " +
                                std::to_string(c.cols) + " queries");
  }
  if (c.values.size() != c.rows * c.cols) throw std::invalid_argument("hungarian: cost buffer size mismatch");
  double biggest = 0.0;
  for (double v : c.values) {
    if (!std::isfinite(v)) throw NumericError("hungarian: non-finite cost");
    biggest = std::max(biggest, std::abs(v));
  }
  const std::size_t n = c.cols;
  const double pad = 2.0 * biggest + 1.0;
  auto cost = [&](std::size_t r, std::size_t col) { return r < c.rows ? c.at(r, col) : pad; };

  // Potentials formulation, 1-based with a virtual column 0.
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> owner(n + 1, 0), way(n + 1, 0);
  for (std::size_t row = 1; row <= n; ++row) {
    owner[0] = row;
    std::size_t col0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[col0] = 1;
      const std::size_t r0 = owner[col0];
      double delta = inf;
      std::size_t col1 = 0;
      for (std::size_t col = 1; col <= n; ++col) {
        if (used[col]) continue;
        const double cur = cost(r0 - 1, col - 1) - u[r0] - v[col];
        if (cur < minv[col]) {
          minv[col] = cur;
          way[col] = col0;
        }
        if (minv[col] < delta) {
          delta = minv[col];
          col1 = col;
        }
      }
      for (std::size_t col = 0; col <= n; ++col) {
        if (used[col]) {
          u[owner[col]] += delta;
          v[col] -= delta;
        } else {
          minv[col] -= delta;
        }
      }
      col0 = col1;
    } while (owner[col0] != 0);
    do {
      const std::size_t col1 = way[col0];
      owner[col0] = owner[col1];
      col0 = col1;
    } while (col0 != 0);
  }

  Assignment a;
  a.query_of.assign(c.rows, 0);
  for (std::size_t col = 1; col <= n; ++col) {
    if (owner[col] != 0 && owner[col] <= c.rows) a.query_of[owner[col] - 1] = col - 1;
  }
  for (std::size_t r = 0; r < c.rows; ++r) a.cost += c.at(r, a.query_of[r]);
  return a;
}

double matching_cost(const BBox& pred, double logit, const BBox& gt, const LossWeights& w) {
  const double p = 1.0 / (1.0 + std::exp(-logit));
  const double l1 = std::abs(pred.cx - gt.cx) + std::abs(pred.cy - gt.cy) + std::abs(pred.w - gt.w) +
                    std::abs(pred.h - gt.h);
  return w.cls * (1.0 - p) + w.l1 * l1 + w.giou * (1.0 - giou(pred, gt));
}

Tensor cls_loss(const Tensor& logits, const Assignment& assignment, const std::vector<std::vector<std::size_t>>& spans) {
  const std::size_t m = logits.dim(0), t = logits.dim(1);
  if (spans.size() != assignment.query_of.size()) throw std::invalid_argument("cls_loss: one span per ground truth");
  std::vector<double> targets(m * t, 0.0);
  for (std::size_t g = 0; g < spans.size(); ++g) {
    if (spans[g].empty()) throw std::invalid_argument("cls_loss: empty token span");
    for (std::size_t tok : spans[g]) {
      if (tok >= t) throw std::invalid_argument("cls_loss: span token out of range");
      targets[assignment.query_of[g] * t + tok] = 1.0;
    }
  }
  return bce_with_logits(logits, targets);
}

Tensor relation_loss(const Tensor& logits, std::size_t i, std::size_t j) {
  const std::size_t m = logits.dim(0);
  if (i >= m || j >= m) throw std::invalid_argument("relation_loss: index out of range");
  for (double v : logits.data())
    if (!std::isfinite(v)) throw NumericError("relation_loss: non-finite logit");
  return cross_entropy_at(logits, i * m + j);
}

LossBreakdown total_loss(double cls, double l1, double giou_term, double rel, const LossWeights& w) {
  LossBreakdown b{cls, l1, giou_term, rel, 0.0};
  b.total = w.cls * cls + w.l1 * l1 + w.giou * giou_term + w.rel * rel;
  return b;
}

}  // namespace aerialvg
