#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "aerialvg/box.hpp"
#include "aerialvg/tensor.hpp"

namespace aerialvg {

struct LossWeights {
  double cls = 1.0;
  double l1 = 5.0;
  double giou = 2.0;
  double rel = 1.0;
};

// Generalized IoU in (-1, 1]. Throws NumericError on a zero-area box.
double giou(const BBox& a, const BBox& b);

// Differentiable GIoU between one predicted row [1, 4] (cx, cy, w, h) and a
// fixed box. Corners are not clamped.
Tensor giou_tensor(const Tensor& pred, const BBox& gt);
// Sum of absolute coordinate differences, [1, 4] row against a fixed box.
Tensor l1_tensor(const Tensor& pred, const BBox& gt);

// rows = ground truths, cols = queries.
struct CostMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> values;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct Assignment {
  std::vector<std::size_t> query_of;  // query index for each ground truth
  double cost = 0.0;
};

// Minimum-cost injective assignment of rows to columns (rows <= cols), by
// Kuhn-Munkres on the matrix padded to square with a constant row cost.
Assignment hungarian(const CostMatrix& c);

// w.cls * (1 - sigmoid(logit)) + w.l1 * L1 + w.giou * (1 - GIoU). `logit` is
// the best class logit of the prediction over the ground truth's tokens.
double matching_cost(const BBox& pred, double logit, const BBox& gt, const LossWeights& w = {});

// Mean BCE over all (query, token) cells; a cell is positive when the query is
// assigned to a ground truth whose span contains the token.
Tensor cls_loss(const Tensor& logits, const Assignment& assignment,
                const std::vector<std::vector<std::size_t>>& spans);

// -log softmax over all m*m logits at cell (i, j). Matching always gives
// i != j, but the diagonal is accepted so m = 1 stays well defined.
Tensor relation_loss(const Tensor& logits, std::size_t i, std::size_t j);

struct LossBreakdown {
  double cls = 0.0, l1 = 0.0, giou = 0.0, rel = 0.0;  // giou holds mean(1 - GIoU)
  double total = 0.0;
};

// total = w.cls*cls + w.l1*l1 + w.giou*giou + w.rel*rel
LossBreakdown total_loss(double cls, double l1, double giou_term, double rel, const LossWeights& w = {});

}  // namespace aerialvg
