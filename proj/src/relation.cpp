#include "aerialvg/relation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace aerialvg {

namespace {

// Maps row j*m + i to cell (i, j); its own inverse.
std::vector<std::size_t> column_major_order(std::size_t m) {
  std::vector<std::size_t> perm(m * m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) perm[j * m + i] = i * m + j;
  return perm;
}

}  // namespace

RelationBlock RelationBlock::make(const ParamScope& s, std::size_t d) {
  return {LayerNorm::make(s.sub("column_norm"), d), LayerNorm::make(s.sub("text_norm"), d),
          LayerNorm::make(s.sub("mlp_norm"), d),    Attention::make(s.sub("column_attn"), d),
          Attention::make(s.sub("text_attn"), d),   Mlp::make(s.sub("mlp"), d, 2 * d, d)};
}

Tensor column_self_attention(const Tensor& normed_grid, std::size_t m, const Attention& attn) {
  const std::size_t d = normed_grid.dim(1);
  const auto perm = column_major_order(m);
  const Tensor cols = gather_rows(normed_grid, perm);
  const Tensor q = reshape(attn.q(cols), {m, m, d});
  const Tensor k = reshape(attn.k(cols), {m, m, d});
  const Tensor v = reshape(attn.v(cols), {m, m, d});
  const Tensor w = softmax(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(d))));
  const Tensor mixed = attn.o(reshape(matmul(w, v), {m * m, d}));
  return gather_rows(mixed, perm);
}

Tensor RelationBlock::operator()(const Tensor& grid, std::size_t m, const TextFeatures& txt) const {
  Tensor x = add(grid, column_self_attention(column_norm(grid), m, column_attn));
  x = add(x, text_attn(text_norm(x), txt.tokens));
  return add(x, mlp(mlp_norm(x)));
}

RelationParams RelationParams::make(const ParamScope& s, std::size_t d, std::size_t num_blocks) {
  RelationParams p;
  p.pair_first = Linear::make(s.sub("pair_first"), d, d, false, std::sqrt(0.5));
  p.pair_second = Linear::make(s.sub("pair_second"), d, d, false, std::sqrt(0.5));
  for (std::size_t i = 0; i < num_blocks; ++i) p.blocks.push_back(RelationBlock::make(s.sub("block" + std::to_string(i)), d));
  p.head_norm = LayerNorm::make(s.sub("head_norm"), d);
  p.head = Linear::make(s.sub("head"), d, d);
  return p;
}

Tensor build_pairs(const Tensor& queries, const RelationParams& p) {
  const std::size_t m = queries.dim(0);
  std::vector<std::size_t> first(m * m), second(m * m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      first[i * m + j] = i;
      second[i * m + j] = j;
    }
  }
  return add(gather_rows(p.pair_first(queries), first), gather_rows(p.pair_second(queries), second));
}

Tensor relation_logits(const Tensor& grid, std::size_t m, const TextFeatures& txt, const RelationParams& p) {
  const Tensor h = p.head(p.head_norm(grid));
  const double inv = 1.0 / std::sqrt(static_cast<double>(grid.dim(1)));
  return reshape(scale(matmul(h, transpose(txt.pooled)), inv), {m, m});
}

Tensor relation_forward(const Tensor& queries, const TextFeatures& txt, const RelationParams& p) {
  const std::size_t m = queries.dim(0);
  Tensor grid = build_pairs(queries, p);
  for (const auto& block : p.blocks) grid = block(grid, m, txt);
  return relation_logits(grid, m, txt, p);
}

Tensor relation_matrix(const Tensor& logits) {
  const std::size_t m = logits.dim(0);
  return reshape(softmax(reshape(logits, {1, m * m})), {m, m});
}

std::vector<double> relation_scores(const Tensor& matrix) {
  const std::size_t m = matrix.dim(0), n = matrix.dim(1);
  const auto v = matrix.data();
  std::vector<double> s(m);
  for (std::size_t i = 0; i < m; ++i) s[i] = *std::max_element(v.begin() + i * n, v.begin() + (i + 1) * n);
  return s;
}

std::vector<double> combine_scores(const Tensor& class_logits, const std::vector<double>& relation) {
  const std::size_t m = class_logits.dim(0), t = class_logits.dim(1);
  if (!relation.empty() && relation.size() != m) {
    throw ShapeError("combine_scores: " + std::to_string(relation.size()) + " relation scores for " +
                     std::to_string(m) + " queries");
  }
  const auto v = class_logits.data();
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double mx = *std::max_element(v.begin() + i * t, v.begin() + (i + 1) * t);
    out[i] = 1.0 / (1.0 + std::exp(-mx)) + (relation.empty() ? 0.0 : relation[i]);
  }
  return out;
}

std::vector<std::size_t> rank_by_score(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace aerialvg
