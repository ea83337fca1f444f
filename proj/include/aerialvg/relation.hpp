#pragma once

// Relation-aware grounding over decoded queries.
//
// Every ordered pair (i, j) of the m queries becomes one cell of an m x m
// grid. Cells attend within their column (same j), then to the caption, then
// pass an MLP; after the last block a head scores each cell against the pooled
// caption vector, and one softmax over all m*m cells gives the relation matrix.
// Row maxima of that matrix are the per-query relation scores.

#include <vector>

#include "aerialvg/encoders.hpp"
#include "aerialvg/nn.hpp"

namespace aerialvg {

inline constexpr std::size_t kRelationLayers = 3;

struct RelationBlock {
  LayerNorm column_norm, text_norm, mlp_norm;
  Attention column_attn, text_attn;
  Mlp mlp;

  static RelationBlock make(const ParamScope& s, std::size_t d);
  // grid is [m*m, d] with cell (i, j) at row i*m + j.
  Tensor operator()(const Tensor& grid, std::size_t m, const TextFeatures& txt) const;
};

struct RelationParams {
  Linear pair_first, pair_second;  // the two halves of the 2d -> d pair projection
  std::vector<RelationBlock> blocks;
  LayerNorm head_norm;
  Linear head;

  static RelationParams make(const ParamScope& s, std::size_t d, std::size_t num_blocks = kRelationLayers);
};

// cell(i, j) = P [q_i ; q_j], laid out at row i*m + j.
Tensor build_pairs(const Tensor& queries, const RelationParams& p);

// Self-attention among the m cells of each column, returned in grid layout.
Tensor column_self_attention(const Tensor& normed_grid, std::size_t m, const Attention& attn);

// Pre-softmax relation logits [m, m]: <head(cell(i,j)), pooled text> / sqrt(d).
Tensor relation_logits(const Tensor& grid, std::size_t m, const TextFeatures& txt, const RelationParams& p);

// Full relation branch: pairs, blocks, head. Returns logits [m, m].
Tensor relation_forward(const Tensor& queries, const TextFeatures& txt, const RelationParams& p);

// Softmax over all m*m logits jointly.
Tensor relation_matrix(const Tensor& logits);

// s_i = max_j M[i, j]
std::vector<double> relation_scores(const Tensor& matrix);

// final_i = sigmoid(max_t cls[i, t]) + s_i. Empty relation scores mean the
// relation branch is off and only the class term is used.
std::vector<double> combine_scores(const Tensor& class_logits, const std::vector<double>& relation);

// Query indices by descending score, ties by index.
std::vector<std::size_t> rank_by_score(const std::vector<double>& scores);

}  // namespace aerialvg
