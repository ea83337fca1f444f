#pragma once

#include <array>
#include <vector>

#include "aerialvg/box.hpp"
#include "aerialvg/encoders.hpp"
#include "aerialvg/nn.hpp"

namespace aerialvg {

inline constexpr std::size_t kDefaultQueries = 8;
inline constexpr std::size_t kDecoderLayers = 6;

struct QuerySet {
  Tensor content;                                // [m, d]
  std::vector<std::array<double, 2>> reference;  // normalized (cx, cy), fixed through decoding
  std::vector<std::size_t> positions;            // flat pyramid index of each selected position

  std::size_t size() const { return reference.size(); }
};

// Score of every pyramid position (level 1 first, row-major): max_t <f, g_t>.
std::vector<double> position_scores(const FeaturePyramid& fused, const TextFeatures& txt);

// Top-m positions by score; ties go to the earlier flat index, i.e. lower
// level, then row, then column.
QuerySet select_queries(const FeaturePyramid& fused, const TextFeatures& txt, std::size_t m);

struct DecoderLayer {
  LayerNorm self_norm, image_norm, text_norm, mlp_norm;
  Attention self_attn, image_attn, text_attn;
  Mlp mlp;

  static DecoderLayer make(const ParamScope& s, std::size_t d);
  // Pre-norm residual sublayers: x + f(norm(x)).
  Tensor operator()(const Tensor& q, const Tensor& image, const Tensor& text) const;
};

struct Decoder {
  std::vector<DecoderLayer> layers;

  static Decoder make(const ParamScope& s, std::size_t d, std::size_t num_layers = kDecoderLayers);
  QuerySet decode(const QuerySet& q, const FeaturePyramid& fused, const TextFeatures& txt) const;
};

// Three-layer MLP. (cx, cy) are offsets in logit space from the reference
// point; (w, h) are direct sigmoids. Output [m, 4].
struct BBoxHead {
  Linear fc1, fc2, fc3;

  static BBoxHead make(const ParamScope& s, std::size_t d);
  Tensor operator()(const QuerySet& q) const;
};

// logits[i, t] = <q_i, g_t> / sqrt(d)
Tensor class_head(const Tensor& queries, const TextFeatures& txt);

std::vector<BBox> to_boxes(const Tensor& boxes);

}  // namespace aerialvg
