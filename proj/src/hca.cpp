#include "aerialvg/hca.hpp"

#include <cmath>

namespace aerialvg {

HcaParams HcaParams::make(const ParamScope& s, std::size_t d, double alpha, double beta) {
  if (alpha < 0 || alpha > 1 || beta < 0 || beta > 1) throw std::invalid_argument("alpha and beta must lie in [0, 1]");
  HcaParams p;
  for (std::size_t i = 0; i < kNumLevels; ++i) {
    const auto ls = s.sub("level" + std::to_string(i + 1));
    p.levels[i] = {Linear::make(ls.sub("q"), d, d, false), Linear::make(ls.sub("k"), d, d, false),
                   Linear::make(ls.sub("v"), d, d), Linear::make(ls.sub("o"), d, d, true, 0.5)};
  }
  p.text_v = Linear::make(s.sub("text_v"), d, d);
  p.text_o = Linear::make(s.sub("text_o"), d, d, true, 0.5);
  const std::size_t k = kLevelStrides.back() / kLevelStrides.front();
  // Starts as average pooling.
  p.anchor_kernel = s.constant("anchor_kernel", {1, k, k}, 1.0 / static_cast<double>(k * k));
  p.alpha = alpha;
  p.beta = beta;
  return p;
}

AttentionPyramid raw_attention_maps(const FeaturePyramid& pyr, const TextFeatures& txt, const HcaParams& p) {
  const std::size_t d = pyr.width();
  if (txt.tokens.dim(1) != d) {
    throw ShapeError("text width " + std::to_string(txt.tokens.dim(1)) + " does not match image width " +
                     std::to_string(d));
  }
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));
  const std::size_t t = txt.count();
  AttentionPyramid maps;
  for (std::size_t i = 0; i < kNumLevels; ++i) {
    const auto& lvl = pyr.levels[i];
    const Tensor keys = p.levels[i].k(txt.tokens);
    // [T, P] = (W_k g)(W_q f)^T, then laid out as T spatial maps.
    const Tensor scores = scale(matmul(keys, transpose(p.levels[i].q(lvl.features))), inv);
    maps.raw[i] = reshape(scores, {t, lvl.height, lvl.width});
  }
  return maps;
}

Tensor anchor_top_level(const Tensor& finest, const Tensor& coarsest, const Tensor& kernel, double beta) {
  const std::size_t stride = kernel.dim(1);
  const Tensor conv = conv2d_down(finest, kernel, stride);
  if (conv.shape() != coarsest.shape()) {
    throw ShapeError("anchor: convolved map " + shape_str(conv.shape()) + " does not match top level " +
                     shape_str(coarsest.shape()));
  }
  return add(scale(coarsest, 1.0 - beta), scale(conv, beta));
}

void refine_downward(AttentionPyramid& maps, double alpha) {
  if (!maps.refined[kNumLevels - 1].defined()) throw std::logic_error("refine_downward: top level not anchored");
  for (std::size_t i = kNumLevels - 1; i-- > 0;) {
    const Tensor& lower = maps.raw[i];
    const Tensor up = bilinear_resize(maps.refined[i + 1], lower.dim(1), lower.dim(2));
    maps.refined[i] = add(scale(lower, 1.0 - alpha), scale(up, alpha));
  }
}

Tensor token_weights(const Tensor& level_map) {
  const std::size_t t = level_map.dim(0), positions = level_map.dim(1) * level_map.dim(2);
  return softmax(transpose(reshape(level_map, {t, positions})));
}

FusedFeatures fuse_features(const FeaturePyramid& pyr, const TextFeatures& txt, const AttentionPyramid& maps,
                            const HcaParams& p) {
  FusedFeatures out{pyr, txt};
  for (std::size_t i = 0; i < kNumLevels; ++i) {
    const Tensor msg = matmul(token_weights(maps.refined[i]), p.levels[i].v(txt.tokens));
    out.image.levels[i].features = add(pyr.levels[i].features, p.levels[i].o(msg));
  }
  // Tokens attend over every image position using the unrefined scores.
  const std::size_t t = txt.count();
  std::vector<Tensor> rows;
  for (std::size_t i = 0; i < kNumLevels; ++i) rows.push_back(reshape(maps.raw[i], {t, pyr.levels[i].positions()}));
  const Tensor weights = softmax(concat(rows, 1));
  const Tensor msg = matmul(weights, p.text_v(pyr.flattened()));
  out.text = TextFeatures::from_tokens(add(txt.tokens, p.text_o(msg)));
  return out;
}

FusedFeatures hierarchical_cross_attention(const FeaturePyramid& pyr, const TextFeatures& txt, const HcaParams& p) {
  AttentionPyramid maps = raw_attention_maps(pyr, txt, p);
  constexpr std::size_t top = kNumLevels - 1;
  maps.refined[top] = anchor_top_level(maps.raw[0], maps.raw[top], p.anchor_kernel, p.beta);
  refine_downward(maps, p.alpha);
  return fuse_features(pyr, txt, maps, p);
}

FusedFeatures plain_cross_attention(const FeaturePyramid& pyr, const TextFeatures& txt, const HcaParams& p) {
  AttentionPyramid maps = raw_attention_maps(pyr, txt, p);
  maps.refined = maps.raw;
  return fuse_features(pyr, txt, maps, p);
}

}  // namespace aerialvg
