#pragma once

// Hierarchical cross-attention between pyramid levels and caption tokens.
//
// Each level gets a text-affinity score map. The coarsest map is anchored with
// a strided depthwise convolution of the finest map,
//     A*_top = (1 - beta) * A_top + beta * conv(A_1),
// and the refinement then walks down the pyramid,
//     A*_i = (1 - alpha) * A_i + alpha * upsample(A*_{i+1}),
// before the refined logits drive image-side attention over tokens.

#include <array>

#include "aerialvg/encoders.hpp"
#include "aerialvg/nn.hpp"

namespace aerialvg {

inline constexpr double kDefaultAlpha = 0.2;
inline constexpr double kDefaultBeta = 0.3;

struct HcaParams {
  struct Level {
    Linear q, k, v, o;
  };
  std::array<Level, kNumLevels> levels;
  Linear text_v, text_o;   // token-side update over all image positions
  Tensor anchor_kernel;    // [1, s, s], s = finest-to-coarsest stride ratio, shared over tokens
  double alpha = kDefaultAlpha;
  double beta = kDefaultBeta;

  static HcaParams make(const ParamScope& s, std::size_t d, double alpha = kDefaultAlpha,
                        double beta = kDefaultBeta);
};

// Pre-softmax score maps, one [T, H_i, W_i] tensor per level (a spatial map
// per token so the convolution and resize act on each token independently).
struct AttentionPyramid {
  std::array<Tensor, kNumLevels> raw;
  std::array<Tensor, kNumLevels> refined;
};

AttentionPyramid raw_attention_maps(const FeaturePyramid& pyr, const TextFeatures& txt, const HcaParams& p);

Tensor anchor_top_level(const Tensor& finest, const Tensor& coarsest, const Tensor& kernel, double beta);

// Fills refined[0..n-2] from refined[n-1], which must already be set.
void refine_downward(AttentionPyramid& maps, double alpha);

struct FusedFeatures {
  FeaturePyramid image;
  TextFeatures text;
};

// Softmax over tokens of one level's refined map: [H*W, T].
Tensor token_weights(const Tensor& level_map);

FusedFeatures fuse_features(const FeaturePyramid& pyr, const TextFeatures& txt, const AttentionPyramid& maps,
                            const HcaParams& p);

// Full pass: raw maps, anchoring, refinement, fusion.
FusedFeatures hierarchical_cross_attention(const FeaturePyramid& pyr, const TextFeatures& txt, const HcaParams& p);

// Reference path with no anchoring or refinement (refined == raw).
FusedFeatures plain_cross_attention(const FeaturePyramid& pyr, const TextFeatures& txt, const HcaParams& p);

}  // namespace aerialvg
