#pragma once

// Small stand-ins for the image and text backbones: a patch-merge pyramid over
// raw pixels and a one-block self-attention text encoder over caption tokens.

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "aerialvg/image.hpp"
#include "aerialvg/nn.hpp"
#include "aerialvg/scene.hpp"

namespace aerialvg {

inline constexpr std::size_t kNumLevels = 4;
inline constexpr std::array<std::size_t, kNumLevels> kLevelStrides = {4, 8, 16, 32};

struct FeatureLevel {
  Tensor features;  // [height * width, d], row-major over (row, col)
  std::size_t height = 0, width = 0, stride = 0;

  std::size_t positions() const { return height * width; }
};

struct FeaturePyramid {
  std::array<FeatureLevel, kNumLevels> levels;

  std::size_t positions() const;
  std::size_t width() const { return levels[0].features.dim(1); }
  // All levels stacked, level 1 first: [sum of positions, d].
  Tensor flattened() const;
};

struct TextFeatures {
  Tensor tokens;  // [T, d]
  Tensor pooled;  // [1, d], mean of token rows

  static TextFeatures from_tokens(Tensor tokens);
  std::size_t count() const { return tokens.dim(0); }
};

class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ImageEncoder {
  struct MergeStage {
    Linear reduce;  // 2x2 patch merge, 4d -> d
    LayerNorm norm;
    Mlp mlp;
  };

  Linear patch_embed;  // 4x4x3 pixels -> d
  std::array<MergeStage, kNumLevels - 1> merges;

  static ImageEncoder make(const ParamScope& s, std::size_t d);
  FeaturePyramid encode(const ImageRaster& img) const;
};

struct TextEncoder {
  Tensor embedding;  // [vocab, d]
  Tensor positions;  // [max tokens, d]
  Attention attn;
  LayerNorm norm;

  static TextEncoder make(const ParamScope& s, std::size_t vocab, std::size_t d);
  TextFeatures encode(std::span<const int> tokens) const;
};

// Fixed 2-D sinusoidal code of a normalized point (x, y), written to out[0..d).
// Half of the channels encode x, half encode y, at geometric frequencies.
void point_position_code(double x, double y, std::size_t d, double* out);

// point_position_code of each cell center of an h x w grid: [h*w, d].
Tensor grid_position_code(std::size_t h, std::size_t w, std::size_t d);

// Adds grid_position_code to every level.
FeaturePyramid with_position_code(const FeaturePyramid& pyr);

}  // namespace aerialvg
