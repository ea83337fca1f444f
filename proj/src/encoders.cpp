#include "aerialvg/encoders.hpp"

#include <cmath>
#include <numbers>

namespace aerialvg {

std::size_t FeaturePyramid::positions() const {
  std::size_t n = 0;
  for (const auto& l : levels) n += l.positions();
  return n;
}

Tensor FeaturePyramid::flattened() const {
  std::vector<Tensor> parts;
  for (const auto& l : levels) parts.push_back(l.features);
  return concat(parts, 0);
}

TextFeatures TextFeatures::from_tokens(Tensor tokens) {
  TextFeatures t{tokens, mean_rows(tokens)};
  return t;
}

ImageEncoder ImageEncoder::make(const ParamScope& s, std::size_t d) {
  ImageEncoder enc;
  enc.patch_embed = Linear::make(s.sub("patch_embed"), 3 * 4 * 4, d);
  for (std::size_t i = 0; i < enc.merges.size(); ++i) {
    const auto ms = s.sub("merge" + std::to_string(i + 2));
    enc.merges[i] = {Linear::make(ms.sub("reduce"), 4 * d, d), LayerNorm::make(ms.sub("norm"), d),
                     Mlp::make(ms.sub("mlp"), d, 2 * d, d)};
  }
  return enc;
}

FeaturePyramid ImageEncoder::encode(const ImageRaster& img) const {
  const std::size_t coarsest = kLevelStrides.back();
  if (img.height == 0 || img.width == 0 || img.height % coarsest != 0 || img.width % coarsest != 0) {
    throw InputError("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                     " is not a multiple of " + std::to_string(coarsest));
  }
  if (img.pixels.size() != 3 * img.height * img.width) throw InputError("image buffer does not hold 3 channels");
  const Tensor pixels = Tensor::from({3, img.height, img.width}, img.pixels);

  FeaturePyramid pyr;
  std::size_t h = img.height / kLevelStrides[0], w = img.width / kLevelStrides[0];
  Tensor x = patch_embed(patchify(pixels, kLevelStrides[0]));
  pyr.levels[0] = {x, h, w, kLevelStrides[0]};
  for (std::size_t i = 0; i < merges.size(); ++i) {
    const std::size_t d = x.dim(1);
    const Tensor grid = reshape(transpose(x), {d, h, w});
    h /= 2;
    w /= 2;
    Tensor y = merges[i].norm(merges[i].reduce(patchify(grid, 2)));
    x = add(y, merges[i].mlp(y));
    pyr.levels[i + 1] = {x, h, w, kLevelStrides[i + 1]};
  }
  return pyr;
}

TextEncoder TextEncoder::make(const ParamScope& s, std::size_t vocab, std::size_t d) {
  return {s.normal("embedding", {vocab, d}, 1.0), s.normal("positions", {kMaxTokens, d}, 0.5),
          Attention::make(s.sub("attn"), d), LayerNorm::make(s.sub("norm"), d)};
}

TextFeatures TextEncoder::encode(std::span<const int> tokens) const {
  if (tokens.empty()) throw InputError("empty token sequence");
  if (tokens.size() > positions.dim(0)) {
    throw InputError("token sequence of length " + std::to_string(tokens.size()) + " exceeds " +
                     std::to_string(positions.dim(0)));
  }
  std::vector<std::size_t> ids(tokens.size()), pos(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= embedding.dim(0)) {
      throw InputError("unknown token id " + std::to_string(tokens[i]));
    }
    ids[i] = static_cast<std::size_t>(tokens[i]);
    pos[i] = i;
  }
  const Tensor x = add(gather_rows(embedding, ids), gather_rows(positions, pos));
  return TextFeatures::from_tokens(norm(add(x, attn(x, x))));
}

void point_position_code(double x, double y, std::size_t d, double* out) {
  if (d % 4 != 0) throw InputError("position code width must be a multiple of 4");
  const std::size_t nf = d / 4;
  for (std::size_t k = 0; k < nf; ++k) {
    const double t = nf > 1 ? static_cast<double>(k) / static_cast<double>(nf - 1) : 0.0;
    const double f = 0.5 * std::numbers::pi * std::pow(16.0, t);
    out[2 * k] = std::sin(f * x);
    out[2 * k + 1] = std::cos(f * x);
    out[2 * nf + 2 * k] = std::sin(f * y);
    out[2 * nf + 2 * k + 1] = std::cos(f * y);
  }
}

Tensor grid_position_code(std::size_t h, std::size_t w, std::size_t d) {
  if (d % 4 != 0) throw InputError("position code width must be a multiple of 4");
  std::vector<double> out(h * w * d);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double x = (static_cast<double>(c) + 0.5) / static_cast<double>(w);
      const double y = (static_cast<double>(r) + 0.5) / static_cast<double>(h);
      point_position_code(x, y, d, out.data() + (r * w + c) * d);
    }
  }
  return Tensor::from({h * w, d}, std::move(out));
}

FeaturePyramid with_position_code(const FeaturePyramid& pyr) {
  FeaturePyramid out = pyr;
  for (auto& l : out.levels) l.features = add(l.features, grid_position_code(l.height, l.width, l.features.dim(1)));
  return out;
}

}  // namespace aerialvg
