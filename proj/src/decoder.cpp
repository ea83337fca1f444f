#include "aerialvg/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "aerialvg/kernels.hpp"

namespace aerialvg {

std::vector<double> position_scores(const FeaturePyramid& fused, const TextFeatures& txt) {
  const Tensor flat = fused.flattened().detach();
  const std::size_t n = flat.dim(0), d = flat.dim(1), t = txt.count();
  std::vector<double> sim(n * t);
  kernels::gemm({n, t, d, false, true}, flat.data().data(), txt.tokens.data().data(), sim.data(), false);
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) scores[i] = *std::max_element(sim.begin() + i * t, sim.begin() + (i + 1) * t);
  return scores;
}

QuerySet select_queries(const FeaturePyramid& fused, const TextFeatures& txt, std::size_t m) {
  const std::size_t total = fused.positions();
  if (m == 0 || m > total) {
    throw std::invalid_argument("cannot select " + std::to_string(m) + " queries from " + std::to_string(total) +
                                " positions");
  }
  const std::vector<double> scores = position_scores(fused, txt);
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m), order.end(),
                    [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
  order.resize(m);

  QuerySet q;
  q.positions = order;
  for (std::size_t flat : order) {
    std::size_t level = 0, local = flat;
    while (local >= fused.levels[level].positions()) local -= fused.levels[level++].positions();
    const auto& l = fused.levels[level];
    const double row = static_cast<double>(local / l.width), col = static_cast<double>(local % l.width);
    q.reference.push_back({(col + 0.5) / static_cast<double>(l.width), (row + 0.5) / static_cast<double>(l.height)});
  }
  q.content = gather_rows(fused.flattened(), order);
  return q;
}

DecoderLayer DecoderLayer::make(const ParamScope& s, std::size_t d) {
  return {LayerNorm::make(s.sub("self_norm"), d), LayerNorm::make(s.sub("image_norm"), d),
          LayerNorm::make(s.sub("text_norm"), d),  LayerNorm::make(s.sub("mlp_norm"), d),
          Attention::make(s.sub("self_attn"), d),  Attention::make(s.sub("image_attn"), d),
          Attention::make(s.sub("text_attn"), d),  Mlp::make(s.sub("mlp"), d, 2 * d, d)};
}

Tensor DecoderLayer::operator()(const Tensor& q, const Tensor& image, const Tensor& text) const {
  Tensor x = q;
  Tensor h = self_norm(x);
  x = add(x, self_attn(h, h));
  x = add(x, image_attn(image_norm(x), image));
  x = add(x, text_attn(text_norm(x), text));
  return add(x, mlp(mlp_norm(x)));
}

Decoder Decoder::make(const ParamScope& s, std::size_t d, std::size_t num_layers) {
  Decoder dec;
  for (std::size_t i = 0; i < num_layers; ++i) dec.layers.push_back(DecoderLayer::make(s.sub("layer" + std::to_string(i)), d));
  return dec;
}

QuerySet Decoder::decode(const QuerySet& q, const FeaturePyramid& fused, const TextFeatures& txt) const {
  const Tensor image = fused.flattened();
  QuerySet out = q;
  for (const auto& layer : layers) out.content = layer(out.content, image, txt.tokens);
  return out;
}

BBoxHead BBoxHead::make(const ParamScope& s, std::size_t d) {
  BBoxHead head{Linear::make(s.sub("fc1"), d, d, true, std::sqrt(2.0)), Linear::make(s.sub("fc2"), d, d, true, std::sqrt(2.0)),
                Linear::make(s.sub("fc3"), d, 4, true, 0.1)};
  // Start from boxes about the size of a small vehicle.
  auto b = head.fc3.bias.mutable_data();
  b[2] = b[3] = std::log(0.12 / 0.88);
  return head;
}

Tensor BBoxHead::operator()(const QuerySet& q) const {
  const Tensor raw = fc3(relu(fc2(relu(fc1(q.content)))));
  std::vector<double> offsets(q.size() * 4, 0.0);
  for (std::size_t i = 0; i < q.size(); ++i) {
    for (std::size_t a = 0; a < 2; ++a) {
      const double r = q.reference[i][a];
      offsets[i * 4 + a] = std::log(r / (1.0 - r));
    }
  }
  return sigmoid(add(raw, Tensor::from({q.size(), 4}, std::move(offsets))));
}

Tensor class_head(const Tensor& queries, const TextFeatures& txt) {
  return scale(matmul(queries, transpose(txt.tokens)), 1.0 / std::sqrt(static_cast<double>(queries.dim(1))));
}

std::vector<BBox> to_boxes(const Tensor& boxes) {
  std::vector<BBox> out;
  const auto v = boxes.data();
  for (std::size_t i = 0; i < boxes.dim(0); ++i) out.push_back({v[i * 4], v[i * 4 + 1], v[i * 4 + 2], v[i * 4 + 3]});
  return out;
}

}  // namespace aerialvg
