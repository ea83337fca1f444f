#include "aerialvg/model.hpp"

#include <algorithm>
#include <limits>

namespace aerialvg {

bool is_relation_param(const std::string& name) { return name.rfind(kRelationPrefix, 0) == 0; }

std::array<BBox, 2> ground_truth_boxes(const GroundingInstance& inst) {
  return {inst.entities.at(inst.target).bbox, inst.entities.at(inst.aux).bbox};
}

namespace {

// Built in declaration order so that the same seed always yields the same
// parameters.
struct Builder {
  ParameterSet& set;
  RngState rng;
  ParamScope scope(const std::string& prefix) { return {set, prefix + ".", rng}; }
};

}  // namespace

GroundingModel::GroundingModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  Builder b{params_, RngState(seed)};
  image_encoder = ImageEncoder::make(b.scope("image"), cfg.d);
  text_encoder = TextEncoder::make(b.scope("text"), kVocabSize, cfg.d);
  hca = HcaParams::make(b.scope("hca"), cfg.d, cfg.alpha, cfg.beta);
  decoder = Decoder::make(b.scope("decoder"), cfg.d, cfg.decoder_layers);
  bbox_head = BBoxHead::make(b.scope("bbox_head"), cfg.d);
  relation = RelationParams::make(b.scope("relation"), cfg.d, cfg.relation_layers);
}

void GroundingModel::set_trainable(Stage stage) {
  for (const auto& [name, t] : params_.entries()) {
    Tensor handle = t;
    handle.set_requires_grad(is_relation_param(name) == (stage == Stage::relation));
  }
}

ModelOutput GroundingModel::forward_backbone(const ImageRaster& img, std::span<const int> tokens) const {
  const FeaturePyramid pyr = with_position_code(image_encoder.encode(img));
  const TextFeatures txt = text_encoder.encode(tokens);
  const FusedFeatures fused = hierarchical_cross_attention(pyr, txt, hca);
  const QuerySet selected = select_queries(fused.image, fused.text, cfg_.queries);
  ModelOutput out;
  out.queries = decoder.decode(selected, fused.image, fused.text);
  out.text = fused.text;
  out.boxes = bbox_head(out.queries);
  out.class_logits = class_head(out.queries.content, fused.text);
  return out;
}

void GroundingModel::add_relation(ModelOutput& out) const {
  out.relation_logits = relation_forward(out.queries.content, out.text, relation);
}

ModelOutput GroundingModel::forward(const ImageRaster& img, std::span<const int> tokens, Stage stage) const {
  ModelOutput out = forward_backbone(img, tokens);
  if (stage == Stage::relation) add_relation(out);
  return out;
}

SampleLoss GroundingModel::loss(const ModelOutput& out, const GroundingInstance& inst, Stage stage) const {
  const auto gts = ground_truth_boxes(inst);
  const std::vector<std::vector<std::size_t>> spans = {{kTargetSpan.begin(), kTargetSpan.end()},
                                                       {kAuxSpan.begin(), kAuxSpan.end()}};
  const std::size_t m = out.boxes.dim(0), t = out.class_logits.dim(1);
  const auto boxes = to_boxes(out.boxes);
  const auto logits = out.class_logits.data();

  CostMatrix cost{gts.size(), m, std::vector<double>(gts.size() * m)};
  for (std::size_t g = 0; g < gts.size(); ++g) {
    for (std::size_t q = 0; q < m; ++q) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t tok : spans[g]) best = std::max(best, logits[q * t + tok]);
      cost.values[g * m + q] = matching_cost(boxes[q], best, gts[g], cfg_.weights);
    }
  }
  SampleLoss res;
  res.assignment = hungarian(cost);

  std::vector<Tensor> l1_terms, giou_terms;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const Tensor row = slice(out.boxes, 0, res.assignment.query_of[g], 1);
    l1_terms.push_back(l1_tensor(row, gts[g]));
    giou_terms.push_back(add_scalar(scale(giou_tensor(row, gts[g]), -1.0), 1.0));
  }
  const Tensor cls = cls_loss(out.class_logits, res.assignment, spans);
  const Tensor l1 = mean(concat(l1_terms, 0));
  const Tensor gterm = mean(concat(giou_terms, 0));
  const auto& w = cfg_.weights;
  res.backbone_terms = add(add(scale(cls, w.cls), scale(l1, w.l1)), scale(gterm, w.giou));
  Tensor total = res.backbone_terms;
  double rel_value = 0.0;
  if (stage == Stage::relation) {
    const Tensor rel = relation_loss(out.relation_logits, res.assignment.query_of[0], res.assignment.query_of[1]);
    rel_value = rel.item();
    total = add(total, scale(rel, w.rel));
  }
  res.parts = total_loss(cls.item(), l1.item(), gterm.item(), rel_value, w);
  res.total = total;
  return res;
}

std::vector<double> GroundingModel::final_scores(const ModelOutput& out, Stage stage) const {
  if (stage == Stage::relation) {
    return combine_scores(out.class_logits, relation_scores(relation_matrix(out.relation_logits)));
  }
  return combine_scores(out.class_logits, {});
}

}  // namespace aerialvg
