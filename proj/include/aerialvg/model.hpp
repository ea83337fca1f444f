#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "aerialvg/decoder.hpp"
#include "aerialvg/encoders.hpp"
#include "aerialvg/hca.hpp"
#include "aerialvg/losses.hpp"
#include "aerialvg/relation.hpp"
#include "aerialvg/scene.hpp"

namespace aerialvg {

struct ModelConfig {
  std::size_t d = 32;
  std::size_t queries = kDefaultQueries;
  std::size_t decoder_layers = kDecoderLayers;
  std::size_t relation_layers = kRelationLayers;
  double alpha = kDefaultAlpha;
  double beta = kDefaultBeta;
  LossWeights weights;
};

// Stage 1 trains everything except the relation branch, which is left out of
// the forward pass. Stage 2 freezes the rest and trains only the relation
// branch.
enum class Stage { backbone = 1, relation = 2 };

inline constexpr const char* kRelationPrefix = "relation.";
bool is_relation_param(const std::string& name);

struct ModelOutput {
  QuerySet queries;         // decoded
  TextFeatures text;        // fused caption features
  Tensor boxes;             // [m, 4]
  Tensor class_logits;      // [m, T]
  Tensor relation_logits;   // [m, m], undefined in stage 1
};

struct SampleLoss {
  Tensor total;
  Tensor backbone_terms;  // weighted cls + L1 + GIoU part of `total`
  LossBreakdown parts;
  Assignment assignment;  // ground truth 0 = target, 1 = auxiliary
};

class GroundingModel {
 public:
  GroundingModel(const ModelConfig& cfg, std::uint64_t seed);
  GroundingModel(const GroundingModel&) = delete;
  GroundingModel& operator=(const GroundingModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  const ParameterSet& params() const { return params_; }

  // Marks relation parameters (stage 2) or all other parameters (stage 1) as
  // the only ones that require grad.
  void set_trainable(Stage stage);

  // Everything up to and including the heads. No relation branch.
  ModelOutput forward_backbone(const ImageRaster& img, std::span<const int> tokens) const;
  // Adds relation logits to a backbone output.
  void add_relation(ModelOutput& out) const;
  ModelOutput forward(const ImageRaster& img, std::span<const int> tokens, Stage stage) const;

  SampleLoss loss(const ModelOutput& out, const GroundingInstance& inst, Stage stage) const;

  // Stage-aware final scores (class term only in stage 1).
  std::vector<double> final_scores(const ModelOutput& out, Stage stage) const;

  ImageEncoder image_encoder;
  TextEncoder text_encoder;
  HcaParams hca;
  Decoder decoder;
  BBoxHead bbox_head;
  RelationParams relation;

 private:
  ModelConfig cfg_;
  ParameterSet params_;
};

// Ground-truth boxes in matching order: target then auxiliary.
std::array<BBox, 2> ground_truth_boxes(const GroundingInstance& inst);

}  // namespace aerialvg
