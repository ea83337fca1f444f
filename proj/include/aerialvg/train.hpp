#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "aerialvg/model.hpp"

namespace aerialvg {

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  std::vector<double> m, v;
};

// One bias-corrected Adam update of `value` in place. `t` is the 1-based step.
void adam_update(std::span<double> value, std::span<const double> grad, AdamMoments& mom, std::size_t t,
                 const AdamConfig& cfg);

// Adam over a parameter set. Only parameters that currently require grad are
// touched; a parameter with no accumulated gradient is treated as zero grad.
class Adam {
 public:
  Adam(const ParameterSet& params, AdamConfig cfg);

  // Throws NumericError naming the parameter if any trainable gradient is not
  // finite; nothing is updated in that case.
  void step();
  void zero_grad();
  std::size_t steps() const { return t_; }
  const AdamMoments& moments(std::size_t i) const { return moments_[i]; }

 private:
  const ParameterSet& params_;
  AdamConfig cfg_;
  std::vector<AdamMoments> moments_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<double> values;
};

void write_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_checkpoint(const std::string& path);

// Parameters plus two metadata entries: "meta.stage" and "meta.config".
void save_model(const std::string& path, const GroundingModel& model, Stage stage);

struct LoadedModel {
  std::unique_ptr<GroundingModel> model;
  Stage stage = Stage::backbone;
};
LoadedModel load_model(const std::string& path);

// Bitwise digest of every parameter whose name does or does not start with
// the relation prefix. Used to show which parameters training touched.
std::uint64_t parameter_checksum(const GroundingModel& model, bool relation_params);

// ---------------------------------------------------------------------------
// Training

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  Stage stage = Stage::backbone;
  double lr = 1e-3;
  std::size_t steps = 2000;
  std::size_t batch = 4;
  std::uint64_t seed = 0;
  std::string data_path;
  std::string init_path;  // required for stage 2
  std::string out_path;
  // Stage 2 only: compute the frozen backbone once per instance and reuse it.
  // The result is the same; turning it off exercises the full graph.
  bool cache_backbone = true;
};

struct StepRecord {
  std::size_t step = 0;
  LossBreakdown loss;  // batch means
};

struct TrainResult {
  std::vector<StepRecord> trace;
};

// Trains `model` in place. Batches are drawn from a per-epoch permutation
// seeded by cfg.seed.
TrainResult train(GroundingModel& model, const std::vector<GroundingInstance>& data, const TrainConfig& cfg);

// File-level driver: reads the dataset, builds or loads the model, trains and
// writes cfg.out_path when it is set.
TrainResult run_training(const TrainConfig& cfg, const ModelConfig& model_cfg = {});

// ---------------------------------------------------------------------------
// Evaluation

struct Prediction {
  std::vector<BBox> boxes;
  std::vector<double> scores;
  std::vector<std::size_t> ranking;  // query indices by descending score
};

Prediction predict(const GroundingModel& model, Stage stage, const GroundingInstance& inst);

// True when one of the first k ranked boxes reaches `iou_thresh` against `gt`.
bool hit_at_k(const Prediction& p, const BBox& gt, std::size_t k, double iou_thresh);

struct MetricsReport {
  std::map<std::size_t, double> accuracy;  // k -> fraction of hits
  std::size_t n = 0;
  double iou_thresh = 0.5;

  double top(std::size_t k) const { return accuracy.at(k); }
  double top1() const { return top(1); }
  double top5() const { return top(5); }
  std::string to_json() const;
};

MetricsReport evaluate(const GroundingModel& model, Stage stage, const std::vector<GroundingInstance>& data,
                       double iou_thresh = 0.5, const std::vector<std::size_t>& ks = {1, 5},
                       std::vector<Prediction>* predictions = nullptr);

std::string prediction_to_json_line(const Prediction& p);

}  // namespace aerialvg
