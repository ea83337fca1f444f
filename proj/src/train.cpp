#include "aerialvg/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <exception>
#include <fstream>
#include <iterator>
#include <numeric>

#include <json.hpp>

#include "aerialvg/dataset.hpp"

namespace aerialvg {

// ---------------------------------------------------------------------------
// Adam

void adam_update(std::span<double> value, std::span<const double> grad, AdamMoments& mom, std::size_t t,
                 const AdamConfig& cfg) {
  if (grad.size() != value.size() && !grad.empty()) {
    throw ShapeError("adam_update: gradient has " + std::to_string(grad.size()) + " entries, parameter has " +
                     std::to_string(value.size()));
  }
  if (mom.m.size() != value.size()) {
    mom.m.assign(value.size(), 0.0);
    mom.v.assign(value.size(), 0.0);
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < value.size(); ++i) {
    const double g = grad.empty() ? 0.0 : grad[i];
    mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * g;
    mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = mom.m[i] / c1;
    const double vhat = mom.v[i] / c2;
    value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

Adam::Adam(const ParameterSet& params, AdamConfig cfg)
    : params_(params), cfg_(cfg), moments_(params.entries().size()) {}

void Adam::step() {
  const auto& entries = params_.entries();
  for (const auto& [name, t] : entries) {
    if (!t.requires_grad()) continue;
    for (double g : t.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + name);
    }
  }
  ++t_;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor p = entries[i].second;
    if (!p.requires_grad()) continue;
    adam_update(p.mutable_data(), p.grad(), moments_[i], t_, cfg_);
  }
}

void Adam::zero_grad() {
  for (const auto& [name, t] : params_.entries()) {
    Tensor p = t;
    p.zero_grad();
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'A', 'V', 'G', 'C'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(std::string bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  std::uint64_t raw(int width) {
    if (pos_ + width > bytes_.size()) throw CheckpointError(path_ + ": truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += width;
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(raw(4)); }
  double f64() { return std::bit_cast<double>(raw(8)); }
  std::string text(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw CheckpointError(path_ + ": truncated checkpoint");
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string bytes_, path_;
  std::size_t pos_ = 0;
};

std::vector<double> config_values(const ModelConfig& c) {
  return {static_cast<double>(c.d),
          static_cast<double>(c.queries),
          static_cast<double>(c.decoder_layers),
          static_cast<double>(c.relation_layers),
          c.alpha,
          c.beta,
          c.weights.cls,
          c.weights.l1,
          c.weights.giou,
          c.weights.rel,
          static_cast<double>(kVocabSize),
          static_cast<double>(kVocabVersion)};
}

}  // namespace

void write_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries) {
  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    std::size_t count = 1;
    for (auto d : e.dims) count *= d;
    if (count != e.values.size()) throw CheckpointError("checkpoint entry " + e.name + " has mismatched dims");
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put_u32(out, static_cast<std::uint32_t>(e.dims.size()));
    for (auto d : e.dims) put_u32(out, d);
    for (double v : e.values) put_f64(out, v);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open " + path + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw CheckpointError("write failed: " + path);
}

std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path);
  Reader r(std::string(std::istreambuf_iterator<char>(f), {}), path);
  if (r.text(4) != std::string(kMagic, 4)) throw CheckpointError(path + ": not a checkpoint (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.u32();
  std::vector<CheckpointEntry> entries(count);
  for (auto& e : entries) {
    e.name = r.text(r.u32());
    e.dims.resize(r.u32());
    std::size_t n = 1;
    for (auto& d : e.dims) {
      d = r.u32();
      n *= d;
    }
    e.values.resize(n);
    for (auto& v : e.values) v = r.f64();
  }
  if (!r.done()) throw CheckpointError(path + ": trailing bytes after last entry");
  return entries;
}

void save_model(const std::string& path, const GroundingModel& model, Stage stage) {
  std::vector<CheckpointEntry> entries;
  entries.push_back({"meta.stage", {1}, {static_cast<double>(stage)}});
  auto cfg = config_values(model.config());
  entries.push_back({"meta.config", {static_cast<std::uint32_t>(cfg.size())}, cfg});
  for (const auto& [name, t] : model.params().entries()) {
    CheckpointEntry e{name, {}, {t.data().begin(), t.data().end()}};
    for (auto d : t.shape()) e.dims.push_back(static_cast<std::uint32_t>(d));
    entries.push_back(std::move(e));
  }
  write_checkpoint(path, entries);
}

LoadedModel load_model(const std::string& path) {
  const auto entries = read_checkpoint(path);
  if (entries.size() < 2 || entries[0].name != "meta.stage" || entries[1].name != "meta.config") {
    throw CheckpointError(path + ": missing metadata entries");
  }
  const double stage = entries[0].values.at(0);
  if (stage != 1.0 && stage != 2.0) throw CheckpointError(path + ": bad stage value");
  const auto& c = entries[1].values;
  if (c.size() != 12) throw CheckpointError(path + ": bad config entry");
  if (c[10] != static_cast<double>(kVocabSize) || c[11] != static_cast<double>(kVocabVersion)) {
    throw CheckpointError(path + ": vocabulary mismatch with this build");
  }
  ModelConfig cfg;
  cfg.d = static_cast<std::size_t>(c[0]);
  cfg.queries = static_cast<std::size_t>(c[1]);
  cfg.decoder_layers = static_cast<std::size_t>(c[2]);
  cfg.relation_layers = static_cast<std::size_t>(c[3]);
  cfg.alpha = c[4];
  cfg.beta = c[5];
  cfg.weights = {c[6], c[7], c[8], c[9]};

  LoadedModel out{std::make_unique<GroundingModel>(cfg, 0), stage == 1.0 ? Stage::backbone : Stage::relation};
  const auto& params = out.model->params().entries();
  if (entries.size() - 2 != params.size()) throw CheckpointError(path + ": parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = entries[i + 2];
    Tensor p = params[i].second;
    std::vector<std::uint32_t> dims;
    for (auto d : p.shape()) dims.push_back(static_cast<std::uint32_t>(d));
    if (e.name != params[i].first || e.dims != dims) {
      throw CheckpointError(path + ": entry " + e.name + " does not match parameter " + params[i].first);
    }
    std::copy(e.values.begin(), e.values.end(), p.mutable_data().begin());
  }
  return out;
}

std::uint64_t parameter_checksum(const GroundingModel& model, bool relation_params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, t] : model.params().entries()) {
    if (is_relation_param(name) != relation_params) continue;
    for (char ch : name) mix(static_cast<unsigned char>(ch));
    for (double v : t.data()) mix(std::bit_cast<std::uint64_t>(v));
  }
  return h;
}

// ---------------------------------------------------------------------------
// Training

namespace {

void check_instance(const GroundingInstance& inst, std::size_t index) {
  const std::size_t need = std::max(kTargetSpan.back(), kAuxSpan.back()) + 1;
  if (inst.caption.size() < need || inst.caption.size() > kMaxTokens) {
    throw TrainError("instance " + std::to_string(index) + ": caption length " +
                     std::to_string(inst.caption.size()) + " does not fit the model");
  }
  for (int tok : inst.caption) {
    if (tok < 0 || static_cast<std::size_t>(tok) >= kVocabSize) {
      throw TrainError("instance " + std::to_string(index) + ": token " + std::to_string(tok) +
                       " is outside the model vocabulary");
    }
  }
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  RngState rng(derive_seed(seed, epoch));
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

ModelOutput detached(const ModelOutput& o) {
  ModelOutput d;
  d.queries = o.queries;
  d.queries.content = o.queries.content.detach();
  d.text = TextFeatures{o.text.tokens.detach(), o.text.pooled.detach()};
  d.boxes = o.boxes.detach();
  d.class_logits = o.class_logits.detach();
  return d;
}

}  // namespace

TrainResult train(GroundingModel& model, const std::vector<GroundingInstance>& data, const TrainConfig& cfg) {
  if (data.empty()) throw TrainError("training set is empty");
  if (cfg.batch == 0) throw TrainError("batch size must be positive");
  for (std::size_t i = 0; i < data.size(); ++i) check_instance(data[i], i);

  const bool stage2 = cfg.stage == Stage::relation;
  const bool use_cache = stage2 && cfg.cache_backbone;
  model.set_trainable(cfg.stage);
  Adam opt(model.params(), AdamConfig{cfg.lr});

  std::vector<std::optional<ModelOutput>> cache(use_cache ? data.size() : 0);
  std::size_t epoch = 0, pos = 0;
  auto order = epoch_order(data.size(), cfg.seed, epoch);

  TrainResult result;
  result.trace.reserve(cfg.steps);
  const double inv_batch = 1.0 / static_cast<double>(cfg.batch);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    opt.zero_grad();
    StepRecord rec{step, {}};
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      if (pos == order.size()) {
        order = epoch_order(data.size(), cfg.seed, ++epoch);
        pos = 0;
      }
      const std::size_t idx = order[pos++];
      const GroundingInstance& inst = data[idx];
      if (use_cache && !cache[idx]) {
        cache[idx] = detached(model.forward_backbone(render(inst.entities, inst.height, inst.width), inst.caption));
      }

      Tape tape;
      ModelOutput out = use_cache ? *cache[idx]
                                  : model.forward_backbone(render(inst.entities, inst.height, inst.width), inst.caption);
      if (stage2) model.add_relation(out);
      const SampleLoss sl = model.loss(out, inst, cfg.stage);
      if (stage2 && sl.backbone_terms.requires_grad()) {
        throw std::logic_error("stage 2: backbone loss terms reach a trainable parameter");
      }
      tape.backward(scale(sl.total, inv_batch));

      rec.loss.cls += sl.parts.cls * inv_batch;
      rec.loss.l1 += sl.parts.l1 * inv_batch;
      rec.loss.giou += sl.parts.giou * inv_batch;
      rec.loss.rel += sl.parts.rel * inv_batch;
      rec.loss.total += sl.parts.total * inv_batch;
    }
    for (const auto& [name, t] : model.params().entries()) {
      if (t.requires_grad() || !t.has_grad()) continue;
      for (double g : t.grad()) {
        if (g != 0.0) throw std::logic_error("gradient reached frozen parameter " + name);
      }
    }
    opt.step();
    result.trace.push_back(rec);
  }
  return result;
}

TrainResult run_training(const TrainConfig& cfg, const ModelConfig& model_cfg) {
  const auto data = read_dataset(cfg.data_path);
  std::unique_ptr<GroundingModel> model;
  if (!cfg.init_path.empty()) {
    model = load_model(cfg.init_path).model;
  } else if (cfg.stage == Stage::relation) {
    throw TrainError("stage 2 needs a stage-1 checkpoint (--init)");
  } else {
    model = std::make_unique<GroundingModel>(model_cfg, derive_seed(cfg.seed, 1));
  }
  auto result = train(*model, data, cfg);
  if (!cfg.out_path.empty()) save_model(cfg.out_path, *model, cfg.stage);
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

Prediction predict(const GroundingModel& model, Stage stage, const GroundingInstance& inst) {
  const ModelOutput out = model.forward(render(inst.entities, inst.height, inst.width), inst.caption, stage);
  Prediction p;
  p.boxes = to_boxes(out.boxes);
  p.scores = model.final_scores(out, stage);
  p.ranking = rank_by_score(p.scores);
  return p;
}

bool hit_at_k(const Prediction& p, const BBox& gt, std::size_t k, double iou_thresh) {
  const std::size_t n = std::min(k, p.ranking.size());
  for (std::size_t r = 0; r < n; ++r) {
    if (iou(p.boxes[p.ranking[r]], gt) >= iou_thresh) return true;
  }
  return false;
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  for (const auto& [k, v] : accuracy) j["top" + std::to_string(k)] = v;
  j["n"] = n;
  j["iou_thresh"] = iou_thresh;
  return j.dump();
}

MetricsReport evaluate(const GroundingModel& model, Stage stage, const std::vector<GroundingInstance>& data,
                       double iou_thresh, const std::vector<std::size_t>& ks, std::vector<Prediction>* predictions) {
  if (data.empty()) throw std::invalid_argument("evaluate: dataset is empty");
  if (ks.empty()) throw std::invalid_argument("evaluate: no k values");
  std::vector<Prediction> preds(data.size());
  std::exception_ptr error;
  const auto n = static_cast<std::ptrdiff_t>(data.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      preds[i] = predict(model, stage, data[i]);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  MetricsReport rep;
  rep.n = data.size();
  rep.iou_thresh = iou_thresh;
  for (std::size_t k : ks) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (hit_at_k(preds[i], data[i].entities.at(data[i].target).bbox, k, iou_thresh)) ++hits;
    }
    rep.accuracy[k] = static_cast<double>(hits) / static_cast<double>(data.size());
  }
  if (predictions != nullptr) *predictions = std::move(preds);
  return rep;
}

std::string prediction_to_json_line(const Prediction& p) {
  nlohmann::ordered_json j;
  j["boxes"] = nlohmann::json::array();
  for (const auto& b : p.boxes) j["boxes"].push_back({b.cx, b.cy, b.w, b.h});
  j["scores"] = p.scores;
  j["ranking"] = p.ranking;
  return j.dump();
}

}  // namespace aerialvg
