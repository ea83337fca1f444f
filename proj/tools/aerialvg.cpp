// Command-line front end: dataset generation, two-stage training, evaluation,
// gradient checks and dataset inspection.
//
// Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>

#include "aerialvg/dataset.hpp"
#include "aerialvg/op_checks.hpp"
#include "aerialvg/train.hpp"

using namespace aerialvg;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr double kOpTolerance = 1e-4;
constexpr double kModelTolerance = 1e-3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GenArgs {
  std::uint64_t seed = 0;
  std::size_t count = 512;
  std::string out;
  std::size_t size = 64;
  std::vector<int> entities = {4, 6};
  std::vector<int> distractors = {2, 3};
};

struct TrainArgs {
  int stage = 1;
  std::string data, init, out, trace;
  std::size_t steps = 2000, batch = 4, log_every = 100;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct EvalArgs {
  std::string ckpt, data, predictions;
  double iou = 0.5;
  std::vector<std::size_t> topk = {1, 5};
  bool json = false;
};

struct GradArgs {
  std::string op;
  bool full_model = false;
  std::uint64_t seed = 0;
  bool json = false;
};

struct StatsArgs {
  std::string data;
  bool json = false;
};

struct InspectArgs {
  std::string data, ppm;
  std::size_t index = 0;
};

std::pair<int, int> as_range(const std::vector<int>& v, const char* flag) {
  if (v.size() == 1) return {v[0], v[0]};
  if (v.size() == 2 && v[0] <= v[1]) return {v[0], v[1]};
  throw UsageError(std::string(flag) + " takes N or MIN,MAX");
}

int run_gen(const GenArgs& a) {
  GenConfig cfg;
  cfg.height = cfg.width = a.size;
  std::tie(cfg.min_entities, cfg.max_entities) = as_range(a.entities, "--entities");
  std::tie(cfg.min_distractors, cfg.max_distractors) = as_range(a.distractors, "--distractors");
  const auto data = generate_dataset(cfg, a.seed, a.count);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto rep = validate_instance(data[i]);
    if (!rep.ok()) {
      std::cerr << "instance " << i << " failed validation: " << rep.violations.front() << "\n";
      return kExitFailure;
    }
  }
  write_dataset(a.out, data);
  std::cout << "wrote " << data.size() << " instances to " << a.out << "\n";
  return 0;
}

int run_train(const TrainArgs& a) {
  if (a.stage != 1 && a.stage != 2) throw UsageError("--stage must be 1 or 2");
  TrainConfig cfg;
  cfg.stage = a.stage == 1 ? Stage::backbone : Stage::relation;
  cfg.lr = a.lr;
  cfg.steps = a.steps;
  cfg.batch = a.batch;
  cfg.seed = a.seed;
  cfg.data_path = a.data;
  cfg.init_path = a.init;
  cfg.out_path = a.out;
  const auto res = run_training(cfg);

  std::ofstream trace;
  if (!a.trace.empty()) {
    trace.open(a.trace);
    if (!trace) throw std::runtime_error("cannot open " + a.trace);
  }
  for (const auto& r : res.trace) {
    const auto& l = r.loss;
    if (trace.is_open()) {
      nlohmann::ordered_json j{{"step", r.step}, {"total", l.total}, {"cls", l.cls},
                               {"l1", l.l1},     {"giou", l.giou},   {"rel", l.rel}};
      trace << j.dump() << "\n";
    }
    if (a.log_every && (r.step % a.log_every == 0 || r.step + 1 == res.trace.size())) {
      std::printf("step %5zu  total %.5f  cls %.5f  l1 %.5f  giou %.5f  rel %.5f\n", r.step, l.total, l.cls, l.l1,
                  l.giou, l.rel);
    }
  }
  if (!a.out.empty()) std::cout << "saved " << a.out << "\n";
  return 0;
}

int run_eval(const EvalArgs& a) {
  if (a.topk.empty() || std::find(a.topk.begin(), a.topk.end(), 0u) != a.topk.end()) {
    throw UsageError("--topk needs positive values");
  }
  const auto loaded = load_model(a.ckpt);
  const auto data = read_dataset(a.data);
  std::vector<Prediction> preds;
  const auto rep = evaluate(*loaded.model, loaded.stage, data, a.iou, a.topk, &preds);
  if (!a.predictions.empty()) {
    std::ofstream f(a.predictions);
    if (!f) throw std::runtime_error("cannot open " + a.predictions);
    for (const auto& p : preds) f << prediction_to_json_line(p) << "\n";
  }
  if (a.json) {
    std::cout << rep.to_json() << "\n";
  } else {
    std::cout << "stage " << static_cast<int>(loaded.stage) << ", " << rep.n << " instances, IoU >= " << rep.iou_thresh
              << "\n";
    for (const auto& [k, v] : rep.accuracy) std::printf("top%zu %.4f\n", k, v);
  }
  return 0;
}

int run_grad_check(const GradArgs& a) {
  if (a.full_model && !a.op.empty()) throw UsageError("--op and --full-model are exclusive");
  nlohmann::ordered_json j;
  bool ok = true;
  if (a.full_model) {
    const auto r = full_model_grad_check(a.seed);
    ok = r.stage1 < kModelTolerance && r.stage2 < kModelTolerance;
    j = {{"stage1", r.stage1}, {"stage2", r.stage2}, {"coords", r.coords}, {"tolerance", kModelTolerance}, {"ok", ok}};
    if (!a.json) {
      std::printf("full model: stage1 %.3e  stage2 %.3e  (%zu coordinates)  %s\n", r.stage1, r.stage2, r.coords,
                  ok ? "ok" : "FAILED");
    }
  } else {
    std::vector<OpCheckResult> results;
    try {
      results = run_op_checks(a.seed, a.op);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    double worst = 0.0;
    j["ops"] = nlohmann::ordered_json::object();
    for (const auto& r : results) {
      worst = std::max(worst, r.max_rel_error);
      j["ops"][r.name] = r.max_rel_error;
      if (!a.json) std::printf("%-28s %.3e%s\n", r.name.c_str(), r.max_rel_error, r.max_rel_error < kOpTolerance ? "" : "  FAILED");
    }
    ok = worst < kOpTolerance;
    j["max"] = worst;
    j["tolerance"] = kOpTolerance;
    j["ok"] = ok;
    if (!a.json) std::printf("max %.3e over %zu ops\n", worst, results.size());
  }
  if (a.json) std::cout << j.dump() << "\n";
  return ok ? 0 : kExitFailure;
}

int run_stats(const StatsArgs& a) {
  const auto data = read_dataset(a.data);
  std::map<std::string, std::size_t> relations, entity_counts, caption_lengths;
  std::size_t invalid = 0;
  for (std::size_t i = 0; i < kNumRelations; ++i) relations[std::string(relation_name(static_cast<Relation>(i)))] = 0;
  for (const auto& inst : data) {
    ++relations[std::string(relation_name(inst.relation))];
    ++entity_counts[std::to_string(inst.entities.size())];
    ++caption_lengths[std::to_string(inst.caption.size())];
    invalid += !validate_instance(inst).ok();
  }
  if (a.json) {
    nlohmann::ordered_json j{{"n", data.size()},
                             {"relations", relations},
                             {"entities", entity_counts},
                             {"caption_lengths", caption_lengths},
                             {"invalid", invalid}};
    std::cout << j.dump() << "\n";
  } else {
    std::cout << data.size() << " instances, " << invalid << " invalid\nrelations:\n";
    for (const auto& [k, v] : relations) std::printf("  %-14s %zu\n", k.c_str(), v);
    std::cout << "entities per scene:\n";
    for (const auto& [k, v] : entity_counts) std::printf("  %-14s %zu\n", k.c_str(), v);
    std::cout << "caption lengths:\n";
    for (const auto& [k, v] : caption_lengths) std::printf("  %-14s %zu\n", k.c_str(), v);
  }
  return invalid ? kExitFailure : 0;
}

int run_inspect(const InspectArgs& a) {
  const auto data = read_dataset(a.data);
  if (a.index >= data.size()) {
    throw UsageError("--index " + std::to_string(a.index) + " out of range for " + std::to_string(data.size()) +
                     " instances");
  }
  const auto& inst = data[a.index];
  std::cout << to_json_line(inst) << "\n";
  const auto rep = validate_instance(inst);
  for (const auto& v : rep.violations) std::cout << "violation: " << v << "\n";
  if (!a.ppm.empty()) {
    write_ppm(render(inst.entities, inst.height, inst.width), a.ppm);
    std::cout << "wrote " << a.ppm << "\n";
  }
  return rep.ok() ? 0 : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Relation-aware visual grounding on synthetic aerial scenes"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen_cmd->add_option("--seed", gen.seed, "Base seed");
  gen_cmd->add_option("--count", gen.count, "Number of instances")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--out", gen.out, "Output file (JSON lines)")->required();
  gen_cmd->add_option("--size", gen.size, "Image side in pixels (multiple of 32)");
  gen_cmd->add_option("--entities", gen.entities, "Entities per scene: N or MIN,MAX")->delimiter(',');
  gen_cmd->add_option("--distractors", gen.distractors, "Target look-alikes: N or MIN,MAX")->delimiter(',');

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train stage 1 (backbone) or stage 2 (relation branch)");
  train_cmd->add_option("--stage", tr.stage, "1 or 2")->check(CLI::IsMember({1, 2}));
  train_cmd->add_option("--data", tr.data, "Training dataset")->required();
  train_cmd->add_option("--steps", tr.steps, "Optimizer steps");
  train_cmd->add_option("--lr", tr.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  train_cmd->add_option("--batch", tr.batch, "Instances per step")->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", tr.seed, "Seed for model init and batch order");
  train_cmd->add_option("--init", tr.init, "Checkpoint to start from (required for stage 2)");
  train_cmd->add_option("--out", tr.out, "Checkpoint to write");
  train_cmd->add_option("--trace", tr.trace, "Write the per-step loss trace here (JSON lines)");
  train_cmd->add_option("--log-every", tr.log_every, "Print every N steps (0 = silent)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Top-k accuracy of a checkpoint");
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  eval_cmd->add_option("--data", ev.data, "Evaluation dataset")->required();
  eval_cmd->add_option("--iou", ev.iou, "IoU threshold for a hit")->check(CLI::Range(0.0, 1.0));
  eval_cmd->add_option("--topk", ev.topk, "Comma-separated k values")->delimiter(',');
  eval_cmd->add_option("--predictions", ev.predictions, "Write ranked predictions here (JSON lines)");
  eval_cmd->add_flag("--json", ev.json, "Machine-readable report");

  GradArgs gc;
  auto* grad_cmd = app.add_subcommand("grad-check", "Compare autodiff gradients against finite differences");
  grad_cmd->add_option("--op", gc.op, "Check a single operation");
  grad_cmd->add_flag("--full-model", gc.full_model, "Check the stage-1 and stage-2 losses of the full model");
  grad_cmd->add_option("--seed", gc.seed, "Seed for inputs");
  grad_cmd->add_flag("--json", gc.json, "Machine-readable report");

  StatsArgs st;
  auto* stats_cmd = app.add_subcommand("stats", "Dataset histograms");
  stats_cmd->add_option("--data", st.data, "Dataset")->required();
  stats_cmd->add_flag("--json", st.json, "Machine-readable report");

  InspectArgs in;
  auto* inspect_cmd = app.add_subcommand("inspect", "Print one instance and optionally rasterize it");
  inspect_cmd->add_option("--data", in.data, "Dataset")->required();
  inspect_cmd->add_option("--index", in.index, "Instance index");
  inspect_cmd->add_option("--ppm", in.ppm, "Write the rendered image (binary PPM)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen_cmd) return run_gen(gen);
    if (*train_cmd) return run_train(tr);
    if (*eval_cmd) return run_eval(ev);
    if (*grad_cmd) return run_grad_check(gc);
    if (*stats_cmd) return run_stats(st);
    if (*inspect_cmd) return run_inspect(in);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
