#include "aerialvg/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "aerialvg/rng.hpp"

namespace aerialvg {

namespace {

constexpr std::array<std::string_view, kNumColors> kColorNames = {"red", "blue", "white", "black", "green", "yellow"};
constexpr std::array<std::string_view, kNumVehicleTypes> kVehicleNames = {"sedan", "suv", "bus", "truck", "van"};
constexpr std::array<std::string_view, kNumRelations> kRelationNames = {
    "above", "below", "left", "right", "top-left", "top-right", "bottom-left", "bottom-right"};

// tan(22.5 deg): the slope of the first sector boundary.
constexpr double kTanEighthPi = 0.41421356237309503;

constexpr int kMaxPlacementAttempts = 1000;
constexpr int kMaxRegenerations = 10000;
constexpr double kMaxPairIou = 0.1;

template <typename E, std::size_t N>
std::optional<E> parse_name(const std::array<std::string_view, N>& names, std::string_view s) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == s) return static_cast<E>(i);
  }
  return std::nullopt;
}

}  // namespace

std::string_view color_name(Color c) { return kColorNames[static_cast<std::size_t>(c)]; }
std::string_view vehicle_name(VehicleType v) { return kVehicleNames[static_cast<std::size_t>(v)]; }
std::string_view relation_name(Relation r) { return kRelationNames[static_cast<std::size_t>(r)]; }
std::optional<Color> parse_color(std::string_view s) { return parse_name<Color>(kColorNames, s); }
std::optional<VehicleType> parse_vehicle(std::string_view s) { return parse_name<VehicleType>(kVehicleNames, s); }
std::optional<Relation> parse_relation(std::string_view s) { return parse_name<Relation>(kRelationNames, s); }

std::array<double, 3> color_rgb(Color c) {
  switch (c) {
    case Color::red: return {1.0, 0.0, 0.0};
    case Color::blue: return {0.0, 0.0, 1.0};
    case Color::white: return {1.0, 1.0, 1.0};
    case Color::black: return {0.0, 0.0, 0.0};
    case Color::green: return {0.0, 1.0, 0.0};
    case Color::yellow: return {1.0, 1.0, 0.0};
  }
  return {0.5, 0.5, 0.5};
}

std::pair<int, int> vehicle_footprint(VehicleType v) {
  switch (v) {
    case VehicleType::sedan: return {4, 4};
    case VehicleType::suv: return {6, 6};
    case VehicleType::bus: return {10, 5};
    case VehicleType::truck: return {5, 10};
    case VehicleType::van: return {7, 4};
  }
  return {4, 4};
}

// ---------------------------------------------------------------------------
// Vocabulary

int token_id(std::string_view word) {
  for (std::size_t i = 0; i < kVocabSize; ++i) {
    if (kVocabulary[i] == word) return static_cast<int>(i);
  }
  return -1;
}

int color_token(Color c) { return 1 + static_cast<int>(c); }
int vehicle_token(VehicleType v) { return 7 + static_cast<int>(v); }
int relation_token(Relation r) { return 14 + static_cast<int>(r); }

std::vector<int> caption_tokens(const Entity& target, const Entity& aux, Relation rel) {
  return {token_id("the"), color_token(target.color), vehicle_token(target.vtype),
          token_id("with"), token_id("a"), color_token(aux.color), vehicle_token(aux.vtype),
          relation_token(rel), token_id("it")};
}

std::string caption_text(std::span<const int> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += kVocabulary.at(static_cast<std::size_t>(tokens[i]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Relations

Relation classify_relation(const BBox& subject, const BBox& reference) {
  // Up is positive. Swapping subject and reference negates both exactly.
  const double ux = subject.cx - reference.cx;
  const double uy = reference.cy - subject.cy;
  if (ux == 0.0 && uy == 0.0) throw std::invalid_argument("classify_relation: coincident centers");
  const double ax = std::abs(ux), ay = std::abs(uy);
  const bool same_sign = (ux > 0) == (uy > 0);
  // On a boundary the counter-clockwise neighbor wins: in quadrants I/III that
  // is the diagonal near the x axis and the vertical near the y axis, in II/IV
  // the other way round.
  const bool horizontal = ay < kTanEighthPi * ax || (ay == kTanEighthPi * ax && !same_sign);
  const bool vertical = ax < kTanEighthPi * ay || (ax == kTanEighthPi * ay && same_sign);
  if (horizontal) return ux > 0 ? Relation::right : Relation::left;
  if (vertical) return uy > 0 ? Relation::above : Relation::below;
  if (uy > 0) return ux > 0 ? Relation::top_right : Relation::top_left;
  return ux > 0 ? Relation::bottom_right : Relation::bottom_left;
}

Relation inverse_relation(Relation r) {
  switch (r) {
    case Relation::above: return Relation::below;
    case Relation::below: return Relation::above;
    case Relation::left: return Relation::right;
    case Relation::right: return Relation::left;
    case Relation::top_left: return Relation::bottom_right;
    case Relation::bottom_right: return Relation::top_left;
    case Relation::top_right: return Relation::bottom_left;
    case Relation::bottom_left: return Relation::top_right;
  }
  return r;
}

double relation_angle_deg(const BBox& subject, const BBox& reference) {
  const double ux = subject.cx - reference.cx;
  const double uy = reference.cy - subject.cy;
  double deg = std::atan2(uy, ux) * 180.0 / std::numbers::pi;
  if (deg < 0) deg += 360.0;
  return deg >= 360.0 ? deg - 360.0 : deg;
}

double boundary_distance_deg(double angle) {
  const double d = std::fmod(angle - 22.5 + 720.0, 45.0);
  return std::min(d, 45.0 - d);
}

std::optional<AuxChoice> nearest_auxiliary(const std::vector<Entity>& scene, std::size_t target, double margin_deg) {
  const Entity& t = scene.at(target);
  std::optional<AuxChoice> best;
  double best_dist = 0.0;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    if (i == target) continue;
    const auto twins = std::count_if(scene.begin(), scene.end(),
                                     [&](const Entity& e) { return e.same_appearance(scene[i]); });
    if (twins != 1) continue;
    if (boundary_distance_deg(relation_angle_deg(scene[i].bbox, t.bbox)) < margin_deg) continue;
    const double dist = std::hypot(scene[i].bbox.cx - t.bbox.cx, scene[i].bbox.cy - t.bbox.cy);
    if (!best || dist < best_dist) {
      best = AuxChoice{i, classify_relation(scene[i].bbox, t.bbox)};
      best_dist = dist;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Generation

namespace {

std::optional<GroundingInstance> try_generate(const GenConfig& cfg, std::uint64_t sub_seed, std::uint64_t seed) {
  RngState rng(sub_seed);
  const int k = static_cast<int>(rng.uniform_int(cfg.min_distractors, cfg.max_distractors));
  const int n = static_cast<int>(rng.uniform_int(std::max(cfg.min_entities, k + 2), cfg.max_entities));

  Entity proto;
  proto.color = static_cast<Color>(rng.uniform_int(0, kNumColors - 1));
  proto.vtype = static_cast<VehicleType>(rng.uniform_int(0, kNumVehicleTypes - 1));
  std::vector<Entity> scene(static_cast<std::size_t>(k + 1), proto);
  while (static_cast<int>(scene.size()) < n) {
    Entity e;
    e.color = static_cast<Color>(rng.uniform_int(0, kNumColors - 1));
    e.vtype = static_cast<VehicleType>(rng.uniform_int(0, kNumVehicleTypes - 1));
    if (!e.same_appearance(proto)) scene.push_back(e);
  }
  for (std::size_t i = scene.size() - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)));
    std::swap(scene[i], scene[j]);
  }

  const double unit_w = static_cast<double>(cfg.width) / 32.0, unit_h = static_cast<double>(cfg.height) / 32.0;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const auto [fw, fh] = vehicle_footprint(scene[i].vtype);
    const auto pw = static_cast<std::int64_t>(fw * unit_w), ph = static_cast<std::int64_t>(fh * unit_h);
    bool placed = false;
    for (int attempt = 0; attempt < kMaxPlacementAttempts && !placed; ++attempt) {
      const auto x = rng.uniform_int(0, static_cast<std::int64_t>(cfg.width) - pw);
      const auto y = rng.uniform_int(0, static_cast<std::int64_t>(cfg.height) - ph);
      const BBox b{(static_cast<double>(x) + 0.5 * static_cast<double>(pw)) / static_cast<double>(cfg.width),
                   (static_cast<double>(y) + 0.5 * static_cast<double>(ph)) / static_cast<double>(cfg.height),
                   static_cast<double>(pw) / static_cast<double>(cfg.width),
                   static_cast<double>(ph) / static_cast<double>(cfg.height)};
      placed = std::all_of(scene.begin(), scene.begin() + static_cast<std::ptrdiff_t>(i),
                           [&](const Entity& o) { return iou(o.bbox, b) < kMaxPairIou; });
      if (placed) scene[i].bbox = b;
    }
    if (!placed) {
      throw GenerationError("entity placement failed after " + std::to_string(kMaxPlacementAttempts) +
                            " attempts (seed " + std::to_string(seed) + ")");
    }
  }

  std::vector<std::size_t> group;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    if (scene[i].same_appearance(proto)) group.push_back(i);
  }
  const std::size_t target = group[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(group.size()) - 1))];
  const auto aux = nearest_auxiliary(scene, target, cfg.margin_deg);
  if (!aux) return std::nullopt;

  GroundingInstance inst;
  inst.seed = seed;
  inst.height = cfg.height;
  inst.width = cfg.width;
  inst.entities = std::move(scene);
  inst.target = target;
  inst.aux = aux->index;
  inst.relation = aux->relation;
  inst.caption = caption_tokens(inst.entities[target], inst.entities[aux->index], aux->relation);
  inst.caption_text = caption_text(inst.caption);
  if (!validate_instance(inst).ok()) return std::nullopt;
  return inst;
}

}  // namespace

GroundingInstance generate_instance(const GenConfig& cfg, std::uint64_t seed) {
  if (cfg.height % 32 != 0 || cfg.width % 32 != 0 || cfg.height == 0 || cfg.width == 0) {
    throw GenerationError("image size must be a positive multiple of 32");
  }
  if (cfg.min_distractors < 2 || cfg.max_distractors < cfg.min_distractors ||
      cfg.max_entities < cfg.max_distractors + 2 || cfg.min_entities > cfg.max_entities) {
    throw GenerationError("inconsistent entity/distractor ranges");
  }
  for (int attempt = 0; attempt < kMaxRegenerations; ++attempt) {
    const std::uint64_t sub = attempt == 0 ? seed : derive_seed(seed, static_cast<std::uint64_t>(attempt));
    if (auto inst = try_generate(cfg, sub, seed)) return *std::move(inst);
  }
  throw GenerationError("no valid instance after " + std::to_string(kMaxRegenerations) + " regenerations (seed " +
                        std::to_string(seed) + ")");
}

// ---------------------------------------------------------------------------
// Validation

ValidationReport validate_instance(const GroundingInstance& inst) {
  ValidationReport rep;
  auto& v = rep.violations;
  const auto& es = inst.entities;
  if (inst.target >= es.size() || inst.aux >= es.size()) {
    v.push_back("index: target/aux out of range");
    return rep;
  }
  if (inst.target == inst.aux) v.push_back("index: target equals auxiliary");

  for (std::size_t i = 0; i < es.size(); ++i) {
    const BBox& b = es[i].bbox;
    if (b.w <= 0 || b.h <= 0 || b.cx - 0.5 * b.w < 0 || b.cy - 0.5 * b.h < 0 || b.cx + 0.5 * b.w > 1 ||
        b.cy + 0.5 * b.h > 1) {
      v.push_back("bounds: entity " + std::to_string(i) + " outside the image");
    }
    for (std::size_t j = i + 1; j < es.size(); ++j) {
      if (iou(es[i].bbox, es[j].bbox) >= kMaxPairIou) {
        v.push_back("overlap: entities " + std::to_string(i) + " and " + std::to_string(j));
      }
    }
  }
  if (!v.empty()) return rep;

  const Entity& target = es[inst.target];
  const Entity& aux = es[inst.aux];
  if (inst.target != inst.aux && classify_relation(aux.bbox, target.bbox) != inst.relation) {
    v.push_back("relation-mismatch: label " + std::string(relation_name(inst.relation)) + " but geometry says " +
                std::string(relation_name(classify_relation(aux.bbox, target.bbox))));
  }
  const auto aux_twins = std::count_if(es.begin(), es.end(), [&](const Entity& e) { return e.same_appearance(aux); });
  if (aux_twins != 1) v.push_back("aux-not-unique: auxiliary appearance occurs " + std::to_string(aux_twins) + " times");
  const auto distractors =
      std::count_if(es.begin(), es.end(), [&](const Entity& e) { return e.same_appearance(target); }) - 1;
  if (distractors < 2) v.push_back("distractors: only " + std::to_string(distractors));

  // Brute force: which target-looking entities fit the caption?
  std::size_t fitting = 0;
  bool target_fits = false;
  for (std::size_t i = 0; i < es.size(); ++i) {
    if (!es[i].same_appearance(target)) continue;
    for (std::size_t j = 0; j < es.size(); ++j) {
      if (j == i || !es[j].same_appearance(aux)) continue;
      if (es[i].bbox.cx == es[j].bbox.cx && es[i].bbox.cy == es[j].bbox.cy) continue;
      if (classify_relation(es[j].bbox, es[i].bbox) == inst.relation) {
        ++fitting;
        target_fits = target_fits || i == inst.target;
        break;
      }
    }
  }
  if (fitting != 1 || !target_fits) {
    v.push_back("ambiguity: " + std::to_string(fitting) + " entities match the caption");
  }

  if (inst.caption != caption_tokens(target, aux, inst.relation)) v.push_back("caption-mismatch: token ids");
  if (inst.caption_text != caption_text(inst.caption)) v.push_back("caption-mismatch: text");
  return rep;
}

// ---------------------------------------------------------------------------

ImageRaster render(const std::vector<Entity>& scene, std::size_t height, std::size_t width) {
  ImageRaster img = ImageRaster::filled(height, width, 0.5, 0.5, 0.5);
  for (const Entity& e : scene) {
    const auto rgb = color_rgb(e.color);
    const double x1 = e.bbox.x1(), x2 = e.bbox.x2(), y1 = e.bbox.y1(), y2 = e.bbox.y2();
    for (std::size_t y = 0; y < height; ++y) {
      const double py = (static_cast<double>(y) + 0.5) / static_cast<double>(height);
      if (py < y1 || py >= y2) continue;
      for (std::size_t x = 0; x < width; ++x) {
        const double px = (static_cast<double>(x) + 0.5) / static_cast<double>(width);
        if (px < x1 || px >= x2) continue;
        for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = rgb[c];
      }
    }
  }
  return img;
}

}  // namespace aerialvg
