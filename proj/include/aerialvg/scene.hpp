#pragma once

// Synthetic aerial scenes: colored vehicle rectangles on a gray ground plane,
// one target described through a single nearby auxiliary and the direction of
// that auxiliary as seen in the image.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "aerialvg/box.hpp"
#include "aerialvg/image.hpp"

namespace aerialvg {

enum class Color : std::uint8_t { red, blue, white, black, green, yellow };
enum class VehicleType : std::uint8_t { sedan, suv, bus, truck, van };
enum class Relation : std::uint8_t { above, below, left, right, top_left, top_right, bottom_left, bottom_right };

inline constexpr std::size_t kNumColors = 6;
inline constexpr std::size_t kNumVehicleTypes = 5;
inline constexpr std::size_t kNumRelations = 8;

std::string_view color_name(Color c);
std::string_view vehicle_name(VehicleType v);
std::string_view relation_name(Relation r);  // "top-left" etc.
std::optional<Color> parse_color(std::string_view s);
std::optional<VehicleType> parse_vehicle(std::string_view s);
std::optional<Relation> parse_relation(std::string_view s);

// Fixed RGB used by the renderer.
std::array<double, 3> color_rgb(Color c);
// Footprint in units of 1/32 of the image side (width, height).
std::pair<int, int> vehicle_footprint(VehicleType v);

struct Entity {
  BBox bbox;
  Color color = Color::red;
  VehicleType vtype = VehicleType::sedan;

  bool same_appearance(const Entity& o) const { return color == o.color && vtype == o.vtype; }
};

// ---------------------------------------------------------------------------
// Caption vocabulary. Word ids follow grammar order and never change within a
// version: "the" {color} {vtype} "with" "a" {color} {vtype} {relation} "it".

inline constexpr int kVocabVersion = 1;
inline constexpr std::array<std::string_view, 23> kVocabulary = {
    "the",   "red",   "blue",  "white",   "black",    "green",        "yellow",        "sedan",
    "suv",   "bus",   "truck", "van",     "with",     "a",            "above",         "below",
    "left-of", "right-of", "top-left-of", "top-right-of", "bottom-left-of", "bottom-right-of", "it"};
inline constexpr std::size_t kVocabSize = kVocabulary.size();
inline constexpr std::size_t kMaxTokens = 256;

int token_id(std::string_view word);  // -1 when unknown
int color_token(Color c);
int vehicle_token(VehicleType v);
int relation_token(Relation r);

// Token positions naming the target and the auxiliary inside a caption.
inline constexpr std::array<std::size_t, 2> kTargetSpan = {1, 2};
inline constexpr std::array<std::size_t, 2> kAuxSpan = {5, 6};

std::vector<int> caption_tokens(const Entity& target, const Entity& aux, Relation rel);
std::string caption_text(std::span<const int> tokens);

// ---------------------------------------------------------------------------

struct GenConfig {
  std::size_t height = 64, width = 64;
  int min_entities = 4, max_entities = 6;
  int min_distractors = 2, max_distractors = 3;
  double margin_deg = 5.0;
};

struct GroundingInstance {
  std::uint64_t seed = 0;
  std::size_t height = 64, width = 64;
  std::vector<Entity> entities;
  std::size_t target = 0, aux = 0;
  Relation relation = Relation::above;
  std::vector<int> caption;
  std::string caption_text;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Direction of `subject` as seen from `reference`, in screen space. The eight
// 45-degree sectors are centered on the compass directions; a sector boundary
// belongs to the sector counter-clockwise of it. Throws on coincident centers.
Relation classify_relation(const BBox& subject, const BBox& reference);
Relation inverse_relation(Relation r);

// Angle of subject around reference, degrees in [0, 360), 90 = straight up.
double relation_angle_deg(const BBox& subject, const BBox& reference);
// Distance in degrees from `angle` to the nearest sector boundary.
double boundary_distance_deg(double angle);

// Nearest entity with a scene-unique appearance whose direction from the
// target is at least `margin_deg` away from every sector boundary.
// Ties go to the lower index.
struct AuxChoice {
  std::size_t index;
  Relation relation;
};
std::optional<AuxChoice> nearest_auxiliary(const std::vector<Entity>& scene, std::size_t target, double margin_deg);

GroundingInstance generate_instance(const GenConfig& cfg, std::uint64_t seed);

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};
ValidationReport validate_instance(const GroundingInstance& inst);

ImageRaster render(const std::vector<Entity>& scene, std::size_t height, std::size_t width);

}  // namespace aerialvg
