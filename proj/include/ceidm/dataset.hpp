#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ceidm {

// Normalized box, 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1.
struct BBox {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  bool operator==(const BBox&) const = default;
};

BBox union_box(const BBox& a, const BBox& b);

// (head, relation, tail); all fields non-empty after whitespace trim.
struct Triplet {
  std::string h, r, t;

  bool operator==(const Triplet&) const = default;
};

Triplet make_triplet(std::string h, std::string r, std::string t);

struct HOIInstance {
  std::string subject_phrase;
  std::string action_phrase;
  std::string object_phrase;
  BBox subject_box;
  BBox object_box;
  int index = 0;  // unique within a scene; the instance embedding key

  bool operator==(const HOIInstance&) const = default;
};

struct PromptScene {
  std::string prompt;
  std::vector<HOIInstance> instances;
  std::optional<std::int64_t> seed;  // effective default is 489 when absent
  std::optional<std::vector<Triplet>> implicit_triplets;

  bool operator==(const PromptScene&) const = default;

  std::int64_t effective_seed(std::int64_t fallback = 489) const {
    return seed.value_or(fallback);
  }
};

// Enforces BBox invariants; when image dims (width, height) are given the raw
// coordinates are treated as pixels and divided through first.
BBox validate_bbox(const double raw[4],
                   std::optional<std::pair<double, double>> image_dims);

// Parses the scene JSON schema. Malformed JSON reports the byte offset;
// invalid boxes report the scene and instance. Ordering follows the file.
std::vector<PromptScene> parse_scene_file(const std::string& bytes);

// Serializes scenes whose implicit_triplets are filled (possibly empty, never
// absent). parse_scene_file(export_augmented(s)) == s field for field.
std::string export_augmented(const std::vector<PromptScene>& scenes);

void validate_scene(const PromptScene& scene, const std::string& label);

}  // namespace ceidm
