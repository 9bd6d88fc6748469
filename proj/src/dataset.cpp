#include "ceidm/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "ceidm/errors.hpp"

namespace ceidm {

using nlohmann::json;

BBox union_box(const BBox& a, const BBox& b) {
  return {std::min(a.x0, b.x0), std::min(a.y0, b.y0), std::max(a.x1, b.x1),
          std::max(a.y1, b.y1)};
}

static std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

Triplet make_triplet(std::string h, std::string r, std::string t) {
  Triplet out{trim(h), trim(r), trim(t)};
  if (out.h.empty() || out.r.empty() || out.t.empty())
    throw ValidationError("triplet fields must be non-empty after trim");
  return out;
}

BBox validate_bbox(const double raw[4],
                   std::optional<std::pair<double, double>> image_dims) {
  BBox b{raw[0], raw[1], raw[2], raw[3]};
  if (image_dims) {
    const auto [w, h] = *image_dims;
    if (w <= 0 || h <= 0)
      throw ValidationError("image dimensions must be positive");
    b.x0 /= w;
    b.x1 /= w;
    b.y0 /= h;
    b.y1 /= h;
  }
  for (double v : {b.x0, b.y0, b.x1, b.y1})
    if (!std::isfinite(v)) throw ValidationError("box coordinate not finite");
  if (!(0.0 <= b.x0 && b.x0 < b.x1 && b.x1 <= 1.0))
    throw ValidationError("box violates 0 <= x0 < x1 <= 1");
  if (!(0.0 <= b.y0 && b.y0 < b.y1 && b.y1 <= 1.0))
    throw ValidationError("box violates 0 <= y0 < y1 <= 1");
  return b;
}

void validate_scene(const PromptScene& scene, const std::string& label) {
  if (trim(scene.prompt).empty())
    throw ValidationError(label + ": prompt must be non-empty");
  if (scene.instances.empty())
    throw ValidationError(label + ": scene needs at least one instance");
  std::set<int> seen;
  for (const auto& inst : scene.instances) {
    if (inst.index < 0)
      throw ValidationError(label + ": instance index must be non-negative");
    if (!seen.insert(inst.index).second)
      throw ValidationError(label + ": duplicate instance index " +
                            std::to_string(inst.index));
    if (trim(inst.subject_phrase).empty() || trim(inst.action_phrase).empty() ||
        trim(inst.object_phrase).empty())
      throw ValidationError(label + ": instance phrases must be non-empty");
  }
  if (scene.implicit_triplets)
    for (const auto& t : *scene.implicit_triplets)
      if (trim(t.h).empty() || trim(t.r).empty() || trim(t.t).empty())
        throw ValidationError(label + ": implicit triplet field empty");
}

namespace {

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                         const std::string& label) {
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key))
      throw ValidationError(label + ": unknown key \"" + key + "\"");
}

BBox parse_box(const json& arr, std::optional<std::pair<double, double>> dims,
               const std::string& label) {
  if (!arr.is_array() || arr.size() != 4)
    throw ValidationError(label + ": box must be an array of 4 numbers");
  double raw[4];
  for (int i = 0; i < 4; ++i) {
    if (!arr[i].is_number())
      throw ValidationError(label + ": box entries must be numbers");
    raw[i] = arr[i].get<double>();
  }
  try {
    return validate_bbox(raw, dims);
  } catch (const ValidationError& e) {
    throw ValidationError(label + ": " + e.what());
  }
}

}  // namespace

std::vector<PromptScene> parse_scene_file(const std::string& bytes) {
  json doc;
  try {
    doc = json::parse(bytes);
  } catch (const json::parse_error& e) {
    throw ValidationError("scene file: malformed JSON at byte " +
                          std::to_string(e.byte) + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("scenes") || !doc["scenes"].is_array())
    throw ValidationError("scene file: top level must be {\"scenes\": [...]}");
  reject_unknown_keys(doc, {"scenes"}, "scene file");

  std::vector<PromptScene> scenes;
  int scene_idx = 0;
  for (const auto& s : doc["scenes"]) {
    const std::string label = "scene " + std::to_string(scene_idx);
    if (!s.is_object()) throw ValidationError(label + ": must be an object");
    reject_unknown_keys(s,
                        {"prompt", "seed", "image_width", "image_height",
                         "instances", "implicit_triplets"},
                        label);
    PromptScene scene;
    if (!s.contains("prompt") || !s["prompt"].is_string())
      throw ValidationError(label + ": missing string \"prompt\"");
    scene.prompt = s["prompt"].get<std::string>();

    if (s.contains("seed")) {
      if (!s["seed"].is_number_integer())
        throw ValidationError(label + ": seed must be an integer");
      scene.seed = s["seed"].get<std::int64_t>();
    }

    std::optional<std::pair<double, double>> dims;
    const bool has_w = s.contains("image_width");
    const bool has_h = s.contains("image_height");
    if (has_w != has_h)
      throw ValidationError(label +
                            ": image_width and image_height must come together");
    if (has_w) {
      if (!s["image_width"].is_number_integer() ||
          !s["image_height"].is_number_integer())
        throw ValidationError(label + ": image dimensions must be integers");
      dims = {{s["image_width"].get<double>(), s["image_height"].get<double>()}};
    }

    if (!s.contains("instances") || !s["instances"].is_array())
      throw ValidationError(label + ": missing array \"instances\"");
    int inst_idx = 0;
    for (const auto& ij : s["instances"]) {
      const std::string ilabel = label + " instance " + std::to_string(inst_idx);
      if (!ij.is_object()) throw ValidationError(ilabel + ": must be an object");
      reject_unknown_keys(
          ij, {"subject", "action", "object", "subject_box", "object_box"},
          ilabel);
      HOIInstance inst;
      for (const char* key : {"subject", "action", "object"})
        if (!ij.contains(key) || !ij[key].is_string())
          throw ValidationError(ilabel + ": missing string \"" +
                                std::string(key) + "\"");
      inst.subject_phrase = ij["subject"].get<std::string>();
      inst.action_phrase = ij["action"].get<std::string>();
      inst.object_phrase = ij["object"].get<std::string>();
      if (!ij.contains("subject_box") || !ij.contains("object_box"))
        throw ValidationError(ilabel + ": missing subject_box/object_box");
      inst.subject_box = parse_box(ij["subject_box"], dims, ilabel + " subject_box");
      inst.object_box = parse_box(ij["object_box"], dims, ilabel + " object_box");
      inst.index = inst_idx;
      scene.instances.push_back(std::move(inst));
      ++inst_idx;
    }

    if (s.contains("implicit_triplets")) {
      if (!s["implicit_triplets"].is_array())
        throw ValidationError(label + ": implicit_triplets must be an array");
      std::vector<Triplet> triplets;
      for (const auto& tj : s["implicit_triplets"]) {
        if (!tj.is_array() || tj.size() != 3 || !tj[0].is_string() ||
            !tj[1].is_string() || !tj[2].is_string())
          throw ValidationError(label +
                                ": implicit triplets must be [h, r, t] strings");
        try {
          triplets.push_back(make_triplet(tj[0], tj[1], tj[2]));
        } catch (const ValidationError& e) {
          throw ValidationError(label + ": " + e.what());
        }
      }
      scene.implicit_triplets = std::move(triplets);
    }

    validate_scene(scene, label);
    scenes.push_back(std::move(scene));
    ++scene_idx;
  }
  return scenes;
}

std::string export_augmented(const std::vector<PromptScene>& scenes) {
  json doc;
  doc["scenes"] = json::array();
  int idx = 0;
  for (const auto& scene : scenes) {
    if (!scene.implicit_triplets)
      throw ValidationError("export_augmented: scene " + std::to_string(idx) +
                            " has no implicit_triplets (fill or set empty)");
    json s;
    s["prompt"] = scene.prompt;
    if (scene.seed) s["seed"] = *scene.seed;
    s["instances"] = json::array();
    for (const auto& inst : scene.instances) {
      json ij;
      ij["subject"] = inst.subject_phrase;
      ij["action"] = inst.action_phrase;
      ij["object"] = inst.object_phrase;
      ij["subject_box"] = {inst.subject_box.x0, inst.subject_box.y0,
                           inst.subject_box.x1, inst.subject_box.y1};
      ij["object_box"] = {inst.object_box.x0, inst.object_box.y0,
                          inst.object_box.x1, inst.object_box.y1};
      s["instances"].push_back(std::move(ij));
    }
    s["implicit_triplets"] = json::array();
    for (const auto& t : *scene.implicit_triplets)
      s["implicit_triplets"].push_back({t.h, t.r, t.t});
    doc["scenes"].push_back(std::move(s));
    ++idx;
  }
  return doc.dump(2) + "\n";
}

}  // namespace ceidm
