#include "ceidm/embedding.hpp"

#include <cctype>
#include <cmath>

#include <nlohmann/json.hpp>

#include "ceidm/errors.hpp"

namespace ceidm {

using nlohmann::json;

std::string normalize_phrase(const std::string& phrase) {
  std::string out;
  bool in_word = false;
  for (char c : phrase) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      in_word = false;
      continue;
    }
    if (!in_word && !out.empty()) out.push_back(' ');
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    in_word = true;
  }
  return out;
}

PhraseEmbedder PhraseEmbedder::surrogate(Index dim, std::uint64_t seed) {
  if (dim < 1) throw ValidationError("embedder dim must be positive");
  PhraseEmbedder e;
  e.surrogate_ = true;
  e.dim_ = dim;
  e.seed_ = seed;
  return e;
}

PhraseEmbedder PhraseEmbedder::from_table_json(const std::string& bytes) {
  json doc;
  try {
    doc = json::parse(bytes);
  } catch (const json::parse_error& err) {
    throw ValidationError(std::string("embedding table: malformed JSON: ") +
                          err.what());
  }
  if (!doc.is_object() || !doc.contains("dim") || !doc.contains("entries") ||
      !doc["dim"].is_number_integer() || !doc["entries"].is_object())
    throw ValidationError(
        "embedding table: expected {\"dim\": int, \"entries\": {...}}");
  PhraseEmbedder e;
  e.surrogate_ = false;
  e.dim_ = doc["dim"].get<Index>();
  if (e.dim_ < 1) throw ValidationError("embedding table: dim must be positive");
  for (const auto& [phrase, arr] : doc["entries"].items()) {
    if (!arr.is_array() || static_cast<Index>(arr.size()) != e.dim_)
      throw ValidationError("embedding table: entry \"" + phrase +
                            "\" does not have dim values");
    Vec v(e.dim_);
    for (Index i = 0; i < e.dim_; ++i) {
      if (!arr[i].is_number())
        throw ValidationError("embedding table: entry \"" + phrase +
                              "\" has a non-numeric value");
      v[i] = arr[i].get<double>();
    }
    e.table_.emplace(normalize_phrase(phrase), std::move(v));
  }
  return e;
}

Vec PhraseEmbedder::embed(const std::string& phrase) const {
  const std::string key = normalize_phrase(phrase);
  if (key.empty()) throw ValidationError("embed_phrase: phrase is empty");
  if (!surrogate_) {
    auto it = table_.find(key);
    if (it == table_.end())
      throw ValidationError("embedding table: unknown phrase \"" + key + "\"");
    return it->second;
  }
  Rng rng(splitmix64(seed_ ^ fnv1a64(key)));
  Vec v = rng.gaussian_vec(dim_);
  const double norm = v.norm();
  if (norm < 1e-12) {
    // Astronomically unlikely; fall back to a fixed axis to keep unit norm.
    v.setZero();
    v[0] = 1.0;
    return v;
  }
  return v / norm;
}

Vec fourier_embed_box(const BBox& box, int frequency_count) {
  if (frequency_count < 1)
    throw ValidationError("fourier_embed_box: frequency count must be >= 1");
  const double coords[4] = {box.x0, box.y0, box.x1, box.y1};
  Vec out(8 * frequency_count);
  Index idx = 0;
  for (double c : coords) {
    double freq = 3.14159265358979323846;  // 2^k * pi
    for (int k = 0; k < frequency_count; ++k) {
      out[idx++] = std::sin(freq * c);
      out[idx++] = std::cos(freq * c);
      freq *= 2.0;
    }
  }
  return out;
}

RoleEmbeddings RoleEmbeddings::init(Index d, std::uint64_t root_seed) {
  Rng rng = substream(root_seed, "roles");
  RoleEmbeddings roles;
  roles.r_s = rng.gaussian_vec(d);
  roles.r_a = rng.gaussian_vec(d);
  roles.r_o = rng.gaussian_vec(d);
  return roles;
}

Vec instance_embedding(int index, Index d, std::uint64_t root_seed) {
  if (index < 0) throw ValidationError("instance index must be non-negative");
  Rng rng = substream(root_seed, "q/" + std::to_string(index));
  return rng.gaussian_vec(d);
}

InteractionMlps InteractionMlps::init(Index token_dim, Index text_dim,
                                      int frequency_count,
                                      std::uint64_t root_seed) {
  const Index in = text_dim + 8 * frequency_count;
  Rng rng = substream(root_seed, "init/interaction_mlps");
  InteractionMlps mlps;
  mlps.obj = Mlp::init(token_dim, token_dim, in, rng);
  mlps.act = Mlp::init(token_dim, token_dim, in, rng);
  return mlps;
}

static Vec mlp_input(const PhraseEmbedder& embedder, const std::string& phrase,
                     const BBox& box, int frequency_count) {
  const Vec text = embedder.embed(phrase);
  const Vec pos = fourier_embed_box(box, frequency_count);
  Vec joined(text.size() + pos.size());
  joined << text, pos;
  return joined;
}

ProjectedTokens project_tokens(const HOIInstance& instance,
                               const PhraseEmbedder& embedder,
                               const InteractionMlps& mlps,
                               int frequency_count) {
  const Index expected = embedder.dim() + 8 * frequency_count;
  if (mlps.obj.in_dim() != expected || mlps.act.in_dim() != expected)
    throw ValidationError("project_tokens: MLP input dim mismatch, expected " +
                          std::to_string(expected));
  const BBox action_box = union_box(instance.subject_box, instance.object_box);
  ProjectedTokens h;
  h.h_s = mlps.obj.apply(mlp_input(embedder, instance.subject_phrase,
                                   instance.subject_box, frequency_count));
  h.h_o = mlps.obj.apply(mlp_input(embedder, instance.object_phrase,
                                   instance.object_box, frequency_count));
  h.h_a = mlps.act.apply(mlp_input(embedder, instance.action_phrase, action_box,
                                   frequency_count));
  return h;
}

InteractionTokens assemble_interaction_tokens(const ProjectedTokens& h,
                                              int instance_index,
                                              const RoleEmbeddings& roles,
                                              Index d, std::uint64_t root_seed) {
  if (h.h_s.size() != d || h.h_a.size() != d || h.h_o.size() != d ||
      roles.r_s.size() != d || roles.r_a.size() != d || roles.r_o.size() != d)
    throw ValidationError("assemble_interaction_tokens: dim mismatch");
  InteractionTokens toks;
  toks.h_s = h.h_s;
  toks.h_a = h.h_a;
  toks.h_o = h.h_o;
  toks.q = instance_embedding(instance_index, d, root_seed);
  toks.r_s = roles.r_s;
  toks.r_a = roles.r_a;
  toks.r_o = roles.r_o;
  toks.e_s = toks.h_s + toks.q + toks.r_s;
  toks.e_a = toks.h_a + toks.q + toks.r_a;
  toks.e_o = toks.h_o + toks.q + toks.r_o;
  return toks;
}

EmbeddingStack EmbeddingStack::init(Index token_dim, Index text_dim,
                                    int frequency_count,
                                    std::uint64_t root_seed) {
  return init_with_embedder(
      PhraseEmbedder::surrogate(text_dim, splitmix64(root_seed ^ fnv1a64("phrase"))),
      token_dim, frequency_count, root_seed);
}

EmbeddingStack EmbeddingStack::init_with_embedder(PhraseEmbedder embedder,
                                                  Index token_dim,
                                                  int frequency_count,
                                                  std::uint64_t root_seed) {
  EmbeddingStack stack;
  stack.text_dim = embedder.dim();
  stack.embedder = std::move(embedder);
  stack.mlps = InteractionMlps::init(token_dim, stack.text_dim, frequency_count,
                                     root_seed);
  stack.roles = RoleEmbeddings::init(token_dim, root_seed);
  stack.token_dim = token_dim;
  stack.frequency_count = frequency_count;
  stack.root_seed = root_seed;
  return stack;
}

InteractionTokens EmbeddingStack::embed_instance(const HOIInstance& instance) const {
  const ProjectedTokens h =
      project_tokens(instance, embedder, mlps, frequency_count);
  return assemble_interaction_tokens(h, instance.index, roles, token_dim,
                                     root_seed);
}

Vec EmbeddingStack::embed_action_vector(const Vec& a_raw, const BBox& action_box,
                                        int instance_index) const {
  if (a_raw.size() != text_dim)
    throw ValidationError("embed_action_vector: raw vector dim mismatch");
  const Vec pos = fourier_embed_box(action_box, frequency_count);
  Vec joined(a_raw.size() + pos.size());
  joined << a_raw, pos;
  const Vec h = mlps.act.apply(joined);
  return h + instance_embedding(instance_index, token_dim, root_seed) + roles.r_a;
}

}  // namespace ceidm
