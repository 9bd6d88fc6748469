#pragma once

#include <string>
#include <unordered_map>

#include "ceidm/dataset.hpp"
#include "ceidm/numerics.hpp"

namespace ceidm {

// Deterministic stand-in for a text encoder. The surrogate backend hashes the
// normalized lowercase tokens of a phrase into a seeded Gaussian vector and
// L2-normalizes it; the table backend serves vectors loaded from file.
class PhraseEmbedder {
 public:
  static PhraseEmbedder surrogate(Index dim, std::uint64_t seed);
  // {"dim": int, "entries": {"phrase": [floats]}}
  static PhraseEmbedder from_table_json(const std::string& bytes);

  Vec embed(const std::string& phrase) const;
  Index dim() const { return dim_; }

  PhraseEmbedder() = default;

 private:
  bool surrogate_ = true;
  Index dim_ = 0;
  std::uint64_t seed_ = 0;
  std::unordered_map<std::string, Vec> table_;
};

std::string normalize_phrase(const std::string& phrase);

// sin/cos features at frequencies 2^k * pi, k in [0, L), concatenated
// coordinate-major over (x0, y0, x1, y1); dimension 4*2*L.
Vec fourier_embed_box(const BBox& box, int frequency_count);

// The embedded triplet tokens of one interaction instance. The e vectors are
// exactly h + q + r per role; the role vectors are shared across instances.
struct InteractionTokens {
  Vec e_s, e_a, e_o;
  Vec h_s, h_a, h_o;
  Vec q;
  Vec r_s, r_a, r_o;
};

struct RoleEmbeddings {
  Vec r_s, r_a, r_o;

  static RoleEmbeddings init(Index d, std::uint64_t root_seed);
};

// Instance embedding q_i from a seeded stream keyed by the instance index.
Vec instance_embedding(int index, Index d, std::uint64_t root_seed);

// The two projection MLPs: one shared by subject/object phrases, one for
// action phrases. Input is [phrase embedding | Fourier box features].
struct InteractionMlps {
  Mlp obj;
  Mlp act;

  static InteractionMlps init(Index token_dim, Index text_dim,
                              int frequency_count, std::uint64_t root_seed);
};

struct ProjectedTokens {
  Vec h_s, h_a, h_o;
};

// Subject/object go through the shared object MLP with their own boxes; the
// action goes through the action MLP with the union of the two boxes.
ProjectedTokens project_tokens(const HOIInstance& instance,
                               const PhraseEmbedder& embedder,
                               const InteractionMlps& mlps,
                               int frequency_count);

InteractionTokens assemble_interaction_tokens(const ProjectedTokens& h,
                                              int instance_index,
                                              const RoleEmbeddings& roles,
                                              Index d, std::uint64_t root_seed);

// Everything needed to run phrases and boxes through the full token path.
struct EmbeddingStack {
  PhraseEmbedder embedder;
  InteractionMlps mlps;
  RoleEmbeddings roles;
  Index text_dim = 0;
  Index token_dim = 0;
  int frequency_count = 1;
  std::uint64_t root_seed = 0;

  static EmbeddingStack init(Index token_dim, Index text_dim,
                             int frequency_count, std::uint64_t root_seed);
  static EmbeddingStack init_with_embedder(PhraseEmbedder embedder,
                                           Index token_dim,
                                           int frequency_count,
                                           std::uint64_t root_seed);

  InteractionTokens embed_instance(const HOIInstance& instance) const;

  // Re-embeds a raw action-space vector for instance `index` with the given
  // union box: MLP_Act([a_raw | F(box)]) + q_index + r_a.
  Vec embed_action_vector(const Vec& a_raw, const BBox& action_box,
                          int instance_index) const;
};

}  // namespace ceidm
