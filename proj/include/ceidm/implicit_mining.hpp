#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "ceidm/dataset.hpp"
#include "ceidm/embedding.hpp"
#include "ceidm/numerics.hpp"

namespace ceidm {

// System prompt sent with every mining request. Versioned resource: bump the
// version marker when the wording changes, cached responses key off the text
// indirectly through the model+prompt pair.
extern const char* const kMiningTemplate;

// Extracts the last parseable JSON array from the response text and validates
// it as an array of [head, relation, tail] string triplets. Chain-of-thought
// prose before (or between) arrays is ignored.
std::vector<Triplet> parse_triplet_response(const std::string& text);

std::string sha256_hex(const std::string& bytes);

// Substring-match rule table used by the mock backend.
struct MockRules {
  struct Rule {
    std::string contains;
    std::vector<Triplet> triplets;
  };
  std::vector<Rule> rules;

  static MockRules from_json(const std::string& bytes);
  static MockRules builtin();

  // Fabricates a full chat answer (reasoning lines + final JSON array) from
  // every rule whose pattern occurs in the prompt.
  std::string respond(const std::string& prompt) const;
};

struct LlmOptions {
  enum class Mode { mock, http };
  Mode mode = Mode::mock;
  std::string model = "qwen-turbo";
  std::string endpoint;  // e.g. http://host:port/v1/chat/completions
  double timeout_seconds = 30.0;
  int max_retries = 2;
  std::filesystem::path cache_path;  // optional persistent response cache
};

// Chat client with a (model, prompt) keyed response cache. The mock backend is
// fully deterministic; the http backend speaks the OpenAI chat-completions
// wire format and is never exercised by unit tests.
class LlmClient {
 public:
  LlmClient(LlmOptions options, MockRules rules = MockRules::builtin());

  // Raw response text for a prompt, cache-first.
  std::string complete(const std::string& prompt);

  const LlmOptions& options() const { return options_; }

  // Number of backend invocations (cache hits excluded); test hook.
  int backend_calls() const { return backend_calls_; }

 private:
  std::string cache_key(const std::string& prompt) const;
  std::string invoke_backend(const std::string& prompt);
  void load_cache();
  void persist_cache() const;

  LlmOptions options_;
  MockRules rules_;
  mutable std::mutex mutex_;
  std::map<std::string, std::string> cache_;
  int backend_calls_ = 0;
};

// Sends the chain-of-thought template, parses the final triplet array, and
// dedupes exact duplicates preserving first occurrence.
std::vector<Triplet> mine_implicit(LlmClient& client, const std::string& prompt);

// Role-specific projections for (head, relation, tail) phrase embeddings.
struct TripletProjections {
  LinearLayer head, relation, tail;

  static TripletProjections init(Index token_dim, Index text_dim,
                                 std::uint64_t root_seed);
};

// Deep-embedded implicit triplet: e_x == x_emb + resi_x exactly per role.
struct ImplicitTokens {
  Vec e_h, e_r, e_t;
  Vec h_emb, r_emb, t_emb;
  Vec resi_h, resi_r, resi_t;
};

ImplicitTokens deep_embed_triplet(const Triplet& triplet,
                                  const PhraseEmbedder& embedder,
                                  const TripletProjections& proj,
                                  const AttentionParams& attn);

}  // namespace ceidm
