#include "ceidm/implicit_mining.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "ceidm/errors.hpp"

// TLS is deliberately left out: the http backend targets local or proxied
// OpenAI-compatible endpoints and unit tests never open a socket.
#include <httplib.h>

namespace ceidm {

using nlohmann::json;

const char* const kMiningTemplate =
    "You extract implicit interaction relationships from an image prompt. "
    "(template v1)\n"
    "Think step by step about what the prompt physically implies: spatial "
    "arrangement (near, above, behind), contact and support (holding, "
    "touching, resting on), gaze and orientation (looking at, directed at), "
    "and any objects the interaction requires even if unstated.\n"
    "Work through the reasoning in plain text first. Then output, as the final "
    "line and with nothing else on it, a JSON array of [head, relation, tail] "
    "string triplets.\n"
    "Example.\n"
    "Prompt: A person is blowing a cake\n"
    "Reasoning: blowing requires proximity, so the person is near the cake; "
    "blowing at candles means the mouth faces the flame.\n"
    "[[\"person\",\"blowing\",\"cake\"],[\"person\",\"near\",\"cake\"],"
    "[\"person's mouth\",\"directed at\",\"flame\"]]";

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

namespace {

// Finds balanced top-level [...] spans, skipping bracket characters inside
// JSON string literals.
std::vector<std::string> top_level_arrays(const std::string& text) {
  std::vector<std::string> spans;
  size_t i = 0;
  while (i < text.size()) {
    if (text[i] != '[') {
      ++i;
      continue;
    }
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    size_t j = i;
    size_t end = std::string::npos;
    for (; j < text.size(); ++j) {
      const char c = text[j];
      if (in_string) {
        if (escaped)
          escaped = false;
        else if (c == '\\')
          escaped = true;
        else if (c == '"')
          in_string = false;
        continue;
      }
      if (c == '"')
        in_string = true;
      else if (c == '[')
        ++depth;
      else if (c == ']' && --depth == 0) {
        end = j;
        break;
      }
    }
    if (end == std::string::npos) break;  // unbalanced tail
    spans.push_back(text.substr(i, end - i + 1));
    i = end + 1;
  }
  return spans;
}

}  // namespace

std::vector<Triplet> parse_triplet_response(const std::string& text) {
  json last;
  bool found = false;
  for (const auto& span : top_level_arrays(text)) {
    json candidate = json::parse(span, nullptr, false);
    if (!candidate.is_discarded() && candidate.is_array()) {
      last = std::move(candidate);
      found = true;
    }
  }
  if (!found)
    throw FormatError("no JSON array found in response: " + text);
  std::vector<Triplet> out;
  for (const auto& item : last) {
    if (!item.is_array() || item.size() != 3 || !item[0].is_string() ||
        !item[1].is_string() || !item[2].is_string())
      throw FormatError("response array element is not a [h, r, t] string "
                        "triplet: " + text);
    out.push_back(make_triplet(item[0], item[1], item[2]));
  }
  return out;
}

MockRules MockRules::from_json(const std::string& bytes) {
  json doc;
  try {
    doc = json::parse(bytes);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("mock rules: malformed JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("rules") || !doc["rules"].is_array())
    throw ValidationError("mock rules: expected {\"rules\": [...]}");
  MockRules rules;
  for (const auto& rj : doc["rules"]) {
    if (!rj.is_object() || !rj.contains("contains") || !rj.contains("triplets") ||
        !rj["contains"].is_string() || !rj["triplets"].is_array())
      throw ValidationError(
          "mock rules: each rule needs \"contains\" and \"triplets\"");
    Rule rule;
    rule.contains = rj["contains"].get<std::string>();
    for (const auto& tj : rj["triplets"]) {
      if (!tj.is_array() || tj.size() != 3)
        throw ValidationError("mock rules: triplets must be [h, r, t]");
      rule.triplets.push_back(make_triplet(tj[0], tj[1], tj[2]));
    }
    rules.rules.push_back(std::move(rule));
  }
  return rules;
}

MockRules MockRules::builtin() {
  MockRules rules;
  rules.rules.push_back(
      {"blowing a cake",
       {{"person", "blowing", "cake"},
        {"person", "near", "cake"},
        {"person's mouth", "directed at", "flame"}}});
  rules.rules.push_back({"riding a motorcycle",
                         {{"person", "riding", "motorcycle"},
                          {"person", "sitting on", "motorcycle"},
                          {"person's hands", "gripping", "handlebars"}}});
  rules.rules.push_back({"feeding a dog",
                         {{"person", "feeding", "dog"},
                          {"person", "near", "dog"},
                          {"food", "held by", "person"},
                          {"dog", "looking at", "food"}}});
  rules.rules.push_back({"carrying a backpack",
                         {{"person", "carrying", "backpack"},
                          {"backpack", "resting on", "person's back"}}});
  return rules;
}

std::string MockRules::respond(const std::string& prompt) const {
  std::vector<Triplet> matched;
  for (const auto& rule : rules)
    if (prompt.find(rule.contains) != std::string::npos)
      matched.insert(matched.end(), rule.triplets.begin(), rule.triplets.end());
  json arr = json::array();
  for (const auto& t : matched) arr.push_back({t.h, t.r, t.t});
  std::ostringstream out;
  out << "Step 1: consider the entities and the action in \"" << prompt
      << "\".\n";
  out << "Step 2: derive the spatial, contact and gaze relations the scene "
         "implies.\n";
  out << arr.dump() << "\n";
  return out.str();
}

LlmClient::LlmClient(LlmOptions options, MockRules rules)
    : options_(std::move(options)), rules_(std::move(rules)) {
  if (options_.max_retries < 0)
    throw ValidationError("llm: max_retries must be non-negative");
  if (options_.mode == LlmOptions::Mode::http && options_.endpoint.empty()) {
    const char* env = std::getenv("CEIDM_LLM_ENDPOINT");
    if (env) options_.endpoint = env;
    if (options_.endpoint.empty())
      throw ValidationError(
          "llm: http mode needs an endpoint (config or CEIDM_LLM_ENDPOINT)");
  }
  load_cache();
}

std::string LlmClient::cache_key(const std::string& prompt) const {
  return sha256_hex(options_.model + "\x1f" + prompt);
}

std::string LlmClient::complete(const std::string& prompt) {
  if (prompt.empty()) throw ValidationError("llm: prompt is empty");
  const std::string key = cache_key(prompt);
  {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
  }
  const std::string response = invoke_backend(prompt);
  {
    std::lock_guard<std::mutex> lock(mutex_);
    cache_[key] = response;
    persist_cache();
  }
  return response;
}

std::string LlmClient::invoke_backend(const std::string& prompt) {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    ++backend_calls_;
  }
  if (options_.mode == LlmOptions::Mode::mock) return rules_.respond(prompt);

  // OpenAI-compatible chat completions.
  std::string url = options_.endpoint;
  std::string host_part = url;
  std::string path = "/v1/chat/completions";
  const auto scheme_pos = host_part.find("://");
  if (scheme_pos != std::string::npos) {
    if (host_part.substr(0, scheme_pos) != "http")
      throw ValidationError("llm: only http:// endpoints are supported");
    host_part = host_part.substr(scheme_pos + 3);
  }
  const auto slash = host_part.find('/');
  if (slash != std::string::npos) {
    path = host_part.substr(slash);
    host_part = host_part.substr(0, slash);
  }

  json body;
  body["model"] = options_.model;
  body["messages"] = {{{"role", "system"}, {"content", kMiningTemplate}},
                      {{"role", "user"}, {"content", prompt}}};
  body["temperature"] = 0;

  httplib::Client client(host_part);
  client.set_connection_timeout(static_cast<time_t>(options_.timeout_seconds),
                                0);
  client.set_read_timeout(static_cast<time_t>(options_.timeout_seconds), 0);
  httplib::Headers headers;
  if (const char* key = std::getenv("CEIDM_LLM_API_KEY"))
    headers.emplace("Authorization", std::string("Bearer ") + key);

  std::string last_error;
  for (int attempt = 0; attempt <= options_.max_retries; ++attempt) {
    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_error = "server error: HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      throw IoError("llm: HTTP " + std::to_string(res->status) + ": " +
                    res->body);
    json reply = json::parse(res->body, nullptr, false);
    if (reply.is_discarded() || !reply.contains("choices") ||
        reply["choices"].empty() ||
        !reply["choices"][0].contains("message") ||
        !reply["choices"][0]["message"].contains("content"))
      throw FormatError("llm: unexpected completion payload: " + res->body);
    return reply["choices"][0]["message"]["content"].get<std::string>();
  }
  throw IoError("llm: request failed after " +
                std::to_string(options_.max_retries + 1) + " attempts: " +
                last_error);
}

void LlmClient::load_cache() {
  if (options_.cache_path.empty()) return;
  std::ifstream in(options_.cache_path);
  if (!in) return;  // first run: no cache yet
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded() || !doc.is_object())
    throw ValidationError("llm cache: malformed JSON in " +
                          options_.cache_path.string());
  for (const auto& [key, value] : doc.items()) {
    if (!value.is_string())
      throw ValidationError("llm cache: values must be raw response strings");
    cache_[key] = value.get<std::string>();
  }
}

void LlmClient::persist_cache() const {
  if (options_.cache_path.empty()) return;
  json doc(cache_);
  const auto tmp = options_.cache_path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("llm cache: cannot write " + tmp);
    out << doc.dump(2) << "\n";
  }
  std::filesystem::rename(tmp, options_.cache_path);
}

std::vector<Triplet> mine_implicit(LlmClient& client, const std::string& prompt) {
  if (prompt.empty()) throw ValidationError("mine_implicit: prompt is empty");
  const std::string response = client.complete(prompt);
  std::vector<Triplet> raw = parse_triplet_response(response);
  std::vector<Triplet> out;
  for (auto& t : raw) {
    bool dup = false;
    for (const auto& kept : out)
      if (kept == t) {
        dup = true;
        break;
      }
    if (!dup) out.push_back(std::move(t));
  }
  return out;
}

TripletProjections TripletProjections::init(Index token_dim, Index text_dim,
                                            std::uint64_t root_seed) {
  Rng rng = substream(root_seed, "init/triplet_projections");
  return {LinearLayer::init(token_dim, text_dim, rng),
          LinearLayer::init(token_dim, text_dim, rng),
          LinearLayer::init(token_dim, text_dim, rng)};
}

ImplicitTokens deep_embed_triplet(const Triplet& triplet,
                                  const PhraseEmbedder& embedder,
                                  const TripletProjections& proj,
                                  const AttentionParams& attn) {
  const Index d = attn.dim();
  if (proj.head.out_dim() != d || proj.relation.out_dim() != d ||
      proj.tail.out_dim() != d)
    throw ValidationError("deep_embed_triplet: projection/attention dim mismatch");

  ImplicitTokens toks;
  toks.h_emb = linear_apply(proj.head, embedder.embed(triplet.h));
  toks.r_emb = linear_apply(proj.relation, embedder.embed(triplet.r));
  toks.t_emb = linear_apply(proj.tail, embedder.embed(triplet.t));

  Mat stacked(3, d);
  stacked.row(0) = toks.h_emb.transpose();
  stacked.row(1) = toks.r_emb.transpose();
  stacked.row(2) = toks.t_emb.transpose();
  const Mat resi = self_attention(stacked, attn);

  toks.resi_h = resi.row(0).transpose();
  toks.resi_r = resi.row(1).transpose();
  toks.resi_t = resi.row(2).transpose();
  toks.e_h = toks.h_emb + toks.resi_h;
  toks.e_r = toks.r_emb + toks.resi_r;
  toks.e_t = toks.t_emb + toks.resi_t;
  return toks;
}

}  // namespace ceidm
