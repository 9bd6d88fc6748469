#include "ceidm/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ceidm/errors.hpp"

namespace ceidm {

using nlohmann::json;

void Config::validate() const {
  iea.validate();
  ecn.validate();
  offsets.offsets.validate();
  if (offsets.k < 1) throw ValidationError("offsets.k must be >= 1");
  if (sampler.method != "plms" && sampler.method != "ddim")
    throw ValidationError("sampler.method must be \"plms\" or \"ddim\"");
  if (sampler.steps < 1) throw ValidationError("sampler.steps must be >= 1");
  if (!(0.0 < sampler.beta_start && sampler.beta_start <= sampler.beta_end &&
        sampler.beta_end < 1.0))
    throw ValidationError("sampler betas must satisfy 0 < start <= end < 1");
  if (embedding.text_dim < 1 || embedding.token_dim < 1)
    throw ValidationError("embedding dims must be positive");
  if (embedding.fourier_frequencies < 1)
    throw ValidationError("embedding.fourier_frequencies must be >= 1");
  if (embedding.backend != "surrogate" && embedding.backend != "table")
    throw ValidationError("embedding.backend must be \"surrogate\" or \"table\"");
  if (embedding.backend == "table" && embedding.table_path.empty())
    throw ValidationError("embedding.backend \"table\" needs embedding.table");
  if (llm.mode != "mock" && llm.mode != "http")
    throw ValidationError("llm.mode must be \"mock\" or \"http\"");
  if (llm.max_retries < 0) throw ValidationError("llm.max_retries must be >= 0");
  if (latent.height < 1 || latent.width < 1 || latent.blocks < 1)
    throw ValidationError("latent dims and block count must be >= 1");
}

namespace {

void expect_keys(const json& obj, const std::set<std::string>& allowed,
                 const std::string& where) {
  if (!obj.is_object())
    throw ValidationError("config: " + where + " must be an object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key))
      throw ValidationError("config: unknown key \"" + where +
                            (where.empty() ? "" : ".") + key + "\"");
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("config: bad value for \"") + key + "\"");
  }
}

}  // namespace

Config parse_config(const std::string& bytes) {
  json doc;
  try {
    doc = json::parse(bytes);
  } catch (const json::parse_error& e) {
    throw ValidationError("config: malformed JSON at byte " +
                          std::to_string(e.byte) + ": " + e.what());
  }
  expect_keys(doc, {"seed", "iea", "ecn", "offsets", "sampler", "embedding",
                    "llm", "latent"},
              "");

  Config cfg;
  read(doc, "seed", cfg.seed);

  if (doc.contains("iea")) {
    const auto& j = doc["iea"];
    expect_keys(j, {"delta", "w", "s1", "s2", "gamma"}, "iea");
    read(j, "delta", cfg.iea.delta);
    read(j, "w", cfg.iea.w);
    read(j, "s1", cfg.iea.s1);
    read(j, "s2", cfg.iea.s2);
    read(j, "gamma", cfg.iea.gamma);
  }
  if (doc.contains("ecn")) {
    const auto& j = doc["ecn"];
    expect_keys(j, {"temp", "kernels", "enabled"}, "ecn");
    read(j, "temp", cfg.ecn.temp);
    read(j, "kernels", cfg.ecn.kernel_sizes);
    read(j, "enabled", cfg.ecn.enabled);
  }
  if (doc.contains("offsets")) {
    const auto& j = doc["offsets"];
    expect_keys(j, {"global", "local", "k"}, "offsets");
    read(j, "global", cfg.offsets.offsets.global_offsets);
    read(j, "local", cfg.offsets.offsets.local_offsets);
    read(j, "k", cfg.offsets.k);
  }
  if (doc.contains("sampler")) {
    const auto& j = doc["sampler"];
    expect_keys(j, {"method", "steps", "beta_start", "beta_end"}, "sampler");
    read(j, "method", cfg.sampler.method);
    read(j, "steps", cfg.sampler.steps);
    read(j, "beta_start", cfg.sampler.beta_start);
    read(j, "beta_end", cfg.sampler.beta_end);
  }
  if (doc.contains("embedding")) {
    const auto& j = doc["embedding"];
    expect_keys(j, {"text_dim", "token_dim", "fourier_frequencies", "backend",
                    "table"},
                "embedding");
    read(j, "text_dim", cfg.embedding.text_dim);
    read(j, "token_dim", cfg.embedding.token_dim);
    read(j, "fourier_frequencies", cfg.embedding.fourier_frequencies);
    read(j, "backend", cfg.embedding.backend);
    read(j, "table", cfg.embedding.table_path);
  }
  if (doc.contains("llm")) {
    const auto& j = doc["llm"];
    expect_keys(j, {"enabled", "mode", "model", "endpoint", "rules", "cache",
                    "timeout_seconds", "max_retries"},
                "llm");
    read(j, "enabled", cfg.llm.enabled);
    read(j, "mode", cfg.llm.mode);
    read(j, "model", cfg.llm.model);
    read(j, "endpoint", cfg.llm.endpoint);
    read(j, "rules", cfg.llm.rules_path);
    read(j, "cache", cfg.llm.cache_path);
    read(j, "timeout_seconds", cfg.llm.timeout_seconds);
    read(j, "max_retries", cfg.llm.max_retries);
  }
  if (doc.contains("latent")) {
    const auto& j = doc["latent"];
    expect_keys(j, {"height", "width", "blocks"}, "latent");
    read(j, "height", cfg.latent.height);
    read(j, "width", cfg.latent.width);
    read(j, "blocks", cfg.latent.blocks);
  }

  cfg.validate();
  return cfg;
}

Config load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string serialize_config(const Config& cfg) {
  json doc;
  doc["seed"] = cfg.seed;
  doc["iea"] = {{"delta", cfg.iea.delta},
                {"w", cfg.iea.w},
                {"s1", cfg.iea.s1},
                {"s2", cfg.iea.s2},
                {"gamma", cfg.iea.gamma}};
  doc["ecn"] = {{"temp", cfg.ecn.temp},
                {"kernels", cfg.ecn.kernel_sizes},
                {"enabled", cfg.ecn.enabled}};
  doc["offsets"] = {{"global", cfg.offsets.offsets.global_offsets},
                    {"local", cfg.offsets.offsets.local_offsets},
                    {"k", cfg.offsets.k}};
  doc["sampler"] = {{"method", cfg.sampler.method},
                    {"steps", cfg.sampler.steps},
                    {"beta_start", cfg.sampler.beta_start},
                    {"beta_end", cfg.sampler.beta_end}};
  doc["embedding"] = {{"text_dim", cfg.embedding.text_dim},
                      {"token_dim", cfg.embedding.token_dim},
                      {"fourier_frequencies", cfg.embedding.fourier_frequencies},
                      {"backend", cfg.embedding.backend},
                      {"table", cfg.embedding.table_path}};
  doc["llm"] = {{"enabled", cfg.llm.enabled},
                {"mode", cfg.llm.mode},
                {"model", cfg.llm.model},
                {"endpoint", cfg.llm.endpoint},
                {"rules", cfg.llm.rules_path},
                {"cache", cfg.llm.cache_path},
                {"timeout_seconds", cfg.llm.timeout_seconds},
                {"max_retries", cfg.llm.max_retries}};
  doc["latent"] = {{"height", cfg.latent.height},
                   {"width", cfg.latent.width},
                   {"blocks", cfg.latent.blocks}};
  return doc.dump(2) + "\n";
}

}  // namespace ceidm
