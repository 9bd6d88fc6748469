#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "ceidm/action_offset.hpp"
#include "ceidm/ecn.hpp"
#include "ceidm/iea.hpp"

namespace ceidm {

struct SamplerConfig {
  std::string method = "plms";  // "plms" | "ddim"
  int steps = 10;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
};

struct EmbeddingConfig {
  Index text_dim = 64;
  Index token_dim = 64;
  int fourier_frequencies = 8;
  std::string backend = "surrogate";  // "surrogate" | "table"
  std::string table_path;
};

struct OffsetsConfig {
  OffsetConfig offsets;
  int k = 2;  // clusters, clamped to the per-scene action count
};

struct LlmConfig {
  bool enabled = false;
  std::string mode = "mock";  // "mock" | "http"
  std::string model = "qwen-turbo";
  std::string endpoint;
  std::string rules_path;  // mock rule fixture; builtin rules when empty
  std::string cache_path;
  double timeout_seconds = 30.0;
  int max_retries = 2;
};

struct LatentConfig {
  int height = 8;
  int width = 8;
  int blocks = 2;
};

struct Config {
  std::uint64_t seed = 489;
  IEAConfig iea;
  ECNConfig ecn;
  OffsetsConfig offsets;
  SamplerConfig sampler;
  EmbeddingConfig embedding;
  LlmConfig llm;
  LatentConfig latent;

  void validate() const;
};

// Strict loader: unknown keys anywhere are rejected; every section is
// validated against its module invariants.
Config parse_config(const std::string& bytes);
Config load_config_file(const std::filesystem::path& path);
std::string serialize_config(const Config& config);

}  // namespace ceidm
