#pragma once

#include <deque>
#include <filesystem>
#include <optional>

#include "ceidm/config.hpp"
#include "ceidm/dataset.hpp"
#include "ceidm/ecn.hpp"
#include "ceidm/iea.hpp"

namespace ceidm {

// Linear beta schedule with derived alpha cumulative products. alpha_bar_at
// extends the discrete grid continuously (linear interpolation) with
// alpha_bar(-1) == 1, which the pseudo Runge-Kutta warm-up needs for
// half-step evaluations.
struct NoiseSchedule {
  int total_steps = 0;
  Vec betas, alphas, alpha_bars;

  static NoiseSchedule linear(int steps, double beta_start = 1e-4,
                              double beta_end = 2e-2);

  double alpha_bar_at(double t) const;
};

// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
FeatureMap forward_diffuse(const FeatureMap& x0, const FeatureMap& eps,
                           double t, const NoiseSchedule& schedule);

// Deterministic DDIM (eta = 0) transfer from timestep t to t_next given a
// noise estimate.
FeatureMap ddim_transfer(const FeatureMap& x, double t, double t_next,
                         const FeatureMap& eps, const NoiseSchedule& schedule);

struct StepRecord {
  int step = 0;
  double timestep = 0.0;
  double iea_strength = 0.0;
  Index explicit_tokens = 0;
  Index implicit_tokens = 0;
  Index offset_tokens = 0;
  bool ecn_active = false;
};

struct DenoiseState {
  FeatureMap latent;
  int step_index = 0;
  std::deque<Mat> eps_history;  // at most 4 entries, newest last
  std::vector<StepRecord> trace;
};

struct BlockParams {
  AttentionParams self_attn;
  AttentionParams iea_attn;
  ECNParams ecn;
  AttentionParams cross_attn;
  Mlp feed_forward;

  static BlockParams init(Index channels, Index text_dim, const ECNConfig& ecn_cfg,
                          Rng& rng);
  static BlockParams zeros(Index channels, Index text_dim,
                           const ECNConfig& ecn_cfg);
};

struct DenoiserParams {
  LinearLayer time_proj;    // sinusoidal time features -> channels
  LinearLayer prompt_proj;  // text dim -> channels
  std::vector<BlockParams> blocks;
  LinearLayer head;  // channels -> channels, applied per token

  static DenoiserParams init(const Config& cfg, std::uint64_t root_seed);
  static DenoiserParams zeros(const Config& cfg);
};

// Everything seed-derived that the run needs: token machinery plus denoiser.
struct ModelParams {
  EmbeddingStack stack;
  TripletProjections triplet_proj;
  AttentionParams triplet_attn;
  DenoiserParams denoiser;

  static ModelParams init(const Config& cfg, std::uint64_t root_seed);
};

struct Conditioning {
  Mat prompt_tokens;  // one projected token per prompt word
  std::vector<InteractionTokens> explicit_tokens;
  std::vector<ImplicitTokens> implicit_tokens;
  std::vector<OffsetGroup> offset_groups;
  Vec subject_semantic;  // mean raw embedding over instance subjects
  Vec object_semantic;

  Index explicit_token_rows() const;
  Index implicit_token_rows() const;
  Index offset_token_rows() const;
};

class LlmClient;

// Embeds the scene: explicit tokens per instance, implicit triplets (mined
// through `miner` when the config enables it and the scene carries none),
// action clustering and offset groups, prompt tokens and ECN entity
// semantics.
Conditioning build_conditioning(const PromptScene& scene, const Config& cfg,
                                const ModelParams& params, LlmClient* miner);

// One transformer block: self-attention, IEA, ECN with cross-attention over
// the prompt tokens, feed-forward; residuals throughout. With the ECN
// disabled the cross-attention segment is skipped entirely.
FeatureMap block_forward(const FeatureMap& x, const Conditioning& cond,
                         const BlockParams& params, const Config& cfg,
                         int step_index, int total_steps,
                         StepRecord* record = nullptr);

// Stacked blocks plus a linear head; deterministic in all inputs.
FeatureMap predict_eps(const FeatureMap& latent, double timestep,
                       const Conditioning& cond, const DenoiserParams& params,
                       const Config& cfg, int step_index, int total_steps,
                       StepRecord* record = nullptr);

using EpsFn = std::function<FeatureMap(const FeatureMap&, double)>;

struct SampleResult {
  FeatureMap latent;
  std::vector<StepRecord> trace;
};

// PLMS: pseudo Runge-Kutta warm-up for the first three steps, then the
// 4th-order Adams-Bashforth combination (55, -59, 37, -9)/24 of the noise
// history. Requires steps >= 4; DDIM has no history and runs any step count.
SampleResult plms_sample(const Conditioning& cond, const DenoiserParams& params,
                         const Config& cfg, std::uint64_t noise_seed);
SampleResult ddim_sample(const Conditioning& cond, const DenoiserParams& params,
                         const Config& cfg, std::uint64_t noise_seed);

// Sampler-method dispatch on cfg.sampler.method.
SampleResult sample(const Conditioning& cond, const DenoiserParams& params,
                    const Config& cfg, std::uint64_t noise_seed);

// Lower-level variants driven by an arbitrary noise predictor; the samplers
// above wrap predict_eps. Used directly by the inversion oracles in tests.
FeatureMap plms_steps(FeatureMap x, const EpsFn& eps_fn,
                      const NoiseSchedule& schedule);
FeatureMap ddim_steps(FeatureMap x, const EpsFn& eps_fn,
                      const NoiseSchedule& schedule);

struct GenerateResult {
  std::filesystem::path bundle_dir;
  SampleResult sample;
};

// Full per-scene run: conditioning, sampling, artifact bundle (latent.f64 +
// sidecar, trace.json, masks/*.f64).
GenerateResult generate_scene(const PromptScene& scene, const Config& cfg,
                              const ModelParams& params,
                              const std::filesystem::path& bundle_dir,
                              LlmClient* miner);

}  // namespace ceidm
