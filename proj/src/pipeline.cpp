#include "ceidm/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ceidm/errors.hpp"
#include "ceidm/implicit_mining.hpp"
#include "ceidm/tensor_io.hpp"

namespace ceidm {

namespace fs = std::filesystem;
using nlohmann::json;

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start,
                                    double beta_end) {
  if (steps < 1) throw ValidationError("noise schedule: steps must be >= 1");
  if (!(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0))
    throw ValidationError("noise schedule: need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.total_steps = steps;
  s.betas.resize(steps);
  s.alphas.resize(steps);
  s.alpha_bars.resize(steps);
  double prod = 1.0;
  for (int t = 0; t < steps; ++t) {
    const double frac =
        steps == 1 ? 0.0 : static_cast<double>(t) / (steps - 1);
    s.betas[t] = beta_start + (beta_end - beta_start) * frac;
    s.alphas[t] = 1.0 - s.betas[t];
    prod *= s.alphas[t];
    s.alpha_bars[t] = prod;
  }
  return s;
}

double NoiseSchedule::alpha_bar_at(double t) const {
  // Grid value at integer t, alpha_bar(-1) == 1; linear between knots.
  if (t <= -1.0) return 1.0;
  const double t_max = static_cast<double>(total_steps - 1);
  if (t >= t_max) return alpha_bars[total_steps - 1];
  const double lo = std::floor(t);
  const double frac = t - lo;
  auto knot = [&](double u) {
    return u < 0.0 ? 1.0 : alpha_bars[static_cast<int>(u)];
  };
  return (1.0 - frac) * knot(lo) + frac * knot(lo + 1.0);
}

FeatureMap forward_diffuse(const FeatureMap& x0, const FeatureMap& eps,
                           double t, const NoiseSchedule& schedule) {
  const double ab = schedule.alpha_bar_at(t);
  FeatureMap out = x0;
  out.data = std::sqrt(ab) * x0.data + std::sqrt(1.0 - ab) * eps.data;
  return out;
}

FeatureMap ddim_transfer(const FeatureMap& x, double t, double t_next,
                         const FeatureMap& eps, const NoiseSchedule& schedule) {
  const double ab_t = schedule.alpha_bar_at(t);
  const double ab_n = schedule.alpha_bar_at(t_next);
  FeatureMap out = x;
  // Predicted clean signal, then re-noised to the target level.
  const Mat x0 = (x.data - std::sqrt(1.0 - ab_t) * eps.data) / std::sqrt(ab_t);
  out.data = std::sqrt(ab_n) * x0 + std::sqrt(1.0 - ab_n) * eps.data;
  return out;
}

BlockParams BlockParams::init(Index channels, Index text_dim,
                              const ECNConfig& ecn_cfg, Rng& rng) {
  BlockParams p;
  p.self_attn = AttentionParams::init(channels, rng);
  p.iea_attn = AttentionParams::init(channels, rng);
  p.ecn = ECNParams::init(channels, text_dim, ecn_cfg, rng);
  p.cross_attn = AttentionParams::init(channels, rng);
  p.feed_forward = Mlp::init(channels, channels, channels, rng);
  return p;
}

BlockParams BlockParams::zeros(Index channels, Index text_dim,
                               const ECNConfig& ecn_cfg) {
  BlockParams p;
  p.self_attn = AttentionParams::zeros(channels);
  p.iea_attn = AttentionParams::zeros(channels);
  p.ecn = ECNParams::zeros(channels, text_dim, ecn_cfg);
  p.cross_attn = AttentionParams::zeros(channels);
  p.feed_forward = Mlp::zeros(channels, channels, channels);
  return p;
}

DenoiserParams DenoiserParams::init(const Config& cfg, std::uint64_t root_seed) {
  const Index d = cfg.embedding.token_dim;
  Rng rng = substream(root_seed, "init/denoiser");
  DenoiserParams p;
  p.time_proj = LinearLayer::init(d, d, rng);
  p.prompt_proj = LinearLayer::init(d, cfg.embedding.text_dim, rng);
  for (int b = 0; b < cfg.latent.blocks; ++b)
    p.blocks.push_back(BlockParams::init(d, cfg.embedding.text_dim, cfg.ecn, rng));
  p.head = LinearLayer::init(d, d, rng);
  return p;
}

DenoiserParams DenoiserParams::zeros(const Config& cfg) {
  const Index d = cfg.embedding.token_dim;
  DenoiserParams p;
  p.time_proj = LinearLayer::zeros(d, d);
  p.prompt_proj = LinearLayer::zeros(d, cfg.embedding.text_dim);
  for (int b = 0; b < cfg.latent.blocks; ++b)
    p.blocks.push_back(BlockParams::zeros(d, cfg.embedding.text_dim, cfg.ecn));
  p.head = LinearLayer::zeros(d, d);
  return p;
}

ModelParams ModelParams::init(const Config& cfg, std::uint64_t root_seed) {
  ModelParams m;
  if (cfg.embedding.backend == "table") {
    std::ifstream in(cfg.embedding.table_path);
    if (!in)
      throw IoError("embedding table: cannot open " + cfg.embedding.table_path);
    std::ostringstream buf;
    buf << in.rdbuf();
    m.stack = EmbeddingStack::init_with_embedder(
        PhraseEmbedder::from_table_json(buf.str()), cfg.embedding.token_dim,
        cfg.embedding.fourier_frequencies, root_seed);
    if (m.stack.text_dim != cfg.embedding.text_dim)
      throw ValidationError("embedding table dim does not match config text_dim");
  } else {
    m.stack = EmbeddingStack::init(cfg.embedding.token_dim, cfg.embedding.text_dim,
                                   cfg.embedding.fourier_frequencies, root_seed);
  }
  m.triplet_proj = TripletProjections::init(cfg.embedding.token_dim,
                                            cfg.embedding.text_dim, root_seed);
  Rng attn_rng = substream(root_seed, "init/triplet_attn");
  m.triplet_attn = AttentionParams::init(cfg.embedding.token_dim, attn_rng);
  m.denoiser = DenoiserParams::init(cfg, root_seed);
  return m;
}

Index Conditioning::explicit_token_rows() const {
  return 3 * static_cast<Index>(explicit_tokens.size());
}

Index Conditioning::implicit_token_rows() const {
  return 3 * static_cast<Index>(implicit_tokens.size());
}

Index Conditioning::offset_token_rows() const {
  Index rows = 0;
  for (const auto& g : offset_groups)
    rows += 3 * static_cast<Index>(g.entries.size());
  return rows;
}

namespace {

std::vector<std::string> prompt_words(const std::string& prompt) {
  std::vector<std::string> words;
  std::istringstream in(prompt);
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

}  // namespace

Conditioning build_conditioning(const PromptScene& scene, const Config& cfg,
                                const ModelParams& params, LlmClient* miner) {
  validate_scene(scene, "scene");
  Conditioning cond;

  for (const auto& inst : scene.instances)
    cond.explicit_tokens.push_back(params.stack.embed_instance(inst));

  std::vector<Triplet> triplets;
  if (scene.implicit_triplets) {
    triplets = *scene.implicit_triplets;
  } else if (cfg.llm.enabled) {
    if (!miner)
      throw ValidationError("build_conditioning: mining enabled but no client");
    triplets = mine_implicit(*miner, scene.prompt);
  }
  for (const auto& t : triplets)
    cond.implicit_tokens.push_back(deep_embed_triplet(
        t, params.stack.embedder, params.triplet_proj, params.triplet_attn));

  // Action clustering over the scene's raw action embeddings.
  const Index n = static_cast<Index>(scene.instances.size());
  Mat actions(n, params.stack.text_dim);
  for (Index i = 0; i < n; ++i)
    actions.row(i) =
        params.stack.embedder.embed(scene.instances[i].action_phrase).transpose();
  const int k = std::min<int>(cfg.offsets.k, static_cast<int>(n));
  const ActionCluster cluster = kmeans(actions, k, cfg.seed);
  for (Index i = 0; i < n; ++i)
    cond.offset_groups.push_back(build_offset_group(
        cond.explicit_tokens[static_cast<size_t>(i)], actions.row(i).transpose(),
        cluster, static_cast<int>(i), cfg.offsets.offsets, params.stack,
        scene.instances[static_cast<size_t>(i)]));

  const auto words = prompt_words(scene.prompt);
  cond.prompt_tokens.resize(static_cast<Index>(words.size()),
                            cfg.embedding.token_dim);
  for (Index i = 0; i < cond.prompt_tokens.rows(); ++i)
    cond.prompt_tokens.row(i) =
        linear_apply(params.denoiser.prompt_proj,
                     params.stack.embedder.embed(words[static_cast<size_t>(i)]))
            .transpose();

  cond.subject_semantic = Vec::Zero(params.stack.text_dim);
  cond.object_semantic = Vec::Zero(params.stack.text_dim);
  for (const auto& inst : scene.instances) {
    cond.subject_semantic += params.stack.embedder.embed(inst.subject_phrase);
    cond.object_semantic += params.stack.embedder.embed(inst.object_phrase);
  }
  cond.subject_semantic /= static_cast<double>(n);
  cond.object_semantic /= static_cast<double>(n);
  return cond;
}

FeatureMap block_forward(const FeatureMap& x, const Conditioning& cond,
                         const BlockParams& params, const Config& cfg,
                         int step_index, int total_steps, StepRecord* record) {
  x.validate();
  FeatureMap h = x;
  h.data += self_attention(x.data, params.self_attn);

  const double strength = schedule_active(step_index, total_steps, cfg.iea);
  h.data = iea_forward(h.data, cond.explicit_tokens, cond.implicit_tokens,
                       cond.offset_groups, params.iea_attn, cfg.iea, step_index,
                       total_steps);
  if (record) {
    record->iea_strength = strength;
    record->ecn_active = cfg.ecn.enabled;
  }

  if (cfg.ecn.enabled) {
    const SoftMask subject_mask =
        entity_mask(h, cond.subject_semantic, params.ecn.mask_mlp, cfg.ecn.temp);
    const SoftMask object_mask =
        entity_mask(h, cond.object_semantic, params.ecn.mask_mlp, cfg.ecn.temp);
    const FeatureMap x_subject =
        multiscale_enhance(apply_mask(h, subject_mask), params.ecn.enhance);
    const FeatureMap x_object =
        multiscale_enhance(apply_mask(h, object_mask), params.ecn.enhance);
    const FuseResult fused = dynamic_fuse(x_subject, x_object, params.ecn);
    auto ca = [&](const FeatureMap& q) {
      return FeatureMap{q.height, q.width,
                        cross_attention(q.data, cond.prompt_tokens,
                                        params.cross_attn)};
    };
    h = ecn_combine(h, fused.map, ca);
  }

  h.data += params.feed_forward.apply_rows(h.data);
  return h;
}

namespace {

Vec time_features(double t, Index d) {
  Vec f(d);
  const Index pairs = d / 2;
  for (Index j = 0; j < pairs; ++j) {
    const double freq =
        std::exp(-std::log(10000.0) * static_cast<double>(j) /
                 std::max<Index>(1, pairs));
    f[2 * j] = std::sin(t * freq);
    f[2 * j + 1] = std::cos(t * freq);
  }
  if (d % 2 == 1) f[d - 1] = std::sin(t);
  return f;
}

}  // namespace

FeatureMap predict_eps(const FeatureMap& latent, double timestep,
                       const Conditioning& cond, const DenoiserParams& params,
                       const Config& cfg, int step_index, int total_steps,
                       StepRecord* record) {
  latent.validate();
  FeatureMap h = latent;
  const Vec temb =
      linear_apply(params.time_proj, time_features(timestep, latent.channels()));
  h.data.rowwise() += temb.transpose();
  for (const auto& block : params.blocks)
    h = block_forward(h, cond, block, cfg, step_index, total_steps, record);
  h.data = ((h.data * params.head.weight.transpose()).rowwise() +
            params.head.bias.transpose())
               .eval();
  return h;
}

namespace {

using StepHook = std::function<void(int step, double t)>;

// Shared descending-timestep loop. One iteration per sampling step; the hook
// fires before the step's model evaluations.
FeatureMap sampler_core(FeatureMap x, const EpsFn& eps_fn,
                        const NoiseSchedule& schedule, bool plms,
                        const StepHook& on_step) {
  std::deque<Mat> history;
  for (int k = 0; k < schedule.total_steps; ++k) {
    const double t = static_cast<double>(schedule.total_steps - 1 - k);
    const double t_next = t - 1.0;
    if (on_step) on_step(k, t);

    FeatureMap eps_prime = x;  // shape carrier
    if (!plms) {
      eps_prime = eps_fn(x, t);
    } else if (history.size() >= 3) {
      const FeatureMap e = eps_fn(x, t);
      history.push_back(e.data);
      const size_t h = history.size();
      eps_prime.data = (55.0 * history[h - 1] - 59.0 * history[h - 2] +
                        37.0 * history[h - 3] - 9.0 * history[h - 4]) /
                       24.0;
    } else {
      // Pseudo Runge-Kutta warm-up; the plain estimate enters the history.
      const double t_mid = 0.5 * (t + t_next);
      const FeatureMap e1 = eps_fn(x, t);
      history.push_back(e1.data);
      const FeatureMap x2 = ddim_transfer(x, t, t_mid, e1, schedule);
      const FeatureMap e2 = eps_fn(x2, t_mid);
      const FeatureMap x3 = ddim_transfer(x, t, t_mid, e2, schedule);
      const FeatureMap e3 = eps_fn(x3, t_mid);
      const FeatureMap x4 = ddim_transfer(x, t, t_next, e3, schedule);
      const FeatureMap e4 = eps_fn(x4, t_next);
      eps_prime.data = (e1.data + 2.0 * e2.data + 2.0 * e3.data + e4.data) / 6.0;
    }
    while (history.size() > 4) history.pop_front();
    x = ddim_transfer(x, t, t_next, eps_prime, schedule);
  }
  return x;
}

SampleResult run_sampler(const Conditioning& cond, const DenoiserParams& params,
                         const Config& cfg, std::uint64_t noise_seed,
                         bool plms) {
  const int steps = cfg.sampler.steps;
  const NoiseSchedule schedule =
      NoiseSchedule::linear(steps, cfg.sampler.beta_start, cfg.sampler.beta_end);

  Rng noise = substream(noise_seed, "noise");
  FeatureMap x{cfg.latent.height, cfg.latent.width,
               noise.gaussian_mat(
                   static_cast<Index>(cfg.latent.height) * cfg.latent.width,
                   cfg.embedding.token_dim)};

  SampleResult result;
  int step_index = 0;
  auto eps_fn = [&](const FeatureMap& xi, double ti) {
    return predict_eps(xi, ti, cond, params, cfg, step_index, steps,
                       &result.trace.back());
  };
  auto on_step = [&](int k, double t) {
    step_index = k;
    StepRecord record;
    record.step = k;
    record.timestep = t;
    record.explicit_tokens = cond.explicit_token_rows();
    record.implicit_tokens = cond.implicit_token_rows();
    record.offset_tokens = cond.offset_token_rows();
    result.trace.push_back(record);
  };
  result.latent = sampler_core(std::move(x), eps_fn, schedule, plms, on_step);
  return result;
}

}  // namespace

FeatureMap plms_steps(FeatureMap x, const EpsFn& eps_fn,
                      const NoiseSchedule& schedule) {
  if (schedule.total_steps < 4)
    throw ValidationError(
        "plms: needs at least 4 steps for the multistep order; use ddim");
  return sampler_core(std::move(x), eps_fn, schedule, true, {});
}

FeatureMap ddim_steps(FeatureMap x, const EpsFn& eps_fn,
                      const NoiseSchedule& schedule) {
  return sampler_core(std::move(x), eps_fn, schedule, false, {});
}

SampleResult plms_sample(const Conditioning& cond, const DenoiserParams& params,
                         const Config& cfg, std::uint64_t noise_seed) {
  if (cfg.sampler.steps < 4)
    throw ValidationError(
        "plms: needs at least 4 steps for the multistep order; use ddim");
  return run_sampler(cond, params, cfg, noise_seed, true);
}

SampleResult ddim_sample(const Conditioning& cond, const DenoiserParams& params,
                         const Config& cfg, std::uint64_t noise_seed) {
  return run_sampler(cond, params, cfg, noise_seed, false);
}

SampleResult sample(const Conditioning& cond, const DenoiserParams& params,
                    const Config& cfg, std::uint64_t noise_seed) {
  return cfg.sampler.method == "ddim"
             ? ddim_sample(cond, params, cfg, noise_seed)
             : plms_sample(cond, params, cfg, noise_seed);
}

namespace {

// Rethrows preserving the concrete error type so exit-code mapping survives
// the stage tag.
[[noreturn]] void throw_with_stage(const std::string& stage, const Error& e) {
  const std::string msg = "[" + stage + "] " + e.what();
  if (dynamic_cast<const FormatError*>(&e)) throw FormatError(msg);
  if (dynamic_cast<const ValidationError*>(&e)) throw ValidationError(msg);
  if (dynamic_cast<const IoError*>(&e)) throw IoError(msg);
  if (dynamic_cast<const NumericError*>(&e)) throw NumericError(msg);
  throw Error(msg);
}

json trace_to_json(const SampleResult& result, const Config& cfg) {
  json steps = json::array();
  for (const auto& r : result.trace) {
    steps.push_back({{"step", r.step},
                     {"timestep", r.timestep},
                     {"iea_strength", r.iea_strength},
                     {"explicit_tokens", r.explicit_tokens},
                     {"implicit_tokens", r.implicit_tokens},
                     {"offset_tokens", r.offset_tokens},
                     {"ecn", r.ecn_active}});
  }
  return {{"sampler", cfg.sampler.method},
          {"total_steps", cfg.sampler.steps},
          {"steps", steps}};
}

void write_mask(const fs::path& path, const SoftMask& mask) {
  Vec data = mask.values;
  write_tensor(path, Tensor({mask.height, mask.width}, std::move(data)));
}

}  // namespace

GenerateResult generate_scene(const PromptScene& scene, const Config& cfg,
                              const ModelParams& params,
                              const fs::path& bundle_dir, LlmClient* miner) {
  Conditioning cond;
  try {
    cond = build_conditioning(scene, cfg, params, miner);
  } catch (const Error& e) {
    throw_with_stage("conditioning", e);
  }

  const std::uint64_t noise_seed =
      static_cast<std::uint64_t>(scene.effective_seed(
          static_cast<std::int64_t>(cfg.seed)));

  GenerateResult out;
  try {
    out.sample = sample(cond, params.denoiser, cfg, noise_seed);
  } catch (const Error& e) {
    throw_with_stage("sampling", e);
  }

  try {
    fs::create_directories(bundle_dir / "masks");
    const FeatureMap& latent = out.sample.latent;
    Vec flat(latent.data.size());
    Index idx = 0;
    for (Index p = 0; p < latent.data.rows(); ++p)
      for (Index c = 0; c < latent.data.cols(); ++c)
        flat[idx++] = latent.data(p, c);
    write_tensor(bundle_dir / "latent.f64",
                 Tensor({latent.height, latent.width, latent.channels()},
                        std::move(flat)));

    std::ofstream trace_out(bundle_dir / "trace.json", std::ios::trunc);
    if (!trace_out)
      throw IoError("cannot write " + (bundle_dir / "trace.json").string());
    trace_out << trace_to_json(out.sample, cfg).dump(2) << "\n";

    // Entity masks on the final latent, first block's mask MLP.
    const auto& mask_mlp = params.denoiser.blocks.front().ecn.mask_mlp;
    write_mask(bundle_dir / "masks" / "subject.f64",
               entity_mask(latent, cond.subject_semantic, mask_mlp, cfg.ecn.temp));
    write_mask(bundle_dir / "masks" / "object.f64",
               entity_mask(latent, cond.object_semantic, mask_mlp, cfg.ecn.temp));
  } catch (const Error& e) {
    throw_with_stage("bundle", e);
  }
  out.bundle_dir = bundle_dir;
  return out;
}

}  // namespace ceidm
