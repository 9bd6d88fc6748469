#include "ceidm/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ceidm/config.hpp"
#include "ceidm/errors.hpp"
#include "ceidm/gradcheck.hpp"
#include "ceidm/implicit_mining.hpp"
#include "ceidm/metrics.hpp"
#include "ceidm/pipeline.hpp"
#include "ceidm/tensor_io.hpp"

namespace ceidm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
  std::string config_path;
  std::optional<std::int64_t> seed;
  int jobs = 1;
  bool mock_llm = false;
  std::string out_dir = "out";
};

Config effective_config(const CommonOpts& opts) {
  Config cfg;
  if (!opts.config_path.empty()) cfg = load_config_file(opts.config_path);
  if (opts.seed) cfg.seed = static_cast<std::uint64_t>(*opts.seed);
  if (opts.mock_llm) {
    cfg.llm.mode = "mock";
    cfg.llm.enabled = true;
  }
  cfg.validate();
  return cfg;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spit(const fs::path& path, const std::string& bytes) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write: " + path.string());
  out << bytes;
}

LlmClient make_client(const Config& cfg) {
  LlmOptions opts;
  opts.mode = cfg.llm.mode == "http" ? LlmOptions::Mode::http
                                     : LlmOptions::Mode::mock;
  opts.model = cfg.llm.model;
  opts.endpoint = cfg.llm.endpoint;
  opts.timeout_seconds = cfg.llm.timeout_seconds;
  opts.max_retries = cfg.llm.max_retries;
  if (!cfg.llm.cache_path.empty()) opts.cache_path = cfg.llm.cache_path;
  MockRules rules = cfg.llm.rules_path.empty()
                        ? MockRules::builtin()
                        : MockRules::from_json(slurp(cfg.llm.rules_path));
  return LlmClient(std::move(opts), std::move(rules));
}

// Runs fn(i) for i in [0, count) on up to `jobs` threads; the first exception
// wins and is rethrown on the calling thread.
void parallel_for(int count, int jobs, const std::function<void(int)>& fn) {
  jobs = std::max(1, std::min(jobs, count));
  if (jobs == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::mutex mu;
  int next = 0;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (;;) {
      int i;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (first_error || next >= count) return;
        i = next++;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

int cmd_mine(const CommonOpts& opts, const std::string& scenes_path) {
  const Config cfg = effective_config(opts);
  auto scenes = parse_scene_file(slurp(scenes_path));
  LlmClient client = make_client(cfg);
  parallel_for(static_cast<int>(scenes.size()), opts.jobs, [&](int i) {
    scenes[static_cast<size_t>(i)].implicit_triplets =
        mine_implicit(client, scenes[static_cast<size_t>(i)].prompt);
  });
  const fs::path out = fs::path(opts.out_dir) / "augmented_scenes.json";
  spit(out, export_augmented(scenes));
  std::cout << out.string() << "\n";
  return 0;
}

int cmd_offset(const CommonOpts& opts, const std::string& scenes_path) {
  const Config cfg = effective_config(opts);
  const auto scenes = parse_scene_file(slurp(scenes_path));
  const ModelParams params = ModelParams::init(cfg, cfg.seed);

  json report;
  report["scenes"] = json::array();
  for (const auto& scene : scenes) {
    const Index n = static_cast<Index>(scene.instances.size());
    Mat actions(n, params.stack.text_dim);
    for (Index i = 0; i < n; ++i)
      actions.row(i) = params.stack.embedder
                           .embed(scene.instances[static_cast<size_t>(i)]
                                      .action_phrase)
                           .transpose();
    const int k = std::min<int>(cfg.offsets.k, static_cast<int>(n));
    const ActionCluster cluster = kmeans(actions, k, cfg.seed);

    json sj;
    sj["prompt"] = scene.prompt;
    sj["k"] = k;
    sj["inertia"] = cluster.inertia;
    sj["iterations"] = cluster.iterations;
    sj["assignments"] = cluster.assignments;
    sj["groups"] = json::array();
    for (Index i = 0; i < n; ++i) {
      const auto& inst = scene.instances[static_cast<size_t>(i)];
      const InteractionTokens toks = params.stack.embed_instance(inst);
      const OffsetGroup group = build_offset_group(
          toks, actions.row(i).transpose(), cluster, static_cast<int>(i),
          cfg.offsets.offsets, params.stack, inst);
      json gj;
      gj["action"] = inst.action_phrase;
      gj["cluster"] = cluster.assignments[static_cast<size_t>(i)];
      gj["entries"] = group.entries.size();
      gj["m"] = group.m;
      gj["skipped"] = group.skipped;
      sj["groups"].push_back(std::move(gj));
    }
    report["scenes"].push_back(std::move(sj));
  }
  const fs::path out = fs::path(opts.out_dir) / "offset_report.json";
  spit(out, report.dump(2) + "\n");
  std::cout << out.string() << "\n";
  return 0;
}

int cmd_generate(const CommonOpts& opts, const std::string& scenes_path) {
  const Config cfg = effective_config(opts);
  const auto scenes = parse_scene_file(slurp(scenes_path));
  const ModelParams params = ModelParams::init(cfg, cfg.seed);
  LlmClient client = make_client(cfg);

  std::vector<fs::path> dirs(scenes.size());
  parallel_for(static_cast<int>(scenes.size()), opts.jobs, [&](int i) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%03d", i);
    const fs::path dir = fs::path(opts.out_dir) / name;
    fs::create_directories(dir);
    PromptScene scene = scenes[static_cast<size_t>(i)];
    if (opts.seed) scene.seed = *opts.seed;  // flag overrides the file seed
    generate_scene(scene, cfg, params, dir, &client);
    dirs[static_cast<size_t>(i)] = dir;
  });
  for (const auto& dir : dirs) std::cout << dir.string() << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& metric,
             const std::string& path_a, const std::string& path_b) {
  const Mat a = read_feature_matrix(path_a);
  const Mat b = read_feature_matrix(path_b);
  json report;
  if (metric == "fid") {
    report["fid"] = fid(gaussian_stats(a), gaussian_stats(b));
  } else {
    const MMDEstimate est = kid(a, b);
    report["kid"] = {{"value", est.value}, {"m", est.m}, {"n", est.n}};
  }
  const std::string text = report.dump(2) + "\n";
  spit(fs::path(opts.out_dir) / "report.json", text);
  std::cout << text;
  return 0;
}

int cmd_gradcheck(const CommonOpts& opts) {
  const Config cfg = effective_config(opts);
  const auto cases = run_gradient_suite(cfg.seed);
  for (const auto& c : cases)
    std::printf("%s %-28s rel_err=%.3e tol=%.0e\n",
                c.passed() ? "PASS" : "FAIL", c.name.c_str(), c.rel_err, c.tol);
  if (!gradient_suite_passed(cases))
    throw NumericError("gradient suite failed");
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"CEIDM conditioning stack: interaction-controlled toy "
               "latent-diffusion runs and metrics"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  CommonOpts opts;
  app.add_option("--config", opts.config_path, "JSON config file");
  app.add_option("--seed", opts.seed, "override the config/scene seed");
  app.add_option("--jobs", opts.jobs, "parallel scenes")->check(CLI::PositiveNumber);
  app.add_flag("--mock-llm", opts.mock_llm, "force the deterministic mock LLM");
  app.add_option("--out", opts.out_dir, "output directory (default: out)");

  std::string scenes_path, metric, feat_a, feat_b;

  auto* mine = app.add_subcommand("mine", "fill implicit triplets via the LLM");
  mine->add_option("scenes", scenes_path, "scene JSON file")->required();

  auto* offset = app.add_subcommand("offset", "dump cluster/offset report");
  offset->add_option("scenes", scenes_path, "scene JSON file")->required();

  auto* generate = app.add_subcommand("generate", "run the toy diffusion pipeline");
  generate->add_option("scenes", scenes_path, "scene JSON file")->required();

  auto* eval = app.add_subcommand("eval", "compute fid or kid over feature files");
  eval->add_option("metric", metric, "fid | kid")
      ->required()
      ->check(CLI::IsMember({"fid", "kid"}));
  eval->add_option("a", feat_a, "feature file A (.f64 with sidecar)")->required();
  eval->add_option("b", feat_b, "feature file B (.f64 with sidecar)")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      app.exit(e);
      return 0;
    }
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (mine->parsed()) return cmd_mine(opts, scenes_path);
    if (offset->parsed()) return cmd_offset(opts, scenes_path);
    if (generate->parsed()) return cmd_generate(opts, scenes_path);
    if (eval->parsed()) return cmd_eval(opts, metric, feat_a, feat_b);
    if (gradcheck->parsed()) return cmd_gradcheck(opts);
    std::cerr << "usage error: no subcommand\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace ceidm::cli
