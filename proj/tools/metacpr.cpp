// metacpr: train, evaluate, ablate, export embeddings and plot.
//
// Exit codes: 0 success, 1 internal error, 2 configuration error,
// 3 evaluation protocol error, 4 numeric abort.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "metacpr/ablation.hpp"
#include "metacpr/errors.hpp"
#include "metacpr/evaluation.hpp"
#include "metacpr/plot.hpp"
#include "metacpr/run.hpp"

namespace fs = std::filesystem;
using namespace metacpr;

namespace {

constexpr const char* kOutEnv = "METACPR_OUT";

fs::path output_root(const std::string& flag, const RunConfig* cfg) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kOutEnv); env && *env) return env;
  if (cfg && !cfg->out_dir.empty()) return cfg->out_dir;
  return "runs";
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (int v : parse_counts(text, "--seed")) {
    if (v < 0) throw ConfigError("--seed: seeds must be non-negative");
    out.push_back(static_cast<std::uint64_t>(v));
  }
  return out;
}

struct RunFiles {
  RunConfig config;
  std::uint64_t seed = 0;
  AgentParams params;
};

RunFiles open_run(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("run directory '" + dir.string() + "' does not exist");
  const Checkpoint c = load_checkpoint(latest_checkpoint(dir));
  return {c.config, c.seed, c.params};
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
}

// ---- subcommands ----------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string seed;
  std::string variant;
  std::string out;
  bool resume = false;
  int max_updates = -1;
};

int cmd_train(const TrainArgs& a) {
  const RunConfig base = load_run_config(a.config);
  const Variant v = variant_from_string(a.variant.empty() ? base.variant : a.variant);
  const std::vector<std::uint64_t> seeds = a.seed.empty() ? base.seeds : parse_seeds(a.seed);
  const fs::path root = output_root(a.out, &base);
  for (RunConfig cfg : build_variants(v, base)) {
    std::string label(to_string(v));
    if (v == Variant::oracle_single) label += "_n" + std::to_string(cfg.train_counts.front());
    for (std::uint64_t seed : seeds) {
      cfg.seeds = {seed};
      TrainRunOptions opts;
      opts.dir = run_dir(root, label, seed);
      opts.seed = seed;
      opts.resume = a.resume;
      opts.stop_after = a.max_updates;
      const TrainRunResult r = run_training(cfg, opts);
      std::cout << r.dir.string() << "\tupdates=" << r.updates << "\tenv_steps=" << r.env_steps
                << "\tconfig_hash=" << r.config_hash << (r.completed ? "" : "\tstopped") << "\n";
    }
  }
  return 0;
}

struct EvalArgs {
  std::string run;
  std::string adapt;
  int episodes = -1;  // -1: config default
  bool greedy = false;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_eval(const EvalArgs& a) {
  const RunFiles run = open_run(a.run);
  const std::vector<int> counts = a.adapt.empty() ? run.config.adapt_counts : parse_counts(a.adapt, "--adapt");
  EvalOptions eo;
  eo.episodes = a.episodes >= 0 ? a.episodes : run.config.eval.episodes;
  eo.greedy = a.greedy || run.config.eval.greedy;
  eo.discount = run.config.eval.discount;
  eo.seed = a.seed;
  const EvalReport r = evaluate_policy(run.config, run.params, counts, eo, run.config.protocol, run.seed);
  const fs::path out = a.out.empty() ? fs::path(a.run) / "eval.jsonl" : fs::path(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_eval_reports(out, std::span(&r, 1));
  for (const auto& c : r.cells) {
    std::cout << "n=" << c.n << "\tmean=" << c.mean() << "\tstd_error=" << c.std_error()
              << "\tepisodes=" << c.returns.size() << "\n";
  }
  std::cout << out.string() << "\n";
  return 0;
}

struct AblateArgs {
  std::string config;
  std::string variants;
  std::string seed;
  int episodes = -1;  // -1: config default
  bool greedy = false;
  std::string out;
};

int cmd_ablate(const AblateArgs& a) {
  const RunConfig base = load_run_config(a.config);
  AblationOptions opts;
  opts.root = output_root(a.out, &base);
  if (a.variants.empty() || a.variants == "all") {
    opts.variants = all_variants();
  } else {
    std::stringstream ss(a.variants);
    std::string item;
    while (std::getline(ss, item, ',')) opts.variants.push_back(variant_from_string(item));
  }
  opts.seeds = a.seed.empty() ? base.seeds : parse_seeds(a.seed);
  opts.eval.episodes = a.episodes >= 0 ? a.episodes : base.eval.episodes;
  opts.eval.greedy = a.greedy || base.eval.greedy;
  opts.eval.discount = base.eval.discount;
  opts.log = [](const std::string& s) { std::cerr << s << "\n"; };
  const AblationResult r = run_ablation(base, opts);
  std::cout << r.comparison.table();
  std::cout << opts.root.string() << "\n";
  return 0;
}

struct EmbedArgs {
  std::string run;
  std::string counts;
  int episodes = -1;  // -1: config default
  bool greedy = false;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_embed(const EmbedArgs& a) {
  const RunFiles run = open_run(a.run);
  std::vector<int> counts;
  if (a.counts.empty()) {
    counts = run.config.train_counts;
    counts.insert(counts.end(), run.config.adapt_counts.begin(), run.config.adapt_counts.end());
  } else {
    counts = parse_counts(a.counts, "--adapt");
  }
  const int episodes = a.episodes >= 0 ? a.episodes : run.config.eval.episodes;
  if (episodes < 1) throw ProtocolError("--episodes must be >= 1");
  const AgentModel model(run.config.model, run.config.env);
  Rng master(a.seed);
  RolloutOptions ro;
  ro.greedy = a.greedy;
  std::vector<Episode> all;
  for (int n : counts) {
    const TaskSpec task{run.config.env, n, run.config.resolved_episode_limit(), master.next_u64()};
    task.validate();
    auto env = make_env(task, run.config.env_params);
    Rng rng = master.split();
    for (int e = 0; e < episodes; ++e) all.push_back(run_episode(model, run.params, *env, rng, ro));
  }
  const fs::path out = a.out.empty() ? fs::path(a.run) / "embeddings.csv" : fs::path(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  export_trajectory_embeddings(all, model.space(), run.config.variant, out, config_hash(run.config));
  std::cout << out.string() << "\trows=" << all.size() << "\n";
  return 0;
}

struct PlotArgs {
  std::vector<std::string> inputs;
  std::string out;
};

int cmd_plot(const PlotArgs& a) {
  if (a.inputs.empty()) throw ConfigError("plot: no metrics logs given");
  std::vector<std::vector<Json>> logs;
  std::string hash;
  for (const auto& in : a.inputs) {
    const fs::path p = fs::is_directory(in) ? fs::path(in) / "metrics.jsonl" : fs::path(in);
    logs.push_back(read_jsonl(p));
    if (!logs.back().empty()) {
      const std::string h = logs.back().front().value("config_hash", "");
      hash = hash.empty() ? h : (hash == h ? hash : hash + "," + h);
    }
  }
  const fs::path dir = a.out.empty() ? fs::path(".") : fs::path(a.out);
  fs::create_directories(dir);
  const fs::path out = dir / "learning_curves.svg";
  write_file(out, line_plot_svg(learning_curves(logs),
                                {"Training return (mean over training tasks)", "update", "mean per-agent return", hash}));
  std::cout << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-agent communication with meta-learned context recognition"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train one variant for each seed");
  train->add_option("--config", ta.config, "Run config (JSON)")->required();
  train->add_option("--seed", ta.seed, "Seed or comma-separated seeds (default: config seeds)");
  train->add_option("--variant", ta.variant, "Variant name (default: config variant)");
  train->add_option("--out", ta.out, std::string("Output root (default: $") + kOutEnv + ", config out_dir, ./runs)");
  train->add_flag("--resume", ta.resume, "Continue from the newest checkpoint");
  train->add_option("--max-updates", ta.max_updates, "Stop after this many updates without finishing");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a trained run on unseen agent counts");
  eval->add_option("run", ea.run, "Run directory")->required();
  eval->add_option("--adapt", ea.adapt, "Comma-separated agent counts (default: config adapt counts)");
  eval->add_option("--episodes", ea.episodes, "Episodes per agent count (default: config)");
  eval->add_flag("--greedy", ea.greedy, "Act greedily instead of sampling");
  eval->add_option("--seed", ea.seed, "Evaluation seed");
  eval->add_option("--out", ea.out, "Report path (default: <run>/eval.jsonl)");

  AblateArgs aa;
  auto* ablate = app.add_subcommand("ablate", "Train, evaluate and compare several variants");
  ablate->add_option("--config", aa.config, "Base run config (JSON)")->required();
  ablate->add_option("--variant", aa.variants, "Comma-separated variants or 'all'");
  ablate->add_option("--seed", aa.seed, "Comma-separated seeds (default: config seeds)");
  ablate->add_option("--episodes", aa.episodes, "Evaluation episodes per agent count");
  ablate->add_flag("--greedy", aa.greedy, "Evaluate greedily");
  ablate->add_option("--out", aa.out, "Output root");

  EmbedArgs ma;
  auto* embed = app.add_subcommand("embed", "Export flattened trajectories for 2-D projection");
  embed->add_option("run", ma.run, "Run directory")->required();
  embed->add_option("--adapt", ma.counts, "Comma-separated agent counts (default: train and adapt counts)");
  embed->add_option("--episodes", ma.episodes, "Episodes per agent count");
  embed->add_flag("--greedy", ma.greedy, "Act greedily");
  embed->add_option("--seed", ma.seed, "Rollout seed");
  embed->add_option("--out", ma.out, "CSV path (default: <run>/embeddings.csv)");

  PlotArgs pa;
  auto* plot = app.add_subcommand("plot", "Plot learning curves from metrics logs");
  plot->add_option("inputs", pa.inputs, "metrics.jsonl files or run directories")->required();
  plot->add_option("--out", pa.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train) return cmd_train(ta);
    if (*eval) return cmd_eval(ea);
    if (*ablate) return cmd_ablate(aa);
    if (*embed) return cmd_embed(ma);
    if (*plot) return cmd_plot(pa);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ProtocolError& e) {
    std::cerr << "protocol error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
