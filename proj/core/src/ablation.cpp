#include "metacpr/ablation.hpp"

#include <cmath>
#include <fstream>

#include "metacpr/errors.hpp"
#include "metacpr/plot.hpp"

namespace fs = std::filesystem;

namespace metacpr {

AgentParams train_or_load(const RunConfig& cfg, const fs::path& dir, std::uint64_t seed) {
  TrainRunOptions opts;
  opts.dir = dir;
  opts.seed = seed;
  opts.resume = fs::exists(dir / "metrics.jsonl");
  run_training(cfg, opts);
  Checkpoint c = load_checkpoint(latest_checkpoint(dir));
  if (c.config_hash != config_hash(cfg) || c.seed != seed) {
    throw ConfigError("run directory '" + dir.string() + "' holds a different configuration");
  }
  return std::move(c.params);
}

namespace {

bool losses_finite(const std::vector<Json>& log) {
  for (const auto& r : log) {
    for (const char* k : {"policy", "critic", "kl"}) {
      const Json& v = r.at("losses").at(k);
      if (!v.is_number() || !std::isfinite(v.get<double>())) return false;
    }
  }
  return true;
}

std::string run_label(const RunConfig& cfg, Variant v) {
  std::string label(to_string(v));
  if (v == Variant::oracle_single) label += "_n" + std::to_string(cfg.train_counts.front());
  return label;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
}

}  // namespace

AblationResult run_ablation(const RunConfig& base, const AblationOptions& opts) {
  if (opts.variants.empty()) throw ConfigError("ablate: no variants selected");
  if (opts.seeds.empty()) throw ConfigError("ablate: no seeds selected");
  base.validate();
  fs::create_directories(opts.root);
  const fs::path out = opts.summary.empty() ? opts.root : opts.summary;
  fs::create_directories(out);
  auto say = [&](const std::string& s) {
    if (opts.log) opts.log(s);
  };

  AblationResult result;
  for (Variant v : opts.variants) {
    SanityRow sanity;
    sanity.variant = std::string(to_string(v));
    for (RunConfig cfg : build_variants(v, base)) {
      const std::string label = run_label(cfg, v);
      for (std::uint64_t seed : opts.seeds) {
        cfg.seeds = {seed};
        const fs::path dir = run_dir(opts.root, label, seed);
        say("train " + label + " seed " + std::to_string(seed));
        const AgentParams params = train_or_load(cfg, dir, seed);
        const auto log = read_jsonl(dir / "metrics.jsonl");
        result.logs.push_back(log);
        sanity.losses_finite = sanity.losses_finite && losses_finite(log);

        EvalOptions eo = opts.eval;
        const EvalReport report =
            evaluate_policy(cfg, params, cfg.adapt_counts, eo, cfg.protocol, seed);
        write_eval_reports(dir / "eval.jsonl", std::span(&report, 1));
        result.reports.push_back(report);

        if (opts.sanity) {
          eo.seed = opts.eval.seed + 1000 + seed;
          const EvalReport trained = evaluate_policy(cfg, params, cfg.train_counts, eo, Protocol::oracle, seed);
          const EvalReport random = evaluate_random_policy(cfg, cfg.train_counts, eo);
          for (const auto& c : trained.cells) sanity.trained.insert(sanity.trained.end(), c.returns.begin(), c.returns.end());
          for (const auto& c : random.cells) sanity.random.insert(sanity.random.end(), c.returns.begin(), c.returns.end());
        }
      }
    }
    if (opts.sanity) {
      sanity.margin = mean(sanity.trained) - mean(sanity.random);
      sanity.combined_se = std::hypot(std_error(sanity.trained), std_error(sanity.random));
      result.sanity.push_back(std::move(sanity));
    }
  }

  const std::string hash = config_hash(base);
  result.comparison = compare_runs(result.reports);
  write_eval_reports(out / "reports.jsonl", result.reports);
  write_text(out / "comparison.tsv", result.comparison.table());
  write_text(out / "comparison.json", result.comparison.to_json().dump(2) + "\n");

  if (opts.sanity) {
    std::string t = "variant\ttrained_mean\trandom_mean\tmargin\tcombined_se\tlosses_finite\tpassed\n";
    char buf[256];
    for (const auto& s : result.sanity) {
      std::snprintf(buf, sizeof buf, "%s\t%.6f\t%.6f\t%.6f\t%.6f\t%s\t%s\n", s.variant.c_str(), mean(s.trained),
                    mean(s.random), s.margin, s.combined_se, s.losses_finite ? "yes" : "no",
                    s.passed() ? "yes" : "no");
      t += buf;
    }
    write_text(out / "sanity.tsv", t);
  }

  write_text(out / "learning_curves.svg",
             line_plot_svg(learning_curves(result.logs),
                           {"Training return (mean over training tasks)", "update", "mean per-agent return", hash}));
  std::vector<Bar> bars;
  for (const auto& r : result.comparison.rows) {
    bars.push_back({"n=" + std::to_string(r.n), r.variant, r.mean, r.std_error});
  }
  write_text(out / "zero_shot.svg",
             bar_plot_svg(bars, {"Evaluation return on adaptation counts", "agent count", "mean per-agent return", hash}));
  return result;
}

}  // namespace metacpr
