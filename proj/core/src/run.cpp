#include "metacpr/run.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>

#include "metacpr/errors.hpp"

namespace fs = std::filesystem;

namespace metacpr {

RunInit initialize_run(const AgentModel& model, std::uint64_t seed) {
  Rng master(seed);
  RunInit init;
  init.params = model.init_params(master);
  init.trainer_seed = master.next_u64();
  return init;
}

Json metrics_record(const UpdateMetrics& m, const std::string& variant, std::uint64_t seed, const std::string& hash) {
  Json returns = Json::object();
  for (const auto& [n, r] : m.task_returns) returns[std::to_string(n)] = r;
  Json per_task = Json::object();
  for (const auto& [n, t] : m.losses.per_task) {
    per_task[std::to_string(n)] = {{"policy", t.policy}, {"critic", t.critic}, {"kl", t.kl}, {"entropy", t.entropy}};
  }
  return {{"update", m.update},
          {"env_steps", m.env_steps},
          {"variant", variant},
          {"seed", seed},
          {"config_hash", hash},
          {"returns", returns},
          {"losses",
           {{"policy", m.losses.policy},
            {"critic", m.losses.critic},
            {"kl", m.losses.kl},
            {"entropy", m.losses.entropy_mean},
            {"per_task", per_task}}},
          {"grad_norms",
           {{"policy", m.stats.grad_norms[0]}, {"critic", m.stats.grad_norms[1]}, {"cpr", m.stats.grad_norms[2]}}}};
}

std::vector<Json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read '" + path.string() + "'");
  std::vector<Json> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(Json::parse(line));
    } catch (const Json::parse_error&) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": malformed record");
    }
  }
  return out;
}

void append_jsonl(const fs::path& path, const Json& record) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw ConfigError("cannot append to '" + path.string() + "'");
  out << record.dump() << "\n";
}

fs::path checkpoint_path(const fs::path& dir, int update) {
  char name[32];
  std::snprintf(name, sizeof name, "update_%06d.json", update);
  return dir / "checkpoints" / name;
}

fs::path latest_checkpoint(const fs::path& dir) {
  if (fs::exists(dir / "final.json")) return dir / "final.json";
  fs::path best;
  const fs::path ckdir = dir / "checkpoints";
  if (fs::is_directory(ckdir)) {
    for (const auto& e : fs::directory_iterator(ckdir)) {
      const std::string name = e.path().filename().string();
      if (name.starts_with("update_") && name.ends_with(".json") && (best.empty() || e.path() > best)) best = e.path();
    }
  }
  if (best.empty()) throw ConfigError("no checkpoint found in '" + dir.string() + "'");
  return best;
}

fs::path run_dir(const fs::path& root, const std::string& variant, std::uint64_t seed) {
  return root / variant / ("seed_" + std::to_string(seed));
}

namespace {

template <typename F>
auto with_update_index(int update, F&& f) {
  const std::string where = "update " + std::to_string(update) + ": ";
  try {
    return f();
  } catch (const NumericError& e) {
    throw NumericError(where + e.what());
  } catch (const ProtocolError& e) {
    throw ProtocolError(where + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(where + e.what());
  } catch (const ContractError& e) {
    throw ContractError(where + e.what());
  }
}

void write_checkpoint(const fs::path& path, const RunConfig& cfg, const std::string& hash, std::uint64_t seed,
                      const Trainer& t) {
  Checkpoint c;
  c.config = cfg;
  c.config_hash = hash;
  c.seed = seed;
  c.updates = t.updates_done();
  c.env_steps = t.env_steps();
  c.params = t.params();
  c.optimizers = t.optimizers();
  c.rng = t.rng();
  save_checkpoint(path, c);
}

/// Keeps only the metrics records produced up to and including `updates`.
void truncate_log(const fs::path& path, int updates) {
  if (!fs::exists(path)) return;
  std::vector<Json> keep;
  for (auto& r : read_jsonl(path)) {
    if (r.at("update").get<int>() <= updates) keep.push_back(std::move(r));
  }
  std::ofstream out(path, std::ios::trunc);
  for (const auto& r : keep) out << r.dump() << "\n";
}

}  // namespace

TrainRunResult run_training(const RunConfig& cfg, const TrainRunOptions& opts) {
  cfg.validate();
  const std::string hash = config_hash(cfg);
  const AgentModel model(cfg.model, cfg.env);
  const fs::path dir = opts.dir;
  const fs::path metrics = dir / "metrics.jsonl";
  const fs::path timing = dir / "timing.jsonl";

  RunInit init = initialize_run(model, opts.seed);
  Trainer trainer(model, std::move(init.params), cfg.train, cfg.env_params, cfg.train_counts,
                  cfg.resolved_episode_limit(), init.trainer_seed);

  if (opts.resume) {
    if (fs::exists(dir / "final.json")) {
      const Checkpoint c = load_checkpoint(dir / "final.json");
      return {dir, hash, c.updates, c.env_steps, true};
    }
    const Checkpoint c = load_checkpoint(latest_checkpoint(dir));
    if (c.config_hash != hash) {
      throw ConfigError("resume: checkpoint config hash " + c.config_hash + " does not match " + hash);
    }
    if (c.seed != opts.seed) throw ConfigError("resume: checkpoint was written for seed " + std::to_string(c.seed));
    trainer.restore(c.params, c.optimizers, c.rng, c.updates, c.env_steps);
    truncate_log(metrics, c.updates);
    truncate_log(timing, c.updates);
  } else {
    if (fs::exists(metrics) || fs::exists(dir / "final.json")) {
      throw ConfigError("run directory '" + dir.string() + "' already holds a run (use --resume)");
    }
    fs::create_directories(dir / "checkpoints");
    save_run_config(dir / "config.json", cfg);
    {
      std::ofstream out(dir / "run.json");
      out << Json{{"seed", opts.seed}, {"config_hash", hash}, {"variant", cfg.variant}}.dump(2) << "\n";
    }
    std::ofstream(metrics, std::ios::trunc).flush();
    write_checkpoint(checkpoint_path(dir, 0), cfg, hash, opts.seed, trainer);
  }

  while (!trainer.finished()) {
    if (opts.stop_after >= 0 && trainer.updates_done() >= opts.stop_after) {
      return {dir, hash, trainer.updates_done(), trainer.env_steps(), false};
    }
    const int index = trainer.updates_done() + 1;
    const auto t0 = std::chrono::steady_clock::now();
    const UpdateMetrics m = with_update_index(index, [&] { return trainer.update(); });
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    append_jsonl(metrics, metrics_record(m, cfg.variant, opts.seed, hash));
    append_jsonl(timing, Json{{"update", m.update}, {"wall_seconds", secs}});
    if (opts.on_update) opts.on_update(m);
    if (m.update % cfg.train.checkpoint_every == 0) {
      write_checkpoint(checkpoint_path(dir, m.update), cfg, hash, opts.seed, trainer);
    }
  }
  // With zero updates the initial checkpoint is the final state.
  if (trainer.updates_done() > 0) write_checkpoint(dir / "final.json", cfg, hash, opts.seed, trainer);
  return {dir, hash, trainer.updates_done(), trainer.env_steps(), true};
}

}  // namespace metacpr
