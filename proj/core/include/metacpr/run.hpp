#pragma once

// Run directories: resolved config, append-only metrics log, a wall-clock
// sidecar, and periodic checkpoints. Layout of one run directory:
//
//   config.json             resolved RunConfig (loadable with --config)
//   run.json                seed and config hash
//   metrics.jsonl           one record per update, deterministic content
//   timing.jsonl            wall-clock seconds per update
//   checkpoints/update_NNNNNN.json
//   final.json              written when the run completes

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "metacpr/checkpoint.hpp"
#include "metacpr/config.hpp"
#include "metacpr/training.hpp"

namespace metacpr {

struct TrainRunOptions {
  std::filesystem::path dir;
  std::uint64_t seed = 0;
  /// Continue from the newest checkpoint in `dir`.
  bool resume = false;
  /// Stop (without a final checkpoint) once this many updates are done;
  /// negative runs to completion. Used to simulate interruptions.
  int stop_after = -1;
  std::function<void(const UpdateMetrics&)> on_update;
};

struct TrainRunResult {
  std::filesystem::path dir;
  std::string config_hash;
  int updates = 0;
  std::int64_t env_steps = 0;
  bool completed = false;
};

/// Trains one seed of `cfg` into opts.dir. Errors inside an update are
/// rethrown with the update index prepended, keeping their type.
TrainRunResult run_training(const RunConfig& cfg, const TrainRunOptions& opts);

/// Initial parameters and trainer seed are both derived from the run seed.
struct RunInit {
  AgentParams params;
  std::uint64_t trainer_seed = 0;
};
RunInit initialize_run(const AgentModel& model, std::uint64_t seed);

Json metrics_record(const UpdateMetrics& m, const std::string& variant, std::uint64_t seed, const std::string& hash);

std::vector<Json> read_jsonl(const std::filesystem::path& path);
void append_jsonl(const std::filesystem::path& path, const Json& record);

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int update);
/// Newest checkpoint in a run directory (final.json preferred); throws
/// ConfigError when none exists.
std::filesystem::path latest_checkpoint(const std::filesystem::path& dir);

/// Run directory for (variant, seed) under an output root.
std::filesystem::path run_dir(const std::filesystem::path& root, const std::string& variant, std::uint64_t seed);

}  // namespace metacpr
