#pragma once

// Versioned checkpoint container: parameters of all three groups, optimizer
// moments, the trainer RNG, counters and the hash of the producing config.

#include <cstdint>
#include <filesystem>
#include <string>

#include "metacpr/config.hpp"
#include "metacpr/model.hpp"
#include "metacpr/training.hpp"

namespace metacpr {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  std::string config_hash;
  std::uint64_t seed = 0;
  int updates = 0;
  std::int64_t env_steps = 0;
  AgentParams params;
  Optimizers optimizers;
  Rng rng;
};

Json params_to_json(const AgentParams& params);
/// Rebuilds parameter groups and checks them against `model`.
AgentParams params_from_json(const Json& j, const AgentModel& model);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws ConfigError on unreadable files, version mismatch, or a stored
/// config whose hash differs from the recorded one.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace metacpr
