#pragma once

// Run configuration: everything needed to reproduce one training run, with a
// strict JSON reader (unknown keys and type mismatches are rejected with the
// offending key path) and a content hash over the canonical serialization.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "metacpr/agent_nets.hpp"
#include "metacpr/envs.hpp"
#include "metacpr/training.hpp"

namespace metacpr {

using Json = nlohmann::json;

/// zero_shot evaluations require every adapt count to exceed every train
/// count; oracle runs train directly on the adaptation counts.
enum class Protocol { zero_shot, oracle };

struct EvalSettings {
  int episodes = 20;
  bool greedy = false;
  double discount = 1.0;
  friend bool operator==(const EvalSettings&, const EvalSettings&) = default;
};

struct RunConfig {
  EnvId env = EnvId::particle_system;
  int episode_limit = 0;  // 0 selects the environment default
  std::vector<int> train_counts{3, 4, 5};
  std::vector<int> adapt_counts{8, 10};
  Protocol protocol = Protocol::zero_shot;
  EnvParams env_params;
  ModelConfig model;
  TrainConfig train;
  EvalSettings eval;
  std::string variant = "meta_cpr";
  std::string out_dir;
  std::vector<std::uint64_t> seeds{0};

  int resolved_episode_limit() const { return episode_limit > 0 ? episode_limit : default_episode_limit(env); }
  /// Throws ConfigError on any invalid field; checks the train/adapt
  /// ordering for zero-shot runs.
  void validate() const;

  friend bool operator==(const RunConfig&, const RunConfig&);
};

Json to_json(const RunConfig& cfg);
/// Missing keys keep their defaults. Unknown keys, wrong types and invalid
/// values throw ConfigError naming the key path (e.g. "train.gamma").
RunConfig run_config_from_json(const Json& j);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& cfg);

/// 16 hex digits of FNV-1a over the canonical (sorted, compact) dump.
std::string config_hash(const RunConfig& cfg);

/// Leaf key paths whose values differ between two configs.
std::vector<std::string> config_diff(const RunConfig& a, const RunConfig& b);

std::string_view to_string(Protocol p);
std::string_view to_string(CprGradSource s);
std::string_view to_string(KlTarget k);
std::string_view to_string(ContextInput c);

/// Parses "3,4,5" into a list of agent counts.
std::vector<int> parse_counts(const std::string& text, const std::string& what);

std::uint64_t fnv1a(std::string_view bytes);

}  // namespace metacpr
