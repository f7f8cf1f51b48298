#pragma once

// Multi-variant, multi-seed experiment driver: trains every (variant, seed)
// run under one output root, evaluates zero-shot, compares variants, checks
// training progress against the random policy, and writes tables and plots.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "metacpr/evaluation.hpp"
#include "metacpr/run.hpp"

namespace metacpr {

struct AblationOptions {
  std::filesystem::path root;
  /// Where tables and plots go; defaults to `root`.
  std::filesystem::path summary;
  std::vector<Variant> variants;
  std::vector<std::uint64_t> seeds;
  EvalOptions eval;
  /// Also evaluate each run on its own training counts against the random policy.
  bool sanity = true;
  std::function<void(const std::string&)> log;
};

/// Final policy on the training counts versus the random policy on the same
/// counts, pooled over seeds and episodes.
struct SanityRow {
  std::string variant;
  std::vector<double> trained;  // per-episode returns
  std::vector<double> random;
  double margin = 0.0;          // mean(trained) - mean(random)
  double combined_se = 0.0;     // sqrt(se_trained^2 + se_random^2)
  bool losses_finite = true;
  bool passed() const { return losses_finite && margin >= 3.0 * combined_se && margin > 0.0; }
};

struct AblationResult {
  std::vector<EvalReport> reports;
  Comparison comparison;
  std::vector<SanityRow> sanity;
  std::vector<std::vector<Json>> logs;
};

/// Finished runs found under the root are reused; unfinished ones resume.
AblationResult run_ablation(const RunConfig& base, const AblationOptions& opts);

/// Trains (or reuses) one run and returns its final parameters.
AgentParams train_or_load(const RunConfig& cfg, const std::filesystem::path& dir, std::uint64_t seed);

}  // namespace metacpr
