#pragma once

// Baseline and ablation variants, the zero-shot evaluation protocol,
// cross-seed comparison and trajectory-embedding export.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "metacpr/config.hpp"
#include "metacpr/model.hpp"
#include "metacpr/stats.hpp"
#include "metacpr/training.hpp"

namespace metacpr {

enum class Variant {
  meta_cpr,
  gcn_comm,
  indep_ac,
  oracle_mt,
  oracle_single,
  cpr_no_recurrence,
  cpr_deterministic,
  critic_no_cn,
  cpr_train_with_policy,
  cpr_train_with_both,
  context_transitions,
  context_both,
};

std::string_view to_string(Variant v);
/// Throws ConfigError for unknown names.
Variant variant_from_string(std::string_view name);
const std::vector<Variant>& all_variants();

struct VariantSpec {
  Variant name;
  /// Config key paths the variant changes relative to the full method
  /// ("variant" itself always changes and is not listed).
  std::vector<std::string> keys;
  std::string description;
};
const VariantSpec& variant_spec(Variant v);

/// Applies the variant's delta to `base`. oracle_single trains on exactly
/// one adaptation count: `oracle_n` when given, else the only adapt count
/// (ConfigError when there are several).
RunConfig build_variant(Variant v, const RunConfig& base, int oracle_n = 0);
/// One config per run the variant needs: oracle_single yields one per
/// adaptation count, every other variant a single config.
std::vector<RunConfig> build_variants(Variant v, const RunConfig& base);

struct EvalOptions {
  int episodes = 20;
  bool greedy = false;
  double discount = 1.0;
  std::uint64_t seed = 0;
};

/// Returns of one (n, training seed) cell. Statistics are recomputed from
/// the raw per-episode values.
struct EvalCell {
  int n = 0;
  std::vector<double> returns;  // per episode: mean over agents of the discounted return

  double mean() const { return metacpr::mean(returns); }
  double std_error() const { return metacpr::std_error(returns); }
};

struct EvalReport {
  std::string variant;
  EnvId env = EnvId::particle_system;
  std::vector<int> train_counts;
  std::vector<int> adapt_counts;
  Protocol protocol = Protocol::zero_shot;
  bool greedy = false;
  double discount = 1.0;
  int episodes = 0;
  std::uint64_t seed = 0;       // training seed of the evaluated run
  std::uint64_t eval_seed = 0;
  std::string config_hash;
  std::uint64_t param_checksum = 0;
  std::vector<EvalCell> cells;

  const EvalCell* cell(int n) const;
};

/// Rolls out the frozen policy on every n in `counts`. Under the zero-shot
/// protocol each count must exceed every training count (ProtocolError
/// otherwise); episodes < 1 is a ProtocolError too. Parameters are
/// checksummed before and after.
EvalReport evaluate_policy(const RunConfig& cfg, const AgentParams& params, std::span<const int> counts,
                           const EvalOptions& opts, Protocol protocol, std::uint64_t train_seed = 0);

/// The zero-shot protocol on cfg.adapt_counts.
EvalReport evaluate_zero_shot(const RunConfig& cfg, const AgentParams& params, const EvalOptions& opts,
                              std::uint64_t train_seed = 0);

/// Untrained reference behavior: uniform over discrete actions, or
/// N(0, init_sigma^2) clamped to the box for continuous ones.
EvalReport evaluate_random_policy(const RunConfig& cfg, std::span<const int> counts, const EvalOptions& opts);

/// Per-episode mean-over-agents return of one random-policy episode.
double random_policy_episode(Env& env, const ModelConfig& model, double discount, Rng& rng);

Json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const Json& j);
/// One record per (report, n) cell.
void write_eval_reports(const std::filesystem::path& path, std::span<const EvalReport> reports);
std::vector<EvalReport> read_eval_reports(const std::filesystem::path& path);

struct SummaryRow {
  std::string variant;
  int n = 0;
  std::vector<double> seed_means;
  double mean = 0.0;
  double std_error = 0.0;
};

struct PairTest {
  std::string a;
  std::string b;
  int n = 0;
  double mean_diff = 0.0;  // mean(a) - mean(b)
  RankTest test;
  bool significant = false;
};

struct Comparison {
  double alpha = 0.05;
  std::vector<SummaryRow> rows;
  std::vector<PairTest> tests;

  const SummaryRow* row(const std::string& variant, int n) const;
  const PairTest* test(const std::string& a, const std::string& b, int n) const;
  /// Tab-separated summary and pairwise tables.
  std::string table() const;
  Json to_json() const;
};

/// Groups reports by (variant, n), one per-seed mean per report, and runs a
/// two-sided Mann-Whitney test between every pair of variants sharing n.
/// Reports must agree on environment, discount and policy mode.
Comparison compare_runs(std::span<const EvalReport> reports, double alpha = 0.05);

// ---- trajectory embeddings ------------------------------------------------------

/// Fixed-width flattening of episodes: agent-major, then time, then
/// (observation, encoded action, reward). Missing steps and agents are zeros.
struct EmbeddingLayout {
  int length = 0;
  int max_agents = 0;
  int obs_dim = 0;
  int action_width = 0;

  int transition_width() const { return obs_dim + action_width + 1; }
  int columns() const { return max_agents * length * transition_width(); }
};

struct EmbeddingRow {
  std::string variant;
  int n = 0;
  std::vector<double> values;
};

struct Transition {
  Eigen::VectorXd obs;
  Eigen::VectorXd action;
  double reward = 0.0;
};

/// Layout for the given episodes: length = largest episode limit, agents =
/// largest team. Throws ContractError on empty input.
EmbeddingLayout embedding_layout(std::span<const Episode> episodes, const ActionSpace& space);
std::vector<EmbeddingRow> embed_trajectories(std::span<const Episode> episodes, const EmbeddingLayout& layout,
                                             const ActionSpace& space, const std::string& variant);
Transition unflatten(const EmbeddingRow& row, const EmbeddingLayout& layout, int agent, int t);

/// CSV with a header of labels; the first line is a comment carrying the
/// config hash.
void write_embeddings(std::ostream& out, std::span<const EmbeddingRow> rows, const EmbeddingLayout& layout,
                      const std::string& config_hash);
void export_trajectory_embeddings(std::span<const Episode> episodes, const ActionSpace& space,
                                  const std::string& variant, const std::filesystem::path& out,
                                  const std::string& config_hash);

}  // namespace metacpr
