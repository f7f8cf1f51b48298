#pragma once

// Multi-task actor-critic training with a meta-learned context module.
// Each update collects k fresh episodes per training task, computes the
// policy, critic and information-bottleneck losses per task, and routes
// their gradients to the three parameter groups:
//   theta <- grad L_P,  mu <- grad L_C,  phi <- grad (L_C + L_KL).

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "metacpr/agent_nets.hpp"
#include "metacpr/envs.hpp"
#include "metacpr/model.hpp"
#include "metacpr/nn.hpp"
#include "metacpr/rng.hpp"

namespace metacpr {

/// Which losses feed the CPR parameters besides the bottleneck term.
enum class CprGradSource { critic, policy, both };
/// KL on each per-message posterior, or on the fused posterior.
enum class KlTarget { per_message, fused };

struct TrainConfig {
  double lr_policy = 7e-4;  // alpha1
  double lr_critic = 7e-4;  // alpha2
  double lr_cpr = 7e-4;     // alpha3
  double ib_weight = 0.01;  // lambda
  double entropy_weight = 0.01;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  int episodes_per_task = 2;
  int total_updates = 1000;
  /// Stop once this many environment steps were collected; 0 disables.
  std::int64_t env_step_budget = 0;
  double grad_clip = 5.0;
  bool normalize_advantages = true;
  int checkpoint_every = 50;
  AdamConfig adam;
  CprGradSource cpr_grad_source = CprGradSource::critic;
  KlTarget kl_target = KlTarget::per_message;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// One recorded episode. Per-step arrays have one entry per tick; per-agent
/// quantities are n-vectors or n-row matrices.
struct Episode {
  TaskSpec task;
  std::vector<Matrix> obs;          // n x d_o, observation acted on at t
  std::vector<Matrix> messages_in;  // n x d_m, messages received at t (zeros at t = 0)
  std::vector<Matrix> context_in;   // n x d_in, CPR input at t
  std::vector<std::vector<SampledAction>> actions;
  std::vector<Eigen::VectorXd> log_probs;
  std::vector<Eigen::VectorXd> entropies;
  std::vector<Eigen::VectorXd> rewards;
  std::vector<Eigen::VectorXd> values;
  std::vector<Matrix> xi;           // 1 x d_c context noise drawn at t
  std::vector<Eigen::VectorXd> z;   // task vector used at t
  Eigen::VectorXd bootstrap;        // V(o_T) on truncation, zeros on termination
  bool terminal = false;

  std::vector<Eigen::VectorXd> advantages;
  std::vector<Eigen::VectorXd> returns;

  int length() const { return static_cast<int>(obs.size()); }
  /// Undiscounted return of each agent.
  Eigen::VectorXd agent_returns(double discount = 1.0) const;
};

/// Rollout buffer D_i for one task, refilled every update.
struct EpisodeBatch {
  TaskSpec task;
  std::vector<Episode> episodes;
  std::uint64_t param_version = 0;

  std::int64_t env_steps() const;
  /// Mean over episodes and agents of the undiscounted per-agent return.
  double mean_agent_return() const;
};

struct RolloutOptions {
  bool greedy = false;
};

/// Runs one full episode on `env` (which is reset first). Hidden states of
/// the policy, critic and CPR start at zero.
Episode run_episode(const AgentModel& model, const AgentParams& params, Env& env, Rng& rng,
                    const RolloutOptions& options = {});

/// k episodes of `task` from one environment instance seeded by task.seed.
EpisodeBatch collect_episodes(const AgentModel& model, const AgentParams& params, const TaskSpec& task,
                              const EnvParams& env_params, int k, Rng& rng, const RolloutOptions& options = {});

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t,
/// A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}, returns = A + V.
/// `bootstrap` is V after the last step; `dones` may be empty.
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values, double bootstrap,
                      double gamma, double lambda, std::span<const bool> dones = {});

/// Fills advantages/returns for every episode in the batches and, when
/// `normalize` is set, standardizes advantages jointly across all of them.
void compute_advantages(std::span<EpisodeBatch> batches, double gamma, double lambda, bool normalize);

struct TaskLosses {
  double policy = 0.0;
  double critic = 0.0;
  double kl = 0.0;
  double entropy = 0.0;
};

struct LossReport {
  double policy = 0.0;  // L_P summed over tasks
  double critic = 0.0;  // L_C summed over tasks
  double kl = 0.0;      // L_KL summed over tasks
  double entropy_mean = 0.0;
  std::map<int, TaskLosses> per_task;  // keyed by agent count
};

/// Gradients of each loss w.r.t. each parameter group, plus the routed
/// combination actually applied.
struct LossGradients {
  LossReport report;
  std::array<GradientSet, kNumGroups> of_policy_loss;
  std::array<GradientSet, kNumGroups> of_critic_loss;
  std::array<GradientSet, kNumGroups> of_kl_loss;
  std::array<GradientSet, kNumGroups> routed;
};

/// Rebuilds the forward pass over every stored episode on one tape, forms
/// the three losses, and differentiates each separately. Advantages must be
/// computed beforehand; they and the returns enter as constants.
LossGradients compute_loss_gradients(const AgentModel& model, const AgentParams& params,
                                     std::span<const EpisodeBatch> batches, const TrainConfig& cfg);

/// Single-loss conveniences over one batch (used by tests and reports).
double policy_loss(const AgentModel& model, const AgentParams& params, const EpisodeBatch& batch,
                   const TrainConfig& cfg);
double critic_loss(const AgentModel& model, const AgentParams& params, const EpisodeBatch& batch,
                   const TrainConfig& cfg);
double kl_loss(const AgentModel& model, const AgentParams& params, const EpisodeBatch& batch, const TrainConfig& cfg);

struct Optimizers {
  std::array<Adam, kNumGroups> adam;

  Optimizers() = default;
  Optimizers(const AgentParams& params, const AdamConfig& cfg);
  friend bool operator==(const Optimizers&, const Optimizers&) = default;
};

struct UpdateStats {
  std::array<double, kNumGroups> grad_norms{};  // before clipping
};

/// Clips each group's routed gradient to cfg.grad_clip and takes one Adam
/// step per group with its own learning rate. Throws NumericError (naming
/// the loss) on a non-finite gradient, leaving params untouched.
UpdateStats apply_update(AgentParams& params, Optimizers& opt, const LossGradients& grads, const TrainConfig& cfg);

struct UpdateMetrics {
  int update = 0;  // 1-based index of the completed update
  std::int64_t env_steps = 0;
  std::map<int, double> task_returns;
  LossReport losses;
  UpdateStats stats;
};

/// Stateful driver of the outer training loop.
class Trainer {
 public:
  Trainer(const AgentModel& model, AgentParams params, const TrainConfig& cfg, const EnvParams& env_params,
          std::vector<int> train_counts, int episode_limit, std::uint64_t seed);

  /// One outer iteration: collect, compute losses, update.
  UpdateMetrics update();
  bool finished() const;

  const AgentParams& params() const { return params_; }
  const Optimizers& optimizers() const { return opt_; }
  const Rng& rng() const { return rng_; }
  int updates_done() const { return updates_; }
  std::int64_t env_steps() const { return env_steps_; }
  const AgentModel& model() const { return model_; }

  /// Restores the full resumable state.
  void restore(AgentParams params, Optimizers opt, Rng rng, int updates, std::int64_t env_steps);

 private:
  AgentModel model_;
  AgentParams params_;
  TrainConfig cfg_;
  EnvParams env_params_;
  std::vector<int> train_counts_;
  int episode_limit_;
  Optimizers opt_;
  Rng rng_;
  int updates_ = 0;
  std::int64_t env_steps_ = 0;
};

}  // namespace metacpr
