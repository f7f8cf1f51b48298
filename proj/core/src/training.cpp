#include "metacpr/training.hpp"

#include <cmath>
#include <numeric>
#include <optional>
#include <string>

#include "metacpr/errors.hpp"

namespace metacpr {

void TrainConfig::validate() const {
  if (!(lr_policy > 0.0) || !(lr_critic > 0.0) || !(lr_cpr > 0.0)) {
    throw ConfigError("train.lr_*: learning rates must be > 0");
  }
  if (!(ib_weight >= 0.0)) throw ConfigError("train.ib_weight must be >= 0");
  if (!(entropy_weight >= 0.0)) throw ConfigError("train.entropy_weight must be >= 0");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("train.gamma must lie in [0, 1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("train.gae_lambda must lie in [0, 1]");
  if (episodes_per_task < 1) throw ConfigError("train.episodes_per_task must be >= 1");
  if (total_updates < 0) throw ConfigError("train.total_updates must be >= 0");
  if (env_step_budget < 0) throw ConfigError("train.env_step_budget must be >= 0");
  if (!(grad_clip > 0.0)) throw ConfigError("train.grad_clip must be > 0");
  if (checkpoint_every < 1) throw ConfigError("train.checkpoint_every must be >= 1");
}

Eigen::VectorXd Episode::agent_returns(double discount) const {
  Eigen::VectorXd total = Eigen::VectorXd::Zero(task.n_agents);
  double w = 1.0;
  for (const auto& r : rewards) {
    total += w * r;
    w *= discount;
  }
  return total;
}

std::int64_t EpisodeBatch::env_steps() const {
  std::int64_t s = 0;
  for (const auto& e : episodes) s += e.length();
  return s;
}

double EpisodeBatch::mean_agent_return() const {
  if (episodes.empty()) return 0.0;
  double s = 0.0;
  for (const auto& e : episodes) s += e.agent_returns().mean();
  return s / static_cast<double>(episodes.size());
}

// ---- joint forward step ---------------------------------------------------------

namespace {

struct StepForward {
  std::optional<CprNet::Posterior> posterior;
  std::optional<CprNet::Posterior> fused;
  ad::Var z;
  ad::Var cpr_hidden;
  PolicyNet::Output policy;
  CriticNet::Output critic;
};

struct ZRouting {
  bool to_policy = false;
  bool to_critic = true;
};

/// CPR, then policy and critic for one tick. The policy and critic see z
/// either as a live tape value or as a detached constant, per `routing`.
/// `with_policy` = false skips the policy (bootstrap evaluation).
StepForward forward_step(ad::Tape& tape, const AgentModel& model, const AgentParams& params, ad::Var obs,
                         ad::Var messages_in, ad::Var context_in, const Matrix& xi, ad::Var policy_h,
                         ad::Var critic_h, ad::Var cpr_h, ZRouting routing, bool with_policy = true) {
  const ModelConfig& cfg = model.config();
  StepForward f;
  if (const CprNet* cpr = model.cpr()) {
    f.posterior = cpr->estimate(tape, params.cpr, context_in);
    f.fused = CprNet::fuse(*f.posterior);
    const ad::Var c = cpr->sample(*f.fused, xi);
    const auto enc = cpr->encode(tape, params.cpr, c, cpr_h);
    f.z = enc.z;
    f.cpr_hidden = enc.hidden;
  } else {
    f.z = tape.constant(Matrix::Zero(1, cfg.task_dim));
    f.cpr_hidden = cpr_h;
  }
  const ad::Var z_policy = routing.to_policy ? f.z : ad::detach(f.z);
  const ad::Var z_critic = routing.to_critic ? f.z : ad::detach(f.z);
  if (with_policy) {
    ad::Var fused_msgs;
    if (cfg.use_messages) fused_msgs = model.policy().encode_messages(tape, params.policy, messages_in);
    f.policy = model.policy().step(tape, params.policy, obs, policy_h, fused_msgs, z_policy);
  }
  f.critic = model.critic().step(tape, params.critic, obs, critic_h, z_critic);
  return f;
}

Matrix context_input(const ModelConfig& cfg, const Matrix& messages, const Matrix& transition) {
  switch (cfg.context_input) {
    case ContextInput::messages:
      return messages;
    case ContextInput::transitions:
      return transition;
    case ContextInput::both: {
      Matrix m(messages.rows(), messages.cols() + transition.cols());
      m << messages, transition;
      return m;
    }
  }
  return messages;
}

Matrix draw_xi(const ModelConfig& cfg, Rng& rng) {
  Matrix xi = Matrix::Zero(1, cfg.context_dim);
  if (cfg.use_cpr && cfg.cpr_stochastic) {
    for (Eigen::Index d = 0; d < xi.cols(); ++d) xi(0, d) = rng.normal();
  }
  return xi;
}

ZRouting routing_for(const TrainConfig& cfg) {
  switch (cfg.cpr_grad_source) {
    case CprGradSource::critic:
      return {false, true};
    case CprGradSource::policy:
      return {true, false};
    case CprGradSource::both:
      return {true, true};
  }
  return {};
}

}  // namespace

Episode run_episode(const AgentModel& model, const AgentParams& params, Env& env, Rng& rng,
                    const RolloutOptions& options) {
  const ModelConfig& cfg = model.config();
  const int n = env.n_agents();
  const int d_m = cfg.effective_message_dim();
  const int action_width = model.space().encoded_width();
  const int trans_dim = model.obs_dim() + action_width + 1;

  Episode ep;
  ep.task = env.task();
  Matrix obs = env.reset();
  Matrix messages = Matrix::Zero(n, d_m);
  Matrix transition = Matrix::Zero(n, trans_dim);
  Matrix h = Matrix::Zero(n, cfg.hidden);
  Matrix hc = Matrix::Zero(n, cfg.hidden);
  Matrix hz = Matrix::Zero(1, cfg.cpr_hidden);

  bool done = false;
  while (!done) {
    ad::Tape tape;
    const Matrix ctx = cfg.use_cpr ? context_input(cfg, messages, transition) : Matrix();
    Matrix xi = draw_xi(cfg, rng);
    const StepForward f =
        forward_step(tape, model, params, tape.constant(obs), tape.constant(messages), tape.constant(ctx), xi,
                     tape.constant(h), tape.constant(hc), tape.constant(hz), {});

    std::vector<SampledAction> acts(n);
    Eigen::VectorXd lp(n), ent(n);
    JointAction joint;
    if (model.space().discrete) {
      joint.index.resize(n);
    } else {
      joint.values.resize(n, model.space().dim);
    }
    for (int i = 0; i < n; ++i) {
      const ActionDistribution dist = model.policy().distribution(f.policy, i);
      acts[i] = options.greedy ? mode_action(dist, model.space()) : sample_action(dist, model.space(), rng);
      lp(i) = acts[i].log_prob;
      ent(i) = entropy(dist);
      if (model.space().discrete) {
        joint.index[i] = acts[i].index;
      } else {
        joint.values.row(i) = acts[i].clamped.transpose();
      }
    }
    StepResult step = env.step(joint);

    Eigen::VectorXd rewards = Eigen::Map<const Eigen::VectorXd>(step.rewards.data(), n);
    if (!rewards.allFinite()) throw NumericError("environment produced a non-finite reward");
    ep.obs.push_back(obs);
    ep.messages_in.push_back(messages);
    ep.context_in.push_back(ctx);
    ep.actions.push_back(acts);
    ep.log_probs.push_back(lp);
    ep.entropies.push_back(ent);
    ep.rewards.push_back(rewards);
    ep.values.push_back(f.critic.value.value().col(0));
    ep.xi.push_back(std::move(xi));
    ep.z.push_back(f.z.value().row(0).transpose());

    Matrix encoded_actions = Matrix::Zero(n, action_width);
    for (int i = 0; i < n; ++i) {
      if (model.space().discrete) {
        encoded_actions(i, acts[i].index) = 1.0;
      } else {
        encoded_actions.row(i) = acts[i].clamped.transpose();
      }
    }
    transition << obs, encoded_actions, rewards;

    h = f.policy.hidden.value();
    hc = f.critic.hidden.value();
    hz = f.cpr_hidden.value();
    if (cfg.use_messages) messages = f.policy.message.value();
    obs = step.observation;
    done = step.done;
    ep.terminal = step.terminal;
  }

  if (ep.terminal) {
    ep.bootstrap = Eigen::VectorXd::Zero(n);
  } else {
    ad::Tape tape;
    const Matrix ctx = cfg.use_cpr ? context_input(cfg, messages, transition) : Matrix();
    const Matrix xi = draw_xi(cfg, rng);
    const StepForward f =
        forward_step(tape, model, params, tape.constant(obs), tape.constant(messages), tape.constant(ctx), xi,
                     tape.constant(h), tape.constant(hc), tape.constant(hz), {}, /*with_policy=*/false);
    ep.bootstrap = f.critic.value.value().col(0);
  }
  return ep;
}

EpisodeBatch collect_episodes(const AgentModel& model, const AgentParams& params, const TaskSpec& task,
                              const EnvParams& env_params, int k, Rng& rng, const RolloutOptions& options) {
  if (k < 1) throw ContractError("collect_episodes: k must be >= 1");
  if (task.env_id != model.env()) throw ContractError("collect_episodes: task environment does not match model");
  auto env = make_env(task, env_params);
  EpisodeBatch batch;
  batch.task = task;
  for (int e = 0; e < k; ++e) {
    try {
      batch.episodes.push_back(run_episode(model, params, *env, rng, options));
    } catch (const ContractError& err) {
      throw ContractError("episode " + std::to_string(e) + ": " + err.what());
    }
  }
  return batch;
}

// ---- advantages -----------------------------------------------------------------

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values, double bootstrap,
                      double gamma, double lambda, std::span<const bool> dones) {
  const std::size_t T = rewards.size();
  if (values.size() != T) throw ContractError("compute_gae: rewards and values differ in length");
  if (!dones.empty() && dones.size() != T) throw ContractError("compute_gae: done mask length mismatch");
  GaeResult out;
  out.advantages.assign(T, 0.0);
  out.returns.assign(T, 0.0);
  double next_value = bootstrap;
  double next_adv = 0.0;
  for (std::size_t k = T; k-- > 0;) {
    const double cont = (!dones.empty() && dones[k]) ? 0.0 : 1.0;
    const double delta = rewards[k] + gamma * next_value * cont - values[k];
    const double adv = delta + gamma * lambda * cont * next_adv;
    out.advantages[k] = adv;
    out.returns[k] = adv + values[k];
    next_value = values[k];
    next_adv = adv;
  }
  return out;
}

void compute_advantages(std::span<EpisodeBatch> batches, double gamma, double lambda, bool normalize) {
  double sum = 0.0, sum_sq = 0.0;
  std::size_t count = 0;
  for (auto& batch : batches) {
    for (auto& ep : batch.episodes) {
      const int T = ep.length();
      const int n = ep.task.n_agents;
      ep.advantages.assign(T, Eigen::VectorXd::Zero(n));
      ep.returns.assign(T, Eigen::VectorXd::Zero(n));
      std::vector<double> r(T), v(T);
      for (int i = 0; i < n; ++i) {
        for (int t = 0; t < T; ++t) {
          r[t] = ep.rewards[t](i);
          v[t] = ep.values[t](i);
        }
        const GaeResult g = compute_gae(r, v, ep.bootstrap(i), gamma, lambda);
        for (int t = 0; t < T; ++t) {
          ep.advantages[t](i) = g.advantages[t];
          ep.returns[t](i) = g.returns[t];
          sum += g.advantages[t];
          sum_sq += g.advantages[t] * g.advantages[t];
          ++count;
        }
      }
    }
  }
  if (!normalize || count < 2) return;
  const double mean = sum / static_cast<double>(count);
  const double var = std::max(0.0, sum_sq / static_cast<double>(count) - mean * mean);
  const double inv = 1.0 / (std::sqrt(var) + 1e-8);
  for (auto& batch : batches) {
    for (auto& ep : batch.episodes) {
      for (auto& a : ep.advantages) a = (a.array() - mean) * inv;
    }
  }
}

// ---- losses ---------------------------------------------------------------------

namespace {

struct TaskLossVars {
  int n_agents = 0;
  ad::Var policy;
  ad::Var critic;
  ad::Var kl;
  double entropy_sum = 0.0;
  std::size_t samples = 0;
};

struct LossGraph {
  std::vector<TaskLossVars> tasks;
  ad::Var policy;
  ad::Var critic;
  ad::Var kl;
  double entropy_mean = 0.0;
};

Matrix column(const Eigen::VectorXd& v) { return Matrix(v); }

LossGraph build_loss_graph(ad::Tape& tape, const AgentModel& model, const AgentParams& params,
                           std::span<const EpisodeBatch> batches, const TrainConfig& tc) {
  using namespace ad;
  const ModelConfig& cfg = model.config();
  const ZRouting routing = routing_for(tc);
  LossGraph graph;
  double entropy_total = 0.0;
  std::size_t entropy_count = 0;

  for (const auto& batch : batches) {
    TaskLossVars tl;
    tl.n_agents = batch.task.n_agents;
    Var p_sum = tape.constant(0.0), c_sum = tape.constant(0.0), k_sum = tape.constant(0.0);
    std::size_t samples = 0, kl_rows = 0;

    for (const auto& ep : batch.episodes) {
      const int n = ep.task.n_agents;
      if (ep.advantages.size() != static_cast<std::size_t>(ep.length())) {
        throw ContractError("loss: advantages not computed for episode");
      }
      Var h = tape.constant(Matrix::Zero(n, cfg.hidden));
      Var hc = tape.constant(Matrix::Zero(n, cfg.hidden));
      Var hz = tape.constant(Matrix::Zero(1, cfg.cpr_hidden));
      Var messages = tape.constant(Matrix::Zero(n, cfg.effective_message_dim()));

      for (int t = 0; t < ep.length(); ++t) {
        const Var ctx = tape.constant(cfg.use_cpr ? ep.context_in[t] : Matrix());
        const StepForward f = forward_step(tape, model, params, tape.constant(ep.obs[t]), messages, ctx, ep.xi[t],
                                           h, hc, hz, routing);

        const Var logp = model.policy().log_prob(f.policy, ep.actions[t]);
        if (!logp.value().allFinite()) {
          throw NumericError("policy loss: non-finite log-probability at step " + std::to_string(t));
        }
        const Var ent = model.policy().entropy(f.policy);
        const Var adv = tape.constant(column(ep.advantages[t]));
        const Var ret = tape.constant(column(ep.returns[t]));
        // -log pi(a) * A - eta * H
        const Var p_term = sum(sub(neg(mul(logp, adv)), scale(ent, tc.entropy_weight)));
        const Var c_term = sum(square(sub(f.critic.value, ret)));
        p_sum = add(p_sum, p_term);
        c_sum = add(c_sum, c_term);
        if (f.posterior) {
          const Var kl_rows_var = tc.kl_target == KlTarget::per_message ? CprNet::kl(*f.posterior) : CprNet::kl(*f.fused);
          k_sum = add(k_sum, sum(kl_rows_var));
          kl_rows += static_cast<std::size_t>(kl_rows_var.rows());
        }
        samples += static_cast<std::size_t>(n);
        tl.entropy_sum += ent.value().sum();

        h = f.policy.hidden;
        hc = f.critic.hidden;
        hz = f.cpr_hidden;
        if (cfg.use_messages) messages = f.policy.message;
      }
    }
    if (samples == 0) throw ContractError("loss: empty batch");
    tl.samples = samples;
    tl.policy = scale(p_sum, 1.0 / static_cast<double>(samples));
    tl.critic = scale(c_sum, 1.0 / static_cast<double>(samples));
    tl.kl = kl_rows > 0 ? scale(k_sum, tc.ib_weight / static_cast<double>(kl_rows)) : tape.constant(0.0);
    entropy_total += tl.entropy_sum;
    entropy_count += samples;
    graph.tasks.push_back(tl);
  }

  graph.policy = tape.constant(0.0);
  graph.critic = tape.constant(0.0);
  graph.kl = tape.constant(0.0);
  for (const auto& tl : graph.tasks) {
    graph.policy = add(graph.policy, tl.policy);
    graph.critic = add(graph.critic, tl.critic);
    graph.kl = add(graph.kl, tl.kl);
  }
  graph.entropy_mean = entropy_count ? entropy_total / static_cast<double>(entropy_count) : 0.0;
  return graph;
}

LossReport make_report(const LossGraph& g) {
  LossReport r;
  r.policy = g.policy.scalar();
  r.critic = g.critic.scalar();
  r.kl = g.kl.scalar();
  r.entropy_mean = g.entropy_mean;
  for (const auto& t : g.tasks) {
    TaskLosses& tl = r.per_task[t.n_agents];
    tl.policy += t.policy.scalar();
    tl.critic += t.critic.scalar();
    tl.kl += t.kl.scalar();
    tl.entropy = t.entropy_sum / static_cast<double>(t.samples);
  }
  return r;
}

std::array<GradientSet, kNumGroups> grads_of(ad::Tape& tape, ad::Var root, const AgentParams& params) {
  tape.backward(root);
  return {gradients(tape, params.policy), gradients(tape, params.critic), gradients(tape, params.cpr)};
}

}  // namespace

LossGradients compute_loss_gradients(const AgentModel& model, const AgentParams& params,
                                     std::span<const EpisodeBatch> batches, const TrainConfig& cfg) {
  ad::Tape tape;
  const LossGraph graph = build_loss_graph(tape, model, params, batches, cfg);
  LossGradients out;
  out.report = make_report(graph);
  out.of_policy_loss = grads_of(tape, graph.policy, params);
  out.of_critic_loss = grads_of(tape, graph.critic, params);
  out.of_kl_loss = grads_of(tape, graph.kl, params);

  constexpr int kP = static_cast<int>(Group::policy), kC = static_cast<int>(Group::critic),
                kZ = static_cast<int>(Group::cpr);
  out.routed[kP] = out.of_policy_loss[kP];
  out.routed[kC] = out.of_critic_loss[kC];
  out.routed[kZ] = out.of_kl_loss[kZ];
  if (cfg.cpr_grad_source != CprGradSource::policy) accumulate(out.routed[kZ], out.of_critic_loss[kZ]);
  if (cfg.cpr_grad_source != CprGradSource::critic) accumulate(out.routed[kZ], out.of_policy_loss[kZ]);
  return out;
}

double policy_loss(const AgentModel& model, const AgentParams& params, const EpisodeBatch& batch,
                   const TrainConfig& cfg) {
  ad::Tape tape;
  return build_loss_graph(tape, model, params, std::span(&batch, 1), cfg).policy.scalar();
}

double critic_loss(const AgentModel& model, const AgentParams& params, const EpisodeBatch& batch,
                   const TrainConfig& cfg) {
  ad::Tape tape;
  return build_loss_graph(tape, model, params, std::span(&batch, 1), cfg).critic.scalar();
}

double kl_loss(const AgentModel& model, const AgentParams& params, const EpisodeBatch& batch, const TrainConfig& cfg) {
  ad::Tape tape;
  return build_loss_graph(tape, model, params, std::span(&batch, 1), cfg).kl.scalar();
}

// ---- update ---------------------------------------------------------------------

Optimizers::Optimizers(const AgentParams& params, const AdamConfig& cfg)
    : adam{Adam(params.policy, cfg), Adam(params.critic, cfg), Adam(params.cpr, cfg)} {}

UpdateStats apply_update(AgentParams& params, Optimizers& opt, const LossGradients& grads, const TrainConfig& cfg) {
  const LossReport& rep = grads.report;
  for (const auto& [name, v] : {std::pair<const char*, double>{"L_P", rep.policy}, {"L_C", rep.critic}, {"L_KL", rep.kl}}) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite loss ") + name + "; update aborted");
  }
  const std::array<std::pair<const char*, const std::array<GradientSet, kNumGroups>*>, 3> losses{
      {{"L_P", &grads.of_policy_loss}, {"L_C", &grads.of_critic_loss}, {"L_KL", &grads.of_kl_loss}}};
  for (const auto& [name, set] : losses) {
    for (int g = 0; g < kNumGroups; ++g) {
      if (!all_finite((*set)[g])) {
        throw NumericError(std::string("non-finite gradient of ") + name + " w.r.t. " +
                           group_name(static_cast<Group>(g)) + " parameters; update aborted");
      }
    }
  }
  UpdateStats stats;
  const std::array<double, kNumGroups> lr{cfg.lr_policy, cfg.lr_critic, cfg.lr_cpr};
  for (int g = 0; g < kNumGroups; ++g) {
    GradientSet grad = grads.routed[g];
    const double norm = l2_norm(grad);
    stats.grad_norms[g] = norm;
    if (norm > cfg.grad_clip) {
      const double s = cfg.grad_clip / norm;
      for (auto& m : grad) m *= s;
    }
    opt.adam[g].step(params.group(static_cast<Group>(g)), grad, lr[g]);
  }
  return stats;
}

// ---- Trainer --------------------------------------------------------------------

Trainer::Trainer(const AgentModel& model, AgentParams params, const TrainConfig& cfg, const EnvParams& env_params,
                 std::vector<int> train_counts, int episode_limit, std::uint64_t seed)
    : model_(model),
      params_(std::move(params)),
      cfg_(cfg),
      env_params_(env_params),
      train_counts_(std::move(train_counts)),
      episode_limit_(episode_limit),
      opt_(params_, cfg.adam),
      rng_(seed) {
  cfg_.validate();
  model_.check(params_);
  if (train_counts_.empty()) throw ConfigError("tasks.train: must be non-empty");
}

bool Trainer::finished() const {
  if (updates_ >= cfg_.total_updates) return true;
  return cfg_.env_step_budget > 0 && env_steps_ >= cfg_.env_step_budget;
}

UpdateMetrics Trainer::update() {
  const std::uint64_t version = static_cast<std::uint64_t>(updates_);
  std::vector<EpisodeBatch> batches;
  batches.reserve(train_counts_.size());
  for (int n : train_counts_) {
    TaskSpec task{model_.env(), n, episode_limit_, rng_.next_u64()};
    EpisodeBatch b = collect_episodes(model_, params_, task, env_params_, cfg_.episodes_per_task, rng_);
    b.param_version = version;
    batches.push_back(std::move(b));
  }
  compute_advantages(batches, cfg_.gamma, cfg_.gae_lambda, cfg_.normalize_advantages);
  for (const auto& b : batches) {
    if (b.param_version != version) throw ContractError("update: stale episodes in rollout buffer");
  }

  UpdateMetrics m;
  const LossGradients grads = compute_loss_gradients(model_, params_, batches, cfg_);
  m.stats = apply_update(params_, opt_, grads, cfg_);
  m.losses = grads.report;
  for (const auto& b : batches) {
    m.task_returns[b.task.n_agents] = b.mean_agent_return();
    env_steps_ += b.env_steps();
  }
  ++updates_;
  m.update = updates_;
  m.env_steps = env_steps_;
  return m;
}

void Trainer::restore(AgentParams params, Optimizers opt, Rng rng, int updates, std::int64_t env_steps) {
  model_.check(params);
  params_ = std::move(params);
  opt_ = std::move(opt);
  rng_ = std::move(rng);
  updates_ = updates;
  env_steps_ = env_steps;
}

}  // namespace metacpr
