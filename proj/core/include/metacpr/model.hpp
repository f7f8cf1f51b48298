#pragma once

#include <optional>

#include "metacpr/agent_nets.hpp"
#include "metacpr/cpr.hpp"
#include "metacpr/envs.hpp"
#include "metacpr/nn.hpp"

namespace metacpr {

/// The three parameter groups: theta (policy), mu (critic), phi (CPR).
struct AgentParams {
  ParamGroup policy{Group::policy};
  ParamGroup critic{Group::critic};
  ParamGroup cpr{Group::cpr};

  const ParamGroup& group(Group g) const;
  ParamGroup& group(Group g);
  std::size_t count() const { return policy.count() + critic.count() + cpr.count(); }

  friend bool operator==(const AgentParams&, const AgentParams&) = default;
};

/// Network architecture for one environment kind. Holds no parameter
/// values; the same model drives any number of agents.
class AgentModel {
 public:
  AgentModel(const ModelConfig& cfg, EnvId env);

  AgentParams init_params(Rng& rng) const;

  const ModelConfig& config() const { return cfg_; }
  EnvId env() const { return env_; }
  int obs_dim() const { return obs_dim_; }
  const ActionSpace& space() const { return space_; }
  const PolicyNet& policy() const { return policy_; }
  const CriticNet& critic() const { return critic_; }
  /// Null when the CPR module is disabled.
  const CprNet* cpr() const { return cpr_ ? &*cpr_ : nullptr; }

  /// Throws ContractError when `params` does not match this architecture.
  void check(const AgentParams& params) const;

 private:
  AgentParams build(Rng& rng);

  ModelConfig cfg_;
  EnvId env_;
  int obs_dim_ = 0;
  ActionSpace space_;
  PolicyNet policy_;
  CriticNet critic_;
  std::optional<CprNet> cpr_;
  AgentParams layout_;
};

}  // namespace metacpr
