#include "metacpr/model.hpp"

#include "metacpr/errors.hpp"

namespace metacpr {

const ParamGroup& AgentParams::group(Group g) const {
  switch (g) {
    case Group::policy:
      return policy;
    case Group::critic:
      return critic;
    case Group::cpr:
      return cpr;
  }
  return policy;
}

ParamGroup& AgentParams::group(Group g) {
  return const_cast<ParamGroup&>(static_cast<const AgentParams&>(*this).group(g));
}

AgentModel::AgentModel(const ModelConfig& cfg, EnvId env)
    : cfg_(cfg), env_(env), obs_dim_(observation_dim(env)), space_(action_space(env)) {
  cfg_.validate();
  Rng scratch(0);
  layout_ = build(scratch);
}

AgentParams AgentModel::build(Rng& rng) {
  AgentParams p;
  policy_ = PolicyNet::create(cfg_, obs_dim_, space_, p.policy, rng);
  critic_ = CriticNet::create(cfg_, obs_dim_, p.critic, rng);
  if (cfg_.use_cpr) {
    cpr_ = CprNet::create(cfg_, context_input_dim(cfg_, obs_dim_, space_), p.cpr, rng);
  } else {
    cpr_.reset();
  }
  return p;
}

AgentParams AgentModel::init_params(Rng& rng) const {
  // Building is deterministic in layout; only the drawn values differ.
  AgentModel copy = *this;
  return copy.build(rng);
}

void AgentModel::check(const AgentParams& params) const {
  for (Group g : {Group::policy, Group::critic, Group::cpr}) {
    const ParamGroup& want = layout_.group(g);
    const ParamGroup& got = params.group(g);
    if (want.size() != got.size()) {
      throw ContractError(std::string("parameter group '") + group_name(g) + "' has the wrong number of tensors");
    }
    for (std::size_t i = 0; i < want.size(); ++i) {
      const auto& a = want[static_cast<int>(i)];
      const auto& b = got[static_cast<int>(i)];
      if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols()) {
        throw ContractError("parameter '" + b.name + "' does not match the architecture (expected '" + a.name + "')");
      }
    }
  }
}

}  // namespace metacpr
