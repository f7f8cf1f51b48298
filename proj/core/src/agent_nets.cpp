#include "metacpr/agent_nets.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "metacpr/errors.hpp"

namespace metacpr {

void ModelConfig::validate() const {
  if (hidden < 1) throw ConfigError("model.hidden must be >= 1");
  if (message_dim < 1) throw ConfigError("model.message_dim must be >= 1");
  if (context_dim < 1) throw ConfigError("model.context_dim must be >= 1");
  if (task_dim < 1) throw ConfigError("model.task_dim must be >= 1");
  if (cpr_hidden < 1) throw ConfigError("model.cpr_hidden must be >= 1");
  if (!(variance_floor > 0.0) || !(variance_cap > variance_floor)) {
    throw ConfigError("model.variance_floor/variance_cap: need 0 < floor < cap");
  }
  if (!(cn_eps > 0.0)) throw ConfigError("model.cn_eps must be > 0");
  if (!(init_sigma > 0.0)) throw ConfigError("model.init_sigma must be > 0");
  if (use_cpr && !use_messages && context_input != ContextInput::transitions) {
    throw ConfigError("model.context_input: message context requires model.use_messages");
  }
}

ActionDistribution ActionDistribution::categorical(Eigen::VectorXd p) {
  ActionDistribution d;
  d.discrete = true;
  d.probs = std::move(p);
  return d;
}

ActionDistribution ActionDistribution::gaussian(Eigen::VectorXd mean, Eigen::VectorXd stddev) {
  ActionDistribution d;
  d.discrete = false;
  d.mean = std::move(mean);
  d.stddev = std::move(stddev);
  return d;
}

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

double gaussian_log_prob(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, const Eigen::VectorXd& stddev) {
  double lp = 0.0;
  for (Eigen::Index d = 0; d < x.size(); ++d) {
    const double z = (x(d) - mean(d)) / stddev(d);
    lp += -0.5 * z * z - std::log(stddev(d)) - 0.5 * kLog2Pi;
  }
  return lp;
}

}  // namespace

SampledAction sample_action(const ActionDistribution& dist, const ActionSpace& space, Rng& rng) {
  SampledAction a;
  if (dist.discrete) {
    const double u = rng.uniform();
    double cum = 0.0;
    a.index = static_cast<int>(dist.probs.size()) - 1;
    for (Eigen::Index k = 0; k < dist.probs.size(); ++k) {
      cum += dist.probs(k);
      if (u < cum) {
        a.index = static_cast<int>(k);
        break;
      }
    }
    // Never land on a zero-probability tail entry through rounding.
    while (a.index > 0 && dist.probs(a.index) <= 0.0) --a.index;
    a.log_prob = std::log(dist.probs(a.index));
    return a;
  }
  a.raw.resize(dist.mean.size());
  for (Eigen::Index d = 0; d < dist.mean.size(); ++d) a.raw(d) = dist.mean(d) + dist.stddev(d) * rng.normal();
  a.clamped = a.raw.cwiseMax(space.low).cwiseMin(space.high);
  a.log_prob = gaussian_log_prob(a.raw, dist.mean, dist.stddev);
  return a;
}

SampledAction mode_action(const ActionDistribution& dist, const ActionSpace& space) {
  SampledAction a;
  if (dist.discrete) {
    dist.probs.maxCoeff(&a.index);
    a.log_prob = std::log(dist.probs(a.index));
    return a;
  }
  a.raw = dist.mean;
  a.clamped = a.raw.cwiseMax(space.low).cwiseMin(space.high);
  a.log_prob = gaussian_log_prob(a.raw, dist.mean, dist.stddev);
  return a;
}

double log_prob(const ActionDistribution& dist, const SampledAction& a) {
  if (dist.discrete) return std::log(dist.probs(a.index));
  return gaussian_log_prob(a.raw, dist.mean, dist.stddev);
}

double entropy(const ActionDistribution& dist) {
  if (dist.discrete) {
    double h = 0.0;
    for (Eigen::Index k = 0; k < dist.probs.size(); ++k) {
      const double p = dist.probs(k);
      if (p > 0.0) h -= p * std::log(p);
    }
    return h;
  }
  double h = 0.0;
  for (Eigen::Index d = 0; d < dist.stddev.size(); ++d) h += std::log(dist.stddev(d)) + 0.5 * (1.0 + kLog2Pi);
  return h;
}

// ---- PolicyNet ------------------------------------------------------------------

PolicyNet PolicyNet::create(const ModelConfig& cfg, int obs_dim, const ActionSpace& space, ParamGroup& g, Rng& rng) {
  PolicyNet net;
  net.cfg_ = cfg;
  net.space_ = space;
  net.obs_encoder_ = Linear::create(g, "policy.obs_encoder", obs_dim, cfg.hidden, rng);
  Eigen::Index gru_in = cfg.hidden;
  if (cfg.use_messages) {
    net.msg_encoder_ = Linear::create(g, "policy.msg_encoder", cfg.message_dim, cfg.hidden, rng);
    gru_in += cfg.hidden;
  }
  gru_in += cfg.task_dim;
  net.gru_ = GruCell::create(g, "policy.gru", gru_in, cfg.hidden, rng);
  // Small head weights start the policy close to uniform / zero-mean.
  net.action_head_ = Linear::create(g, "policy.action_head", cfg.hidden, space.encoded_width(), rng, 0.01);
  if (cfg.use_messages) {
    net.message_head_ = Linear::create(g, "policy.message_head", cfg.hidden, cfg.message_dim, rng);
  }
  if (!space.discrete) {
    // softplus(x) = init_sigma
    const double raw = std::log(std::expm1(cfg.init_sigma));
    net.sigma_raw_ = g.add("policy.sigma_raw", Matrix::Constant(1, space.dim, raw));
  }
  return net;
}

ad::Var PolicyNet::encode_messages(ad::Tape& tape, const ParamGroup& g, ad::Var messages) const {
  if (!cfg_.use_messages) throw ContractError("encode_messages: communication disabled");
  if (messages.rows() < 2) throw ContractError("encode_messages: needs at least one incoming message per agent");
  if (messages.cols() != cfg_.message_dim) throw ContractError("encode_messages: message width mismatch");
  return ad::mean_others(ad::tanh(msg_encoder_(tape, g, messages)));
}

PolicyNet::Output PolicyNet::step(ad::Tape& tape, const ParamGroup& g, ad::Var obs, ad::Var h, ad::Var fused,
                                  ad::Var z) const {
  using namespace ad;
  if (!obs.value().allFinite()) throw NumericError("policy_step: non-finite observation");
  if (!h.value().allFinite()) throw NumericError("policy_step: non-finite hidden state");
  std::vector<Var> parts{tanh(obs_encoder_(tape, g, obs))};
  if (cfg_.use_messages) {
    if (!fused.valid()) throw ContractError("policy_step: fused messages required");
    if (!fused.value().allFinite()) throw NumericError("policy_step: non-finite fused messages");
    parts.push_back(fused);
  }
  if (!z.valid()) throw ContractError("policy_step: task information required");
  if (!z.value().allFinite()) throw NumericError("policy_step: non-finite task information");
  parts.push_back(z.rows() == obs.rows() ? z : broadcast_rows(z, obs.rows()));

  Output out;
  out.hidden = gru_(tape, g, concat_cols(parts), h);
  out.logits = action_head_(tape, g, out.hidden);
  if (!space_.discrete) out.sigma = softplus(g.on(tape, sigma_raw_));
  if (cfg_.use_messages) out.message = tanh(message_head_(tape, g, out.hidden));
  return out;
}

ad::Var PolicyNet::log_prob(const Output& out, std::span<const SampledAction> actions) const {
  using namespace ad;
  const Eigen::Index n = out.logits.rows();
  if (static_cast<Eigen::Index>(actions.size()) != n) throw ContractError("log_prob: action count mismatch");
  Tape& tape = *out.logits.tape();
  if (space_.discrete) {
    std::vector<int> idx(actions.size());
    for (std::size_t i = 0; i < actions.size(); ++i) idx[i] = actions[i].index;
    return pick(log_softmax(out.logits), idx);
  }
  Matrix raw(n, space_.dim);
  for (Eigen::Index i = 0; i < n; ++i) raw.row(i) = actions[i].raw.transpose();
  const Var sigma = out.sigma;
  const Var zscore = mul_row(sub(tape.constant(std::move(raw)), out.logits), reciprocal(sigma));
  const Var quad = scale(sum_cols(square(zscore)), -0.5);
  const Var log_norm = broadcast_rows(sum_cols(log(sigma)), n);
  return add_scalar(sub(quad, log_norm), -0.5 * kLog2Pi * space_.dim);
}

ad::Var PolicyNet::entropy(const Output& out) const {
  using namespace ad;
  const Eigen::Index n = out.logits.rows();
  if (space_.discrete) {
    const Var lp = log_softmax(out.logits);
    return neg(sum_cols(mul(exp(lp), lp)));
  }
  const Var h = add_scalar(sum_cols(log(out.sigma)), 0.5 * (1.0 + kLog2Pi) * space_.dim);
  return broadcast_rows(h, n);
}

ActionDistribution PolicyNet::distribution(const Output& out, int agent) const {
  const Eigen::VectorXd row = out.logits.value().row(agent).transpose();
  if (space_.discrete) {
    const double m = row.maxCoeff();
    Eigen::VectorXd p = (row.array() - m).exp();
    p /= p.sum();
    return ActionDistribution::categorical(std::move(p));
  }
  return ActionDistribution::gaussian(row, out.sigma.value().row(0).transpose());
}

// ---- CriticNet ------------------------------------------------------------------

CriticNet CriticNet::create(const ModelConfig& cfg, int obs_dim, ParamGroup& g, Rng& rng) {
  CriticNet net;
  net.cfg_ = cfg;
  net.obs_encoder_ = Linear::create(g, "critic.obs_encoder", obs_dim, cfg.hidden, rng);
  Eigen::Index gru_in = cfg.hidden + cfg.task_dim;
  if (cfg.centralized_critic) gru_in += cfg.hidden;
  net.gru_ = GruCell::create(g, "critic.gru", gru_in, cfg.hidden, rng);
  if (cfg.critic_cn) {
    net.generator_ = Linear::create(g, "critic.cn_generator", cfg.task_dim, 2 * cfg.hidden, rng, 0.1);
    // Bias starts at scale = 1, offset = 0.
    Matrix& bias = g[net.generator_.b].value;
    bias.leftCols(cfg.hidden).setOnes();
  } else {
    net.plain_scale_ = g.add("critic.norm_scale", Matrix::Ones(1, cfg.hidden));
    net.plain_offset_ = g.add("critic.norm_offset", Matrix::Zero(1, cfg.hidden));
  }
  net.value_head_ = Linear::create(g, "critic.value_head", cfg.hidden, 1, rng);
  return net;
}

ad::Var conditional_normalize(ad::Var features, ad::Var scale, ad::Var offset, double eps) {
  using namespace ad;
  const Eigen::Index n = features.rows();
  const Var normalized = layer_norm(features, eps);
  const Var s = scale.rows() == n ? scale : broadcast_rows(scale, n);
  const Var o = offset.rows() == n ? offset : broadcast_rows(offset, n);
  return add(mul(normalized, s), o);
}

std::pair<ad::Var, ad::Var> CriticNet::cn_weights(ad::Tape& tape, const ParamGroup& g, ad::Var z) const {
  if (!cfg_.critic_cn) return {g.on(tape, plain_scale_), g.on(tape, plain_offset_)};
  const ad::Var so = generator_(tape, g, z);
  return {ad::slice_cols(so, 0, cfg_.hidden), ad::slice_cols(so, cfg_.hidden, cfg_.hidden)};
}

ad::Var CriticNet::cn_modulate(ad::Tape& tape, const ParamGroup& g, ad::Var features, ad::Var z) const {
  const auto [s, o] = cn_weights(tape, g, z);
  return conditional_normalize(features, s, o, cfg_.cn_eps);
}

CriticNet::Output CriticNet::step(ad::Tape& tape, const ParamGroup& g, ad::Var obs, ad::Var h, ad::Var z) const {
  using namespace ad;
  if (!obs.value().allFinite()) throw NumericError("critic_value: non-finite observation");
  if (!h.value().allFinite()) throw NumericError("critic_value: non-finite hidden state");
  if (!z.value().allFinite()) throw NumericError("critic_value: non-finite task information");
  const Eigen::Index n = obs.rows();
  const Var encoded = tanh(obs_encoder_(tape, g, obs));
  std::vector<Var> parts{encoded};
  if (cfg_.centralized_critic) parts.push_back(mean_others(encoded));
  const Var zb = z.rows() == n ? z : broadcast_rows(z, n);
  parts.push_back(zb);
  Output out;
  out.hidden = gru_(tape, g, concat_cols(parts), h);
  out.value = value_head_(tape, g, cn_modulate(tape, g, out.hidden, z));
  return out;
}

Eigen::VectorXd encode_messages(const PolicyNet& net, const ParamGroup& g, std::span<const Eigen::VectorXd> incoming) {
  if (incoming.empty()) throw ContractError("encode_messages: no incoming messages (n >= 2 required)");
  ad::Tape tape;
  Matrix m(static_cast<Eigen::Index>(incoming.size()), incoming[0].size());
  for (std::size_t j = 0; j < incoming.size(); ++j) {
    if (incoming[j].size() != m.cols()) throw ContractError("encode_messages: message width mismatch");
    m.row(static_cast<Eigen::Index>(j)) = incoming[j].transpose();
  }
  // Append a placeholder receiver row; mean_others over n rows then gives the
  // receiver's fused input from the n-1 real rows.
  Matrix with_receiver(m.rows() + 1, m.cols());
  with_receiver.topRows(m.rows()) = m;
  with_receiver.row(m.rows()).setZero();
  const ad::Var fused = net.encode_messages(tape, g, tape.constant(with_receiver));
  return fused.value().row(m.rows()).transpose();
}

}  // namespace metacpr
