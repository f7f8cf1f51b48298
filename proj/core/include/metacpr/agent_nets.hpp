#pragma once

// Shared recurrent communicating policy and centralized critic with
// conditional normalization. Every forward function is batched over agents
// (one row per agent) and records onto an autodiff tape; the value-level
// helpers at the bottom wrap them for single-agent use.

#include <span>
#include <vector>

#include "metacpr/autodiff.hpp"
#include "metacpr/envs.hpp"
#include "metacpr/nn.hpp"
#include "metacpr/rng.hpp"

namespace metacpr {

enum class ContextInput { messages, transitions, both };

struct ModelConfig {
  int hidden = 64;        // encoder width d_e and recurrent width d_h
  int message_dim = 16;   // d_m
  int context_dim = 8;    // d_c
  int task_dim = 8;       // d_z
  int cpr_hidden = 32;    // CPR estimator and recurrent width

  bool use_messages = true;
  bool use_cpr = true;
  bool cpr_recurrent = true;
  bool cpr_stochastic = true;
  bool critic_cn = true;
  bool centralized_critic = true;
  ContextInput context_input = ContextInput::messages;

  double variance_floor = 1e-4;
  double variance_cap = 1e4;
  double cn_eps = 1e-5;
  double init_sigma = 0.5;

  /// Throws ConfigError on inconsistent switches or non-positive sizes.
  void validate() const;
  /// Effective message width (0 when communication is disabled).
  int effective_message_dim() const { return use_messages ? message_dim : 0; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Per-agent action distribution: categorical probabilities, or a diagonal
/// Gaussian (mean, stddev).
struct ActionDistribution {
  bool discrete = true;
  Eigen::VectorXd probs;
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;

  static ActionDistribution categorical(Eigen::VectorXd p);
  static ActionDistribution gaussian(Eigen::VectorXd mean, Eigen::VectorXd stddev);
};

struct SampledAction {
  int index = 0;             // discrete
  Eigen::VectorXd raw;       // continuous draw before clamping; log_prob refers to it
  Eigen::VectorXd clamped;   // continuous action inside the box
  double log_prob = 0.0;
};

SampledAction sample_action(const ActionDistribution& dist, const ActionSpace& space, Rng& rng);
/// Most likely action (argmax / mean), used by greedy evaluation.
SampledAction mode_action(const ActionDistribution& dist, const ActionSpace& space);
double log_prob(const ActionDistribution& dist, const SampledAction& a);
/// Shannon entropy (categorical) or differential entropy (Gaussian).
double entropy(const ActionDistribution& dist);

/// Policy network pi_theta: observation encoder G, message encoder F, a GRU
/// over [G(o), e, z], and action and message heads on the new hidden state.
class PolicyNet {
 public:
  struct Output {
    ad::Var hidden;   // n x d_h
    ad::Var logits;   // n x |A| (discrete) or n x d_a Gaussian mean
    ad::Var sigma;  // 1 x d_a stddev, continuous only
    ad::Var message;  // n x d_m, absent when messages are disabled
  };

  static PolicyNet create(const ModelConfig& cfg, int obs_dim, const ActionSpace& space, ParamGroup& g, Rng& rng);

  /// Fused incoming messages: row i is the mean of F(m_j) over j != i.
  /// The sum runs in a canonical (lexicographic) order of the encoded rows,
  /// so any relabeling of agents yields bit-identical rows.
  ad::Var encode_messages(ad::Tape& tape, const ParamGroup& g, ad::Var messages) const;

  /// One recurrent step for all agents. `fused` and `z` may be invalid Vars
  /// when the corresponding input is disabled.
  Output step(ad::Tape& tape, const ParamGroup& g, ad::Var obs, ad::Var h, ad::Var fused, ad::Var z) const;

  /// log pi(a|.) per agent as an n x 1 column.
  ad::Var log_prob(const Output& out, std::span<const SampledAction> actions) const;
  /// Entropy per agent as an n x 1 column.
  ad::Var entropy(const Output& out) const;
  ActionDistribution distribution(const Output& out, int agent) const;

  const ActionSpace& space() const { return space_; }
  int hidden() const { return static_cast<int>(gru_.hidden); }

 private:
  ModelConfig cfg_;
  ActionSpace space_;
  Linear obs_encoder_;
  Linear msg_encoder_;
  GruCell gru_;
  Linear action_head_;
  Linear message_head_;
  int sigma_raw_ = -1;
};

/// Critic V_mu: observation encoder, mean-pooled encodings of the other
/// agents, a GRU over [G(o), pooled, z], conditional normalization driven by
/// z, and a scalar value head.
class CriticNet {
 public:
  struct Output {
    ad::Var hidden;  // n x d_h
    ad::Var value;   // n x 1
  };

  static CriticNet create(const ModelConfig& cfg, int obs_dim, ParamGroup& g, Rng& rng);

  Output step(ad::Tape& tape, const ParamGroup& g, ad::Var obs, ad::Var h, ad::Var z) const;

  /// Per-row layer normalization followed by scale * x + offset, with
  /// (scale, offset) produced from z by the generator omega. Without CN the
  /// scale and offset are plain learned vectors. z is 1 x d_z or n x d_z.
  ad::Var cn_modulate(ad::Tape& tape, const ParamGroup& g, ad::Var features, ad::Var z) const;

  /// (scale, offset) = omega(z), each rows(z) x d_h.
  std::pair<ad::Var, ad::Var> cn_weights(ad::Tape& tape, const ParamGroup& g, ad::Var z) const;

  int hidden() const { return static_cast<int>(gru_.hidden); }

 private:
  ModelConfig cfg_;
  Linear obs_encoder_;
  GruCell gru_;
  Linear generator_;  // omega: z -> [scale | offset]
  int plain_scale_ = -1;
  int plain_offset_ = -1;
  Linear value_head_;
};

/// Normalizes `features` per row and applies scale * x + offset.
ad::Var conditional_normalize(ad::Var features, ad::Var scale, ad::Var offset, double eps);

// ---- value-level helpers -------------------------------------------------------

/// (1/(n-1)) * sum_j F(m_j) for the n-1 incoming messages of one receiver.
Eigen::VectorXd encode_messages(const PolicyNet& net, const ParamGroup& g, std::span<const Eigen::VectorXd> incoming);

}  // namespace metacpr
