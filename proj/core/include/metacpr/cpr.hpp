#pragma once

// Communication pattern recognition: a per-message Gaussian context
// estimator, product-of-Gaussians fusion across agents, and a recurrent
// context encoder producing the task vector z shared by all agents.

#include <span>

#include "metacpr/agent_nets.hpp"
#include "metacpr/autodiff.hpp"
#include "metacpr/nn.hpp"
#include "metacpr/rng.hpp"

namespace metacpr {

/// Diagonal Gaussian over the latent context.
struct GaussianContext {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;

  /// Throws ContractError unless every variance is finite and > 0 and the
  /// means are finite.
  void validate() const;
};

/// Normalized product of diagonal Gaussians, computed in precision space:
/// precision = sum_i 1/var_i, mean = var * sum_i mean_i/var_i.
GaussianContext fuse_contexts(std::span<const GaussianContext> contexts);

/// KL(q || N(0, I)) = 1/2 sum_d (mu^2 + var - 1 - ln var).
double kl_to_prior(const GaussianContext& q);

/// Reparameterized draw mean + sqrt(var) * xi with xi ~ N(0, I).
Eigen::VectorXd sample_context(const GaussianContext& q, Rng& rng);
Eigen::VectorXd sample_context(const GaussianContext& q, const Eigen::VectorXd& xi);

/// Width of the estimator input for a given context source.
int context_input_dim(const ModelConfig& cfg, int obs_dim, const ActionSpace& space);

class CprNet {
 public:
  /// Batched posterior parameters; one row per message (or one row after fusion).
  struct Posterior {
    ad::Var mean;
    ad::Var variance;
  };
  struct Output {
    ad::Var z;       // 1 x d_z
    ad::Var hidden;  // 1 x cpr_hidden (unused without recurrence)
  };

  static CprNet create(const ModelConfig& cfg, int input_dim, ParamGroup& g, Rng& rng);

  /// Phi_c: per-row Gaussian posterior; variance = clamp(softplus(.) + floor, cap).
  Posterior estimate(ad::Tape& tape, const ParamGroup& g, ad::Var inputs) const;
  /// Product-of-Gaussians fusion on the tape: n rows -> 1 row.
  static Posterior fuse(const Posterior& p);
  /// c = mean + sqrt(var) * xi (stochastic) or c = mean (deterministic variant).
  ad::Var sample(const Posterior& fused, const Matrix& xi) const;
  /// Phi_z: one step of the context encoder. Without recurrence the hidden
  /// input is ignored and returned unchanged.
  Output encode(ad::Tape& tape, const ParamGroup& g, ad::Var c, ad::Var h) const;
  /// Per-row KL to the unit Gaussian prior, as a rows x 1 column.
  static ad::Var kl(const Posterior& p);

  int input_dim() const { return input_dim_; }
  int hidden() const { return static_cast<int>(cfg_.cpr_recurrent ? gru_.hidden : cfg_.cpr_hidden); }
  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  int input_dim_ = 0;
  Linear trunk_;
  Linear mean_head_;
  Linear var_head_;
  GruCell gru_;
  Linear feedforward_;
  Linear z_head_;
};

/// Recurrent state of the context encoder; one per environment instance.
struct CprState {
  Eigen::VectorXd h;
};

// ---- value-level helpers -------------------------------------------------------

GaussianContext estimate_context(const CprNet& net, const ParamGroup& g, const Eigen::VectorXd& input);

struct EncodedTask {
  Eigen::VectorXd z;
  CprState next;
};
EncodedTask encode_task(const CprNet& net, const ParamGroup& g, const Eigen::VectorXd& c, const CprState& state);

}  // namespace metacpr
