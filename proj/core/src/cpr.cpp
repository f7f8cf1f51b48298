#include "metacpr/cpr.hpp"

#include <cmath>

#include "metacpr/errors.hpp"

namespace metacpr {

void GaussianContext::validate() const {
  if (mean.size() != variance.size()) throw ContractError("GaussianContext: mean/variance size mismatch");
  if (!mean.allFinite()) throw ContractError("GaussianContext: non-finite mean");
  for (Eigen::Index d = 0; d < variance.size(); ++d) {
    if (!(variance(d) > 0.0) || !std::isfinite(variance(d))) {
      throw ContractError("GaussianContext: variance must be finite and strictly positive");
    }
  }
}

GaussianContext fuse_contexts(std::span<const GaussianContext> contexts) {
  if (contexts.empty()) throw ContractError("fuse_contexts: no contexts");
  const Eigen::Index dim = contexts[0].mean.size();
  Eigen::VectorXd precision = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd weighted = Eigen::VectorXd::Zero(dim);
  for (const auto& q : contexts) {
    q.validate();
    if (q.mean.size() != dim) throw ContractError("fuse_contexts: dimension mismatch");
    const Eigen::VectorXd p = q.variance.cwiseInverse();
    precision += p;
    weighted += q.mean.cwiseProduct(p);
  }
  GaussianContext out;
  out.variance = precision.cwiseInverse();
  out.mean = out.variance.cwiseProduct(weighted);
  return out;
}

double kl_to_prior(const GaussianContext& q) {
  q.validate();
  double kl = 0.0;
  for (Eigen::Index d = 0; d < q.mean.size(); ++d) {
    const double v = q.variance(d);
    kl += q.mean(d) * q.mean(d) + v - 1.0 - std::log(v);
  }
  return 0.5 * kl;
}

Eigen::VectorXd sample_context(const GaussianContext& q, const Eigen::VectorXd& xi) {
  q.validate();
  if (xi.size() != q.mean.size()) throw ContractError("sample_context: noise dimension mismatch");
  return q.mean + q.variance.cwiseSqrt().cwiseProduct(xi);
}

Eigen::VectorXd sample_context(const GaussianContext& q, Rng& rng) {
  Eigen::VectorXd xi(q.mean.size());
  for (Eigen::Index d = 0; d < xi.size(); ++d) xi(d) = rng.normal();
  return sample_context(q, xi);
}

int context_input_dim(const ModelConfig& cfg, int obs_dim, const ActionSpace& space) {
  const int transition = obs_dim + space.encoded_width() + 1;
  switch (cfg.context_input) {
    case ContextInput::messages:
      return cfg.message_dim;
    case ContextInput::transitions:
      return transition;
    case ContextInput::both:
      return cfg.message_dim + transition;
  }
  return cfg.message_dim;
}

CprNet CprNet::create(const ModelConfig& cfg, int input_dim, ParamGroup& g, Rng& rng) {
  CprNet net;
  net.cfg_ = cfg;
  net.input_dim_ = input_dim;
  net.trunk_ = Linear::create(g, "cpr.estimator", input_dim, cfg.cpr_hidden, rng);
  net.mean_head_ = Linear::create(g, "cpr.mean_head", cfg.cpr_hidden, cfg.context_dim, rng);
  net.var_head_ = Linear::create(g, "cpr.var_head", cfg.cpr_hidden, cfg.context_dim, rng);
  if (cfg.cpr_recurrent) {
    net.gru_ = GruCell::create(g, "cpr.gru", cfg.context_dim, cfg.cpr_hidden, rng);
  } else {
    net.feedforward_ = Linear::create(g, "cpr.feedforward", cfg.context_dim, cfg.cpr_hidden, rng);
  }
  net.z_head_ = Linear::create(g, "cpr.z_head", cfg.cpr_hidden, cfg.task_dim, rng);
  return net;
}

CprNet::Posterior CprNet::estimate(ad::Tape& tape, const ParamGroup& g, ad::Var inputs) const {
  using namespace ad;
  if (inputs.cols() != input_dim_) throw ContractError("estimate_context: input width mismatch");
  if (!inputs.value().allFinite()) throw NumericError("estimate_context: non-finite input");
  const Var h = tanh(trunk_(tape, g, inputs));
  Posterior p;
  p.mean = mean_head_(tape, g, h);
  p.variance = clamp(add_scalar(softplus(var_head_(tape, g, h)), cfg_.variance_floor), 0.0, cfg_.variance_cap);
  return p;
}

CprNet::Posterior CprNet::fuse(const Posterior& p) {
  using namespace ad;
  const Var precision = reciprocal(p.variance);
  Posterior f;
  f.variance = reciprocal(sum_rows(precision));
  f.mean = mul(f.variance, sum_rows(mul(p.mean, precision)));
  return f;
}

ad::Var CprNet::sample(const Posterior& fused, const Matrix& xi) const {
  using namespace ad;
  if (!cfg_.cpr_stochastic) return fused.mean;
  if (xi.rows() != 1 || xi.cols() != fused.mean.cols()) throw ContractError("sample_context: noise shape mismatch");
  return add(fused.mean, mul(sqrt(fused.variance), fused.mean.tape()->constant(xi)));
}

CprNet::Output CprNet::encode(ad::Tape& tape, const ParamGroup& g, ad::Var c, ad::Var h) const {
  using namespace ad;
  if (!c.value().allFinite()) throw NumericError("encode_task: non-finite context");
  Output out;
  if (cfg_.cpr_recurrent) {
    out.hidden = gru_(tape, g, c, h);
  } else {
    out.hidden = tanh(feedforward_(tape, g, c));
  }
  out.z = tanh(z_head_(tape, g, out.hidden));
  if (!cfg_.cpr_recurrent) out.hidden = h;
  return out;
}

ad::Var CprNet::kl(const Posterior& p) {
  using namespace ad;
  const Var terms = sub(add(square(p.mean), p.variance), log(p.variance));
  return scale(add_scalar(sum_cols(terms), -static_cast<double>(p.mean.cols())), 0.5);
}

GaussianContext estimate_context(const CprNet& net, const ParamGroup& g, const Eigen::VectorXd& input) {
  ad::Tape tape;
  const auto p = net.estimate(tape, g, tape.constant(Matrix(input.transpose())));
  return GaussianContext{p.mean.value().row(0).transpose(), p.variance.value().row(0).transpose()};
}

EncodedTask encode_task(const CprNet& net, const ParamGroup& g, const Eigen::VectorXd& c, const CprState& state) {
  ad::Tape tape;
  Eigen::VectorXd h = state.h.size() == 0 ? Eigen::VectorXd::Zero(net.hidden()) : state.h;
  const auto out = net.encode(tape, g, tape.constant(Matrix(c.transpose())), tape.constant(Matrix(h.transpose())));
  return EncodedTask{out.z.value().row(0).transpose(), CprState{out.hidden.value().row(0).transpose()}};
}

}  // namespace metacpr
