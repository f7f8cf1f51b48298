#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metacpr/autodiff.hpp"
#include "metacpr/rng.hpp"

namespace metacpr {

struct Parameter {
  std::string name;
  Matrix value;
};

/// One independently-updated parameter set (theta, mu or phi). Layers keep
/// integer indices into the group, so groups copy by value freely.
class ParamGroup {
 public:
  explicit ParamGroup(Group group = Group::policy) : group_(group) {}

  int add(std::string name, Matrix init);

  const Parameter& operator[](int i) const { return params_[i]; }
  Parameter& operator[](int i) { return params_[i]; }
  std::size_t size() const { return params_.size(); }
  bool empty() const { return params_.empty(); }
  /// Total number of scalars.
  std::size_t count() const;
  Group group() const { return group_; }

  ad::Var on(ad::Tape& tape, int index) const { return tape.parameter(group_, index, params_[index].value); }

  /// Order-sensitive hash of every scalar's bit pattern.
  std::uint64_t checksum() const;

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  friend bool operator==(const ParamGroup&, const ParamGroup&);

 private:
  Group group_;
  std::vector<Parameter> params_;
};

/// Per-parameter gradients aligned with a ParamGroup.
using GradientSet = std::vector<Matrix>;

/// Reads the gradient of every parameter in `group` from the tape's last
/// backward pass. Parameters absent from the tape get zeros.
GradientSet gradients(const ad::Tape& tape, const ParamGroup& group);
GradientSet zeros_like(const ParamGroup& group);
void accumulate(GradientSet& into, const GradientSet& g);
double l2_norm(const GradientSet& g);
bool all_finite(const GradientSet& g);

/// y = x W + b.
struct Linear {
  int w = -1;
  int b = -1;
  Eigen::Index in = 0;
  Eigen::Index out = 0;

  /// Uniform(-gain/sqrt(in), gain/sqrt(in)) weights, zero bias.
  static Linear create(ParamGroup& g, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng,
                       double gain = 1.0);

  ad::Var operator()(ad::Tape& tape, const ParamGroup& g, ad::Var x) const;
};

/// Gated recurrent unit cell with reset gate applied after the hidden
/// projection:
///   r = sig(x Wr + h Ur), u = sig(x Wu + h Uu), c = tanh(x Wc + r * (h Uc))
///   h' = (1 - u) * c + u * h
struct GruCell {
  int wx = -1;
  int bx = -1;
  int wh = -1;
  int bh = -1;
  Eigen::Index in = 0;
  Eigen::Index hidden = 0;

  static GruCell create(ParamGroup& g, const std::string& name, Eigen::Index in, Eigen::Index hidden, Rng& rng);

  ad::Var operator()(ad::Tape& tape, const ParamGroup& g, ad::Var x, ad::Var h) const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

class Adam {
 public:
  Adam() = default;
  Adam(const ParamGroup& group, AdamConfig config);

  /// One bias-corrected descent step on `group`. A zero learning rate leaves
  /// parameters bit-for-bit unchanged.
  void step(ParamGroup& group, const GradientSet& grad, double lr);

  std::int64_t steps() const { return t_; }
  const GradientSet& first_moment() const { return m_; }
  const GradientSet& second_moment() const { return v_; }
  void restore(std::int64_t t, GradientSet m, GradientSet v);

  friend bool operator==(const Adam&, const Adam&) = default;

 private:
  AdamConfig config_;
  std::int64_t t_ = 0;
  GradientSet m_;
  GradientSet v_;
};

}  // namespace metacpr
