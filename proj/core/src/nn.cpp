#include "metacpr/nn.hpp"

#include <cmath>
#include <cstring>

#include "metacpr/errors.hpp"

namespace metacpr {

int ParamGroup::add(std::string name, Matrix init) {
  params_.push_back(Parameter{std::move(name), std::move(init)});
  return static_cast<int>(params_.size()) - 1;
}

std::size_t ParamGroup::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

std::uint64_t ParamGroup::checksum() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& p : params_) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      std::uint64_t bits;
      const double x = p.value.data()[i];
      std::memcpy(&bits, &x, sizeof bits);
      for (int k = 0; k < 8; ++k) {
        h ^= (bits >> (8 * k)) & 0xffu;
        h *= 1099511628211ull;
      }
    }
  }
  return h;
}

bool operator==(const ParamGroup& a, const ParamGroup& b) {
  if (a.group_ != b.group_ || a.params_.size() != b.params_.size()) return false;
  for (std::size_t i = 0; i < a.params_.size(); ++i) {
    if (a.params_[i].name != b.params_[i].name || a.params_[i].value != b.params_[i].value) return false;
  }
  return true;
}

GradientSet gradients(const ad::Tape& tape, const ParamGroup& group) {
  GradientSet out;
  out.reserve(group.size());
  for (std::size_t i = 0; i < group.size(); ++i) {
    const int idx = static_cast<int>(i);
    if (tape.has_parameter(group.group(), idx)) {
      out.push_back(tape.parameter_grad(group.group(), idx));
    } else {
      out.push_back(Matrix::Zero(group[idx].value.rows(), group[idx].value.cols()));
    }
  }
  return out;
}

GradientSet zeros_like(const ParamGroup& group) {
  GradientSet out;
  for (const auto& p : group) out.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  return out;
}

void accumulate(GradientSet& into, const GradientSet& g) {
  if (into.size() != g.size()) throw ContractError("accumulate: gradient set size mismatch");
  for (std::size_t i = 0; i < g.size(); ++i) into[i] += g[i];
}

double l2_norm(const GradientSet& g) {
  double s = 0.0;
  for (const auto& m : g) s += m.squaredNorm();
  return std::sqrt(s);
}

bool all_finite(const GradientSet& g) {
  for (const auto& m : g) {
    if (!m.allFinite()) return false;
  }
  return true;
}

Linear Linear::create(ParamGroup& g, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng,
                      double gain) {
  const double bound = gain / std::sqrt(static_cast<double>(in));
  Matrix w(in, out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
  Linear layer;
  layer.in = in;
  layer.out = out;
  layer.w = g.add(name + ".w", std::move(w));
  layer.b = g.add(name + ".b", Matrix::Zero(1, out));
  return layer;
}

ad::Var Linear::operator()(ad::Tape& tape, const ParamGroup& g, ad::Var x) const {
  return ad::affine(x, g.on(tape, w), g.on(tape, b));
}

GruCell GruCell::create(ParamGroup& g, const std::string& name, Eigen::Index in, Eigen::Index hidden, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  auto uniform = [&](Eigen::Index r, Eigen::Index c) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
    return m;
  };
  GruCell cell;
  cell.in = in;
  cell.hidden = hidden;
  cell.wx = g.add(name + ".wx", uniform(in, 3 * hidden));
  cell.bx = g.add(name + ".bx", uniform(1, 3 * hidden));
  cell.wh = g.add(name + ".wh", uniform(hidden, 3 * hidden));
  cell.bh = g.add(name + ".bh", uniform(1, 3 * hidden));
  return cell;
}

ad::Var GruCell::operator()(ad::Tape& tape, const ParamGroup& g, ad::Var x, ad::Var h) const {
  using namespace ad;
  const Var gx = affine(x, g.on(tape, wx), g.on(tape, bx));
  const Var gh = affine(h, g.on(tape, wh), g.on(tape, bh));
  const Var r = sigmoid(add(slice_cols(gx, 0, hidden), slice_cols(gh, 0, hidden)));
  const Var u = sigmoid(add(slice_cols(gx, hidden, hidden), slice_cols(gh, hidden, hidden)));
  const Var c = tanh(add(slice_cols(gx, 2 * hidden, hidden), mul(r, slice_cols(gh, 2 * hidden, hidden))));
  // h' = c + u * (h - c)
  return add(c, mul(u, sub(h, c)));
}

Adam::Adam(const ParamGroup& group, AdamConfig config)
    : config_(config), m_(zeros_like(group)), v_(zeros_like(group)) {}

void Adam::step(ParamGroup& group, const GradientSet& grad, double lr) {
  if (grad.size() != group.size() || m_.size() != group.size()) {
    throw ContractError("Adam::step: gradient/parameter count mismatch");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < group.size(); ++i) {
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * grad[i];
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * grad[i].cwiseProduct(grad[i]);
    if (lr == 0.0) continue;
    const Matrix step =
        (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + config_.eps);
    group[static_cast<int>(i)].value -= lr * step;
  }
}

void Adam::restore(std::int64_t t, GradientSet m, GradientSet v) {
  if (m.size() != m_.size() || v.size() != v_.size()) throw ContractError("Adam::restore: shape mismatch");
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace metacpr
