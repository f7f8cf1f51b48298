#include "checks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>

#include "../oracles/reference_envs.hpp"
#include "metacpr/checkpoint.hpp"
#include "metacpr/cpr.hpp"
#include "metacpr/run.hpp"

namespace fs = std::filesystem;

namespace checks {

using namespace metacpr;

namespace {

constexpr int kP = static_cast<int>(Group::policy);
constexpr int kC = static_cast<int>(Group::critic);
constexpr int kZ = static_cast<int>(Group::cpr);

constexpr EnvId kEnvs[] = {EnvId::particle_system, EnvId::population_harvest, EnvId::push_ball};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

ModelConfig toy_model() {
  ModelConfig m;
  m.hidden = 6;
  m.message_dim = 3;
  m.context_dim = 2;
  m.task_dim = 3;
  m.cpr_hidden = 4;
  return m;
}

EpisodeBatch random_batch(const AgentModel& model, const AgentParams& params, EnvId env, int n, int episode_limit,
                          int episodes, std::uint64_t seed, const TrainConfig& tc) {
  Rng rng(seed);
  const TaskSpec task{env, n, episode_limit, rng.next_u64()};
  EpisodeBatch b = collect_episodes(model, params, task, EnvParams{}, episodes, rng);
  compute_advantages(std::span(&b, 1), tc.gamma, tc.gae_lambda, tc.normalize_advantages);
  return b;
}

// ---- criterion: gradient routing -------------------------------------------------

Verdict gradient_routing(int batches) {
  double p_phi = 0.0, c_theta = 0.0, mirror_c_phi = 0.0;
  double c_phi = std::numeric_limits<double>::infinity(), mirror_p_phi = c_phi;
  for (int b = 0; b < batches; ++b) {
    const EnvId env = kEnvs[b % 3];
    Rng pick(1000 + b);
    const int n = 2 + static_cast<int>(pick.index(4));
    ModelConfig mc;
    mc.hidden = 16;
    mc.message_dim = 4;
    mc.context_dim = 4;
    mc.task_dim = 4;
    mc.cpr_hidden = 8;
    const AgentModel model(mc, env);
    Rng init(static_cast<std::uint64_t>(b));
    const AgentParams params = model.init_params(init);

    TrainConfig tc;
    const EpisodeBatch batch = random_batch(model, params, env, n, 12, 1, 77 + b, tc);
    const LossGradients g = compute_loss_gradients(model, params, std::span(&batch, 1), tc);
    p_phi = std::max(p_phi, l2_norm(g.of_policy_loss[kZ]));
    c_phi = std::min(c_phi, l2_norm(g.of_critic_loss[kZ]));
    c_theta = std::max({c_theta, l2_norm(g.of_critic_loss[kP]), l2_norm(g.of_kl_loss[kP])});

    tc.cpr_grad_source = CprGradSource::policy;
    const LossGradients m = compute_loss_gradients(model, params, std::span(&batch, 1), tc);
    mirror_c_phi = std::max(mirror_c_phi, l2_norm(m.of_critic_loss[kZ]));
    mirror_p_phi = std::min(mirror_p_phi, l2_norm(m.of_policy_loss[kZ]));
  }
  Verdict v;
  v.passed = p_phi == 0.0 && c_phi > 1e-12 && c_theta == 0.0 && mirror_c_phi == 0.0 && mirror_p_phi > 1e-12;
  v.detail = std::to_string(batches) + " batches: max|dLP/dphi|=" + fmt("%g", p_phi) +
             " min|dLC/dphi|=" + fmt("%.3g", c_phi) + " max|d(LC+LKL)/dtheta|=" + fmt("%g", c_theta) +
             "; policy-sourced: max|dLC/dphi|=" + fmt("%g", mirror_c_phi) +
             " min|dLP/dphi|=" + fmt("%.3g", mirror_p_phi);
  return v;
}

// ---- criterion: closed-form oracles ------------------------------------------------

namespace {

/// Advantages by explicit double sum over (t, l), masking after a done.
std::vector<double> gae_double_sum(const std::vector<double>& r, const std::vector<double>& v, double boot, double g,
                                   double lam, const std::vector<bool>& done) {
  const std::size_t T = r.size();
  auto value = [&](std::size_t t) { return t < T ? v[t] : boot; };
  std::vector<double> delta(T);
  for (std::size_t t = 0; t < T; ++t) delta[t] = r[t] + g * value(t + 1) * (done[t] ? 0.0 : 1.0) - v[t];
  std::vector<double> adv(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t l = 0; t + l < T; ++l) {
      double w = 1.0;
      bool alive = true;
      for (std::size_t k = t; k < t + l; ++k) {
        if (done[k]) alive = false;
        w *= g * lam;
      }
      if (!alive) break;
      adv[t] += w * delta[t + l];
    }
  }
  return adv;
}

}  // namespace

Verdict closed_form_oracles() {
  Rng rng(2024);
  std::ostringstream detail;
  bool ok = true;

  // Product of three 1-D Gaussians against a renormalized grid product.
  double fuse_err = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<GaussianContext> parts(3);
    for (auto& p : parts) {
      p.mean = Eigen::VectorXd::Constant(1, rng.uniform(-2.0, 2.0));
      p.variance = Eigen::VectorXd::Constant(1, rng.uniform(0.3, 2.0));
    }
    const GaussianContext fused = fuse_contexts(parts);
    constexpr int N = 100000;
    std::vector<double> logd(N);
    double top = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < N; ++k) {
      const double x = -10.0 + 20.0 * k / (N - 1);
      double s = 0.0;
      for (const auto& p : parts) s += -0.5 * (x - p.mean(0)) * (x - p.mean(0)) / p.variance(0);
      logd[k] = s;
      top = std::max(top, s);
    }
    double z = 0.0, m1 = 0.0;
    for (int k = 0; k < N; ++k) {
      const double x = -10.0 + 20.0 * k / (N - 1);
      const double w = std::exp(logd[k] - top);
      z += w;
      m1 += w * x;
    }
    const double mean = m1 / z;
    double var = 0.0;
    for (int k = 0; k < N; ++k) {
      const double x = -10.0 + 20.0 * k / (N - 1);
      var += std::exp(logd[k] - top) * (x - mean) * (x - mean);
    }
    var /= z;
    fuse_err = std::max({fuse_err, std::abs(mean - fused.mean(0)), std::abs(var - fused.variance(0))});
  }
  ok = ok && fuse_err < 1e-4;
  detail << "fusion grid err=" << fmt("%.2e", fuse_err);

  // KL to the unit prior against a Monte-Carlo estimate.
  GaussianContext q;
  q.mean.resize(4);
  q.variance.resize(4);
  for (int d = 0; d < 4; ++d) {
    q.mean(d) = rng.uniform(-1.0, 1.0);
    q.variance(d) = rng.uniform(0.3, 2.0);
  }
  double mc = 0.0;
  constexpr int kSamples = 1000000;
  for (int s = 0; s < kSamples; ++s) {
    double log_ratio = 0.0;
    for (int d = 0; d < 4; ++d) {
      const double xi = rng.normal();
      const double x = q.mean(d) + std::sqrt(q.variance(d)) * xi;
      log_ratio += -0.5 * xi * xi - 0.5 * std::log(q.variance(d)) + 0.5 * x * x;
    }
    mc += log_ratio;
  }
  mc /= kSamples;
  const double kl_err = std::abs(mc - kl_to_prior(q));
  ok = ok && kl_err < 0.01;
  detail << " kl-mc err=" << fmt("%.2e", kl_err);

  // GAE against the double sum, with and without episode boundaries.
  double gae_err = 0.0;
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t T = trial == 0 ? 20 : 1 + rng.index(100);
    std::vector<double> r(T), v(T);
    std::vector<bool> done(T, false);
    for (std::size_t t = 0; t < T; ++t) {
      r[t] = rng.uniform(-1.0, 1.0);
      v[t] = rng.uniform(-2.0, 2.0);
      if (trial % 2 == 1) done[t] = rng.uniform() < 0.1;
    }
    const double boot = rng.uniform(-1.0, 1.0);
    const double g = rng.uniform(0.5, 1.0), lam = rng.uniform(0.0, 1.0);
    const std::vector<double> want = gae_double_sum(r, v, boot, g, lam, done);
    const std::unique_ptr<bool[]> dmask(new bool[T]);
    std::copy(done.begin(), done.end(), dmask.get());
    const GaeResult got = compute_gae(r, v, boot, g, lam, std::span<const bool>(dmask.get(), T));
    for (std::size_t t = 0; t < T; ++t) {
      gae_err = std::max({gae_err, std::abs(got.advantages[t] - want[t]), std::abs(got.returns[t] - want[t] - v[t])});
    }
  }
  ok = ok && gae_err < 1e-10;
  detail << " gae err=" << fmt("%.2e", gae_err);

  // Entropy against the direct sum.
  double ent_err = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 2 + static_cast<int>(rng.index(9));
    Eigen::VectorXd p(k);
    for (int i = 0; i < k; ++i) p(i) = std::exp(2.0 * rng.normal());
    p /= p.sum();
    double direct = 0.0;
    for (int i = 0; i < k; ++i) direct -= p(i) > 0.0 ? p(i) * std::log(p(i)) : 0.0;
    ent_err = std::max(ent_err, std::abs(entropy(ActionDistribution::categorical(p)) - direct));
  }
  ok = ok && ent_err < 1e-8;
  detail << " entropy err=" << fmt("%.2e", ent_err);

  return {ok, detail.str()};
}

// ---- criterion: finite differences -------------------------------------------------

namespace {

/// Max relative error of `analytic` against central differences of `loss`
/// over every scalar of group `g`.
double fd_group(AgentParams params, Group g, const GradientSet& analytic,
                const std::function<double(const AgentParams&)>& loss, double h = 1e-4) {
  double worst = 0.0;
  ParamGroup& group = params.group(g);
  for (std::size_t i = 0; i < group.size(); ++i) {
    Matrix& w = group[static_cast<int>(i)].value;
    for (Eigen::Index k = 0; k < w.size(); ++k) {
      const double keep = w.data()[k];
      w.data()[k] = keep + h;
      const double up = loss(params);
      w.data()[k] = keep - h;
      const double down = loss(params);
      w.data()[k] = keep;
      worst = std::max(worst, relative_error(analytic[i].data()[k], (up - down) / (2.0 * h)));
    }
  }
  return worst;
}

}  // namespace

Verdict finite_differences() {
  double policy_err = 0.0, critic_err = 0.0, cpr_err = 0.0, cn_err = 0.0;
  for (EnvId env : {EnvId::particle_system, EnvId::push_ball}) {
    const AgentModel model(toy_model(), env);
    Rng init(5);
    const AgentParams params = model.init_params(init);
    TrainConfig tc;
    tc.entropy_weight = 0.05;
    tc.ib_weight = 0.1;
    const EpisodeBatch batch = random_batch(model, params, env, 3, 5, 2, 11, tc);
    const LossGradients g = compute_loss_gradients(model, params, std::span(&batch, 1), tc);

    policy_err = std::max(policy_err, fd_group(params, Group::policy, g.of_policy_loss[kP], [&](const AgentParams& p) {
                            return policy_loss(model, p, batch, tc);
                          }));
    critic_err = std::max(critic_err, fd_group(params, Group::critic, g.of_critic_loss[kC], [&](const AgentParams& p) {
                            return critic_loss(model, p, batch, tc);
                          }));
    GradientSet phi = g.of_critic_loss[kZ];
    accumulate(phi, g.of_kl_loss[kZ]);
    cpr_err = std::max(cpr_err, fd_group(params, Group::cpr, phi, [&](const AgentParams& p) {
                         return critic_loss(model, p, batch, tc) + kl_loss(model, p, batch, tc);
                       }));

    // Conditional normalization output w.r.t. z.
    Rng r(17);
    const int d_h = model.config().hidden, d_z = model.config().task_dim;
    Matrix features(3, d_h), weights(3, d_h), z0(1, d_z);
    for (Eigen::Index k = 0; k < features.size(); ++k) features.data()[k] = r.normal();
    for (Eigen::Index k = 0; k < weights.size(); ++k) weights.data()[k] = r.normal();
    for (Eigen::Index k = 0; k < z0.size(); ++k) z0.data()[k] = r.normal();
    auto cn_value = [&](const Matrix& z) {
      ad::Tape tape;
      const ad::Var out = model.critic().cn_modulate(tape, params.critic, tape.constant(features), tape.constant(z));
      return (out.value().array() * weights.array()).sum();
    };
    ad::Tape tape;
    const ad::Var zv = tape.parameter(Group::cpr, 0, z0);
    const ad::Var out = model.critic().cn_modulate(tape, params.critic, tape.constant(features), zv);
    tape.backward(ad::sum(ad::mul(out, tape.constant(weights))));
    const Matrix dz = tape.parameter_grad(Group::cpr, 0);
    for (Eigen::Index k = 0; k < z0.size(); ++k) {
      Matrix up = z0, down = z0;
      up.data()[k] += 1e-4;
      down.data()[k] -= 1e-4;
      cn_err = std::max(cn_err, relative_error(dz.data()[k], (cn_value(up) - cn_value(down)) / 2e-4));
    }
  }
  Verdict v;
  v.passed = policy_err < 1e-3 && critic_err < 1e-3 && cpr_err < 1e-3 && cn_err < 1e-3;
  v.detail = "max rel err: policy=" + fmt("%.2e", policy_err) + " critic=" + fmt("%.2e", critic_err) +
             " cn(z)=" + fmt("%.2e", cn_err) + " cpr=" + fmt("%.2e", cpr_err);
  return v;
}

// ---- criterion: agent-count invariance ---------------------------------------------

Verdict agent_count_invariance() {
  bool ok = true;
  std::ostringstream detail;
  for (EnvId env : kEnvs) {
    ModelConfig mc;
    mc.hidden = 16;
    mc.message_dim = 4;
    mc.context_dim = 4;
    mc.task_dim = 4;
    mc.cpr_hidden = 8;
    const AgentModel model(mc, env);
    Rng init(3);
    const AgentParams params = model.init_params(init);
    const std::size_t count = params.count();
    const std::uint64_t before = params.policy.checksum() ^ params.critic.checksum() ^ params.cpr.checksum();
    int rollouts = 0;
    for (int n : {2, 3, 8, 16}) {
      try {
        TrainConfig tc;
        const EpisodeBatch batch = random_batch(model, params, env, n, default_episode_limit(env), 1, 40 + n, tc);
        const Episode& ep = batch.episodes.front();
        bool finite = ep.length() > 0 && ep.length() <= default_episode_limit(env);
        for (int t = 0; t < ep.length(); ++t) {
          finite = finite && ep.obs[t].rows() == n && ep.obs[t].cols() == model.obs_dim() && ep.obs[t].allFinite() &&
                   ep.rewards[t].size() == n && ep.rewards[t].allFinite() && ep.values[t].allFinite() &&
                   ep.log_probs[t].allFinite() && ep.z[t].allFinite();
        }
        const LossGradients g = compute_loss_gradients(model, params, std::span(&batch, 1), tc);
        finite = finite && std::isfinite(g.report.policy) && std::isfinite(g.report.critic) &&
                 std::isfinite(g.report.kl);
        for (const auto& gs : g.routed) finite = finite && all_finite(gs);
        if (!finite) {
          ok = false;
          detail << to_string(env) << " n=" << n << ": non-finite output; ";
        }
        ++rollouts;
      } catch (const std::exception& e) {
        ok = false;
        detail << to_string(env) << " n=" << n << ": " << e.what() << "; ";
      }
    }
    model.check(params);
    const std::uint64_t after = params.policy.checksum() ^ params.critic.checksum() ^ params.cpr.checksum();
    ok = ok && params.count() == count && before == after && rollouts == 4;
    detail << to_string(env) << ": " << rollouts << "/4 rollouts, " << count << " params; ";
  }
  return {ok, detail.str()};
}

// ---- criterion: determinism -----------------------------------------------------

Verdict determinism(const RunConfig& cfg, const fs::path& scratch) {
  fs::remove_all(scratch);
  const std::uint64_t seed = cfg.seeds.empty() ? 0 : cfg.seeds.front();
  auto train = [&](const fs::path& dir, int stop, bool resume) {
    TrainRunOptions o;
    o.dir = dir;
    o.seed = seed;
    o.stop_after = stop;
    o.resume = resume;
    return run_training(cfg, o);
  };
  train(scratch / "a", -1, false);
  train(scratch / "b", -1, false);
  train(scratch / "c", 10, false);
  train(scratch / "c", -1, true);

  const bool same = slurp(scratch / "a" / "metrics.jsonl") == slurp(scratch / "b" / "metrics.jsonl");
  const auto full = lines_of(scratch / "a" / "metrics.jsonl");
  const auto resumed = lines_of(scratch / "c" / "metrics.jsonl");
  bool tail = full.size() == resumed.size() && full.size() > 10;
  for (std::size_t i = 10; tail && i < full.size(); ++i) tail = full[i] == resumed[i];
  const bool params_match =
      load_checkpoint(scratch / "a" / "final.json").params == load_checkpoint(scratch / "c" / "final.json").params;

  Verdict v;
  v.passed = same && tail && params_match;
  v.detail = std::string("repeat run metrics ") + (same ? "byte-identical" : "DIFFER") + "; resume at 10: updates 11-" +
             std::to_string(full.size()) + (tail ? " identical" : " DIFFER") + ", final params " +
             (params_match ? "identical" : "DIFFER");
  return v;
}

// ---- criterion: environment oracle --------------------------------------------------

namespace {

struct Tally {
  long steps = 0;
  long mismatches = 0;
  int episodes = 0;
  std::map<std::string, long> events;
  std::string first;

  void expect(bool cond, const std::string& what) {
    if (cond) return;
    if (mismatches++ == 0) first = what;
  }
};

refsim::GridPos to_ref(Cell c) { return {c.x, c.y}; }

void particle_trajectory(int n, int steps, Tally& tally) {
  const EnvParams ep;
  const TaskSpec task{EnvId::particle_system, n, default_episode_limit(EnvId::particle_system),
                      9000 + static_cast<std::uint64_t>(n)};
  auto env = make_env(task, ep);
  auto& ps = dynamic_cast<ParticleSystem&>(*env);
  refsim::Particle ref;
  ref.grid = ep.particle_system.grid;
  ref.step_cost = ep.particle_system.step_cost;
  ref.bonus = ep.particle_system.landmark_bonus;
  ref.collision = ep.particle_system.collision_penalty;
  ref.limit = task.episode_limit;
  auto sync = [&] {
    env->reset();
    const auto& s = ps.state();
    ref.pos.clear();
    ref.goal.clear();
    for (int i = 0; i < n; ++i) {
      ref.pos.push_back(to_ref(s.agents[i]));
      ref.goal.push_back(to_ref(s.landmarks[i]));
    }
    ref.reached = s.reached;
    ref.t = 0;
  };
  sync();
  Rng act(500 + static_cast<std::uint64_t>(n));
  for (int s = 0; s < steps; ++s) {
    std::vector<int> a(n);
    for (auto& v : a) v = static_cast<int>(act.index(kGridActions));
    const StepResult r = env->step(JointAction::discrete(a));
    const auto o = ref.step(a);
    ++tally.steps;
    const std::string at = "particle_system n=" + std::to_string(n) + " step " + std::to_string(s);
    tally.expect(r.done == o.done, at + ": done");
    for (int i = 0; i < n; ++i) {
      const Cell c = ps.state().agents[i];
      tally.expect(c.x == ref.pos[i].x && c.y == ref.pos[i].y, at + ": agent position");
      tally.expect(ps.state().reached[i] == ref.reached[i], at + ": reached flag");
      tally.expect(r.rewards[i] == o.r[i], at + ": reward");
      const double g1 = ref.grid - 1.0;
      tally.expect(r.observation(i, 0) == ref.pos[i].x / g1 && r.observation(i, 1) == ref.pos[i].y / g1 &&
                       r.observation(i, 2) == ref.goal[i].x / g1 && r.observation(i, 3) == ref.goal[i].y / g1,
                   at + ": observation");
    }
    if (r.info.at("collisions") > 0) ++tally.events["collision"];
    if (r.terminal) ++tally.events["all_on_landmark"];
    if (r.done) {
      ++tally.episodes;
      sync();
    }
  }
}

void harvest_trajectory(int n, int steps, Tally& tally) {
  const EnvParams ep;
  const TaskSpec task{EnvId::population_harvest, n, default_episode_limit(EnvId::population_harvest),
                      9100 + static_cast<std::uint64_t>(n)};
  auto env = make_env(task, ep);
  auto& ph = dynamic_cast<PopulationHarvest&>(*env);
  refsim::Harvest ref;
  ref.grid = ep.population_harvest.grid;
  ref.deliver = ep.population_harvest.delivery_reward;
  ref.contention = ep.population_harvest.contention_penalty;
  ref.limit = task.episode_limit;
  auto sync = [&] {
    env->reset();
    const auto& s = ph.state();
    ref.pos.clear();
    ref.apples.clear();
    for (const Cell& c : s.agents) ref.pos.push_back(to_ref(c));
    for (const Cell& c : s.apples) ref.apples.push_back(to_ref(c));
    ref.carry = s.carrying;
    ref.target = to_ref(s.target);
    ref.rng = env->rng();
    ref.t = 0;
  };
  sync();
  Rng act(600 + static_cast<std::uint64_t>(n));
  for (int s = 0; s < steps; ++s) {
    std::vector<int> a(n);
    for (auto& v : a) v = static_cast<int>(act.index(kGridActions));
    const StepResult r = env->step(JointAction::discrete(a));
    const auto o = ref.step(a);
    ++tally.steps;
    const std::string at = "population_harvest n=" + std::to_string(n) + " step " + std::to_string(s);
    tally.expect(r.done == o.done, at + ": done");
    tally.expect(env->rng() == ref.rng, at + ": random stream position");
    const auto& st = ph.state();
    tally.expect(st.apples.size() == ref.apples.size(), at + ": apple count");
    for (std::size_t k = 0; k < std::min(st.apples.size(), ref.apples.size()); ++k) {
      tally.expect(to_ref(st.apples[k]) == ref.apples[k], at + ": apple position");
    }
    const double g1 = ref.grid - 1.0;
    for (int i = 0; i < n; ++i) {
      tally.expect(to_ref(st.agents[i]) == ref.pos[i], at + ": agent position");
      tally.expect(st.carrying[i] == ref.carry[i], at + ": carrying flag");
      tally.expect(r.rewards[i] == o.r[i], at + ": reward");
      const refsim::GridPos near = ref.nearest(static_cast<std::size_t>(i));
      tally.expect(r.observation(i, 0) == ref.pos[i].x / g1 && r.observation(i, 1) == ref.pos[i].y / g1 &&
                       r.observation(i, 2) == near.x / g1 && r.observation(i, 3) == near.y / g1 &&
                       r.observation(i, 4) == ref.target.x / g1 && r.observation(i, 5) == ref.target.y / g1 &&
                       r.observation(i, 6) == (ref.carry[i] ? 1.0 : 0.0),
                   at + ": observation");
    }
    if (r.info.at("contentions") > 0) ++tally.events["contention"];
    if (r.info.at("pickups") > 0) ++tally.events["pickup"];
    if (r.info.at("deliveries") > 0) ++tally.events["delivery"];
    if (r.done) {
      ++tally.episodes;
      sync();
    }
  }
}

void push_ball_trajectory(int n, int steps, Tally& tally) {
  const EnvParams ep;
  const TaskSpec task{EnvId::push_ball, n, default_episode_limit(EnvId::push_ball),
                      9200 + static_cast<std::uint64_t>(n)};
  auto env = make_env(task, ep);
  auto& pb = dynamic_cast<PushBall&>(*env);
  refsim::Ball ref;
  const auto& pp = ep.push_ball;
  ref.radius = pp.contact_radius;
  ref.threshold = pp.force_threshold;
  ref.gain = pp.ball_gain;
  ref.speed = pp.agent_speed;
  ref.goal_radius = pp.target_radius;
  ref.success = pp.success_bonus;
  ref.limit = task.episode_limit;
  auto sync = [&] {
    env->reset();
    const auto& s = pb.state();
    ref.pos.assign(s.agents.begin(), s.agents.end());
    ref.ball = s.ball;
    ref.target = s.target;
    ref.t = 0;
  };
  sync();
  Rng act(700 + static_cast<std::uint64_t>(n));
  for (int s = 0; s < steps; ++s) {
    Matrix a(n, 2);
    std::vector<refsim::Ball::V> raw(n);
    for (int i = 0; i < n; ++i) {
      // Mostly pull toward the ball so contacts and pushes actually happen.
      const bool aimed = act.uniform() < 0.5;
      for (int d = 0; d < 2; ++d) {
        const double toward = 8.0 * (ref.ball[d] - ref.pos[i][d]);
        raw[i][d] = aimed ? toward + act.uniform(-0.5, 0.5) : act.uniform(-1.5, 1.5);
        a(i, d) = raw[i][d];
      }
    }
    const StepResult r = env->step(JointAction::continuous(a));
    const auto o = ref.step(raw);
    ++tally.steps;
    const std::string at = "push_ball n=" + std::to_string(n) + " step " + std::to_string(s);
    tally.expect(r.done == o.done, at + ": done");
    const auto& st = pb.state();
    tally.expect(st.ball == ref.ball, at + ": ball position");
    for (int i = 0; i < n; ++i) {
      tally.expect(st.agents[i] == ref.pos[i], at + ": agent position");
      tally.expect(r.rewards[i] == o.r, at + ": reward");
      tally.expect(r.observation(i, 0) == ref.pos[i][0] && r.observation(i, 1) == ref.pos[i][1] &&
                       r.observation(i, 2) == ref.ball[0] && r.observation(i, 3) == ref.ball[1] &&
                       r.observation(i, 4) == ref.target[0] && r.observation(i, 5) == ref.target[1],
                   at + ": observation");
    }
    if (r.info.at("ball_moved") > 0) ++tally.events["ball_moved"];
    if (r.terminal) ++tally.events["success"];
    if (r.done) {
      ++tally.episodes;
      sync();
    }
  }
}

}  // namespace

Verdict environment_oracle(int steps) {
  std::ostringstream detail;
  bool ok = true;
  const std::pair<const char*, void (*)(int, int, Tally&)> runs[] = {
      {"particle_system", particle_trajectory},
      {"population_harvest", harvest_trajectory},
      {"push_ball", push_ball_trajectory},
  };
  for (const auto& [name, fn] : runs) {
    Tally t;
    for (int n : {2, 5, 16}) fn(n, steps, t);
    ok = ok && t.mismatches == 0;
    detail << name << ": " << t.steps << " steps, " << t.episodes << " episodes, " << t.mismatches << " mismatches";
    for (const auto& [k, v] : t.events) detail << ", " << k << "=" << v;
    if (!t.first.empty()) detail << " (first: " << t.first << ")";
    detail << "; ";
  }
  return {ok, detail.str()};
}

}  // namespace checks
