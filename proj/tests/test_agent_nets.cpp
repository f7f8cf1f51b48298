#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "support/checks.hpp"
#include "metacpr/agent_nets.hpp"
#include "metacpr/errors.hpp"
#include "metacpr/model.hpp"

using namespace metacpr;

namespace {

int param_index(const ParamGroup& g, const std::string& name) {
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g[static_cast<int>(i)].name == name) return static_cast<int>(i);
  }
  throw std::runtime_error("no parameter " + name);
}

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Matrix m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.normal();
  return m;
}

}  // namespace

TEST(ActionDistributions, EntropyClosedForms) {
  EXPECT_NEAR(entropy(ActionDistribution::categorical(Eigen::VectorXd::Constant(5, 0.2))), std::log(5.0), 1e-12);
  Eigen::VectorXd one_hot = Eigen::VectorXd::Zero(5);
  one_hot(3) = 1.0;
  EXPECT_EQ(entropy(ActionDistribution::categorical(one_hot)), 0.0);
  // Diagonal Gaussian: sum of 0.5 ln(2 pi e sigma^2).
  Eigen::VectorXd sd(2);
  sd << 0.5, 2.0;
  const double want = 0.5 * std::log(2 * std::numbers::pi * std::numbers::e * 0.25) +
                      0.5 * std::log(2 * std::numbers::pi * std::numbers::e * 4.0);
  EXPECT_NEAR(entropy(ActionDistribution::gaussian(Eigen::VectorXd::Zero(2), sd)), want, 1e-12);
}

TEST(ActionDistributions, SamplingFrequencies) {
  const ActionSpace space = action_space(EnvId::particle_system);
  Eigen::VectorXd one_hot = Eigen::VectorXd::Zero(5);
  one_hot(2) = 1.0;
  Rng rng(1);
  for (int k = 0; k < 200; ++k) EXPECT_EQ(sample_action(ActionDistribution::categorical(one_hot), space, rng).index, 2);

  const auto uniform = ActionDistribution::categorical(Eigen::VectorXd::Constant(5, 0.2));
  std::vector<int> counts(5, 0);
  constexpr int kDraws = 50000;
  for (int k = 0; k < kDraws; ++k) ++counts[sample_action(uniform, space, rng).index];
  const double sigma = std::sqrt(kDraws * 0.2 * 0.8);
  for (int c : counts) EXPECT_LT(std::abs(c - 0.2 * kDraws), 3 * sigma);
}

TEST(ActionDistributions, DegenerateGaussianSamplesItsMean) {
  const ActionSpace space = action_space(EnvId::push_ball);
  Eigen::VectorXd mean(2);
  mean << 0.5, 0.5;
  const auto d = ActionDistribution::gaussian(mean, Eigen::VectorXd::Constant(2, 1e-12));
  Rng rng(3);
  const SampledAction a = sample_action(d, space, rng);
  EXPECT_NEAR(a.clamped(0), 0.5, 1e-9);
  EXPECT_NEAR(a.clamped(1), 0.5, 1e-9);
  EXPECT_NEAR(a.log_prob, log_prob(d, a), 1e-9);
}

TEST(ActionDistributions, ContinuousSamplesAreClampedButLogProbUsesRawDraw) {
  const ActionSpace space = action_space(EnvId::push_ball);
  const auto d = ActionDistribution::gaussian(Eigen::VectorXd::Constant(2, 0.9), Eigen::VectorXd::Constant(2, 1.0));
  Rng rng(8);
  for (int k = 0; k < 500; ++k) {
    const SampledAction a = sample_action(d, space, rng);
    EXPECT_TRUE((a.clamped.array() >= -1.0).all() && (a.clamped.array() <= 1.0).all());
    double lp = 0.0;
    for (int i = 0; i < 2; ++i) lp += -0.5 * std::pow(a.raw(i) - 0.9, 2) - 0.5 * std::log(2 * std::numbers::pi);
    EXPECT_NEAR(a.log_prob, lp, 1e-12);
  }
}

class PolicyFixture : public ::testing::Test {
 protected:
  ModelConfig cfg = checks::toy_model();
  AgentModel discrete{cfg, EnvId::particle_system};
  AgentModel continuous{cfg, EnvId::push_ball};
};

TEST_F(PolicyFixture, MessageFusionExamples) {
  Rng rng(4);
  const AgentParams p = discrete.init_params(rng);
  Eigen::VectorXd m(cfg.message_dim), other(cfg.message_dim);
  for (int i = 0; i < cfg.message_dim; ++i) {
    m(i) = rng.normal();
    other(i) = rng.normal();
  }
  const std::vector<Eigen::VectorXd> single{m};
  const Eigen::VectorXd fm = encode_messages(discrete.policy(), p.policy, single);
  EXPECT_EQ(fm.size(), cfg.hidden);
  // Mean of identical terms.
  const std::vector<Eigen::VectorXd> same(7, m);
  EXPECT_LT((encode_messages(discrete.policy(), p.policy, same) - fm).cwiseAbs().maxCoeff(), 1e-15);
  // Any order of the incoming list gives the same bits.
  std::vector<Eigen::VectorXd> mixed{m, other, 2.0 * m, other - m};
  const Eigen::VectorXd a = encode_messages(discrete.policy(), p.policy, mixed);
  std::swap(mixed[0], mixed[3]);
  std::swap(mixed[1], mixed[2]);
  EXPECT_EQ(encode_messages(discrete.policy(), p.policy, mixed), a);
  EXPECT_THROW(encode_messages(discrete.policy(), p.policy, std::vector<Eigen::VectorXd>{}), ContractError);
}

TEST_F(PolicyFixture, StepIsDeterministicAndNormalized) {
  Rng rng(5);
  const AgentParams p = discrete.init_params(rng);
  const int n = 4;
  const Matrix obs = random_matrix(rng, n, discrete.obs_dim());
  const Matrix msgs = random_matrix(rng, n, cfg.message_dim);
  const Matrix z = random_matrix(rng, 1, cfg.task_dim);
  auto run = [&] {
    ad::Tape t;
    const ad::Var fused = discrete.policy().encode_messages(t, p.policy, t.constant(msgs));
    const auto out = discrete.policy().step(t, p.policy, t.constant(obs), t.constant(Matrix::Zero(n, cfg.hidden)),
                                            fused, t.constant(z));
    return std::make_pair(out.logits.value(), out.message.value());
  };
  const auto first = run();
  EXPECT_EQ(first, run());
  ad::Tape t;
  const auto out = discrete.policy().step(t, p.policy, t.constant(obs), t.constant(Matrix::Zero(n, cfg.hidden)),
                                          discrete.policy().encode_messages(t, p.policy, t.constant(msgs)),
                                          t.constant(z));
  for (int i = 0; i < n; ++i) EXPECT_NEAR(discrete.policy().distribution(out, i).probs.sum(), 1.0, 1e-12);
  EXPECT_EQ(out.message.cols(), cfg.message_dim);
}

TEST_F(PolicyFixture, ContinuousStddevPositive) {
  Rng rng(6);
  const AgentParams p = continuous.init_params(rng);
  for (int k = 0; k < 1000; ++k) {
    ad::Tape t;
    const Matrix obs = 3.0 * random_matrix(rng, 2, continuous.obs_dim());
    const auto out = continuous.policy().step(
        t, p.policy, t.constant(obs), t.constant(random_matrix(rng, 2, cfg.hidden)),
        continuous.policy().encode_messages(t, p.policy, t.constant(random_matrix(rng, 2, cfg.message_dim))),
        t.constant(random_matrix(rng, 1, cfg.task_dim)));
    ASSERT_TRUE((continuous.policy().distribution(out, 0).stddev.array() > 0.0).all());
  }
}

TEST_F(PolicyFixture, NonFiniteInputIsNumericError) {
  Rng rng(7);
  const AgentParams p = discrete.init_params(rng);
  ad::Tape t;
  Matrix obs = Matrix::Zero(2, discrete.obs_dim());
  obs(1, 2) = std::nan("");
  const ad::Var fused = discrete.policy().encode_messages(t, p.policy, t.constant(Matrix::Zero(2, cfg.message_dim)));
  EXPECT_THROW(discrete.policy().step(t, p.policy, t.constant(obs), t.constant(Matrix::Zero(2, cfg.hidden)), fused,
                                      t.constant(Matrix::Zero(1, cfg.task_dim))),
               NumericError);
}

TEST_F(PolicyFixture, TapeEntropyAndLogProbMatchDistributions) {
  for (const AgentModel* model : {&discrete, &continuous}) {
    Rng rng(10);
    const AgentParams p = model->init_params(rng);
    ad::Tape t;
    const int n = 3;
    const auto out = model->policy().step(
        t, p.policy, t.constant(random_matrix(rng, n, model->obs_dim())), t.constant(Matrix::Zero(n, cfg.hidden)),
        model->policy().encode_messages(t, p.policy, t.constant(random_matrix(rng, n, cfg.message_dim))),
        t.constant(random_matrix(rng, 1, cfg.task_dim)));
    std::vector<SampledAction> acts;
    for (int i = 0; i < n; ++i) acts.push_back(sample_action(model->policy().distribution(out, i), model->space(), rng));
    const Matrix lp = model->policy().log_prob(out, acts).value();
    const Matrix ent = model->policy().entropy(out).value();
    for (int i = 0; i < n; ++i) {
      const ActionDistribution d = model->policy().distribution(out, i);
      EXPECT_NEAR(lp(i, 0), acts[i].log_prob, 1e-10);
      double direct = 0.0;
      if (d.discrete) {
        for (Eigen::Index k = 0; k < d.probs.size(); ++k) direct -= d.probs(k) * std::log(d.probs(k));
      } else {
        direct = entropy(d);
      }
      EXPECT_NEAR(ent(i, 0), direct, 1e-8);
    }
  }
}

TEST(CriticNet, ConditionalNormalizationExamples) {
  ModelConfig cfg = checks::toy_model();
  Rng rng(2);
  ParamGroup g(Group::critic);
  const CriticNet critic = CriticNet::create(cfg, 4, g, rng);
  const int w = param_index(g, "critic.cn_generator.w"), b = param_index(g, "critic.cn_generator.b");
  g[w].value.setZero();
  g[b].value.setZero();
  g[b].value.leftCols(cfg.hidden).setOnes();
  const Matrix features = 5.0 * random_matrix(rng, 3, cfg.hidden);
  const Matrix z = random_matrix(rng, 1, cfg.task_dim);
  {
    ad::Tape t;
    const Matrix y = critic.cn_modulate(t, g, t.constant(features), t.constant(z)).value();
    const Matrix want = ad::layer_norm(t.constant(features), cfg.cn_eps).value();
    EXPECT_LT((y - want).cwiseAbs().maxCoeff(), 1e-14);
  }
  g[b].value.setZero();
  Eigen::RowVectorXd offset(cfg.hidden);
  for (int i = 0; i < cfg.hidden; ++i) offset(i) = 0.1 * i - 0.2;
  g[b].value.rightCols(cfg.hidden) = offset;
  ad::Tape t;
  const Matrix y = critic.cn_modulate(t, g, t.constant(features), t.constant(z)).value();
  for (int r = 0; r < 3; ++r) EXPECT_EQ(Eigen::RowVectorXd(y.row(r)), offset);
}

TEST(CriticNet, ValueIsInvariantToOrderOfOtherAgents) {
  const ModelConfig cfg = checks::toy_model();
  const AgentModel model(cfg, EnvId::population_harvest);
  Rng rng(3);
  const AgentParams p = model.init_params(rng);
  const Matrix obs = random_matrix(rng, 5, model.obs_dim());
  const Matrix z = random_matrix(rng, 1, cfg.task_dim);
  Matrix shuffled = obs;
  shuffled.row(1) = obs.row(4);
  shuffled.row(4) = obs.row(2);
  shuffled.row(2) = obs.row(1);
  ad::Tape t;
  const Matrix h = Matrix::Zero(5, cfg.hidden);
  const Matrix v1 = model.critic().step(t, p.critic, t.constant(obs), t.constant(h), t.constant(z)).value.value();
  const Matrix v2 = model.critic().step(t, p.critic, t.constant(shuffled), t.constant(h), t.constant(z)).value.value();
  EXPECT_EQ(v1(0, 0), v2(0, 0));
  EXPECT_EQ(v1(3, 0), v2(3, 0));
  // Same interface at n = 3 and n = 10.
  for (int n : {3, 10}) {
    ad::Tape tn;
    const auto out = model.critic().step(tn, p.critic, tn.constant(random_matrix(rng, n, model.obs_dim())),
                                         tn.constant(Matrix::Zero(n, cfg.hidden)), tn.constant(z));
    EXPECT_EQ(out.value.rows(), n);
  }
}

TEST(AgentModel, ParameterCountIndependentOfAgentsAndSwitches) {
  ModelConfig cfg = checks::toy_model();
  const AgentModel full(cfg, EnvId::particle_system);
  Rng rng(1);
  const AgentParams p = full.init_params(rng);
  EXPECT_GT(p.cpr.count(), 0u);
  cfg.use_cpr = false;
  const AgentModel no_cpr(cfg, EnvId::particle_system);
  Rng rng2(1);
  EXPECT_EQ(no_cpr.init_params(rng2).cpr.count(), 0u);
  EXPECT_THROW(no_cpr.check(p), ContractError);
}

TEST(FiniteDifferences, PolicyCriticAndCpr) {
  const checks::Verdict v = checks::finite_differences();
  EXPECT_TRUE(v.passed) << v.detail;
}
