#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "support/checks.hpp"
#include "metacpr/envs.hpp"
#include "metacpr/errors.hpp"

using namespace metacpr;

namespace {

constexpr EnvId kAll[] = {EnvId::particle_system, EnvId::population_harvest, EnvId::push_ball};

JointAction random_actions(const Env& env, Rng& rng) {
  const ActionSpace s = env.action_space();
  if (s.discrete) {
    std::vector<int> a(env.n_agents());
    for (auto& v : a) v = static_cast<int>(rng.index(s.num_actions));
    return JointAction::discrete(a);
  }
  Matrix m(env.n_agents(), s.dim);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.uniform(-1.0, 1.0);
  return JointAction::continuous(m);
}

}  // namespace

TEST(Envs, Construction) {
  auto ps = make_env({EnvId::particle_system, 3, 50, 0});
  EXPECT_TRUE(ps->action_space().discrete);
  EXPECT_EQ(ps->action_space().num_actions, 5);
  auto pb = make_env({EnvId::push_ball, 2, 100, 7});
  EXPECT_FALSE(pb->action_space().discrete);
  EXPECT_EQ(pb->action_space().dim, 2);
  EXPECT_THROW(make_env({EnvId::particle_system, 1, 50, 0}), ConfigError);
  EXPECT_THROW(make_env({EnvId::particle_system, 2, 0, 0}), ConfigError);
  EXPECT_THROW(env_id_from_string("lunar_lander"), ConfigError);
}

TEST(Envs, ParticleResetSpawnsOnDistinctCells) {
  auto env = make_env({EnvId::particle_system, 16, 50, 4});
  auto& ps = dynamic_cast<ParticleSystem&>(*env);
  for (int r = 0; r < 20; ++r) {
    env->reset();
    std::set<Cell> cells(ps.state().agents.begin(), ps.state().agents.end());
    cells.insert(ps.state().landmarks.begin(), ps.state().landmarks.end());
    EXPECT_EQ(cells.size(), 32u);
  }
}

TEST(Envs, ResetIsDeterministicAndIndependentOfThePreviousEpisode) {
  for (EnvId id : {EnvId::particle_system, EnvId::push_ball}) {
    auto a = make_env({id, 4, 30, 11});
    auto b = make_env({id, 4, 30, 11});
    EXPECT_EQ(a->reset(), b->reset());
    Rng rng(1);
    for (int t = 0; t < 7; ++t) a->step(random_actions(*a, rng));
    // These envs draw nothing while stepping, so both streams are aligned.
    EXPECT_EQ(a->reset(), b->reset());
    EXPECT_EQ(a->steps(), 0);
  }
}

TEST(Envs, LandmarkBonusWhenStayingOnLandmark) {
  auto env = make_env({EnvId::particle_system, 2, 50, 0});
  auto& ps = dynamic_cast<ParticleSystem&>(*env);
  ps.set_state({{{2, 2}, {5, 5}}, {{2, 2}, {0, 0}}, {false, false}});
  const StepResult r = env->step(JointAction::discrete({4, 4}));
  EXPECT_DOUBLE_EQ(r.rewards[0], -0.05 + 1.0);
  EXPECT_DOUBLE_EQ(r.rewards[1], -0.05);
  EXPECT_FALSE(r.done);
}

TEST(Envs, WallLeavesPositionButChargesStepCost) {
  auto env = make_env({EnvId::particle_system, 2, 50, 0});
  auto& ps = dynamic_cast<ParticleSystem&>(*env);
  ps.set_state({{{0, 0}, {7, 7}}, {{3, 3}, {4, 4}}, {false, false}});
  const StepResult r = env->step(JointAction::discrete({2, 0}));  // left into x=0 wall, up into y=7 wall
  EXPECT_EQ(ps.state().agents[0], (Cell{0, 0}));
  EXPECT_EQ(ps.state().agents[1], (Cell{7, 7}));
  EXPECT_DOUBLE_EQ(r.rewards[0], -0.05);
  EXPECT_DOUBLE_EQ(r.rewards[1], -0.05);
}

TEST(Envs, ResolveMovesRejectsConflicts) {
  std::vector<bool> hit;
  // Same target: both stay and both are flagged.
  auto out = resolve_moves({{0, 0}, {2, 0}}, {{1, 0}, {1, 0}}, hit);
  EXPECT_EQ(out[0], (Cell{0, 0}));
  EXPECT_EQ(out[1], (Cell{2, 0}));
  EXPECT_TRUE(hit[0] && hit[1]);
  // Swap.
  out = resolve_moves({{0, 0}, {1, 0}}, {{1, 0}, {0, 0}}, hit);
  EXPECT_EQ(out[0], (Cell{0, 0}));
  EXPECT_TRUE(hit[0] && hit[1]);
  // Following a mover is fine.
  out = resolve_moves({{0, 0}, {1, 0}}, {{1, 0}, {2, 0}}, hit);
  EXPECT_EQ(out[0], (Cell{1, 0}));
  EXPECT_EQ(out[1], (Cell{2, 0}));
  EXPECT_FALSE(hit[0] || hit[1]);
  // Chain: agent 1 is blocked by agent 2, so agent 0 cannot follow it.
  out = resolve_moves({{0, 0}, {1, 0}, {3, 0}}, {{1, 0}, {2, 0}, {2, 0}}, hit);
  EXPECT_EQ(out[0], (Cell{0, 0}));
  EXPECT_EQ(out[1], (Cell{1, 0}));
  EXPECT_EQ(out[2], (Cell{3, 0}));
  EXPECT_TRUE(hit[0] && hit[1] && hit[2]);
}

TEST(Envs, HarvestContentionAndDelivery) {
  auto env = make_env({EnvId::population_harvest, 3, 80, 0});
  auto& ph = dynamic_cast<PopulationHarvest&>(*env);
  PopulationHarvest::State s;
  s.target = {5, 5};
  s.agents = {{1, 2}, {3, 2}, {5, 4}};
  s.carrying = {false, false, true};
  s.apples = {{2, 2}, {8, 8}};
  ph.set_state(s);
  // Agents 0 and 1 step onto the same apple; agent 2 delivers.
  const StepResult r = env->step(JointAction::discrete({3, 2, 0}));
  EXPECT_DOUBLE_EQ(r.rewards[0], -0.3);
  EXPECT_DOUBLE_EQ(r.rewards[1], -0.3);
  EXPECT_DOUBLE_EQ(r.rewards[2], 1.0);
  EXPECT_FALSE(ph.state().carrying[0] || ph.state().carrying[1] || ph.state().carrying[2]);
  ASSERT_EQ(ph.state().apples.size(), 3u);  // contested apple stays, one respawned
  EXPECT_EQ(ph.state().apples[0], (Cell{2, 2}));
  EXPECT_NE(ph.state().apples[2], s.target);
}

TEST(Envs, PushBallNeedsSeveralAgents) {
  auto env = make_env({EnvId::push_ball, 2, 100, 0});
  auto& pb = dynamic_cast<PushBall&>(*env);
  PushBall::State s;
  s.ball = {0.5, 0.5};
  s.target = {0.9, 0.5};
  s.agents = {{0.45, 0.5}, {0.46, 0.5}};
  pb.set_state(s);
  Matrix one(2, 2);
  one << 1.0, 0.0, 0.0, 0.0;
  env->step(JointAction::continuous(one));
  EXPECT_EQ(pb.state().ball, s.ball);
  pb.set_state(s);
  Matrix both(2, 2);
  both << 1.0, 0.0, 1.0, 0.0;
  const StepResult r = env->step(JointAction::continuous(both));
  EXPECT_DOUBLE_EQ(pb.state().ball[0], 0.5 + 0.05 * 2.0 * (0.8 / 2.0));
  EXPECT_DOUBLE_EQ(r.rewards[0], r.rewards[1]);
  EXPECT_DOUBLE_EQ(r.rewards[0], -std::hypot(pb.state().ball[0] - 0.9, 0.0));
}

TEST(Envs, PushBallRewardFallsAsBallMovesAway) {
  auto env = make_env({EnvId::push_ball, 3, 100, 0});
  auto& pb = dynamic_cast<PushBall&>(*env);
  Matrix still = Matrix::Zero(3, 2);
  double last = 1e9;
  for (double d : {0.1, 0.2, 0.4}) {
    pb.set_state({{{0.0, 0.0}, {0.0, 0.1}, {0.1, 0.0}}, {0.5 + d, 0.5}, {0.5, 0.5}});
    const StepResult r = env->step(JointAction::continuous(still));
    double total = 0.0;
    for (double v : r.rewards) total += v;
    EXPECT_LT(total, last);
    last = total;
  }
}

TEST(Envs, RandomTrajectoriesMatchReferenceSimulator) {
  const checks::Verdict v = checks::environment_oracle(1000);
  EXPECT_TRUE(v.passed) << v.detail;
}

TEST(Envs, ObservationWidthAndActionsIndependentOfAgentCount) {
  for (EnvId id : kAll) {
    for (int n : {2, 3, 8, 16}) {
      auto env = make_env({id, n, default_episode_limit(id), 1});
      const Matrix obs = env->reset();
      EXPECT_EQ(obs.rows(), n);
      EXPECT_EQ(obs.cols(), observation_dim(id));
      EXPECT_EQ(env->action_space().encoded_width(), action_space(id).encoded_width());
    }
  }
}

TEST(Envs, EpisodesNeverExceedTheLimit) {
  for (EnvId id : kAll) {
    auto env = make_env({id, 3, 17, 2});
    Rng rng(8);
    for (int e = 0; e < 5; ++e) {
      env->reset();
      int t = 0;
      for (bool done = false; !done; ++t) done = env->step(random_actions(*env, rng)).done;
      EXPECT_LE(t, 17);
      EXPECT_THROW(env->step(random_actions(*env, rng)), ContractError);
    }
  }
}

TEST(Envs, MalformedActionsAreContractErrors) {
  auto ps = make_env({EnvId::particle_system, 3, 50, 0});
  ps->reset();
  EXPECT_THROW(ps->step(JointAction::discrete({0, 1})), ContractError);
  EXPECT_THROW(ps->step(JointAction::discrete({0, 1, 5})), ContractError);
  auto pb = make_env({EnvId::push_ball, 2, 100, 0});
  pb->reset();
  EXPECT_THROW(pb->step(JointAction::continuous(Matrix::Zero(3, 2))), ContractError);
  EXPECT_THROW(pb->step(JointAction::discrete({0, 0})), ContractError);
}

TEST(Envs, RelabelingAgentsPermutesEverything) {
  const std::vector<int> perm = {2, 0, 3, 1};
  auto permute = [&](const auto& v) {
    auto out = v;
    for (std::size_t i = 0; i < perm.size(); ++i) out[i] = v[perm[i]];
    return out;
  };
  for (EnvId id : kAll) {
    auto a = make_env({id, 4, 40, 3});
    auto b = make_env({id, 4, 40, 3});
    a->reset();
    b->reset();
    if (id == EnvId::particle_system) {
      auto s = dynamic_cast<ParticleSystem&>(*a).state();
      dynamic_cast<ParticleSystem&>(*b).set_state({permute(s.agents), permute(s.landmarks), permute(s.reached)});
    } else if (id == EnvId::population_harvest) {
      auto s = dynamic_cast<PopulationHarvest&>(*a).state();
      dynamic_cast<PopulationHarvest&>(*b).set_state({permute(s.agents), permute(s.carrying), s.apples, s.target});
    } else {
      auto s = dynamic_cast<PushBall&>(*a).state();
      dynamic_cast<PushBall&>(*b).set_state({permute(s.agents), s.ball, s.target});
    }
    Rng rng(5);
    for (int t = 0; t < 40; ++t) {
      const JointAction act = random_actions(*a, rng);
      JointAction pact = act;
      if (!act.index.empty()) pact.index = permute(act.index);
      if (act.values.size()) {
        for (int i = 0; i < 4; ++i) pact.values.row(i) = act.values.row(perm[i]);
      }
      const StepResult ra = a->step(act);
      const StepResult rb = b->step(pact);
      ASSERT_EQ(ra.done, rb.done);
      for (int i = 0; i < 4; ++i) {
        ASSERT_EQ(rb.rewards[i], ra.rewards[perm[i]]) << to_string(id) << " t=" << t;
        ASSERT_EQ(rb.observation.row(i), ra.observation.row(perm[i])) << to_string(id) << " t=" << t;
      }
      if (ra.done) break;
    }
  }
}

TEST(Envs, SampleTaskIsUniformOverTheSplit) {
  const TaskSets sets({3, 4, 5}, {8});
  Rng rng(12);
  std::map<int, int> counts;
  constexpr int kDraws = 10000;
  for (int k = 0; k < kDraws; ++k) ++counts[sample_task(sets, Split::train, EnvId::particle_system, 50, rng).n_agents];
  const double p = 1.0 / 3.0, sigma = std::sqrt(kDraws * p * (1 - p));
  ASSERT_EQ(counts.size(), 3u);
  for (const auto& [n, c] : counts) EXPECT_LT(std::abs(c - kDraws * p), 3 * sigma) << n;
  for (int k = 0; k < 10; ++k) EXPECT_EQ(sample_task(sets, Split::adapt, EnvId::push_ball, 100, rng).n_agents, 8);
  EXPECT_THROW(TaskSets({3}, {2}), ConfigError);
  EXPECT_THROW(TaskSets({3}, {3}), ConfigError);
  EXPECT_THROW(TaskSets({}, {4}), ConfigError);
}
