#include <benchmark/benchmark.h>

#include "metacpr/envs.hpp"
#include "metacpr/training.hpp"

using namespace metacpr;

namespace {

constexpr EnvId kEnvs[] = {EnvId::particle_system, EnvId::population_harvest, EnvId::push_ball};

ModelConfig bench_model() {
  ModelConfig m;
  m.hidden = 32;
  m.message_dim = 8;
  m.context_dim = 8;
  m.task_dim = 8;
  m.cpr_hidden = 32;
  return m;
}

JointAction random_actions(const ActionSpace& space, int n, Rng& rng) {
  JointAction a;
  if (space.discrete) {
    a.index.resize(n);
    for (auto& i : a.index) i = static_cast<int>(rng.index(static_cast<std::size_t>(space.num_actions)));
  } else {
    a.values.resize(n, space.dim);
    for (Eigen::Index k = 0; k < a.values.size(); ++k) a.values.data()[k] = rng.uniform(-1.0, 1.0);
  }
  return a;
}

// args: env index, agent count
void BM_EnvStep(benchmark::State& state) {
  const EnvId env_id = kEnvs[state.range(0)];
  const int n = static_cast<int>(state.range(1));
  auto env = make_env({env_id, n, 1 << 30, 1});
  const ActionSpace space = action_space(env_id);
  Rng rng(2);
  env->reset();
  for (auto _ : state) {
    const StepResult r = env->step(random_actions(space, n, rng));
    if (r.done) env->reset();
    benchmark::DoNotOptimize(r);
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_EnvStep)->ArgsProduct({{0, 1, 2}, {4, 16}});

// One episode of 25 steps with the full model.
void BM_Rollout(benchmark::State& state) {
  const EnvId env_id = kEnvs[state.range(0)];
  const int n = static_cast<int>(state.range(1));
  const AgentModel model(bench_model(), env_id);
  Rng rng(3);
  const AgentParams params = model.init_params(rng);
  auto env = make_env({env_id, n, 25, 4});
  for (auto _ : state) {
    benchmark::DoNotOptimize(run_episode(model, params, *env, rng));
  }
  state.SetItemsProcessed(state.iterations() * 25);
}
BENCHMARK(BM_Rollout)->ArgsProduct({{0, 1, 2}, {3, 8}})->Unit(benchmark::kMillisecond);

// Loss construction plus all backward passes for one batch of two episodes.
void BM_LossGradients(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const AgentModel model(bench_model(), EnvId::particle_system);
  Rng rng(5);
  const AgentParams params = model.init_params(rng);
  TrainConfig tc;
  EpisodeBatch batch = collect_episodes(model, params, {EnvId::particle_system, n, 25, 6}, EnvParams{}, 2, rng);
  compute_advantages(std::span(&batch, 1), tc.gamma, tc.gae_lambda, true);
  for (auto _ : state) {
    benchmark::DoNotOptimize(compute_loss_gradients(model, params, std::span(&batch, 1), tc));
  }
}
BENCHMARK(BM_LossGradients)->Arg(3)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_TrainerUpdate(benchmark::State& state) {
  const AgentModel model(bench_model(), EnvId::particle_system);
  Rng rng(7);
  TrainConfig tc;
  tc.total_updates = 1 << 30;
  Trainer trainer(model, model.init_params(rng), tc, EnvParams{}, {3, 4, 5}, 25, 8);
  for (auto _ : state) {
    benchmark::DoNotOptimize(trainer.update());
  }
}
BENCHMARK(BM_TrainerUpdate)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
