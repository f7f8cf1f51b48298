#pragma once

// Variable-agent-count cooperative environments. Observation width and the
// action space depend only on the environment kind, never on the number of
// agents, so one parameter set can drive any team size.

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "metacpr/autodiff.hpp"
#include "metacpr/rng.hpp"

namespace metacpr {

enum class EnvId { particle_system, population_harvest, push_ball };

std::string_view to_string(EnvId id);
EnvId env_id_from_string(std::string_view name);

/// One multi-agent task: environment kind, team size and episode limit.
struct TaskSpec {
  EnvId env_id = EnvId::particle_system;
  int n_agents = 2;
  int episode_limit = 50;
  std::uint64_t seed = 0;

  /// Throws ConfigError on n_agents < 2 or episode_limit < 1.
  void validate() const;
};

/// Agent counts used for training and for zero-shot adaptation. Every adapt
/// count must exceed every train count.
class TaskSets {
 public:
  TaskSets(std::vector<int> train, std::vector<int> adapt);

  const std::vector<int>& train() const { return train_; }
  const std::vector<int>& adapt() const { return adapt_; }

 private:
  std::vector<int> train_;
  std::vector<int> adapt_;
};

enum class Split { train, adapt };

/// Uniform draw of an agent count from one split.
TaskSpec sample_task(const TaskSets& sets, Split split, EnvId env_id, int episode_limit, Rng& rng);

struct ActionSpace {
  bool discrete = true;
  int num_actions = 0;  // discrete
  int dim = 0;          // continuous
  double low = -1.0;
  double high = 1.0;

  /// Width of one action when encoded as a vector (one-hot or raw).
  int encoded_width() const { return discrete ? num_actions : dim; }
};

/// Discrete actions use `index`; continuous actions use `values` (n x dim).
struct JointAction {
  std::vector<int> index;
  Matrix values;

  static JointAction discrete(std::vector<int> a) { return JointAction{std::move(a), Matrix()}; }
  static JointAction continuous(Matrix v) { return JointAction{{}, std::move(v)}; }
};

struct StepResult {
  Matrix observation;  // n x d_o
  std::vector<double> rewards;
  bool done = false;
  /// True when the episode ended on the success condition, not the time limit.
  bool terminal = false;
  std::map<std::string, double> info;
};

struct ParticleSystemParams {
  int grid = 8;
  double step_cost = 0.05;
  double landmark_bonus = 1.0;
  double collision_penalty = 0.5;
};

struct PopulationHarvestParams {
  int grid = 10;
  double delivery_reward = 1.0;
  double contention_penalty = 0.3;
};

struct PushBallParams {
  double contact_radius = 0.08;
  double force_threshold = 1.2;
  double ball_gain = 0.05;
  double agent_speed = 0.05;
  double target_radius = 0.05;
  double success_bonus = 5.0;
  /// Agents spawn uniformly within this half-width box around the ball.
  double agent_spawn_box = 0.15;
};

struct EnvParams {
  ParticleSystemParams particle_system;
  PopulationHarvestParams population_harvest;
  PushBallParams push_ball;
};

int default_episode_limit(EnvId id);
int observation_dim(EnvId id);
ActionSpace action_space(EnvId id);

class Env {
 public:
  explicit Env(const TaskSpec& task) : task_(task), rng_(task.seed) {}
  virtual ~Env() = default;

  const TaskSpec& task() const { return task_; }
  int n_agents() const { return task_.n_agents; }
  int steps() const { return steps_; }
  ActionSpace action_space() const { return metacpr::action_space(task_.env_id); }
  int observation_dim() const { return metacpr::observation_dim(task_.env_id); }

  /// Samples a fresh initial state and returns the joint observation.
  virtual Matrix reset() = 0;
  /// Advances one tick. Throws ContractError on malformed actions or when
  /// called after the episode ended.
  virtual StepResult step(const JointAction& actions) = 0;
  virtual Matrix observe() const = 0;

  const Rng& rng() const { return rng_; }

 protected:
  void check_actions(const JointAction& a) const;
  StepResult finish_step(std::vector<double> rewards, bool success, std::map<std::string, double> info);

  TaskSpec task_;
  Rng rng_;
  int steps_ = 0;
  bool done_ = true;
};

std::unique_ptr<Env> make_env(const TaskSpec& task, const EnvParams& params = {});

// ---- concrete environments ---------------------------------------------------

struct Cell {
  int x = 0;
  int y = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

/// Grid moves: 0 up (+y), 1 down (-y), 2 left (-x), 3 right (+x), 4 stay.
inline constexpr int kGridActions = 5;
Cell apply_move(Cell c, int action, int grid);

/// Simultaneous grid moves where any two agents targeting the same cell, or
/// swapping cells, have their moves rejected. Rejection repeats until no
/// conflict remains. `collided[i]` marks agents that took part in a conflict.
std::vector<Cell> resolve_moves(const std::vector<Cell>& current, const std::vector<Cell>& proposed,
                                std::vector<bool>& collided);

/// Each agent walks to its own landmark (agent i <-> landmark i).
/// Observation: own (x, y) and landmark (x, y), scaled to [0, 1].
class ParticleSystem final : public Env {
 public:
  struct State {
    std::vector<Cell> agents;
    std::vector<Cell> landmarks;
    std::vector<bool> reached;
  };

  ParticleSystem(const TaskSpec& task, const ParticleSystemParams& params);

  Matrix reset() override;
  StepResult step(const JointAction& actions) override;
  Matrix observe() const override;

  const State& state() const { return state_; }
  /// Installs an arbitrary state and restarts the step counter.
  void set_state(State s);

 private:
  ParticleSystemParams params_;
  State state_;
};

/// Agents carry apples to a shared target cell. Observation: own (x, y),
/// nearest apple (x, y), target (x, y), carrying flag.
class PopulationHarvest final : public Env {
 public:
  struct State {
    std::vector<Cell> agents;
    std::vector<bool> carrying;
    std::vector<Cell> apples;
    Cell target;
  };

  PopulationHarvest(const TaskSpec& task, const PopulationHarvestParams& params);

  Matrix reset() override;
  StepResult step(const JointAction& actions) override;
  Matrix observe() const override;

  const State& state() const { return state_; }
  void set_state(State s);

 private:
  PopulationHarvestParams params_;
  State state_;
};

/// Continuous arena [0,1]^2: a heavy ball moves only under the combined push
/// of several agents. Observation: own (x, y), ball (x, y), target (x, y).
class PushBall final : public Env {
 public:
  using Vec2 = std::array<double, 2>;
  struct State {
    std::vector<Vec2> agents;
    Vec2 ball{};
    Vec2 target{};
  };

  PushBall(const TaskSpec& task, const PushBallParams& params);

  Matrix reset() override;
  StepResult step(const JointAction& actions) override;
  Matrix observe() const override;

  const State& state() const { return state_; }
  void set_state(State s);

 private:
  PushBallParams params_;
  State state_;
};

}  // namespace metacpr
