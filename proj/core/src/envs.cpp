#include "metacpr/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "metacpr/errors.hpp"

namespace metacpr {

std::string_view to_string(EnvId id) {
  switch (id) {
    case EnvId::particle_system:
      return "particle_system";
    case EnvId::population_harvest:
      return "population_harvest";
    case EnvId::push_ball:
      return "push_ball";
  }
  return "?";
}

EnvId env_id_from_string(std::string_view name) {
  if (name == "particle_system") return EnvId::particle_system;
  if (name == "population_harvest") return EnvId::population_harvest;
  if (name == "push_ball") return EnvId::push_ball;
  throw ConfigError("unknown env_id '" + std::string(name) + "'");
}

void TaskSpec::validate() const {
  if (n_agents < 2) throw ConfigError("TaskSpec: n_agents must be >= 2, got " + std::to_string(n_agents));
  if (episode_limit < 1) throw ConfigError("TaskSpec: episode_limit must be >= 1");
}

TaskSets::TaskSets(std::vector<int> train, std::vector<int> adapt) : train_(std::move(train)), adapt_(std::move(adapt)) {
  if (train_.empty()) throw ConfigError("tasks.train: must be non-empty");
  if (adapt_.empty()) throw ConfigError("tasks.adapt: must be non-empty");
  for (int n : train_) {
    if (n < 2) throw ConfigError("tasks.train: agent counts must be >= 2");
  }
  for (int n : adapt_) {
    if (n < 2) throw ConfigError("tasks.adapt: agent counts must be >= 2");
  }
  const int max_train = *std::max_element(train_.begin(), train_.end());
  const int min_adapt = *std::min_element(adapt_.begin(), adapt_.end());
  if (min_adapt <= max_train) {
    throw ConfigError("tasks: every adapt count must exceed every train count (adapt " + std::to_string(min_adapt) +
                      " <= train " + std::to_string(max_train) + ")");
  }
}

TaskSpec sample_task(const TaskSets& sets, Split split, EnvId env_id, int episode_limit, Rng& rng) {
  const auto& counts = split == Split::train ? sets.train() : sets.adapt();
  if (counts.empty()) throw ConfigError("sample_task: empty split");
  TaskSpec t;
  t.env_id = env_id;
  t.n_agents = counts[rng.index(counts.size())];
  t.episode_limit = episode_limit;
  t.seed = rng.next_u64();
  t.validate();
  return t;
}

int default_episode_limit(EnvId id) {
  switch (id) {
    case EnvId::particle_system:
      return 50;
    case EnvId::population_harvest:
      return 80;
    case EnvId::push_ball:
      return 100;
  }
  return 50;
}

int observation_dim(EnvId id) {
  switch (id) {
    case EnvId::particle_system:
      return 4;
    case EnvId::population_harvest:
      return 7;
    case EnvId::push_ball:
      return 6;
  }
  return 0;
}

ActionSpace action_space(EnvId id) {
  ActionSpace s;
  if (id == EnvId::push_ball) {
    s.discrete = false;
    s.dim = 2;
  } else {
    s.discrete = true;
    s.num_actions = kGridActions;
  }
  return s;
}

void Env::check_actions(const JointAction& a) const {
  if (done_) throw ContractError("step: episode has ended; call reset()");
  const ActionSpace space = action_space();
  if (space.discrete) {
    if (static_cast<int>(a.index.size()) != n_agents()) {
      throw ContractError("step: expected " + std::to_string(n_agents()) + " discrete actions, got " +
                          std::to_string(a.index.size()));
    }
    for (int v : a.index) {
      if (v < 0 || v >= space.num_actions) throw ContractError("step: action index out of range");
    }
  } else {
    if (a.values.rows() != n_agents() || a.values.cols() != space.dim) {
      throw ContractError("step: expected continuous actions of shape " + std::to_string(n_agents()) + "x" +
                          std::to_string(space.dim));
    }
    if (!a.values.allFinite()) throw ContractError("step: non-finite continuous action");
  }
}

StepResult Env::finish_step(std::vector<double> rewards, bool success, std::map<std::string, double> info) {
  ++steps_;
  StepResult r;
  r.rewards = std::move(rewards);
  r.terminal = success;
  r.done = success || steps_ >= task_.episode_limit;
  done_ = r.done;
  info["step"] = steps_;
  r.info = std::move(info);
  r.observation = observe();
  return r;
}

std::unique_ptr<Env> make_env(const TaskSpec& task, const EnvParams& params) {
  task.validate();
  switch (task.env_id) {
    case EnvId::particle_system:
      return std::make_unique<ParticleSystem>(task, params.particle_system);
    case EnvId::population_harvest:
      return std::make_unique<PopulationHarvest>(task, params.population_harvest);
    case EnvId::push_ball:
      return std::make_unique<PushBall>(task, params.push_ball);
  }
  throw ConfigError("make_env: unknown env_id");
}

// ---- grid helpers -------------------------------------------------------------

Cell apply_move(Cell c, int action, int grid) {
  Cell n = c;
  switch (action) {
    case 0:
      ++n.y;
      break;
    case 1:
      --n.y;
      break;
    case 2:
      --n.x;
      break;
    case 3:
      ++n.x;
      break;
    default:
      break;
  }
  if (n.x < 0 || n.y < 0 || n.x >= grid || n.y >= grid) return c;
  return n;
}

std::vector<Cell> resolve_moves(const std::vector<Cell>& current, const std::vector<Cell>& proposed,
                                std::vector<bool>& collided) {
  const std::size_t n = current.size();
  std::vector<Cell> p = proposed;
  collided.assign(n, false);
  bool changed = true;
  while (changed) {
    changed = false;
    std::vector<bool> reject(n, false);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const bool same_target = p[i] == p[j];
        const bool swap = p[i] == current[j] && p[j] == current[i] && p[i] != current[i];
        if (!same_target && !swap) continue;
        collided[i] = collided[j] = true;
        if (p[i] != current[i]) reject[i] = true;
        if (p[j] != current[j]) reject[j] = true;
      }
    }
    for (std::size_t k = 0; k < n; ++k) {
      if (reject[k]) {
        p[k] = current[k];
        changed = true;
      }
    }
  }
  return p;
}

namespace {

/// `count` distinct cells drawn uniformly without replacement (partial
/// Fisher-Yates over the row-major cell list).
std::vector<Cell> distinct_cells(int grid, int count, Rng& rng) {
  const int total = grid * grid;
  if (count > total) throw ConfigError("grid too small for the requested number of agents");
  std::vector<int> cells(total);
  std::iota(cells.begin(), cells.end(), 0);
  std::vector<Cell> out;
  out.reserve(count);
  for (int k = 0; k < count; ++k) {
    const std::size_t pick = static_cast<std::size_t>(k) + rng.index(static_cast<std::size_t>(total - k));
    std::swap(cells[k], cells[pick]);
    out.push_back(Cell{cells[k] % grid, cells[k] / grid});
  }
  return out;
}

double scaled(int v, int grid) { return static_cast<double>(v) / static_cast<double>(grid - 1); }

}  // namespace

// ---- ParticleSystem -----------------------------------------------------------

ParticleSystem::ParticleSystem(const TaskSpec& task, const ParticleSystemParams& params)
    : Env(task), params_(params) {
  if (params_.grid < 2) throw ConfigError("env.particle_system.grid must be >= 2");
}

Matrix ParticleSystem::reset() {
  const int n = n_agents();
  auto cells = distinct_cells(params_.grid, 2 * n, rng_);
  state_.agents.assign(cells.begin(), cells.begin() + n);
  state_.landmarks.assign(cells.begin() + n, cells.end());
  state_.reached.assign(n, false);
  steps_ = 0;
  done_ = false;
  return observe();
}

void ParticleSystem::set_state(State s) {
  if (static_cast<int>(s.agents.size()) != n_agents() || s.landmarks.size() != s.agents.size() ||
      s.reached.size() != s.agents.size()) {
    throw ContractError("ParticleSystem::set_state: size mismatch");
  }
  state_ = std::move(s);
  steps_ = 0;
  done_ = false;
}

Matrix ParticleSystem::observe() const {
  const int n = n_agents();
  Matrix obs(n, 4);
  for (int i = 0; i < n; ++i) {
    obs(i, 0) = scaled(state_.agents[i].x, params_.grid);
    obs(i, 1) = scaled(state_.agents[i].y, params_.grid);
    obs(i, 2) = scaled(state_.landmarks[i].x, params_.grid);
    obs(i, 3) = scaled(state_.landmarks[i].y, params_.grid);
  }
  return obs;
}

StepResult ParticleSystem::step(const JointAction& actions) {
  check_actions(actions);
  const int n = n_agents();
  std::vector<Cell> proposed(n);
  for (int i = 0; i < n; ++i) proposed[i] = apply_move(state_.agents[i], actions.index[i], params_.grid);
  std::vector<bool> collided;
  state_.agents = resolve_moves(state_.agents, proposed, collided);

  std::vector<double> rewards(n, -params_.step_cost);
  int collisions = 0;
  bool all_on_landmark = true;
  for (int i = 0; i < n; ++i) {
    if (collided[i]) {
      rewards[i] -= params_.collision_penalty;
      ++collisions;
    }
    const bool on = state_.agents[i] == state_.landmarks[i];
    if (on && !state_.reached[i]) {
      rewards[i] += params_.landmark_bonus;
      state_.reached[i] = true;
    }
    all_on_landmark = all_on_landmark && on;
  }
  return finish_step(std::move(rewards), all_on_landmark, {{"collisions", collisions}});
}

// ---- PopulationHarvest --------------------------------------------------------

PopulationHarvest::PopulationHarvest(const TaskSpec& task, const PopulationHarvestParams& params)
    : Env(task), params_(params) {
  if (params_.grid < 2) throw ConfigError("env.population_harvest.grid must be >= 2");
}

Matrix PopulationHarvest::reset() {
  const int n = n_agents();
  auto cells = distinct_cells(params_.grid, 1 + 2 * n, rng_);
  state_.target = cells[0];
  state_.agents.assign(cells.begin() + 1, cells.begin() + 1 + n);
  state_.apples.assign(cells.begin() + 1 + n, cells.end());
  state_.carrying.assign(n, false);
  steps_ = 0;
  done_ = false;
  return observe();
}

void PopulationHarvest::set_state(State s) {
  if (static_cast<int>(s.agents.size()) != n_agents() || s.carrying.size() != s.agents.size()) {
    throw ContractError("PopulationHarvest::set_state: size mismatch");
  }
  state_ = std::move(s);
  steps_ = 0;
  done_ = false;
}

Matrix PopulationHarvest::observe() const {
  const int n = n_agents();
  const int g = params_.grid;
  Matrix obs(n, 7);
  for (int i = 0; i < n; ++i) {
    const Cell a = state_.agents[i];
    Cell nearest = a;
    long best = -1;
    for (const Cell& apple : state_.apples) {
      const long dx = apple.x - a.x, dy = apple.y - a.y;
      const long d = dx * dx + dy * dy;
      // Ties go to the lexicographically smaller (y, x) cell.
      if (best < 0 || d < best ||
          (d == best && std::make_pair(apple.y, apple.x) < std::make_pair(nearest.y, nearest.x))) {
        best = d;
        nearest = apple;
      }
    }
    obs(i, 0) = scaled(a.x, g);
    obs(i, 1) = scaled(a.y, g);
    obs(i, 2) = scaled(nearest.x, g);
    obs(i, 3) = scaled(nearest.y, g);
    obs(i, 4) = scaled(state_.target.x, g);
    obs(i, 5) = scaled(state_.target.y, g);
    obs(i, 6) = state_.carrying[i] ? 1.0 : 0.0;
  }
  return obs;
}

StepResult PopulationHarvest::step(const JointAction& actions) {
  check_actions(actions);
  const int n = n_agents();
  const int g = params_.grid;
  for (int i = 0; i < n; ++i) state_.agents[i] = apply_move(state_.agents[i], actions.index[i], g);

  std::vector<double> rewards(n, 0.0);
  int contentions = 0;
  int pickups = 0;
  int deliveries = 0;

  // Pickups: a lone empty-handed agent on an apple takes it; two or more
  // empty-handed agents on the same apple are all penalized and nobody takes it.
  std::vector<Cell> remaining;
  for (const Cell& apple : state_.apples) {
    std::vector<int> claimants;
    for (int i = 0; i < n; ++i) {
      if (!state_.carrying[i] && state_.agents[i] == apple) claimants.push_back(i);
    }
    if (claimants.size() == 1) {
      state_.carrying[claimants[0]] = true;
      ++pickups;
      continue;
    }
    if (claimants.size() > 1) {
      for (int i : claimants) rewards[i] -= params_.contention_penalty;
      contentions += static_cast<int>(claimants.size());
    }
    remaining.push_back(apple);
  }
  state_.apples = std::move(remaining);

  for (int i = 0; i < n; ++i) {
    if (!state_.carrying[i] || state_.agents[i] != state_.target) continue;
    rewards[i] += params_.delivery_reward;
    state_.carrying[i] = false;
    ++deliveries;
    // Respawn on a uniformly chosen cell with no apple, agent or target.
    std::vector<Cell> empty;
    for (int y = 0; y < g; ++y) {
      for (int x = 0; x < g; ++x) {
        const Cell c{x, y};
        if (c == state_.target) continue;
        if (std::find(state_.apples.begin(), state_.apples.end(), c) != state_.apples.end()) continue;
        if (std::find(state_.agents.begin(), state_.agents.end(), c) != state_.agents.end()) continue;
        empty.push_back(c);
      }
    }
    if (!empty.empty()) state_.apples.push_back(empty[rng_.index(empty.size())]);
  }
  return finish_step(std::move(rewards), false,
                     {{"contentions", contentions}, {"pickups", pickups}, {"deliveries", deliveries}});
}

// ---- PushBall -----------------------------------------------------------------

PushBall::PushBall(const TaskSpec& task, const PushBallParams& params) : Env(task), params_(params) {}

Matrix PushBall::reset() {
  const int n = n_agents();
  state_.ball = {rng_.uniform(0.25, 0.75), rng_.uniform(0.25, 0.75)};
  // Target at least 0.3 away from the ball; bounded rejection sampling.
  for (int attempt = 0; attempt < 1000; ++attempt) {
    state_.target = {rng_.uniform(0.1, 0.9), rng_.uniform(0.1, 0.9)};
    if (std::hypot(state_.target[0] - state_.ball[0], state_.target[1] - state_.ball[1]) >= 0.3) break;
  }
  state_.agents.resize(n);
  const double box = params_.agent_spawn_box;
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < 2; ++d) {
      state_.agents[i][d] = std::clamp(state_.ball[d] + rng_.uniform(-box, box), 0.0, 1.0);
    }
  }
  steps_ = 0;
  done_ = false;
  return observe();
}

void PushBall::set_state(State s) {
  if (static_cast<int>(s.agents.size()) != n_agents()) throw ContractError("PushBall::set_state: size mismatch");
  state_ = std::move(s);
  steps_ = 0;
  done_ = false;
}

Matrix PushBall::observe() const {
  const int n = n_agents();
  Matrix obs(n, 6);
  for (int i = 0; i < n; ++i) {
    obs(i, 0) = state_.agents[i][0];
    obs(i, 1) = state_.agents[i][1];
    obs(i, 2) = state_.ball[0];
    obs(i, 3) = state_.ball[1];
    obs(i, 4) = state_.target[0];
    obs(i, 5) = state_.target[1];
  }
  return obs;
}

StepResult PushBall::step(const JointAction& actions) {
  check_actions(actions);
  const int n = n_agents();
  std::vector<Vec2> force(n);
  for (int i = 0; i < n; ++i) {
    Vec2 f{std::clamp(actions.values(i, 0), -1.0, 1.0), std::clamp(actions.values(i, 1), -1.0, 1.0)};
    const double mag = std::hypot(f[0], f[1]);
    if (mag > 1.0) f = {f[0] / mag, f[1] / mag};
    force[i] = f;
  }

  // Contacts use positions at the start of the tick. Forces are summed in
  // sorted order so relabeling agents cannot change the result.
  std::vector<Vec2> pushing;
  for (int i = 0; i < n; ++i) {
    const double d = std::hypot(state_.agents[i][0] - state_.ball[0], state_.agents[i][1] - state_.ball[1]);
    if (d <= params_.contact_radius) pushing.push_back(force[i]);
  }
  std::sort(pushing.begin(), pushing.end());
  Vec2 net{0.0, 0.0};
  for (const Vec2& f : pushing) {
    net[0] += f[0];
    net[1] += f[1];
  }
  const double net_mag = std::hypot(net[0], net[1]);
  const bool moved = net_mag > params_.force_threshold;
  if (moved) {
    const double excess = (net_mag - params_.force_threshold) / net_mag;
    for (int d = 0; d < 2; ++d) {
      state_.ball[d] = std::clamp(state_.ball[d] + params_.ball_gain * net[d] * excess, 0.0, 1.0);
    }
  }
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < 2; ++d) {
      state_.agents[i][d] = std::clamp(state_.agents[i][d] + params_.agent_speed * force[i][d], 0.0, 1.0);
    }
  }

  const double dist = std::hypot(state_.ball[0] - state_.target[0], state_.ball[1] - state_.target[1]);
  const bool success = dist <= params_.target_radius;
  const double r = -dist + (success ? params_.success_bonus : 0.0);
  return finish_step(std::vector<double>(n, r), success,
                     {{"contacts", static_cast<double>(pushing.size())}, {"ball_moved", moved ? 1.0 : 0.0}});
}

}  // namespace metacpr
