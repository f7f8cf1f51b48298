#include "metacpr/config.hpp"

#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "metacpr/errors.hpp"

namespace metacpr {

std::string_view to_string(Protocol p) { return p == Protocol::zero_shot ? "zero_shot" : "oracle"; }

std::string_view to_string(CprGradSource s) {
  switch (s) {
    case CprGradSource::critic:
      return "critic";
    case CprGradSource::policy:
      return "policy";
    case CprGradSource::both:
      return "both";
  }
  return "critic";
}

std::string_view to_string(KlTarget k) { return k == KlTarget::per_message ? "per_message" : "fused"; }

std::string_view to_string(ContextInput c) {
  switch (c) {
    case ContextInput::messages:
      return "messages";
    case ContextInput::transitions:
      return "transitions";
    case ContextInput::both:
      return "both";
  }
  return "messages";
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<int> parse_counts(const std::string& text, const std::string& what) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    int v = 0;
    try {
      v = std::stoi(item, &pos);
    } catch (const std::exception&) {
      throw ConfigError(what + ": '" + item + "' is not an integer");
    }
    if (pos != item.size()) throw ConfigError(what + ": '" + item + "' is not an integer");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(what + ": expected a comma-separated list of agent counts");
  return out;
}

// ---- serialization ---------------------------------------------------------------

namespace {

Json model_json(const ModelConfig& m) {
  return {{"hidden", m.hidden},
          {"message_dim", m.message_dim},
          {"context_dim", m.context_dim},
          {"task_dim", m.task_dim},
          {"cpr_hidden", m.cpr_hidden},
          {"use_messages", m.use_messages},
          {"use_cpr", m.use_cpr},
          {"cpr_recurrent", m.cpr_recurrent},
          {"cpr_stochastic", m.cpr_stochastic},
          {"critic_cn", m.critic_cn},
          {"centralized_critic", m.centralized_critic},
          {"context_input", to_string(m.context_input)},
          {"variance_floor", m.variance_floor},
          {"variance_cap", m.variance_cap},
          {"cn_eps", m.cn_eps},
          {"init_sigma", m.init_sigma}};
}

Json train_json(const TrainConfig& t) {
  return {{"lr_policy", t.lr_policy},
          {"lr_critic", t.lr_critic},
          {"lr_cpr", t.lr_cpr},
          {"ib_weight", t.ib_weight},
          {"entropy_weight", t.entropy_weight},
          {"gamma", t.gamma},
          {"gae_lambda", t.gae_lambda},
          {"episodes_per_task", t.episodes_per_task},
          {"total_updates", t.total_updates},
          {"env_step_budget", t.env_step_budget},
          {"grad_clip", t.grad_clip},
          {"normalize_advantages", t.normalize_advantages},
          {"checkpoint_every", t.checkpoint_every},
          {"adam", {{"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"eps", t.adam.eps}}},
          {"cpr_grad_source", to_string(t.cpr_grad_source)},
          {"kl_target", to_string(t.kl_target)}};
}

Json env_params_json(const EnvParams& e) {
  const auto& ps = e.particle_system;
  const auto& ph = e.population_harvest;
  const auto& pb = e.push_ball;
  return {{"particle_system",
           {{"grid", ps.grid},
            {"step_cost", ps.step_cost},
            {"landmark_bonus", ps.landmark_bonus},
            {"collision_penalty", ps.collision_penalty}}},
          {"population_harvest",
           {{"grid", ph.grid}, {"delivery_reward", ph.delivery_reward}, {"contention_penalty", ph.contention_penalty}}},
          {"push_ball",
           {{"contact_radius", pb.contact_radius},
            {"force_threshold", pb.force_threshold},
            {"ball_gain", pb.ball_gain},
            {"agent_speed", pb.agent_speed},
            {"target_radius", pb.target_radius},
            {"success_bonus", pb.success_bonus},
            {"agent_spawn_box", pb.agent_spawn_box}}}};
}

/// Walks one JSON object, records which keys were consumed and rejects the
/// rest. Every error carries the dotted key path.
class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + "expected an object");
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const Json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void get(const std::string& key, int& out) {
    if (const Json* v = find(key)) {
      if (!v->is_number_integer()) fail(key, "expected an integer");
      const auto x = v->get<std::int64_t>();
      if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) fail(key, "out of range");
      out = static_cast<int>(x);
    }
  }
  void get(const std::string& key, std::int64_t& out) {
    if (const Json* v = find(key)) {
      if (!v->is_number_integer()) fail(key, "expected an integer");
      out = v->get<std::int64_t>();
    }
  }
  void get(const std::string& key, double& out) {
    if (const Json* v = find(key)) {
      if (!v->is_number()) fail(key, "expected a number");
      out = v->get<double>();
    }
  }
  void get(const std::string& key, bool& out) {
    if (const Json* v = find(key)) {
      if (!v->is_boolean()) fail(key, "expected true or false");
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const Json* v = find(key)) {
      if (!v->is_string()) fail(key, "expected a string");
      out = v->get<std::string>();
    }
  }
  void get(const std::string& key, std::vector<int>& out) {
    if (const Json* v = find(key)) {
      if (!v->is_array()) fail(key, "expected an array of integers");
      out.clear();
      for (const auto& x : *v) {
        if (!x.is_number_integer()) fail(key, "expected an array of integers");
        out.push_back(x.get<int>());
      }
    }
  }
  void get(const std::string& key, std::vector<std::uint64_t>& out) {
    if (const Json* v = find(key)) {
      if (!v->is_array()) fail(key, "expected an array of non-negative integers");
      out.clear();
      for (const auto& x : *v) {
        if (!x.is_number_integer() || (x.is_number_integer() && !x.is_number_unsigned() && x.get<std::int64_t>() < 0)) {
          fail(key, "expected an array of non-negative integers");
        }
        out.push_back(x.get<std::uint64_t>());
      }
    }
  }
  template <typename E>
  void get_enum(const std::string& key, E& out, std::initializer_list<E> options) {
    std::string s;
    if (!find(key)) return;
    get(key, s);
    std::string allowed;
    for (E o : options) {
      if (to_string(o) == s) {
        out = o;
        return;
      }
      allowed += (allowed.empty() ? "" : ", ") + std::string(to_string(o));
    }
    fail(key, "unknown value '" + s + "' (expected one of: " + allowed + ")");
  }

  Reader child(const std::string& key) {
    static const Json empty = Json::object();
    const Json* v = find(key);
    return Reader(v ? *v : empty, key_path(key));
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError(key_path(item.key()) + ": unknown key");
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    throw ConfigError(key_path(key) + ": " + msg);
  }

  void check(bool ok, const std::string& key, const std::string& msg) const {
    if (!ok) fail(key, msg);
  }

 private:
  std::string where() const { return path_.empty() ? "config: " : path_ + ": "; }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

Json to_json(const RunConfig& c) {
  return {{"env", to_string(c.env)},
          {"episode_limit", c.episode_limit},
          {"tasks", {{"train", c.train_counts}, {"adapt", c.adapt_counts}, {"protocol", to_string(c.protocol)}}},
          {"env_params", env_params_json(c.env_params)},
          {"model", model_json(c.model)},
          {"train", train_json(c.train)},
          {"eval", {{"episodes", c.eval.episodes}, {"greedy", c.eval.greedy}, {"discount", c.eval.discount}}},
          {"variant", c.variant},
          {"out_dir", c.out_dir},
          {"seeds", c.seeds}};
}

RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  Reader r(j, "");

  std::string env = std::string(to_string(c.env));
  r.get("env", env);
  try {
    c.env = env_id_from_string(env);
  } catch (const ConfigError&) {
    r.fail("env", "unknown environment '" + env + "'");
  }
  r.get("episode_limit", c.episode_limit);
  r.check(c.episode_limit >= 0, "episode_limit", "must be >= 0 (0 selects the default)");

  {
    Reader t = r.child("tasks");
    t.get("train", c.train_counts);
    t.get("adapt", c.adapt_counts);
    t.get_enum("protocol", c.protocol, {Protocol::zero_shot, Protocol::oracle});
    t.finish();
  }
  {
    Reader e = r.child("env_params");
    {
      Reader p = e.child("particle_system");
      auto& ps = c.env_params.particle_system;
      p.get("grid", ps.grid);
      p.get("step_cost", ps.step_cost);
      p.get("landmark_bonus", ps.landmark_bonus);
      p.get("collision_penalty", ps.collision_penalty);
      p.check(ps.grid >= 2, "grid", "must be >= 2");
      p.finish();
    }
    {
      Reader p = e.child("population_harvest");
      auto& ph = c.env_params.population_harvest;
      p.get("grid", ph.grid);
      p.get("delivery_reward", ph.delivery_reward);
      p.get("contention_penalty", ph.contention_penalty);
      p.check(ph.grid >= 2, "grid", "must be >= 2");
      p.finish();
    }
    {
      Reader p = e.child("push_ball");
      auto& pb = c.env_params.push_ball;
      p.get("contact_radius", pb.contact_radius);
      p.get("force_threshold", pb.force_threshold);
      p.get("ball_gain", pb.ball_gain);
      p.get("agent_speed", pb.agent_speed);
      p.get("target_radius", pb.target_radius);
      p.get("success_bonus", pb.success_bonus);
      p.get("agent_spawn_box", pb.agent_spawn_box);
      p.check(pb.contact_radius > 0.0, "contact_radius", "must be > 0");
      p.check(pb.force_threshold >= 0.0, "force_threshold", "must be >= 0");
      p.check(pb.target_radius > 0.0, "target_radius", "must be > 0");
      p.check(pb.agent_spawn_box >= 0.0, "agent_spawn_box", "must be >= 0");
      p.finish();
    }
    e.finish();
  }
  {
    Reader m = r.child("model");
    auto& mc = c.model;
    m.get("hidden", mc.hidden);
    m.get("message_dim", mc.message_dim);
    m.get("context_dim", mc.context_dim);
    m.get("task_dim", mc.task_dim);
    m.get("cpr_hidden", mc.cpr_hidden);
    m.get("use_messages", mc.use_messages);
    m.get("use_cpr", mc.use_cpr);
    m.get("cpr_recurrent", mc.cpr_recurrent);
    m.get("cpr_stochastic", mc.cpr_stochastic);
    m.get("critic_cn", mc.critic_cn);
    m.get("centralized_critic", mc.centralized_critic);
    m.get_enum("context_input", mc.context_input,
               {ContextInput::messages, ContextInput::transitions, ContextInput::both});
    m.get("variance_floor", mc.variance_floor);
    m.get("variance_cap", mc.variance_cap);
    m.get("cn_eps", mc.cn_eps);
    m.get("init_sigma", mc.init_sigma);
    m.finish();
  }
  {
    Reader t = r.child("train");
    auto& tc = c.train;
    t.get("lr_policy", tc.lr_policy);
    t.get("lr_critic", tc.lr_critic);
    t.get("lr_cpr", tc.lr_cpr);
    t.get("ib_weight", tc.ib_weight);
    t.get("entropy_weight", tc.entropy_weight);
    t.get("gamma", tc.gamma);
    t.get("gae_lambda", tc.gae_lambda);
    t.get("episodes_per_task", tc.episodes_per_task);
    t.get("total_updates", tc.total_updates);
    t.get("env_step_budget", tc.env_step_budget);
    t.get("grad_clip", tc.grad_clip);
    t.get("normalize_advantages", tc.normalize_advantages);
    t.get("checkpoint_every", tc.checkpoint_every);
    {
      Reader a = t.child("adam");
      a.get("beta1", tc.adam.beta1);
      a.get("beta2", tc.adam.beta2);
      a.get("eps", tc.adam.eps);
      a.check(tc.adam.beta1 >= 0.0 && tc.adam.beta1 < 1.0, "beta1", "must lie in [0, 1)");
      a.check(tc.adam.beta2 >= 0.0 && tc.adam.beta2 < 1.0, "beta2", "must lie in [0, 1)");
      a.check(tc.adam.eps > 0.0, "eps", "must be > 0");
      a.finish();
    }
    t.get_enum("cpr_grad_source", tc.cpr_grad_source,
               {CprGradSource::critic, CprGradSource::policy, CprGradSource::both});
    t.get_enum("kl_target", tc.kl_target, {KlTarget::per_message, KlTarget::fused});
    t.finish();
  }
  {
    Reader e = r.child("eval");
    e.get("episodes", c.eval.episodes);
    e.get("greedy", c.eval.greedy);
    e.get("discount", c.eval.discount);
    e.finish();
  }
  r.get("variant", c.variant);
  r.get("out_dir", c.out_dir);
  r.get("seeds", c.seeds);
  r.finish();

  c.validate();
  return c;
}

void RunConfig::validate() const {
  TaskSpec{env, 2, resolved_episode_limit(), 0}.validate();
  model.validate();
  train.validate();
  if (protocol == Protocol::zero_shot) {
    TaskSets(train_counts, adapt_counts);
  } else {
    if (train_counts.empty()) throw ConfigError("tasks.train: must be non-empty");
    for (int n : train_counts) {
      if (n < 2) throw ConfigError("tasks.train: agent counts must be >= 2");
    }
    for (int n : adapt_counts) {
      if (n < 2) throw ConfigError("tasks.adapt: agent counts must be >= 2");
    }
  }
  if (eval.episodes < 1) throw ConfigError("eval.episodes must be >= 1");
  if (!(eval.discount >= 0.0 && eval.discount <= 1.0)) throw ConfigError("eval.discount must lie in [0, 1]");
  if (variant.empty()) throw ConfigError("variant: must be non-empty");
  if (seeds.empty()) throw ConfigError("seeds: must be non-empty");
}

bool operator==(const RunConfig& a, const RunConfig& b) { return to_json(a) == to_json(b); }

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": malformed JSON (" + e.what() + ")");
  }
  return run_config_from_json(j);
}

void save_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << to_json(cfg).dump(2) << "\n";
}

std::string config_hash(const RunConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json(cfg).dump())));
  return buf;
}

namespace {

void diff_into(const Json& a, const Json& b, const std::string& path, std::vector<std::string>& out) {
  if (a.is_object() && b.is_object()) {
    std::set<std::string> keys;
    for (const auto& it : a.items()) keys.insert(it.key());
    for (const auto& it : b.items()) keys.insert(it.key());
    for (const auto& k : keys) {
      const std::string p = path.empty() ? k : path + "." + k;
      if (!a.contains(k) || !b.contains(k)) {
        out.push_back(p);
      } else {
        diff_into(a[k], b[k], p, out);
      }
    }
  } else if (a != b) {
    out.push_back(path);
  }
}

}  // namespace

std::vector<std::string> config_diff(const RunConfig& a, const RunConfig& b) {
  std::vector<std::string> out;
  diff_into(to_json(a), to_json(b), "", out);
  return out;
}

}  // namespace metacpr
