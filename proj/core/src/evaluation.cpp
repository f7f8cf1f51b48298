#include "metacpr/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "metacpr/errors.hpp"
#include "metacpr/run.hpp"

namespace metacpr {

// ---- variants -------------------------------------------------------------------

namespace {

const std::vector<VariantSpec>& variant_table() {
  static const std::vector<VariantSpec> table = {
      {Variant::meta_cpr, {}, "full method"},
      {Variant::gcn_comm, {"model.use_cpr"}, "no CPR module; z = 0"},
      {Variant::indep_ac,
       {"model.use_messages", "model.use_cpr", "model.centralized_critic"},
       "no communication, no CPR, critic sees only the local observation"},
      {Variant::oracle_mt, {"tasks.train", "tasks.protocol"}, "communicating policy trained on all adaptation counts"},
      {Variant::oracle_single,
       {"tasks.train", "tasks.adapt", "tasks.protocol"},
       "communicating policy trained on one adaptation count"},
      {Variant::cpr_no_recurrence, {"model.cpr_recurrent"}, "feedforward context encoder"},
      {Variant::cpr_deterministic,
       {"model.cpr_stochastic", "train.ib_weight"},
       "posterior mean instead of a sample; no bottleneck term"},
      {Variant::critic_no_cn, {"model.critic_cn"}, "plain learned normalization in the critic"},
      {Variant::cpr_train_with_policy, {"train.cpr_grad_source"}, "CPR trained by the policy loss only"},
      {Variant::cpr_train_with_both, {"train.cpr_grad_source"}, "CPR trained by policy and critic losses"},
      {Variant::context_transitions, {"model.context_input"}, "context from (o, a, r) transitions"},
      {Variant::context_both, {"model.context_input"}, "context from messages and transitions"},
  };
  return table;
}

}  // namespace

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::meta_cpr:
      return "meta_cpr";
    case Variant::gcn_comm:
      return "gcn_comm";
    case Variant::indep_ac:
      return "indep_ac";
    case Variant::oracle_mt:
      return "oracle_mt";
    case Variant::oracle_single:
      return "oracle_single";
    case Variant::cpr_no_recurrence:
      return "cpr_no_recurrence";
    case Variant::cpr_deterministic:
      return "cpr_deterministic";
    case Variant::critic_no_cn:
      return "critic_no_cn";
    case Variant::cpr_train_with_policy:
      return "cpr_train_with_policy";
    case Variant::cpr_train_with_both:
      return "cpr_train_with_both";
    case Variant::context_transitions:
      return "context_transitions";
    case Variant::context_both:
      return "context_both";
  }
  return "meta_cpr";
}

Variant variant_from_string(std::string_view name) {
  for (const auto& s : variant_table()) {
    if (to_string(s.name) == name) return s.name;
  }
  throw ConfigError("unknown variant '" + std::string(name) + "'");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> all = [] {
    std::vector<Variant> v;
    for (const auto& s : variant_table()) v.push_back(s.name);
    return v;
  }();
  return all;
}

const VariantSpec& variant_spec(Variant v) {
  for (const auto& s : variant_table()) {
    if (s.name == v) return s;
  }
  throw ContractError("variant_spec: unregistered variant");
}

RunConfig build_variant(Variant v, const RunConfig& base, int oracle_n) {
  RunConfig c = base;
  c.variant = std::string(to_string(v));
  switch (v) {
    case Variant::meta_cpr:
      break;
    case Variant::gcn_comm:
      c.model.use_cpr = false;
      break;
    case Variant::indep_ac:
      c.model.use_messages = false;
      c.model.use_cpr = false;
      c.model.centralized_critic = false;
      break;
    case Variant::oracle_mt:
      c.train_counts = base.adapt_counts;
      c.protocol = Protocol::oracle;
      break;
    case Variant::oracle_single: {
      int n = oracle_n;
      if (n == 0) {
        if (base.adapt_counts.size() != 1) {
          throw ConfigError("oracle_single: several adaptation counts; one run per count is required");
        }
        n = base.adapt_counts.front();
      }
      if (std::find(base.adapt_counts.begin(), base.adapt_counts.end(), n) == base.adapt_counts.end()) {
        throw ConfigError("oracle_single: " + std::to_string(n) + " is not an adaptation count");
      }
      c.train_counts = {n};
      c.adapt_counts = {n};
      c.protocol = Protocol::oracle;
      break;
    }
    case Variant::cpr_no_recurrence:
      c.model.cpr_recurrent = false;
      break;
    case Variant::cpr_deterministic:
      c.model.cpr_stochastic = false;
      c.train.ib_weight = 0.0;
      break;
    case Variant::critic_no_cn:
      c.model.critic_cn = false;
      break;
    case Variant::cpr_train_with_policy:
      c.train.cpr_grad_source = CprGradSource::policy;
      break;
    case Variant::cpr_train_with_both:
      c.train.cpr_grad_source = CprGradSource::both;
      break;
    case Variant::context_transitions:
      c.model.context_input = ContextInput::transitions;
      break;
    case Variant::context_both:
      c.model.context_input = ContextInput::both;
      break;
  }
  c.validate();
  return c;
}

std::vector<RunConfig> build_variants(Variant v, const RunConfig& base) {
  if (v != Variant::oracle_single) return {build_variant(v, base)};
  std::vector<RunConfig> out;
  for (int n : base.adapt_counts) out.push_back(build_variant(v, base, n));
  return out;
}

// ---- evaluation -----------------------------------------------------------------

const EvalCell* EvalReport::cell(int n) const {
  for (const auto& c : cells) {
    if (c.n == n) return &c;
  }
  return nullptr;
}

namespace {

std::uint64_t params_checksum(const AgentParams& p) {
  std::uint64_t h = p.policy.checksum();
  h = h * 1099511628211ULL ^ p.critic.checksum();
  h = h * 1099511628211ULL ^ p.cpr.checksum();
  return h;
}

void check_protocol(const RunConfig& cfg, std::span<const int> counts, const EvalOptions& opts, Protocol protocol) {
  if (opts.episodes < 1) throw ProtocolError("evaluation needs at least one episode per agent count");
  if (counts.empty()) throw ProtocolError("evaluation needs at least one agent count");
  if (!(opts.discount >= 0.0 && opts.discount <= 1.0)) throw ConfigError("eval discount must lie in [0, 1]");
  for (int n : counts) {
    if (n < 2) throw ProtocolError("evaluation agent counts must be >= 2, got " + std::to_string(n));
  }
  if (protocol != Protocol::zero_shot) return;
  const int max_train = *std::max_element(cfg.train_counts.begin(), cfg.train_counts.end());
  for (int n : counts) {
    if (n <= max_train) {
      throw ProtocolError("zero-shot evaluation on n=" + std::to_string(n) +
                          " is not allowed: every evaluation count must exceed every training count (max " +
                          std::to_string(max_train) + ")");
    }
  }
}

EvalReport report_header(const RunConfig& cfg, std::span<const int> counts, const EvalOptions& opts,
                         Protocol protocol) {
  EvalReport r;
  r.variant = cfg.variant;
  r.env = cfg.env;
  r.train_counts = cfg.train_counts;
  r.adapt_counts.assign(counts.begin(), counts.end());
  r.protocol = protocol;
  r.greedy = opts.greedy;
  r.discount = opts.discount;
  r.episodes = opts.episodes;
  r.eval_seed = opts.seed;
  r.config_hash = config_hash(cfg);
  return r;
}

}  // namespace

EvalReport evaluate_policy(const RunConfig& cfg, const AgentParams& params, std::span<const int> counts,
                           const EvalOptions& opts, Protocol protocol, std::uint64_t train_seed) {
  check_protocol(cfg, counts, opts, protocol);
  const AgentModel model(cfg.model, cfg.env);
  model.check(params);
  EvalReport r = report_header(cfg, counts, opts, protocol);
  r.seed = train_seed;
  r.param_checksum = params_checksum(params);

  Rng master(opts.seed);
  RolloutOptions ro;
  ro.greedy = opts.greedy;
  for (int n : counts) {
    const TaskSpec task{cfg.env, n, cfg.resolved_episode_limit(), master.next_u64()};
    auto env = make_env(task, cfg.env_params);
    Rng rng = master.split();
    EvalCell cell;
    cell.n = n;
    for (int e = 0; e < opts.episodes; ++e) {
      const Episode ep = run_episode(model, params, *env, rng, ro);
      const double ret = ep.agent_returns(opts.discount).mean();
      if (!std::isfinite(ret)) throw NumericError("evaluation: non-finite return at n=" + std::to_string(n));
      cell.returns.push_back(ret);
    }
    r.cells.push_back(std::move(cell));
  }
  if (params_checksum(params) != r.param_checksum) {
    throw ContractError("evaluation modified the parameters");
  }
  return r;
}

EvalReport evaluate_zero_shot(const RunConfig& cfg, const AgentParams& params, const EvalOptions& opts,
                              std::uint64_t train_seed) {
  return evaluate_policy(cfg, params, cfg.adapt_counts, opts, Protocol::zero_shot, train_seed);
}

double random_policy_episode(Env& env, const ModelConfig& model, double discount, Rng& rng) {
  env.reset();
  const ActionSpace space = env.action_space();
  const int n = env.n_agents();
  Eigen::VectorXd total = Eigen::VectorXd::Zero(n);
  double w = 1.0;
  bool done = false;
  while (!done) {
    JointAction a;
    if (space.discrete) {
      a.index.resize(n);
      for (int i = 0; i < n; ++i) a.index[i] = static_cast<int>(rng.index(static_cast<std::size_t>(space.num_actions)));
    } else {
      a.values.resize(n, space.dim);
      for (int i = 0; i < n; ++i) {
        for (int d = 0; d < space.dim; ++d) {
          a.values(i, d) = std::clamp(model.init_sigma * rng.normal(), space.low, space.high);
        }
      }
    }
    const StepResult s = env.step(a);
    for (int i = 0; i < n; ++i) total(i) += w * s.rewards[i];
    w *= discount;
    done = s.done;
  }
  return total.mean();
}

EvalReport evaluate_random_policy(const RunConfig& cfg, std::span<const int> counts, const EvalOptions& opts) {
  check_protocol(cfg, counts, opts, Protocol::oracle);
  RunConfig named = cfg;
  named.variant = "random";
  EvalReport r = report_header(named, counts, opts, Protocol::oracle);
  Rng master(opts.seed);
  for (int n : counts) {
    const TaskSpec task{cfg.env, n, cfg.resolved_episode_limit(), master.next_u64()};
    auto env = make_env(task, cfg.env_params);
    Rng rng = master.split();
    EvalCell cell;
    cell.n = n;
    for (int e = 0; e < opts.episodes; ++e) {
      cell.returns.push_back(random_policy_episode(*env, cfg.model, opts.discount, rng));
    }
    r.cells.push_back(std::move(cell));
  }
  return r;
}

// ---- report files ---------------------------------------------------------------

Json to_json(const EvalReport& r) {
  Json cells = Json::array();
  for (const auto& c : r.cells) {
    cells.push_back({{"n", c.n}, {"mean", c.mean()}, {"std_error", c.std_error()}, {"returns", c.returns}});
  }
  return {{"variant", r.variant},
          {"env", to_string(r.env)},
          {"train_counts", r.train_counts},
          {"adapt_counts", r.adapt_counts},
          {"protocol", to_string(r.protocol)},
          {"greedy", r.greedy},
          {"discount", r.discount},
          {"episodes", r.episodes},
          {"seed", r.seed},
          {"eval_seed", r.eval_seed},
          {"config_hash", r.config_hash},
          {"param_checksum", r.param_checksum},
          {"cells", cells}};
}

EvalReport eval_report_from_json(const Json& j) {
  try {
    EvalReport r;
    r.variant = j.at("variant").get<std::string>();
    r.env = env_id_from_string(j.at("env").get<std::string>());
    r.train_counts = j.at("train_counts").get<std::vector<int>>();
    r.adapt_counts = j.at("adapt_counts").get<std::vector<int>>();
    r.protocol = j.at("protocol").get<std::string>() == "oracle" ? Protocol::oracle : Protocol::zero_shot;
    r.greedy = j.at("greedy").get<bool>();
    r.discount = j.at("discount").get<double>();
    r.episodes = j.at("episodes").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.eval_seed = j.at("eval_seed").get<std::uint64_t>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.param_checksum = j.at("param_checksum").get<std::uint64_t>();
    for (const auto& c : j.at("cells")) {
      EvalCell cell;
      cell.n = c.at("n").get<int>();
      cell.returns = c.at("returns").get<std::vector<double>>();
      r.cells.push_back(std::move(cell));
    }
    return r;
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("malformed evaluation report: ") + e.what());
  }
}

void write_eval_reports(const std::filesystem::path& path, std::span<const EvalReport> reports) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  for (const auto& r : reports) out << to_json(r).dump() << "\n";
}

std::vector<EvalReport> read_eval_reports(const std::filesystem::path& path) {
  std::vector<EvalReport> out;
  for (const auto& j : read_jsonl(path)) out.push_back(eval_report_from_json(j));
  return out;
}

// ---- comparison -----------------------------------------------------------------

const SummaryRow* Comparison::row(const std::string& variant, int n) const {
  for (const auto& r : rows) {
    if (r.variant == variant && r.n == n) return &r;
  }
  return nullptr;
}

const PairTest* Comparison::test(const std::string& a, const std::string& b, int n) const {
  for (const auto& t : tests) {
    if (t.a == a && t.b == b && t.n == n) return &t;
  }
  return nullptr;
}

std::string Comparison::table() const {
  std::ostringstream os;
  char buf[256];
  os << "variant\tn\tseeds\tmean\tstd_error\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s\t%d\t%zu\t%.6f\t%.6f\n", r.variant.c_str(), r.n, r.seed_means.size(), r.mean,
                  r.std_error);
    os << buf;
  }
  os << "\na\tb\tn\tmean_diff\tU\tp_value\tsignificant\n";
  for (const auto& t : tests) {
    std::snprintf(buf, sizeof buf, "%s\t%s\t%d\t%.6f\t%.1f\t%.6f\t%s\n", t.a.c_str(), t.b.c_str(), t.n, t.mean_diff,
                  t.test.u, t.test.p_value, t.significant ? "yes" : "no");
    os << buf;
  }
  return os.str();
}

Json Comparison::to_json() const {
  Json rs = Json::array(), ts = Json::array();
  for (const auto& r : rows) {
    rs.push_back({{"variant", r.variant}, {"n", r.n}, {"seed_means", r.seed_means}, {"mean", r.mean},
                  {"std_error", r.std_error}});
  }
  for (const auto& t : tests) {
    ts.push_back({{"a", t.a}, {"b", t.b}, {"n", t.n}, {"mean_diff", t.mean_diff}, {"u", t.test.u},
                  {"p_value", t.test.p_value}, {"exact", t.test.exact}, {"significant", t.significant}});
  }
  return {{"alpha", alpha}, {"rows", rs}, {"tests", ts}};
}

Comparison compare_runs(std::span<const EvalReport> reports, double alpha) {
  if (reports.empty()) throw ProtocolError("compare_runs: no reports");
  const EvalReport& first = reports.front();
  for (const auto& r : reports) {
    if (r.env != first.env || r.discount != first.discount || r.greedy != first.greedy) {
      throw ProtocolError("compare_runs: reports differ in environment, discount or policy mode");
    }
  }
  Comparison out;
  out.alpha = alpha;
  std::vector<std::string> order;
  for (const auto& r : reports) {
    for (const auto& c : r.cells) {
      SummaryRow* row = nullptr;
      for (auto& x : out.rows) {
        if (x.variant == r.variant && x.n == c.n) row = &x;
      }
      if (!row) {
        out.rows.push_back(SummaryRow{r.variant, c.n, {}, 0.0, 0.0});
        row = &out.rows.back();
      }
      row->seed_means.push_back(c.mean());
    }
    if (std::find(order.begin(), order.end(), r.variant) == order.end()) order.push_back(r.variant);
  }
  std::stable_sort(out.rows.begin(), out.rows.end(), [&](const SummaryRow& a, const SummaryRow& b) {
    const auto ia = std::find(order.begin(), order.end(), a.variant) - order.begin();
    const auto ib = std::find(order.begin(), order.end(), b.variant) - order.begin();
    return ia != ib ? ia < ib : a.n < b.n;
  });
  for (auto& r : out.rows) {
    r.mean = mean(r.seed_means);
    r.std_error = std_error(r.seed_means);
  }
  for (std::size_t i = 0; i < out.rows.size(); ++i) {
    for (std::size_t j = i + 1; j < out.rows.size(); ++j) {
      const SummaryRow& a = out.rows[i];
      const SummaryRow& b = out.rows[j];
      if (a.n != b.n || a.variant == b.variant) continue;
      PairTest t;
      t.a = a.variant;
      t.b = b.variant;
      t.n = a.n;
      t.mean_diff = a.mean - b.mean;
      t.test = mann_whitney(a.seed_means, b.seed_means);
      t.significant = t.test.p_value < alpha;
      out.tests.push_back(t);
    }
  }
  return out;
}

// ---- embeddings -----------------------------------------------------------------

EmbeddingLayout embedding_layout(std::span<const Episode> episodes, const ActionSpace& space) {
  if (episodes.empty()) throw ContractError("export_trajectory_embeddings: no episodes");
  EmbeddingLayout l;
  l.action_width = space.encoded_width();
  for (const auto& ep : episodes) {
    l.length = std::max(l.length, ep.task.episode_limit);
    l.max_agents = std::max(l.max_agents, ep.task.n_agents);
    if (!ep.obs.empty()) l.obs_dim = static_cast<int>(ep.obs.front().cols());
  }
  if (l.obs_dim == 0) l.obs_dim = observation_dim(episodes.front().task.env_id);
  return l;
}

std::vector<EmbeddingRow> embed_trajectories(std::span<const Episode> episodes, const EmbeddingLayout& layout,
                                             const ActionSpace& space, const std::string& variant) {
  if (episodes.empty()) throw ContractError("export_trajectory_embeddings: no episodes");
  const int w = layout.transition_width();
  std::vector<EmbeddingRow> rows;
  for (const auto& ep : episodes) {
    EmbeddingRow row;
    row.variant = variant;
    row.n = ep.task.n_agents;
    row.values.assign(static_cast<std::size_t>(layout.columns()), 0.0);
    const int T = std::min(ep.length(), layout.length);
    for (int i = 0; i < std::min(row.n, layout.max_agents); ++i) {
      for (int t = 0; t < T; ++t) {
        double* p = row.values.data() + (static_cast<std::size_t>(i) * layout.length + t) * w;
        for (int d = 0; d < layout.obs_dim; ++d) p[d] = ep.obs[t](i, d);
        const SampledAction& a = ep.actions[t][i];
        if (space.discrete) {
          p[layout.obs_dim + a.index] = 1.0;
        } else {
          for (int d = 0; d < layout.action_width; ++d) p[layout.obs_dim + d] = a.clamped(d);
        }
        p[w - 1] = ep.rewards[t](i);
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

Transition unflatten(const EmbeddingRow& row, const EmbeddingLayout& layout, int agent, int t) {
  if (agent < 0 || agent >= layout.max_agents || t < 0 || t >= layout.length) {
    throw ContractError("unflatten: index out of range");
  }
  const int w = layout.transition_width();
  const double* p = row.values.data() + (static_cast<std::size_t>(agent) * layout.length + t) * w;
  Transition tr;
  tr.obs = Eigen::Map<const Eigen::VectorXd>(p, layout.obs_dim);
  tr.action = Eigen::Map<const Eigen::VectorXd>(p + layout.obs_dim, layout.action_width);
  tr.reward = p[w - 1];
  return tr;
}

void write_embeddings(std::ostream& out, std::span<const EmbeddingRow> rows, const EmbeddingLayout& layout,
                      const std::string& config_hash) {
  out << "# config_hash=" << config_hash << "\n";
  out << "variant,n";
  for (int i = 0; i < layout.max_agents; ++i) {
    for (int t = 0; t < layout.length; ++t) {
      for (int d = 0; d < layout.obs_dim; ++d) out << ",a" << i << "_t" << t << "_o" << d;
      for (int d = 0; d < layout.action_width; ++d) out << ",a" << i << "_t" << t << "_u" << d;
      out << ",a" << i << "_t" << t << "_r";
    }
  }
  out << "\n";
  char buf[32];
  for (const auto& r : rows) {
    out << r.variant << "," << r.n;
    for (double v : r.values) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      out << buf;
    }
    out << "\n";
  }
}

void export_trajectory_embeddings(std::span<const Episode> episodes, const ActionSpace& space,
                                  const std::string& variant, const std::filesystem::path& out,
                                  const std::string& config_hash) {
  const EmbeddingLayout layout = embedding_layout(episodes, space);
  const auto rows = embed_trajectories(episodes, layout, space, variant);
  std::ofstream f(out, std::ios::trunc);
  if (!f) throw ConfigError("cannot write '" + out.string() + "'");
  write_embeddings(f, rows, layout, config_hash);
}

}  // namespace metacpr
