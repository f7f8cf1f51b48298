#include "metacpr/checkpoint.hpp"

#include <fstream>

#include "metacpr/errors.hpp"

namespace metacpr {

namespace {

Json matrix_to_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

Matrix matrix_from_json(const Json& j, const std::string& what) {
  try {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size()) {
      throw ConfigError(what + ": data length does not match shape");
    }
    Matrix m(rows, cols);
    std::copy(data.begin(), data.end(), m.data());
    return m;
  } catch (const Json::exception& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

Json gradient_set_to_json(const GradientSet& g) {
  Json out = Json::array();
  for (const auto& m : g) out.push_back(matrix_to_json(m));
  return out;
}

GradientSet gradient_set_from_json(const Json& j, const std::string& what) {
  GradientSet g;
  for (std::size_t i = 0; i < j.size(); ++i) g.push_back(matrix_from_json(j[i], what + "[" + std::to_string(i) + "]"));
  return g;
}

}  // namespace

Json params_to_json(const AgentParams& params) {
  Json out = Json::object();
  for (Group g : {Group::policy, Group::critic, Group::cpr}) {
    Json arr = Json::array();
    for (const auto& p : params.group(g)) {
      Json e = matrix_to_json(p.value);
      e["name"] = p.name;
      arr.push_back(std::move(e));
    }
    out[group_name(g)] = std::move(arr);
  }
  return out;
}

AgentParams params_from_json(const Json& j, const AgentModel& model) {
  AgentParams params;
  for (Group g : {Group::policy, Group::critic, Group::cpr}) {
    const std::string name = group_name(g);
    if (!j.contains(name)) throw ConfigError("checkpoint: missing parameter group '" + name + "'");
    for (const auto& e : j.at(name)) {
      const std::string pname = e.value("name", std::string());
      params.group(g).add(pname, matrix_from_json(e, "checkpoint: parameter '" + pname + "'"));
    }
  }
  try {
    model.check(params);
  } catch (const ContractError& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Json opt = Json::object();
  for (Group g : {Group::policy, Group::critic, Group::cpr}) {
    const Adam& a = ckpt.optimizers.adam[static_cast<int>(g)];
    opt[group_name(g)] = {{"t", a.steps()},
                          {"m", gradient_set_to_json(a.first_moment())},
                          {"v", gradient_set_to_json(a.second_moment())}};
  }
  const Json j = {{"format_version", kCheckpointVersion},
                  {"config_hash", ckpt.config_hash},
                  {"config", to_json(ckpt.config)},
                  {"seed", ckpt.seed},
                  {"updates", ckpt.updates},
                  {"env_steps", ckpt.env_steps},
                  {"rng", ckpt.rng.state()},
                  {"params", params_to_json(ckpt.params)},
                  {"optimizers", opt}};
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp);
    if (!out) throw ConfigError("cannot write checkpoint '" + path.string() + "'");
    out << j.dump() << "\n";
    if (!out) throw ConfigError("failed writing checkpoint '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read checkpoint '" + path.string() + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": malformed checkpoint (" + e.what() + ")");
  }
  try {
    if (j.at("format_version").get<int>() != kCheckpointVersion) {
      throw ConfigError(path.string() + ": unsupported checkpoint version");
    }
    Checkpoint c;
    c.config = run_config_from_json(j.at("config"));
    c.config_hash = j.at("config_hash").get<std::string>();
    if (config_hash(c.config) != c.config_hash) {
      throw ConfigError(path.string() + ": stored config does not match its hash");
    }
    c.seed = j.at("seed").get<std::uint64_t>();
    c.updates = j.at("updates").get<int>();
    c.env_steps = j.at("env_steps").get<std::int64_t>();
    c.rng.set_state(j.at("rng").get<std::string>());
    const AgentModel model(c.config.model, c.config.env);
    c.params = params_from_json(j.at("params"), model);
    c.optimizers = Optimizers(c.params, c.config.train.adam);
    for (Group g : {Group::policy, Group::critic, Group::cpr}) {
      const Json& o = j.at("optimizers").at(group_name(g));
      const std::string what = std::string("checkpoint: optimizer '") + group_name(g) + "'";
      try {
        c.optimizers.adam[static_cast<int>(g)].restore(o.at("t").get<std::int64_t>(),
                                                       gradient_set_from_json(o.at("m"), what),
                                                       gradient_set_from_json(o.at("v"), what));
      } catch (const ContractError& e) {
        throw ConfigError(what + ": " + e.what());
      }
    }
    return c;
  } catch (const Json::exception& e) {
    throw ConfigError(path.string() + ": malformed checkpoint (" + e.what() + ")");
  }
}

}  // namespace metacpr
