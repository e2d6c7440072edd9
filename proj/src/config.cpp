#include "lpalm/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace lpalm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

const std::map<std::string, std::string>& ExperimentConfig::defaults() {
  static const std::map<std::string, std::string> d{
      {"command", "scal"},
      {"out", "runs"},
      {"seeds", "0,1,2,3,4"},
      {"env", "chain"},
      {"env.n", "5"},
      {"env.gamma", "0.9"},
      {"env.noise", "0"},
      {"env.actions", "2"},
      {"env.seed", "0"},
      {"env.path", ""},
      {"inventory.M", "10"},
      {"inventory.lambda", "2"},
      {"inventory.K", "5"},
      {"inventory.c", "2"},
      {"inventory.h", "2"},
      {"inventory.p", "3"},
      {"inventory.gamma", "0.9"},
      {"scal.mu", "1"},
      {"scal.beta", "10"},
      {"scal.lr_v", "0.003"},
      {"scal.lr_h", "0.003"},
      {"scal.lr_x", "0.003"},
      {"scal.batch", "64"},
      {"scal.target_period", "100"},
      {"scal.steps", "20000"},
      {"scal.lookahead", "1"},
      {"scal.epsilon_explore", "0.05"},
      {"scal.explore_fraction", "0.3333333333333333"},
      {"scal.ntk_radius", "0"},
      {"scal.width", "64"},
      {"scal.capacity", "100000"},
      {"scal.prio_eps", "0.001"},
      {"scal.proportional", "true"},
      {"scal.slack_scale", "0"},
      {"scal.value_scale", "0"},
      {"scal.mass_scale", "0"},
      {"scal.sigma", "0.3"},
      {"scal.eval_every", "1000"},
      {"scal.episode_length", "0"},
      {"deep.inner_steps", "100"},
      {"alm.mu", "1000"},
      {"alm.tol", "1e-10"},
      {"alm.max_inner", "500"},
      {"alm.max_outer", "200"},
      {"alm.outer_tol", "1e-9"},
      {"alm.vi_tol", "1e-10"},
      {"alm.inner", "newton"},
      {"ablate.samples", "32"},
      {"ablate.checkpoints", "10"},
      {"multistep.lookaheads", "1,3,5"},
      {"multistep.threshold", "0.9"},
      {"verify.mu", "1"},
      {"verify.beta", "1"},
      {"verify.probes", "100"},
      {"verify.seed", "0"},
      {"ntk.width", "64"},
      {"ntk.radius", "100"},
      {"ntk.mu", "5"},
      {"ntk.beta", "10"},
      {"ntk.lr", "0.025"},
      {"ntk.rounds", "20"},
      {"ntk.inner_steps", "2000"},
  };
  return d;
}

ExperimentConfig::ExperimentConfig() : values_(defaults()) {}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  if (!known(key)) throw ConfigError(key, "unknown config key '" + key + "'");
  values_[key] = trim(value);
}

const std::string& ExperimentConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(key, "unknown config key '" + key + "'");
  return it->second;
}

void ExperimentConfig::merge_text(std::istream& in) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(line, "config line " + std::to_string(lineno) + " is not key=value: '" + line + "'");
    set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

void ExperimentConfig::merge_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot read config file '" + path + "'");
  merge_text(in);
}

void ExperimentConfig::echo(std::ostream& out) const {
  for (const auto& [k, v] : values_) out << k << '=' << v << '\n';
}

std::string ExperimentConfig::echo() const {
  std::ostringstream os;
  echo(os);
  return os.str();
}

double ExperimentConfig::number(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError(key, "config key '" + key + "' expects a number, got '" + v + "'");
}

long ExperimentConfig::integer(const std::string& key) const {
  const std::string& v = get(key);
  long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError(key, "config key '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

bool ExperimentConfig::flag(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key, "config key '" + key + "' expects true or false, got '" + v + "'");
}

std::vector<long> ExperimentConfig::integer_list(const std::string& key) const {
  std::vector<long> out;
  for (const std::string& item : split_list(get(key))) {
    long x = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), x);
    if (ec != std::errc() || ptr != item.data() + item.size())
      throw ConfigError(key, "config key '" + key + "' expects a comma-separated integer list, got '" +
                                 get(key) + "'");
    out.push_back(x);
  }
  if (out.empty()) throw ConfigError(key, "config key '" + key + "' must not be empty");
  return out;
}

std::vector<std::uint64_t> ExperimentConfig::seeds() const {
  std::vector<std::uint64_t> out;
  for (long s : integer_list("seeds")) {
    if (s < 0) throw ConfigError("seeds", "seeds must be nonnegative");
    out.push_back(static_cast<std::uint64_t>(s));
  }
  return out;
}

Environment ExperimentConfig::environment(std::uint64_t) const {
  const std::string kind = get("env");
  if (kind == "inventory") {
    InventoryConfig ic;
    ic.M = static_cast<int>(integer("inventory.M"));
    ic.demand_lambda = number("inventory.lambda");
    ic.K = number("inventory.K");
    ic.c = number("inventory.c");
    ic.h_cost = number("inventory.h");
    ic.p = number("inventory.p");
    ic.gamma = number("inventory.gamma");
    ic.validate();
    return make_inventory_env(ic);
  }
  if (kind == "chain")
    return make_chain_env(static_cast<int>(integer("env.n")), number("env.gamma"), number("env.noise"));
  if (kind == "random") {
    Rng rng(static_cast<std::uint64_t>(integer("env.seed")));
    return make_tabular_env(random_mdp(static_cast<int>(integer("env.n")), static_cast<int>(integer("env.actions")),
                                       number("env.gamma"), rng),
                            "random");
  }
  if (kind == "mdp-file") {
    if (get("env.path").empty()) throw ConfigError("env.path", "env=mdp-file needs env.path");
    return make_tabular_env(load_mdp(get("env.path")));
  }
  throw ConfigError("env", "env must be inventory, chain, random or mdp-file, got '" + kind + "'");
}

ScalConfig ExperimentConfig::scal(std::uint64_t seed) const {
  ScalConfig c;
  c.mu = number("scal.mu");
  c.beta = number("scal.beta");
  c.lr_v = number("scal.lr_v");
  c.lr_h = number("scal.lr_h");
  c.lr_x = number("scal.lr_x");
  c.batch = static_cast<int>(integer("scal.batch"));
  c.target_period = static_cast<int>(integer("scal.target_period"));
  c.total_steps = integer("scal.steps");
  c.lookahead = static_cast<int>(integer("scal.lookahead"));
  c.epsilon_explore = number("scal.epsilon_explore");
  c.explore_fraction = number("scal.explore_fraction");
  const double radius = number("scal.ntk_radius");
  if (radius > 0) c.ntk_radius = radius;
  c.width = static_cast<int>(integer("scal.width"));
  const long cap = integer("scal.capacity");
  if (cap < 1) throw ConfigError("scal.capacity", "scal.capacity must be positive");
  c.capacity = static_cast<std::size_t>(cap);
  c.prio_eps = number("scal.prio_eps");
  c.proportional = flag("scal.proportional");
  c.slack_scale = number("scal.slack_scale");
  c.value_scale = number("scal.value_scale");
  c.mass_scale = number("scal.mass_scale");
  c.sigma = number("scal.sigma");
  c.eval_every = integer("scal.eval_every");
  c.episode_length = static_cast<int>(integer("scal.episode_length"));
  c.seed = seed;
  return c;
}

InnerOptions ExperimentConfig::inner() const {
  InnerOptions o;
  o.tol = number("alm.tol");
  o.max_iter = static_cast<int>(integer("alm.max_inner"));
  const std::string m = get("alm.inner");
  if (m == "newton")
    o.method = InnerMethod::Newton;
  else if (m == "pg")
    o.method = InnerMethod::ProjectedGradient;
  else
    throw ConfigError("alm.inner", "alm.inner must be newton or pg, got '" + m + "'");
  return o;
}

NtkConfig ExperimentConfig::ntk(int width, std::uint64_t seed) const {
  NtkConfig c;
  c.width = width;
  c.radius = number("ntk.radius");
  c.mu = number("ntk.mu");
  c.beta = number("ntk.beta");
  c.lr = number("ntk.lr");
  c.rounds = static_cast<int>(integer("ntk.rounds"));
  c.inner_steps = static_cast<int>(integer("ntk.inner_steps"));
  c.seed = seed;
  return c;
}

void ExperimentConfig::validate() const {
  const std::string cmd = command();
  const auto& names = command_names();
  if (std::find(names.begin(), names.end(), cmd) == names.end())
    throw ConfigError("command", "unknown command '" + cmd + "'");
  seeds();
  const auto positive = [this](const std::string& key) {
    if (!(number(key) > 0)) throw ConfigError(key, "config key '" + key + "' must be positive");
  };
  for (const char* k : {"env.gamma", "alm.mu", "alm.tol", "alm.outer_tol", "alm.vi_tol", "verify.mu", "verify.beta",
                        "ntk.radius", "ntk.mu", "ntk.beta", "ntk.lr", "multistep.threshold"})
    positive(k);
  for (const char* k : {"alm.max_inner", "alm.max_outer", "deep.inner_steps", "ablate.samples", "ablate.checkpoints",
                        "verify.probes", "ntk.width", "ntk.rounds", "ntk.inner_steps", "env.n", "env.actions"})
    if (integer(k) < 1) throw ConfigError(k, std::string("config key '") + k + "' must be a positive integer");
  for (long l : integer_list("multistep.lookaheads"))
    if (l < 1) throw ConfigError("multistep.lookaheads", "lookaheads must be positive");
  if (number("verify.beta") * number("verify.mu") * 4.0 <= 1.0)
    throw ConfigError("verify.beta", "verify needs 4 mu beta > 1");
  inner();
  flag("scal.proportional");
  if (number("scal.ntk_radius") < 0) throw ConfigError("scal.ntk_radius", "scal.ntk_radius must be >= 0 (0 disables)");
  try {
    scal(0).validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("scal", e.what());
  }
  integer("env.seed");
  number("env.noise");
}

}  // namespace lpalm
