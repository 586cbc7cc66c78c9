#include "nvl/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <set>
#include <sstream>

#include "nvl/errors.hpp"

namespace nvl {

namespace {

struct KeyInfo {
  const char* key;
  const char* help;
};

const KeyInfo kSchema[] = {
    {"system.dim", "spatial dimension 1..3"},
    {"system.lambda", "box half side"},
    {"system.N", "particle count"},
    {"system.beta", "inverse temperature"},
    {"system.rho_max", "density ceiling"},
    {"potential.name", "ideal_gas | smoothed_lj | soft_core (other keys are potential parameters)"},
    {"lattice.truncation_K", "image shells for non-compact tails (-1: automatic)"},
    {"lattice.target_error", "certified lattice tail target"},
    {"mcmc.burn_in", "burn-in sweeps"},
    {"mcmc.samples", "recorded samples per chain"},
    {"mcmc.thin", "sweeps between samples"},
    {"mcmc.chains", "independent chains"},
    {"mcmc.step", "initial proposal width"},
    {"mcmc.target_acceptance", "burn-in tuning target"},
    {"dynamics.kappa", "friction"},
    {"dynamics.dt", "time step"},
    {"dynamics.t_end", "horizon"},
    {"dynamics.max_kick", "force blow-up guard on |F| dt"},
    {"checks.T", "invariance horizon"},
    {"checks.s", "martingale start time"},
    {"checks.t", "martingale end time"},
    {"checks.lags", "comma list of tightness lags (default dt, 2dt, .., 32dt)"},
    {"checks.lambdas", "comma list of box half sides for sweeps"},
    {"checks.rho", "density for sweeps"},
    {"checks.counts", "comma list of particle counts (partition ratio)"},
    {"checks.bins", "histogram bins per dimension"},
    {"checks.min_count", "minimum hits per bin for sampled ratios"},
    {"checks.insertions", "insertions per sample"},
    {"checks.tolerance", "relative stability tolerance"},
    {"checks.ceiling", "upper bound accepted for the partition-ratio constant"},
    {"checks.use_mcmc", "allow sampling where quadrature is infeasible"},
    {"checks.observables", "number of random cylinder observables"},
    {"checks.s0", "tightness reference time"},
    {"checks.window", "half side of the lift window for tightness (default 4)"},
    {"metric.k_max", "terms in the metric families (default 32)"},
    {"metric.r", "weight r_k for every term (default 1)"},
    {"metric.q", "weight q_k for every term (default 1)"},
    {"schedule.rho", "target density"},
    {"schedule.lambdas", "comma list, strictly increasing"},
    {"schedule.counts", "optional comma list of N per box"},
    {"schedule.preset", "free | half_integer"},
    {"schedule.preset_count", "number of boxes for the half_integer preset"},
    {"schedule.tightness", "also run the tightness regression per box"},
    {"window.half", "half side of the observation window"},
    {"window.functions", "number of window test functions"},
    {"test_function.width", "bump half width"},
    {"test_function.plateau", "plateau half width (0: plain bump)"},
    {"test_function.v_scale", "velocity cutoff scale (0: none)"},
    {"test_function.p1", "linear velocity coefficient"},
    {"input.ensemble", "snapshot to reuse instead of sampling"},
    {"run.seed", "seed used when --seed is absent"},
};

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

Config from_tree(const boost::property_tree::ptree& tree) {
  Config c;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw Error(ErrorKind::ConfigError, "key '" + section + "' outside a section");
    for (const auto& [key, value] : body) c.set(section + "." + key, trim(value.data()));
  }
  return c;
}

}  // namespace

Config Config::from_file(const std::filesystem::path& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(ErrorKind::ConfigError, e.what());
  }
  return from_tree(tree);
}

Config Config::from_string(const std::string& text) {
  std::istringstream in(text);
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(ErrorKind::ConfigError, e.what());
  }
  return from_tree(tree);
}

void Config::check_key(const std::string& key) const {
  if (key.rfind("potential.", 0) == 0) return;
  for (const auto& k : kSchema)
    if (key == k.key) return;
  throw Error(ErrorKind::ConfigError, "unknown config key '" + key + "'");
}

void Config::set(const std::string& key, const std::string& value) {
  check_key(key);
  values_[key] = value;
}

void Config::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw Error(ErrorKind::ConfigError, "override must be key=value: " + assignment);
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing text");
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorKind::ConfigError, "'" + key + "' is not a number: " + it->second);
  }
}

long Config::get_long(const std::string& key, long fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const long v = std::stol(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing text");
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorKind::ConfigError, "'" + key + "' is not an integer: " + it->second);
  }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const auto& v = it->second;
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorKind::ConfigError, "'" + key + "' is not a boolean: " + v);
}

std::vector<double> Config::get_list(const std::string& key, std::vector<double> fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<double> out;
  std::stringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw Error(ErrorKind::ConfigError, "'" + key + "' has a non-numeric entry: " + item);
    }
  }
  return out;
}

std::map<std::string, double> Config::potential_params() const {
  std::map<std::string, double> out;
  for (const auto& [k, v] : values_) {
    if (k.rfind("potential.", 0) != 0 || k == "potential.name") continue;
    out[k.substr(10)] = get_double(k, 0.0);
  }
  return out;
}

std::string Config::to_ini() const {
  std::ostringstream out;
  std::string section;
  for (const auto& [k, v] : values_) {
    const auto dot = k.find('.');
    const std::string s = k.substr(0, dot);
    if (s != section) {
      if (!section.empty()) out << "\n";
      out << "[" << s << "]\n";
      section = s;
    }
    out << k.substr(dot + 1) << " = " << v << "\n";
  }
  return out.str();
}

std::string config_schema_help() {
  std::ostringstream out;
  out << "Config keys (INI sections, override with --set section.key=value):\n";
  for (const auto& k : kSchema) out << "  " << k.key << "  " << k.help << "\n";
  return out.str();
}

EnsembleSpec ensemble_from_config(const Config& c) {
  const int dim = static_cast<int>(c.get_long("system.dim", 1));
  const double lam = c.get_double("system.lambda", 2.0);
  if (dim < 1 || dim > 3) throw Error(ErrorKind::ConfigError, "system.dim must be 1..3");
  if (!(lam > 0.0)) throw Error(ErrorKind::ConfigError, "system.lambda must be > 0");
  EnsembleSpec s;
  s.box = BoxGeometry(dim, lam);
  s.N = static_cast<int>(c.get_long("system.N", 2));
  s.beta = c.get_double("system.beta", 1.0);
  s.rho_max = c.get_double("system.rho_max", 10.0);
  s.policy.truncation_radius_K = static_cast<int>(c.get_long("lattice.truncation_K", -1));
  s.policy.target_abs_error = c.get_double("lattice.target_error", 1e-10);
  s.pot = make_builtin_potential(c.get_string("potential.name", "ideal_gas"), dim, c.potential_params());
  if (s.N < 0 || !(s.beta > 0.0)) throw Error(ErrorKind::ConfigError, "system.N >= 0 and system.beta > 0 required");
  return s;
}

McmcParams mcmc_from_config(const Config& c) {
  McmcParams p;
  p.burn_in_sweeps = c.get_long("mcmc.burn_in", p.burn_in_sweeps);
  p.samples = c.get_long("mcmc.samples", p.samples);
  p.thin_sweeps = c.get_long("mcmc.thin", p.thin_sweeps);
  p.chains = static_cast<int>(c.get_long("mcmc.chains", p.chains));
  p.initial_step = c.get_double("mcmc.step", p.initial_step);
  p.target_acceptance = c.get_double("mcmc.target_acceptance", p.target_acceptance);
  if (p.samples < 1 || p.thin_sweeps < 1 || p.chains < 1 || p.burn_in_sweeps < 0 || !(p.initial_step > 0.0))
    throw Error(ErrorKind::ConfigError, "invalid [mcmc] settings");
  return p;
}

DynamicsParams dynamics_from_config(const Config& c, std::uint64_t seed) {
  DynamicsParams p;
  p.kappa = c.get_double("dynamics.kappa", p.kappa);
  p.beta = c.get_double("system.beta", 1.0);
  p.dt = c.get_double("dynamics.dt", p.dt);
  p.t_end = c.get_double("dynamics.t_end", p.t_end);
  p.max_kick = c.get_double("dynamics.max_kick", p.max_kick);
  p.seed = seed;
  try {
    p.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::ConfigError, e.what());
  }
  return p;
}

}  // namespace nvl
