#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "elastic/error.hpp"
#include "elastic/metrics.hpp"
#include "elastic/problems.hpp"
#include "elastic/sim.hpp"
#include "elastic/stability.hpp"

namespace elastic {

enum class Mode { sim, stability, net_center, net_worker, speedup };

inline std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::sim: return "sim";
    case Mode::stability: return "stability";
    case Mode::net_center: return "net-center";
    case Mode::net_worker: return "net-worker";
    case Mode::speedup: return "speedup";
  }
  return "?";
}

struct ConfigKey {
  const char* name;
  const char* default_value;
  const char* doc;
};

// Every accepted key, in resolved_config order. An empty default means
// "unset" (problem default, no threshold, ...).
inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys{
      {"mode", "sim", "sim | stability | net-center | net-worker | speedup"},
      {"output_dir", "out", "directory for all outputs"},
      {"algorithm", "easgd_async",
       "easgd_sync | easgd_async | eamsgd | downpour | sgd | msgd | admm_rr"},
      {"p", "1", "number of workers"},
      {"eta", "0.01", "learning rate"},
      {"rho", "0.1", "elastic coefficient; alpha = eta * rho"},
      {"tau", "10", "communication period"},
      {"delta", "0.99", "momentum (eamsgd, msgd)"},
      {"comm_order", "before", "before | after: exchange relative to the gradient step"},
      {"admm_variant", "exact", "exact | linearized"},
      {"problem", "quadratic", "quadratic | logistic | mlp"},
      {"dim", "10", "quadratic dimension / feature count for generated data"},
      {"cond", "10", "quadratic condition number"},
      {"noise", "0", "additive gradient noise sigma (quadratic)"},
      {"problem_seed", "1", "seed for problem generation"},
      {"samples", "1000", "generated dataset size (logistic, mlp)"},
      {"separation", "2", "two-Gaussians mean separation"},
      {"l2", "0.001", "logistic L2 weight"},
      {"hidden", "8", "mlp hidden units"},
      {"mlp_loss", "squared", "squared | logistic"},
      {"data_csv", "", "CSV dataset (f0..f{d-1},label) instead of generated data"},
      {"grad_cost_us", "0", "artificial sleep per gradient evaluation, microseconds"},
      {"x0", "", "comma list; empty = zeros (mlp: seeded initial weights)"},
      {"schedule", "round_robin", "sync | round_robin | async_random"},
      {"cost_law", "fixed", "fixed | exponential"},
      {"costs", "1", "per-worker step cost, 1 or p comma-separated values"},
      {"schedule_seed", "0", "seed for exponential step durations"},
      {"steps", "1000", "local steps per worker (rounds for sync)"},
      {"cadence", "10", "metrics row every `cadence` center versions"},
      {"seed", "0", "run seed (data shards, minibatches, noise); EAVG_SEED overrides"},
      {"batch_size", "1", "minibatch size; 0 = whole shard"},
      {"burn_in", "0.5", "leading fraction of snapshots dropped from the averaged iterate"},
      {"stability_algorithm", "easgd_rr", "easgd_sync | easgd_rr | admm_rr | sgd | msgd"},
      {"eta_h_min", "0.05", "stability grid"},
      {"eta_h_max", "1.95", "stability grid"},
      {"eta_h_step", "0.05", "stability grid"},
      {"alpha_min", "0.05", "stability grid"},
      {"alpha_max", "0.95", "stability grid"},
      {"alpha_step", "0.05", "stability grid"},
      {"compare_admm", "true", "also write the easgd_rr vs admm_rr comparison report"},
      {"bind", "127.0.0.1:0", "center listen address (port 0 = ephemeral)"},
      {"connect", "127.0.0.1:5555", "center address for workers"},
      {"worker_id", "0", "this worker's index in 0..p-1"},
      {"port_file", "", "center writes its bound port here"},
      {"stop_after_workers", "", "center exits after this many workers finish; empty = p"},
      {"threshold", "", "center objective threshold (speedup, net-center)"},
      {"poll_every", "1", "center checks the threshold every this many versions"},
      {"budget_s", "60", "wall-clock budget for reaching the threshold"},
      {"max_retries", "5", "worker reconnect attempts per request"},
      {"backoff_ms", "50", "first reconnect wait; doubles per attempt"},
      {"worker_metrics_every", "0", "worker metrics row every k local steps (0: none)"},
      {"speedup_p", "1,2,4", "worker counts for speedup mode"},
  };
  return keys;
}

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

inline bool known_key(const std::string& k) {
  for (const auto& c : config_keys())
    if (k == c.name) return true;
  return false;
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  std::string cell;
  std::istringstream in(v);
  while (std::getline(in, cell, ',')) out.push_back(trim(cell));
  return out;
}

}  // namespace detail

// Resolved key=value configuration.
class ExperimentConfig {
 public:
  ExperimentConfig() {
    for (const auto& k : config_keys()) values_[k.name] = k.default_value;
  }

  // `# comment` lines and trailing comments, blank lines, `key = value`.
  static ExperimentConfig parse(std::istream& in) {
    ExperimentConfig cfg;
    std::map<std::string, std::size_t> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      const std::string t = detail::trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw ParseError("config: expected key=value, got '" + t + "'", lineno);
      const std::string key = detail::trim(std::string_view(t).substr(0, eq));
      const std::string value = detail::trim(std::string_view(t).substr(eq + 1));
      if (!detail::known_key(key))
        throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
      if (auto it = seen.find(key); it != seen.end())
        throw ConfigError("config line " + std::to_string(lineno) + ": key '" + key +
                          "' already set on line " + std::to_string(it->second));
      seen[key] = lineno;
      cfg.values_[key] = value;
    }
    return cfg;
  }

  static ExperimentConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    return parse(in);
  }

  void set(const std::string& key, const std::string& value) {
    if (!detail::known_key(key)) throw ConfigError("unknown key '" + key + "'");
    values_[key] = value;
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
    return it->second;
  }

  bool has(const std::string& key) const { return !str(key).empty(); }

  double real(const std::string& key) const {
    const std::string& v = str(key);
    std::size_t used = 0;
    double d = 0.0;
    try {
      d = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (v.empty() || used != v.size() || !std::isfinite(d))
      throw ConfigError(key + ": expected a finite number, got '" + v + "'");
    return d;
  }

  std::uint64_t u64(const std::string& key) const {
    const std::string& v = str(key);
    std::size_t used = 0;
    unsigned long long n = 0;
    try {
      if (!v.empty() && v[0] != '-') n = std::stoull(v, &used, 0);
    } catch (const std::exception&) {
      used = 0;
    }
    if (v.empty() || used != v.size())
      throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    return n;
  }

  std::size_t size(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }

  bool flag(const std::string& key) const {
    const std::string& v = str(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
  }

  std::vector<double> reals(const std::string& key) const {
    std::vector<double> out;
    for (const auto& cell : detail::split_list(str(key))) {
      ExperimentConfig tmp;
      tmp.values_["x0"] = cell;
      try {
        out.push_back(tmp.real("x0"));
      } catch (const ConfigError&) {
        throw ConfigError(key + ": bad list entry '" + cell + "'");
      }
    }
    return out;
  }

  std::vector<std::size_t> sizes(const std::string& key) const {
    std::vector<std::size_t> out;
    for (const auto& cell : detail::split_list(str(key))) {
      ExperimentConfig tmp;
      tmp.values_["p"] = cell;
      try {
        out.push_back(tmp.size("p"));
      } catch (const ConfigError&) {
        throw ConfigError(key + ": bad list entry '" + cell + "'");
      }
    }
    return out;
  }

  template <class Enum>
  Enum choice(const std::string& key,
              std::initializer_list<std::pair<std::string_view, Enum>> options) const {
    const std::string& v = str(key);
    std::string names;
    for (const auto& [name, value] : options) {
      if (v == name) return value;
      names += names.empty() ? "" : ", ";
      names += name;
    }
    throw ConfigError(key + ": '" + v + "' is not one of " + names);
  }

  void write(std::ostream& out) const {
    for (const auto& k : config_keys()) out << k.name << " = " << values_.at(k.name) << '\n';
  }

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;

 private:
  std::map<std::string, std::string> values_;
};

inline Mode config_mode(const ExperimentConfig& c) {
  return c.choice<Mode>("mode", {{"sim", Mode::sim},
                                 {"stability", Mode::stability},
                                 {"net-center", Mode::net_center},
                                 {"net-worker", Mode::net_worker},
                                 {"speedup", Mode::speedup}});
}

inline Algorithm config_algorithm(const ExperimentConfig& c) {
  return c.choice<Algorithm>("algorithm", {{"easgd_sync", Algorithm::easgd_sync},
                                           {"easgd_async", Algorithm::easgd_async},
                                           {"eamsgd", Algorithm::eamsgd},
                                           {"downpour", Algorithm::downpour},
                                           {"sgd", Algorithm::sgd},
                                           {"msgd", Algorithm::msgd},
                                           {"admm_rr", Algorithm::admm_rr}});
}

inline MapAlgorithm config_map_algorithm(const ExperimentConfig& c) {
  return c.choice<MapAlgorithm>("stability_algorithm", {{"easgd_sync", MapAlgorithm::easgd_sync},
                                                        {"easgd_rr", MapAlgorithm::easgd_rr},
                                                        {"admm_rr", MapAlgorithm::admm_rr},
                                                        {"sgd", MapAlgorithm::sgd},
                                                        {"msgd", MapAlgorithm::msgd}});
}

inline HyperParams config_hyperparams(const ExperimentConfig& c) {
  HyperParams hp;
  hp.eta = c.real("eta");
  hp.rho = c.real("rho");
  hp.tau = c.size("tau");
  hp.p = c.size("p");
  hp.delta = c.real("delta");
  hp.comm_order = c.choice<CommOrder>("comm_order", {{"before", CommOrder::before},
                                                     {"after", CommOrder::after}});
  return hp;
}

inline AdmmVariant config_admm_variant(const ExperimentConfig& c) {
  return c.choice<AdmmVariant>("admm_variant", {{"exact", AdmmVariant::exact},
                                                {"linearized", AdmmVariant::linearized}});
}

// The problem without the artificial gradient cost.
inline std::shared_ptr<const GradientOracle> config_base_problem(const ExperimentConfig& c) {
  enum class Kind { quadratic, logistic, mlp };
  const Kind kind = c.choice<Kind>(
      "problem", {{"quadratic", Kind::quadratic}, {"logistic", Kind::logistic}, {"mlp", Kind::mlp}});
  const std::uint64_t seed = c.u64("problem_seed");
  if (kind == Kind::quadratic) {
    if (c.has("data_csv")) throw ConfigError("data_csv: only for logistic or mlp problems");
    const double noise = c.real("noise");
    if (noise < 0.0) throw ConfigError("noise: must be >= 0");
    return std::make_shared<QuadraticProblem>(make_quadratic(c.size("dim"), c.real("cond"), noise, seed));
  }
  Dataset data = c.has("data_csv")
                     ? load_csv_dataset(c.str("data_csv"))
                     : make_two_gaussians(c.size("samples"), c.size("dim"), c.real("separation"), seed);
  if (kind == Kind::logistic) return std::make_shared<LogisticProblem>(std::move(data), c.real("l2"));
  const MlpLoss loss = c.choice<MlpLoss>("mlp_loss", {{"squared", MlpLoss::squared},
                                                      {"logistic", MlpLoss::logistic}});
  return std::make_shared<TinyMlpProblem>(std::move(data), c.size("hidden"), loss);
}

inline std::shared_ptr<const GradientOracle> config_problem(const ExperimentConfig& c) {
  auto base = config_base_problem(c);
  const auto cost = c.u64("grad_cost_us");
  if (cost == 0) return base;
  return std::make_shared<CostlyOracle>(std::move(base), std::chrono::microseconds(cost));
}

inline ParamVector config_x0(const ExperimentConfig& c, const GradientOracle& problem) {
  const auto v = c.reals("x0");
  if (!v.empty()) {
    if (v.size() != problem.dim())
      throw ConfigError("x0: " + std::to_string(v.size()) + " values for dimension " +
                        std::to_string(problem.dim()));
    return ParamVector(v);
  }
  if (c.str("problem") == "mlp")
    return dynamic_cast<const TinyMlpProblem&>(problem).initial_weights(c.u64("problem_seed"));
  return ParamVector(problem.dim());
}

inline std::uint64_t config_seed(const ExperimentConfig& c) { return c.u64("seed"); }

// Simulator/worker configuration. `problem` may be passed in to share one
// instance (and to swap in the cost-free problem for pilots).
inline SimConfig config_sim(const ExperimentConfig& c,
                            std::shared_ptr<const GradientOracle> problem = nullptr) {
  SimConfig s;
  s.algorithm = config_algorithm(c);
  s.hp = config_hyperparams(c);
  s.problem = problem ? std::move(problem) : config_problem(c);
  s.schedule.kind = c.choice<ScheduleKind>("schedule", {{"sync", ScheduleKind::sync},
                                                        {"round_robin", ScheduleKind::round_robin},
                                                        {"async_random", ScheduleKind::async_random}});
  s.schedule.law = c.choice<CostLaw>("cost_law", {{"fixed", CostLaw::fixed},
                                                  {"exponential", CostLaw::exponential}});
  s.schedule.costs = c.reals("costs");
  s.schedule.seed = c.u64("schedule_seed");
  s.steps = c.size("steps");
  s.cadence = c.size("cadence");
  s.seed = config_seed(c);
  s.batch_size = c.size("batch_size");
  s.admm_variant = config_admm_variant(c);
  s.x0 = config_x0(c, *s.problem);
  s.record_snapshots = true;
  s.validate();
  return s;
}

inline GridAxes config_axes(const ExperimentConfig& c) {
  return {axis_range(c.real("eta_h_min"), c.real("eta_h_max"), c.real("eta_h_step")),
          axis_range(c.real("alpha_min"), c.real("alpha_max"), c.real("alpha_step"))};
}

inline ScanOptions config_scan_options(const ExperimentConfig& c) {
  const HyperParams hp = config_hyperparams(c);
  ScanOptions o;
  o.delta = hp.delta;
  o.tau = hp.tau;
  o.comm_order = hp.comm_order;
  o.admm_variant = config_admm_variant(c);
  return o;
}

// Applies EAVG_SEED (if set) on top of the file values.
inline void apply_env_overrides(ExperimentConfig& c) {
  if (const char* s = std::getenv("EAVG_SEED"); s != nullptr && *s != '\0') {
    c.set("seed", s);
    (void)c.u64("seed");
  }
}

inline void write_key_values(const std::string& path,
                             const std::vector<std::pair<std::string, std::string>>& kv) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
}

inline std::map<std::string, std::string> read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read '" + path + "'");
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[detail::trim(std::string_view(line).substr(0, eq))] =
        detail::trim(std::string_view(line).substr(eq + 1));
  }
  return kv;
}

}  // namespace elastic
