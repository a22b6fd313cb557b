#pragma once

#include <glob.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <csignal>
#include <cstring>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "elastic/config.hpp"
#include "elastic/error.hpp"
#include "elastic/log.hpp"
#include "elastic/metrics.hpp"
#include "elastic/net/center.hpp"
#include "elastic/net/socket.hpp"
#include "elastic/net/worker.hpp"
#include "elastic/sim.hpp"
#include "elastic/stability.hpp"

extern char** environ;

namespace elastic::harness {

namespace fs = std::filesystem;

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitInvalid = 2;
inline constexpr int kExitDiverged = 3;
inline constexpr int kExitTimeout = 4;

// Maps the in-flight exception to an exit code. Call from a catch block.
inline int exit_code_for_current_exception() {
  try {
    throw;
  } catch (const ConfigError&) {
    return kExitInvalid;
  } catch (const ParseError&) {
    return kExitInvalid;
  } catch (const DimensionError&) {
    return kExitInvalid;
  } catch (const DivergedError&) {
    return kExitDiverged;
  } catch (const TimeoutError&) {
    return kExitTimeout;
  } catch (...) {
    return kExitOther;
  }
}

// ---- small file formats -------------------------------------------------

inline constexpr const char* kVectorHeader = "coord,value";
inline constexpr const char* kStateHeader = "role,id,coord,value";

inline void write_vector_csv(const fs::path& path, const ParamVector& v) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << kVectorHeader << '\n';
  for (std::size_t k = 0; k < v.dim(); ++k) out << k << ',' << format_double(v[k]) << '\n';
}

inline ParamVector read_vector_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) || line != kVectorHeader)
    throw ParseError(path.string() + ": unexpected header", lineno);
  std::vector<double> v;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c = elastic::detail::split_csv_line(line);
    if (c.size() != 2) throw ParseError(path.string() + ": expected 2 cells", lineno);
    if (elastic::detail::parse_int_cell<std::size_t>(c[0], lineno) != v.size())
      throw ParseError(path.string() + ": coordinates out of order", lineno);
    v.push_back(elastic::detail::parse_double_cell(c[1], lineno));
  }
  return ParamVector(v);
}

struct StateEntry {
  std::string role;  // center | worker
  long id = -1;
  ParamVector x;
};

inline void write_state_csv(const fs::path& path, const std::vector<StateEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << kStateHeader << '\n';
  for (const auto& e : entries)
    for (std::size_t k = 0; k < e.x.dim(); ++k)
      out << e.role << ',' << e.id << ',' << k << ',' << format_double(e.x[k]) << '\n';
}

inline std::vector<StateEntry> read_state_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) || line != kStateHeader)
    throw ParseError(path.string() + ": unexpected header", lineno);
  std::vector<StateEntry> out;
  std::vector<std::vector<double>> values;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c = elastic::detail::split_csv_line(line);
    if (c.size() != 4) throw ParseError(path.string() + ": expected 4 cells", lineno);
    if (c[0] != "center" && c[0] != "worker")
      throw ParseError(path.string() + ": bad role '" + c[0] + "'", lineno);
    const long id = elastic::detail::parse_int_cell<long>(c[1], lineno);
    const auto k = elastic::detail::parse_int_cell<std::size_t>(c[2], lineno);
    if (k == 0) {
      out.push_back({c[0], id, {}});
      values.emplace_back();
    } else if (out.empty() || out.back().role != c[0] || out.back().id != id ||
               values.back().size() != k) {
      throw ParseError(path.string() + ": coordinates out of order", lineno);
    }
    values.back().push_back(elastic::detail::parse_double_cell(c[3], lineno));
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i].x = ParamVector(values[i]);
  return out;
}

inline std::size_t check_grid_csv(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  std::size_t lineno = 1, rows = 0;
  if (!std::getline(in, line) || line != kGridHeader)
    throw ParseError(path.string() + ": unexpected header", lineno);
  while (std::getline(in, line)) {
    ++lineno;
    const auto c = elastic::detail::split_csv_line(line);
    if (c.size() != 4) throw ParseError(path.string() + ": expected 4 cells", lineno);
    for (int k = 0; k < 3; ++k) (void)elastic::detail::parse_double_cell(c[k], lineno);
    if (c[3] != "0" && c[3] != "1") throw ParseError(path.string() + ": stable must be 0/1", lineno);
    ++rows;
  }
  return rows;
}

using KeyValues = std::vector<std::pair<std::string, std::string>>;

inline std::string opt_cell(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

// Writes through a temp file so readers never see a partial file.
inline void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << text;
  }
  fs::rename(tmp, path);
}

inline void write_resolved(const ExperimentConfig& cfg, const fs::path& dir) {
  std::ofstream out(dir / "resolved_config");
  if (!out) throw Error("cannot write resolved_config in '" + dir.string() + "'");
  cfg.write(out);
  out.close();
  if (!(ExperimentConfig::load((dir / "resolved_config").string()) == cfg))
    throw Error("resolved_config does not read back to the same configuration");
}

inline void write_metrics(const fs::path& path, const std::vector<MetricsRow>& rows) {
  {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    write_metrics_csv(out, rows);
  }
  if (load_metrics_csv(path.string()) != rows)
    throw Error("metrics self-check failed for '" + path.string() + "'");
}

inline fs::path prepare_output(const ExperimentConfig& cfg) {
  const fs::path dir = cfg.str("output_dir");
  if (dir.empty()) throw ConfigError("output_dir: must not be empty");
  fs::create_directories(dir);
  write_resolved(cfg, dir);
  return dir;
}

inline std::optional<double> config_threshold(const ExperimentConfig& c) {
  if (!c.has("threshold")) return std::nullopt;
  return c.real("threshold");
}

// ---- modes -------------------------------------------------------------

// Outputs: metrics.csv, events.log, final_state.csv, averaged_iterate.csv, summary.
inline void run_sim_mode(const ExperimentConfig& cfg) {
  const SimConfig sc = config_sim(cfg);
  const double burn_in = cfg.real("burn_in");
  if (!(burn_in >= 0.0 && burn_in < 1.0)) throw ConfigError("burn_in: must be in [0, 1)");
  const fs::path dir = prepare_output(cfg);
  const SimResult res = run_sim(sc);

  write_metrics(dir / "metrics.csv", res.metrics);
  {
    std::ofstream out(dir / "events.log");
    write_event_log(out, res.events);
  }
  {
    std::ifstream in(dir / "events.log");
    if (read_event_log(in) != res.events) throw Error("events.log self-check failed");
  }

  std::vector<StateEntry> state;
  state.push_back({"center", -1, res.center.x_tilde});
  if (sc.algorithm == Algorithm::admm_rr) {
    for (std::size_t i = 0; i < res.admm.size(); ++i)
      state.push_back({"worker", static_cast<long>(i), res.admm[i].x});
  } else {
    for (std::size_t i = 0; i < res.workers.size(); ++i)
      state.push_back({"worker", static_cast<long>(i), res.workers[i].x});
  }
  write_state_csv(dir / "final_state.csv", state);
  if (read_state_csv(dir / "final_state.csv").size() != state.size())
    throw Error("final_state.csv self-check failed");

  const ParamVector avg = averaged_iterate(res.snapshots, burn_in);
  write_vector_csv(dir / "averaged_iterate.csv", avg);
  if (!(read_vector_csv(dir / "averaged_iterate.csv") == avg))
    throw Error("averaged_iterate.csv self-check failed");

  KeyValues kv{{"algorithm", std::string(to_string(sc.algorithm))},
               {"p", std::to_string(sc.hp.p)},
               {"center_version", std::to_string(res.center.version)},
               {"final_objective", format_double(sc.problem->exact_loss(res.center.x_tilde))},
               {"averaged_objective", format_double(sc.problem->exact_loss(avg))},
               {"events", std::to_string(res.events.size())},
               {"metrics_rows", std::to_string(res.metrics.size())}};
  if (auto xs = sc.problem->minimizer()) {
    kv.push_back({"final_dist_to_opt", format_double(distance(res.center.x_tilde, *xs))});
    kv.push_back({"averaged_dist_to_opt", format_double(distance(avg, *xs))});
  }
  write_key_values((dir / "summary").string(), kv);
}

// Outputs: grid_<alg>_p<p>.csv and, for easgd_rr with compare_admm,
// comparison_admm_p<p>.txt.
inline void run_stability_mode(const ExperimentConfig& cfg) {
  const MapAlgorithm alg = config_map_algorithm(cfg);
  const std::size_t p = cfg.size("p");
  const GridAxes axes = config_axes(cfg);
  const ScanOptions opt = config_scan_options(cfg);
  const bool compare = cfg.flag("compare_admm");
  const fs::path dir = prepare_output(cfg);

  const StabilityGrid g = scan_stability(alg, p, axes, opt);
  const std::string stem = std::string(to_string(alg)) + "_p" + std::to_string(p);
  const fs::path grid = dir / ("grid_" + stem + ".csv");
  {
    std::ofstream out(grid);
    write_grid_csv(out, g);
  }
  if (check_grid_csv(grid) != g.cells.size()) throw Error("grid self-check failed");

  std::size_t stable = 0;
  for (const auto& c : g.cells) stable += c.stable() ? 1 : 0;
  KeyValues kv{{"algorithm", std::string(to_string(alg))},
               {"p", std::to_string(p)},
               {"cells", std::to_string(g.cells.size())},
               {"stable_cells", std::to_string(stable)}};
  if (compare && alg == MapAlgorithm::easgd_rr) {
    const ComparisonReport r = compare_easgd_admm(p, axes, opt);
    std::ofstream out(dir / ("comparison_admm_p" + std::to_string(p) + ".txt"));
    write_comparison_report(out, r);
    kv.push_back({"admm_unstable_easgd_stable", std::to_string(r.admm_unstable_easgd_stable)});
    kv.push_back({"easgd_unstable_admm_stable", std::to_string(r.easgd_unstable_admm_stable)});
  }
  write_key_values((dir / "summary").string(), kv);
}

// Outputs: metrics.csv, center_state.csv, summary. Port goes to port_file.
inline void run_center_mode(const ExperimentConfig& cfg) {
  auto problem = config_problem(cfg);
  const std::size_t p = cfg.size("p");
  if (p < 1) throw ConfigError("p: must be >= 1");
  net::CenterOptions opt;
  opt.bind = net::parse_endpoint(cfg.str("bind"));
  opt.initial = config_x0(cfg, *problem);
  opt.objective = problem;
  opt.cadence = cfg.size("cadence");
  opt.threshold = config_threshold(cfg);
  opt.poll_every = cfg.size("poll_every");
  opt.stop_after_workers = cfg.has("stop_after_workers") ? cfg.size("stop_after_workers") : p;
  opt.budget_s = cfg.real("budget_s");
  if (!(*opt.budget_s > 0.0)) throw ConfigError("budget_s: must be > 0");
  const fs::path dir = prepare_output(cfg);

  net::CenterServer server(std::move(opt));
  log::info("center listening on " + to_string(server.endpoint()));
  if (cfg.has("port_file")) write_text_atomic(cfg.str("port_file"), std::to_string(server.port()) + "\n");
  const net::CenterReport rep = server.serve();

  write_metrics(dir / "metrics.csv", rep.metrics);
  write_state_csv(dir / "center_state.csv", {{"center", -1, rep.center.x_tilde}});
  const bool reached = rep.time_to_threshold.has_value();
  KeyValues kv{{"reached", reached ? "1" : "0"},
               {"time_to_threshold", opt_cell(rep.time_to_threshold)},
               {"version_at_threshold",
                rep.version_at_threshold ? std::to_string(*rep.version_at_threshold) : ""},
               {"final_version", std::to_string(rep.center.version)},
               {"final_objective", format_double(problem->exact_loss(rep.center.x_tilde))},
               {"fetches", std::to_string(rep.fetches)},
               {"elastic_pushes", std::to_string(rep.elastic_pushes)},
               {"grad_pushes", std::to_string(rep.grad_pushes)},
               {"clean_disconnects", std::to_string(rep.clean_disconnects)},
               {"timed_out", rep.timed_out ? "1" : "0"}};
  write_key_values((dir / "summary").string(), kv);

  if (rep.timed_out)
    throw TimeoutError("center: budget of " + cfg.str("budget_s") + " s exhausted" +
                       (reached ? "" : " before the threshold was reached"));
  if (config_threshold(cfg) && !reached)
    throw TimeoutError("center: threshold " + cfg.str("threshold") +
                       " not reached before the workers finished");
}

// Outputs under output_dir/worker_<id>/ so workers can share one config:
// metrics.csv (worker rows), worker_state.csv, summary.
inline void run_worker_mode(ExperimentConfig cfg) {
  net::WorkerOptions opt;
  opt.cfg = config_sim(cfg);
  opt.worker_id = cfg.size("worker_id");
  opt.center = net::parse_endpoint(cfg.str("connect"));
  opt.max_retries = static_cast<int>(cfg.size("max_retries"));
  opt.backoff = std::chrono::milliseconds(cfg.u64("backoff_ms"));
  opt.metrics_every = cfg.size("worker_metrics_every");
  const fs::path dir = fs::path(cfg.str("output_dir")) / ("worker_" + std::to_string(opt.worker_id));
  fs::create_directories(dir);
  write_resolved(cfg, dir);

  const net::WorkerReport rep = net::run_worker(opt);
  write_metrics(dir / "metrics.csv", rep.metrics);
  write_state_csv(dir / "worker_state.csv",
                  {{"worker", static_cast<long>(opt.worker_id), rep.state.x}});
  write_key_values((dir / "summary").string(),
                   {{"worker_id", std::to_string(opt.worker_id)},
                    {"steps_done", std::to_string(rep.steps_done)},
                    {"fetches", std::to_string(rep.fetches)},
                    {"pushes", std::to_string(rep.pushes)},
                    {"last_version", std::to_string(rep.last_version)},
                    {"stopped_by_center", rep.stopped_by_center ? "1" : "0"}});
}

// ---- speedup -----------------------------------------------------------

struct SpeedupRow {
  std::size_t p = 0;
  std::optional<double> time_to_threshold;
  std::optional<std::uint64_t> version_at_threshold;
  std::optional<double> speedup;
  bool reached() const { return time_to_threshold.has_value(); }
};

inline constexpr const char* kSpeedupHeader =
    "p,time_to_threshold,center_version_at_threshold,speedup,reached";

inline void write_speedup_csv(std::ostream& out, const std::vector<SpeedupRow>& rows) {
  out << kSpeedupHeader << '\n';
  for (const auto& r : rows)
    out << r.p << ',' << opt_cell(r.time_to_threshold) << ','
        << (r.version_at_threshold ? std::to_string(*r.version_at_threshold) : "") << ','
        << opt_cell(r.speedup) << ',' << (r.reached() ? 1 : 0) << '\n';
}

inline std::vector<SpeedupRow> read_speedup_csv(std::istream& in) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) || line != kSpeedupHeader)
    throw ParseError("speedup csv: unexpected header", lineno);
  std::vector<SpeedupRow> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c = elastic::detail::split_csv_line(line);
    if (c.size() != 5) throw ParseError("speedup csv: expected 5 cells", lineno);
    SpeedupRow r;
    r.p = elastic::detail::parse_int_cell<std::size_t>(c[0], lineno);
    if (!c[1].empty()) r.time_to_threshold = elastic::detail::parse_double_cell(c[1], lineno);
    if (!c[2].empty()) r.version_at_threshold = elastic::detail::parse_int_cell<std::uint64_t>(c[2], lineno);
    if (!c[3].empty()) r.speedup = elastic::detail::parse_double_cell(c[3], lineno);
    if (c[4] != (r.reached() ? "1" : "0")) throw ParseError("speedup csv: reached flag", lineno);
    rows.push_back(r);
  }
  return rows;
}

struct Pilot {
  double threshold = 0.0;
  std::size_t crossing_version = 0;  // first p=1 center version at or below threshold
};

// Runs the p=1 configuration in the simulator without the gradient cost.
// With no configured threshold, picks the objective the p=1 run reaches
// halfway through its steps. Throws ConfigError if p=1 cannot reach it.
inline Pilot speedup_pilot(const ExperimentConfig& cfg) {
  ExperimentConfig one = cfg;
  one.set("p", "1");
  one.set("schedule", "round_robin");
  one.set("cadence", "1");
  SimConfig sc = config_sim(one, config_base_problem(one));
  sc.record_snapshots = false;
  const SimResult res = run_sim(sc);
  Pilot pilot;
  if (auto t = config_threshold(cfg)) {
    pilot.threshold = *t;
  } else {
    const std::uint64_t half = std::max<std::uint64_t>(1, res.center.version / 2);
    auto it = std::find_if(res.metrics.begin(), res.metrics.end(),
                           [&](const MetricsRow& r) { return r.center_version >= half; });
    if (it == res.metrics.end()) throw ConfigError("speedup pilot: p=1 run made no progress");
    pilot.threshold = it->objective;
  }
  for (const auto& r : res.metrics)
    if (r.objective <= pilot.threshold) {
      pilot.crossing_version = r.center_version;
      return pilot;
    }
  throw ConfigError("threshold: " + format_double(pilot.threshold) + " not reached by the p=1 pilot in " +
                    std::to_string(sc.steps) + " steps");
}

namespace proc {

inline pid_t spawn_self(const fs::path& exe, const fs::path& config) {
  const std::string a0 = exe.string(), a2 = config.string();
  std::vector<char*> argv{const_cast<char*>(a0.c_str()), const_cast<char*>("run"),
                          const_cast<char*>(a2.c_str()), nullptr};
  pid_t pid = 0;
  const int rc = ::posix_spawn(&pid, a0.c_str(), nullptr, nullptr, argv.data(), environ);
  if (rc != 0) throw Error("posix_spawn failed for '" + a0 + "': " + std::strerror(rc));
  return pid;
}

inline int wait_child(pid_t pid) {
  int status = 0;
  while (::waitpid(pid, &status, 0) < 0)
    if (errno != EINTR) return -1;
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  return 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0);
}

inline void write_config(const fs::path& path, const ExperimentConfig& c) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  c.write(out);
}

}  // namespace proc

// One center process plus p worker processes per entry of speedup_p.
// Outputs: speedup.csv and p<k>/{center,worker_<i>}/...
inline std::vector<SpeedupRow> run_speedup_mode(const ExperimentConfig& cfg, const fs::path& exe) {
  const auto ps = cfg.sizes("speedup_p");
  if (ps.empty()) throw ConfigError("speedup_p: need at least one worker count");
  for (auto p : ps)
    if (p < 1) throw ConfigError("speedup_p: worker counts must be >= 1");
  {
    const Algorithm a = config_algorithm(cfg);
    if (a != Algorithm::easgd_async && a != Algorithm::eamsgd && a != Algorithm::downpour)
      throw ConfigError("algorithm: speedup mode needs easgd_async, eamsgd or downpour");
  }
  const Pilot pilot = speedup_pilot(cfg);
  log::info("speedup: threshold " + format_double(pilot.threshold) + ", p=1 pilot crosses at version " +
            std::to_string(pilot.crossing_version));
  const fs::path dir = fs::absolute(prepare_output(cfg));

  std::vector<SpeedupRow> rows;
  for (std::size_t p : ps) {
    const fs::path pdir = dir / ("p" + std::to_string(p));
    fs::remove_all(pdir);
    fs::create_directories(pdir);

    ExperimentConfig c = cfg;
    c.set("p", std::to_string(p));
    c.set("mode", "net-center");
    c.set("bind", "127.0.0.1:0");
    c.set("threshold", format_double(pilot.threshold));
    c.set("stop_after_workers", std::to_string(p));
    c.set("port_file", (pdir / "port").string());
    c.set("output_dir", (pdir / "center").string());
    proc::write_config(pdir / "center.conf", c);
    const pid_t center = proc::spawn_self(exe, pdir / "center.conf");

    std::optional<std::uint16_t> port;
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(10);
    while (!port) {
      if (fs::exists(pdir / "port")) {
        std::ifstream in(pdir / "port");
        int v = 0;
        if (in >> v) port = static_cast<std::uint16_t>(v);
        break;
      }
      int st = 0;
      if (::waitpid(center, &st, WNOHANG) == center)
        throw Error("speedup: center for p=" + std::to_string(p) + " exited before listening");
      if (std::chrono::steady_clock::now() > deadline) {
        ::kill(center, SIGTERM);
        proc::wait_child(center);
        throw Error("speedup: center for p=" + std::to_string(p) + " did not start");
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }

    std::vector<pid_t> workers;
    for (std::size_t i = 0; i < p; ++i) {
      ExperimentConfig w = cfg;
      w.set("p", std::to_string(p));
      w.set("mode", "net-worker");
      w.set("worker_id", std::to_string(i));
      w.set("connect", "127.0.0.1:" + std::to_string(*port));
      w.set("output_dir", pdir.string());
      const fs::path wc = pdir / ("worker_" + std::to_string(i) + ".conf");
      proc::write_config(wc, w);
      workers.push_back(proc::spawn_self(exe, wc));
    }
    for (std::size_t i = 0; i < workers.size(); ++i)
      if (const int rc = proc::wait_child(workers[i]); rc != 0)
        log::warn("speedup: worker " + std::to_string(i) + " for p=" + std::to_string(p) +
                  " exited with " + std::to_string(rc));
    const int crc = proc::wait_child(center);

    SpeedupRow row;
    row.p = p;
    const auto kv = read_key_values((pdir / "center" / "summary").string());
    if (kv.count("reached") && kv.at("reached") == "1") {
      row.time_to_threshold = std::stod(kv.at("time_to_threshold"));
      row.version_at_threshold = std::stoull(kv.at("version_at_threshold"));
    } else {
      log::warn("speedup: p=" + std::to_string(p) + " did not reach the threshold (center exit " +
                std::to_string(crc) + ")");
    }
    rows.push_back(row);
  }

  const auto base = std::find_if(rows.begin(), rows.end(),
                                 [](const SpeedupRow& r) { return r.p == 1 && r.reached(); });
  for (auto& r : rows)
    if (base != rows.end() && r.reached())
      r.speedup = *base->time_to_threshold / *r.time_to_threshold;

  {
    std::ofstream out(dir / "speedup.csv");
    write_speedup_csv(out, rows);
  }
  {
    std::ifstream in(dir / "speedup.csv");
    if (read_speedup_csv(in).size() != rows.size()) throw Error("speedup.csv self-check failed");
  }
  write_key_values((dir / "summary").string(),
                   {{"threshold", format_double(pilot.threshold)},
                    {"pilot_crossing_version", std::to_string(pilot.crossing_version)}});
  for (const auto& r : rows)
    if (!r.reached())
      throw TimeoutError("speedup: p=" + std::to_string(r.p) + " did not reach threshold " +
                         format_double(pilot.threshold));
  return rows;
}

// ---- entry points --------------------------------------------------------

inline fs::path self_exe() { return fs::read_symlink("/proc/self/exe"); }

inline void run(ExperimentConfig cfg) {
  apply_env_overrides(cfg);
  switch (config_mode(cfg)) {
    case Mode::sim: run_sim_mode(cfg); break;
    case Mode::stability: run_stability_mode(cfg); break;
    case Mode::net_center: run_center_mode(cfg); break;
    case Mode::net_worker: run_worker_mode(cfg); break;
    case Mode::speedup: run_speedup_mode(cfg, self_exe()); break;
  }
}

// ---- summarize -----------------------------------------------------------

struct SummaryRow {
  std::string run;
  std::optional<std::size_t> p;
  std::optional<double> time_to_threshold;
  std::optional<std::uint64_t> version_at_threshold;
  std::optional<double> final_disagreement;
  std::optional<double> speedup;
};

inline constexpr const char* kSummaryHeader =
    "run,p,time_to_threshold,center_version_at_threshold,final_disagreement,speedup";

// p from a resolved_config next to the file, else from a p<digits> path
// component.
inline std::optional<std::size_t> infer_p(const fs::path& metrics) {
  const fs::path rc = metrics.parent_path() / "resolved_config";
  if (fs::exists(rc)) {
    const auto kv = read_key_values(rc.string());
    if (auto it = kv.find("p"); it != kv.end()) {
      try {
        return static_cast<std::size_t>(std::stoull(it->second));
      } catch (const std::exception&) {
      }
    }
  }
  static const std::regex pdir("p([0-9]+)");
  std::optional<std::size_t> found;
  for (const auto& part : metrics.parent_path()) {
    std::smatch m;
    const std::string s = part.string();
    if (std::regex_match(s, m, pdir)) found = std::stoull(m[1]);
  }
  return found;
}

inline SummaryRow summarize_run(const std::string& path, const std::vector<MetricsRow>& all,
                                double threshold) {
  SummaryRow s;
  s.run = path;
  std::vector<MetricsRow> rows;
  for (const auto& r : all)
    if (r.worker_id == -1) rows.push_back(r);
  if (rows.empty()) rows = all;
  for (const auto& r : rows)
    if (r.objective <= threshold) {
      s.time_to_threshold = r.wall_clock_s;
      s.version_at_threshold = r.center_version;
      break;
    }
  for (auto it = rows.rbegin(); it != rows.rend(); ++it)
    if (it->disagreement) {
      s.final_disagreement = it->disagreement;
      break;
    }
  return s;
}

inline void fill_speedup(std::vector<SummaryRow>& rows) {
  const auto base = std::find_if(rows.begin(), rows.end(), [](const SummaryRow& r) {
    return r.p && *r.p == 1 && r.time_to_threshold;
  });
  if (base == rows.end()) return;
  for (auto& r : rows)
    if (r.time_to_threshold && *r.time_to_threshold > 0.0)
      r.speedup = *base->time_to_threshold / *r.time_to_threshold;
    else if (r.time_to_threshold && *base->time_to_threshold == *r.time_to_threshold)
      r.speedup = 1.0;
}

inline std::vector<std::string> expand_glob(const std::string& pattern) {
  glob_t g{};
  const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
  std::vector<std::string> out;
  if (rc == 0)
    for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
  ::globfree(&g);
  if (rc != 0 && rc != GLOB_NOMATCH) throw Error("glob failed for '" + pattern + "'");
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<SummaryRow> summarize(const std::vector<std::string>& files, double threshold) {
  std::vector<SummaryRow> rows;
  for (const auto& f : files) {
    std::vector<MetricsRow> m;
    try {
      m = load_metrics_csv(f);
    } catch (const ParseError& e) {
      throw ParseError(f + ": " + e.what(), e.line());
    }
    SummaryRow s = summarize_run(f, m, threshold);
    s.p = infer_p(f);
    rows.push_back(std::move(s));
  }
  fill_speedup(rows);
  return rows;
}

inline void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << kSummaryHeader << '\n';
  for (const auto& r : rows)
    out << r.run << ',' << (r.p ? std::to_string(*r.p) : "") << ',' << opt_cell(r.time_to_threshold)
        << ',' << (r.version_at_threshold ? std::to_string(*r.version_at_threshold) : "") << ','
        << opt_cell(r.final_disagreement) << ',' << opt_cell(r.speedup) << '\n';
}

}  // namespace elastic::harness
