#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <queue>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "elastic/algorithms.hpp"
#include "elastic/error.hpp"
#include "elastic/metrics.hpp"
#include "elastic/problems.hpp"

namespace elastic {

enum class Algorithm { easgd_sync, easgd_async, eamsgd, downpour, sgd, msgd, admm_rr };
enum class ScheduleKind { sync, round_robin, async_random };
enum class CostLaw { fixed, exponential };

inline std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::easgd_sync: return "easgd_sync";
    case Algorithm::easgd_async: return "easgd_async";
    case Algorithm::eamsgd: return "eamsgd";
    case Algorithm::downpour: return "downpour";
    case Algorithm::sgd: return "sgd";
    case Algorithm::msgd: return "msgd";
    case Algorithm::admm_rr: return "admm_rr";
  }
  return "?";
}

inline std::string_view to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::sync: return "sync";
    case ScheduleKind::round_robin: return "round_robin";
    case ScheduleKind::async_random: return "async_random";
  }
  return "?";
}

// How simulated time advances.
//  sync:         all workers step together; a round lasts max_i(duration_i).
//  round_robin:  one worker at a time in index order 0..p-1, cyclically;
//                time advances by the acting worker's duration.
//  async_random: workers run in parallel on their own clocks; events are
//                processed in completion-time order, ties to the lowest id.
// Durations are the per-worker cost c_i (fixed) or an exponential draw with
// mean c_i from the schedule stream seed ^ i.
struct Schedule {
  ScheduleKind kind = ScheduleKind::round_robin;
  CostLaw law = CostLaw::fixed;
  std::vector<double> costs{1.0};  // one entry broadcasts to every worker
  std::uint64_t seed = 0;

  double cost(std::size_t worker) const {
    return costs.size() == 1 ? costs.front() : costs.at(worker);
  }
};

enum class EventKind { grad_step, comm };

inline std::string_view to_string(EventKind k) {
  return k == EventKind::comm ? "comm" : "grad_step";
}

// One local iteration of one worker. center_version is the version the
// worker observed before its own update was applied.
struct SimEvent {
  double time = 0.0;
  std::size_t worker = 0;
  EventKind kind = EventKind::grad_step;
  std::uint64_t center_version = 0;

  friend bool operator==(const SimEvent&, const SimEvent&) = default;
};

struct SimConfig {
  Algorithm algorithm = Algorithm::easgd_async;
  HyperParams hp;
  std::shared_ptr<const GradientOracle> problem;
  Schedule schedule;
  std::size_t steps = 0;  // local steps per worker (rounds for sync kinds)
  std::size_t cadence = 1;
  std::uint64_t seed = 0;
  std::size_t batch_size = 1;
  AdmmVariant admm_variant = AdmmVariant::exact;

  ParamVector x0;  // start for every worker and the center; zeros if empty
  std::vector<ParamVector> initial_workers;
  std::optional<ParamVector> initial_center;
  std::vector<ParamVector> initial_momentum;
  std::vector<ParamVector> initial_duals;

  bool record_snapshots = false;

  void validate() const {
    if (!problem) throw ConfigError("problem: not set");
    hp.validate();
    if (cadence < 1) throw ConfigError("cadence must be >= 1");
    const std::size_t d = problem->dim();
    if (!x0.empty() && x0.dim() != d) throw ConfigError("x0: dimension mismatch");
    auto check_list = [&](const std::vector<ParamVector>& v, const char* key) {
      if (v.empty()) return;
      if (v.size() != hp.p) throw ConfigError(std::string(key) + ": need one entry per worker");
      for (const auto& x : v)
        if (x.dim() != d) throw ConfigError(std::string(key) + ": dimension mismatch");
    };
    check_list(initial_workers, "initial_workers");
    check_list(initial_momentum, "initial_momentum");
    check_list(initial_duals, "initial_duals");
    if (initial_center && initial_center->dim() != d)
      throw ConfigError("initial_center: dimension mismatch");
    if (schedule.costs.empty() || (schedule.costs.size() != 1 && schedule.costs.size() != hp.p))
      throw ConfigError("schedule costs: need 1 or p entries");
    for (double c : schedule.costs)
      if (!(c > 0.0) || !std::isfinite(c)) throw ConfigError("schedule costs must be > 0");
    if (algorithm == Algorithm::easgd_sync && schedule.kind != ScheduleKind::sync)
      throw ConfigError("algorithm easgd_sync requires schedule=sync");
    if (algorithm == Algorithm::admm_rr) {
      if (schedule.kind == ScheduleKind::async_random)
        throw ConfigError("algorithm admm_rr requires schedule=round_robin or sync");
      const auto* q = dynamic_cast<const QuadraticProblem*>(problem.get());
      if (q == nullptr || q->dim() != 1)
        throw ConfigError("algorithm admm_rr requires a one-dimensional quadratic problem");
    }
    if (problem->num_samples() > 0 && hp.p > problem->num_samples())
      throw ConfigError("p exceeds the number of samples");
  }
};

struct SimResult {
  std::vector<WorkerState> workers;
  CenterState center;
  std::vector<AdmmWorkerState> admm;
  std::vector<ParamVector> accumulators;  // DOWNPOUR
  std::vector<MetricsRow> metrics;
  std::vector<ParamVector> snapshots;  // center at each metrics row
  std::vector<SimEvent> events;
};

inline constexpr double kDivergenceThreshold = 1e12;

inline double disagreement(const std::vector<WorkerState>& workers) {
  std::vector<ParamVector> xs;
  xs.reserve(workers.size());
  for (const auto& w : workers) xs.push_back(w.x);
  return disagreement(xs);
}

// Starting x for the center: initial_center, else x0, else zeros.
inline ParamVector initial_center(const SimConfig& cfg) {
  if (cfg.initial_center) return *cfg.initial_center;
  return cfg.x0.empty() ? ParamVector(cfg.problem->dim()) : cfg.x0;
}

// Worker states at t = 0: seeded data shards, per-worker gradient streams
// substream(seed, i), optional per-worker starting points and momenta. Shared
// by the simulator and the network worker so both start identically.
inline std::vector<WorkerState> make_initial_workers(const SimConfig& cfg) {
  const std::size_t p = cfg.hp.p, d = cfg.problem->dim();
  const ParamVector x0 = cfg.x0.empty() ? ParamVector(d) : cfg.x0;
  std::vector<DataShard> shards;
  if (cfg.problem->num_samples() > 0) {
    shards = shard(cfg.problem->num_samples(), p, cfg.seed);
  } else {
    shards.resize(p);
    for (std::size_t i = 0; i < p; ++i) shards[i].worker = i;
  }
  std::vector<WorkerState> out;
  for (std::size_t i = 0; i < p; ++i) {
    ParamVector xi = cfg.initial_workers.empty() ? x0 : cfg.initial_workers[i];
    auto ws = WorkerState::start(std::move(xi), shards[i], Rng::substream(cfg.seed, i),
                                 cfg.batch_size);
    if (!cfg.initial_momentum.empty()) ws.v = cfg.initial_momentum[i];
    out.push_back(std::move(ws));
  }
  return out;
}

namespace detail {

inline bool exceeds(const ParamVector& v) {
  for (double x : v)
    if (!std::isfinite(x) || std::abs(x) > kDivergenceThreshold) return true;
  return false;
}

inline ParamVector worker_mean(const std::vector<WorkerState>& ws) {
  ParamVector m(ws.front().x.dim());
  for (const auto& w : ws)
    for (std::size_t k = 0; k < m.dim(); ++k) m[k] += w.x[k];
  for (std::size_t k = 0; k < m.dim(); ++k) m[k] /= static_cast<double>(ws.size());
  return m;
}

class Simulation {
 public:
  explicit Simulation(const SimConfig& cfg) : cfg_(cfg), oracle_(*cfg.problem) {
    cfg_.validate();
    const std::size_t p = cfg_.hp.p, d = oracle_.dim();
    res_.workers = make_initial_workers(cfg_);
    for (std::size_t i = 0; i < p; ++i) sched_rng_.push_back(Rng::substream(cfg_.schedule.seed, i));
    res_.center.x_tilde = initial_center(cfg_);
    if (cfg_.algorithm == Algorithm::sgd || cfg_.algorithm == Algorithm::msgd)
      res_.center.x_tilde = worker_mean(res_.workers);
    if (cfg_.algorithm == Algorithm::downpour)
      res_.accumulators.assign(p, ParamVector(d));
    if (cfg_.algorithm == Algorithm::admm_rr) {
      const auto& q = dynamic_cast<const QuadraticProblem&>(oracle_);
      admm_h_ = q.curvature()(0, 0);
      admm_b_ = q.linear_term()[0];
      for (std::size_t i = 0; i < p; ++i) {
        AdmmWorkerState a{res_.workers[i].x, ParamVector(1)};
        if (!cfg_.initial_duals.empty()) a.lambda = cfg_.initial_duals[i];
        res_.admm.push_back(std::move(a));
      }
    }
  }

  SimResult run() && {
    emit_row(0.0);
    switch (cfg_.schedule.kind) {
      case ScheduleKind::sync: run_sync(); break;
      case ScheduleKind::round_robin: run_round_robin(); break;
      case ScheduleKind::async_random: run_async(); break;
    }
    if (res_.events.size() != events_at_last_row_) emit_row(now_);
    return std::move(res_);
  }

 private:
  double duration(std::size_t i) {
    const double c = cfg_.schedule.cost(i);
    return cfg_.schedule.law == CostLaw::fixed ? c : sched_rng_[i].exponential(c);
  }

  void run_sync() {
    const std::size_t p = cfg_.hp.p;
    for (std::size_t round = 0; round < cfg_.steps; ++round) {
      double longest = 0.0;
      for (std::size_t i = 0; i < p; ++i) longest = std::max(longest, duration(i));
      now_ += longest;
      if (cfg_.algorithm == Algorithm::easgd_sync) {
        const bool comm = round % cfg_.hp.tau == 0;
        const std::uint64_t seen = res_.center.version;
        guarded([&] {
          if (comm) {
            auto r = easgd_sync_round(std::move(res_.workers), std::move(res_.center), oracle_,
                                      cfg_.hp);
            res_.workers = std::move(r.workers);
            res_.center = std::move(r.center);
          } else {
            for (auto& w : res_.workers) w = sgd_worker_step(std::move(w), oracle_, cfg_.hp.eta).state;
          }
        });
        for (std::size_t i = 0; i < p; ++i) {
          res_.events.push_back({now_, i, comm ? EventKind::comm : EventKind::grad_step, seen});
          check_divergence(res_.workers[i].x);
        }
        check_divergence(res_.center.x_tilde);
        maybe_emit();
      } else {
        for (std::size_t i = 0; i < p; ++i) step_worker(i);
      }
    }
  }

  void run_round_robin() {
    const std::size_t p = cfg_.hp.p;
    for (std::size_t k = 0; k < cfg_.steps; ++k)
      for (std::size_t i = 0; i < p; ++i) {
        now_ += duration(i);
        step_worker(i);
      }
  }

  void run_async() {
    const std::size_t p = cfg_.hp.p;
    using Entry = std::pair<double, std::size_t>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;
    std::vector<std::size_t> done(p, 0);
    if (cfg_.steps > 0)
      for (std::size_t i = 0; i < p; ++i) queue.push({duration(i), i});
    while (!queue.empty()) {
      const auto [t, i] = queue.top();
      queue.pop();
      now_ = t;
      step_worker(i);
      if (++done[i] < cfg_.steps) queue.push({t + duration(i), i});
    }
  }

  template <class F>
  void guarded(F&& f) {
    try {
      f();
    } catch (const NumericsError& e) {
      throw DivergedError(std::string("non-finite state: ") + e.what(), res_.events.size());
    }
  }

  void check_divergence(const ParamVector& v) {
    if (exceeds(v))
      throw DivergedError("state magnitude exceeded 1e12", res_.events.empty() ? 0 : res_.events.size() - 1);
  }

  void step_worker(std::size_t i) {
    auto& w = res_.workers[i];
    const std::uint64_t seen = res_.center.version;
    EventKind kind = EventKind::grad_step;
    guarded([&] {
      switch (cfg_.algorithm) {
        case Algorithm::easgd_async:
        case Algorithm::eamsgd: {
          std::optional<ParamVector> snap;
          if (is_comm_step(w, cfg_.hp)) {
            snap = res_.center.x_tilde;
            kind = EventKind::comm;
          }
          AsyncStep s = cfg_.algorithm == Algorithm::eamsgd
                            ? eamsgd_worker_step(std::move(w), snap, oracle_, cfg_.hp)
                            : easgd_async_worker_step(std::move(w), snap, oracle_, cfg_.hp);
          w = std::move(s.state);
          // zero-alpha pushes are elided, as in the network runtime
          if (s.elastic_update && cfg_.hp.alpha() != 0.0)
            res_.center = center_apply_elastic(std::move(res_.center), *s.elastic_update);
          break;
        }
        case Algorithm::downpour: {
          DownpourStep s = downpour_worker_step(std::move(w), std::move(res_.accumulators[i]),
                                                oracle_, cfg_.hp);
          w = std::move(s.state);
          res_.accumulators[i] = std::move(s.accumulated);
          if (s.push) {
            kind = EventKind::comm;
            res_.center = center_apply_elastic(std::move(res_.center), *s.push);
            w = downpour_fetch(std::move(w), res_.center.x_tilde);
          }
          break;
        }
        case Algorithm::sgd:
        case Algorithm::msgd: {
          w = cfg_.algorithm == Algorithm::sgd
                  ? sgd_worker_step(std::move(w), oracle_, cfg_.hp.eta).state
                  : msgd_step(std::move(w), oracle_, cfg_.hp.eta, cfg_.hp.delta).state;
          res_.center.x_tilde = worker_mean(res_.workers);
          ++res_.center.version;
          break;
        }
        case Algorithm::admm_rr: {
          kind = EventKind::comm;
          auto r = admm_roundrobin_step(std::move(res_.admm), i, std::move(res_.center.x_tilde),
                                        admm_h_, cfg_.hp.eta, cfg_.hp.rho, cfg_.admm_variant,
                                        admm_b_);
          res_.admm = std::move(r.workers);
          res_.center.x_tilde = std::move(r.x_tilde);
          ++res_.center.version;
          w.x = res_.admm[i].x;
          ++w.t;
          break;
        }
        case Algorithm::easgd_sync:
          throw ConfigError("easgd_sync runs only under the sync schedule");
      }
    });
    res_.events.push_back({now_, i, kind, seen});
    check_divergence(w.x);
    check_divergence(w.v);
    check_divergence(res_.center.x_tilde);
    maybe_emit();
  }

  void maybe_emit() {
    const std::uint64_t v = res_.center.version;
    if (v != last_row_version_ && v % cfg_.cadence == 0) emit_row(now_);
  }

  void emit_row(double t) {
    MetricsRow row;
    row.wall_clock_s = t;
    row.sim_time = t;
    row.center_version = res_.center.version;
    row.worker_id = -1;
    row.objective = oracle_.exact_loss(res_.center.x_tilde);
    if (auto xs = oracle_.minimizer()) row.dist_to_opt = distance(res_.center.x_tilde, *xs);
    row.disagreement = disagreement(res_.workers);
    res_.metrics.push_back(row);
    if (cfg_.record_snapshots) res_.snapshots.push_back(res_.center.x_tilde);
    last_row_version_ = res_.center.version;
    events_at_last_row_ = res_.events.size();
  }

  SimConfig cfg_;
  const GradientOracle& oracle_;
  SimResult res_;
  std::vector<Rng> sched_rng_;
  double now_ = 0.0;
  std::uint64_t last_row_version_ = 0;
  std::size_t events_at_last_row_ = 0;
  double admm_h_ = 0.0, admm_b_ = 0.0;
};

}  // namespace detail

// Deterministic discrete-event run of p workers and one center. Metrics rows
// (center rows, worker_id -1) are emitted at start, whenever the center
// version reaches a multiple of cadence, and at termination. In simulation
// wall_clock_s equals simulated time. Center-free algorithms (sgd, msgd)
// report the worker average as the center and count every local step as a
// version. Divergence (non-finite or |entry| > 1e12) raises DivergedError.
inline SimResult run_sim(const SimConfig& cfg) { return detail::Simulation(cfg).run(); }

// Event log text: one `time,worker,kind,center_version` line per event.
inline void write_event_log(std::ostream& out, const std::vector<SimEvent>& events) {
  for (const auto& e : events)
    out << format_double(e.time) << ',' << e.worker << ',' << to_string(e.kind) << ','
        << e.center_version << '\n';
}

inline std::vector<SimEvent> read_event_log(std::istream& in) {
  std::vector<SimEvent> events;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto c = detail::split_csv_line(line);
    if (c.size() != 4) throw ParseError("event log: expected 4 fields", lineno);
    SimEvent e;
    e.time = detail::parse_double_cell(c[0], lineno);
    e.worker = detail::parse_int_cell<std::size_t>(c[1], lineno);
    if (c[2] == "comm") {
      e.kind = EventKind::comm;
    } else if (c[2] == "grad_step") {
      e.kind = EventKind::grad_step;
    } else {
      throw ParseError("event log: unknown kind '" + c[2] + "'", lineno);
    }
    e.center_version = detail::parse_int_cell<std::uint64_t>(c[3], lineno);
    events.push_back(e);
  }
  return events;
}

// Re-executes cfg and checks that it reproduces `log` event by event (and
// hence the same terminal state). Throws ReplayMismatchError at the first
// differing event.
inline bool replay_check(const std::vector<SimEvent>& log, const SimConfig& cfg) {
  const SimResult again = run_sim(cfg);
  const std::size_t n = std::min(log.size(), again.events.size());
  for (std::size_t i = 0; i < n; ++i)
    if (!(log[i] == again.events[i])) throw ReplayMismatchError("event differs", i);
  if (log.size() != again.events.size())
    throw ReplayMismatchError("event count differs (" + std::to_string(log.size()) + " vs " +
                                  std::to_string(again.events.size()) + ")",
                              n);
  return true;
}

}  // namespace elastic
