#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <thread>
#include <vector>

#include "elastic/algorithms.hpp"
#include "elastic/log.hpp"
#include "elastic/metrics.hpp"
#include "elastic/net/socket.hpp"
#include "elastic/net/wire.hpp"
#include "elastic/sim.hpp"

namespace elastic::net {

struct WorkerOptions {
  SimConfig cfg;  // algorithm, hp (p = total workers), problem, steps, seed, batch_size, x0
  std::size_t worker_id = 0;
  Endpoint center;
  // On connection loss: reconnect and resend, waiting backoff * 2^k before
  // attempt k+1, at most max_retries times per request.
  int max_retries = 5;
  std::chrono::milliseconds backoff{50};
  std::size_t metrics_every = 0;  // local metrics row every k steps (0: none)
};

struct WorkerReport {
  WorkerState state;
  std::size_t steps_done = 0;
  std::size_t fetches = 0;
  std::size_t pushes = 0;
  std::uint64_t last_version = 0;
  bool stopped_by_center = false;
  std::vector<MetricsRow> metrics;
};

namespace detail {

// Blocking request/reply with reconnect.
class Link {
 public:
  Link(Endpoint ep, int max_retries, std::chrono::milliseconds backoff)
      : ep_(std::move(ep)), max_retries_(max_retries), backoff_(backoff) {}

  WireMessage request(const WireMessage& m, std::size_t step) {
    for (int attempt = 0;; ++attempt) {
      try {
        if (!fd_.valid()) fd_ = connect_tcp(ep_);
        send_message(fd_.get(), m);
        auto reply = recv_message(fd_.get());
        if (!reply) throw ConnectionError("center closed the connection");
        if (reply->type == MsgType::error) throw ProtocolError("center error: " + reply->text);
        return std::move(*reply);
      } catch (const ConnectionError& e) {
        fd_.reset();
        if (attempt >= max_retries_)
          throw WorkerAbort(std::string("giving up after ") + std::to_string(attempt + 1) +
                                " attempts: " + e.what(),
                            step);
        const auto wait = backoff_ * (1 << attempt);
        log::warn(std::string("worker: ") + e.what() + "; retrying in " +
                  std::to_string(wait.count()) + " ms");
        std::this_thread::sleep_for(wait);
      }
    }
  }

 private:
  Endpoint ep_;
  int max_retries_;
  std::chrono::milliseconds backoff_;
  Fd fd_;
};

inline void expect_type(const WireMessage& m, MsgType t) {
  if (m.type != t)
    throw ProtocolError(std::string("expected ") + std::string(to_string(t)) + ", got " +
                        std::string(to_string(m.type)));
}

}  // namespace detail

// Worker `worker_id` of cfg.hp.p, running the same kernels as the simulator
// with blocking FETCH -> compute -> PUSH round trips. Starts from the same
// state the simulator gives that worker. Zero-alpha elastic pushes are not
// sent. Returns early if the center answers SHUTDOWN.
inline WorkerReport run_worker(const WorkerOptions& opt) {
  const SimConfig& cfg = opt.cfg;
  cfg.validate();
  if (cfg.algorithm != Algorithm::easgd_async && cfg.algorithm != Algorithm::eamsgd &&
      cfg.algorithm != Algorithm::downpour)
    throw ConfigError("network worker supports easgd_async, eamsgd and downpour, not " +
                      std::string(to_string(cfg.algorithm)));
  if (opt.worker_id >= cfg.hp.p) throw ConfigError("worker_id must be < p");

  const GradientOracle& oracle = *cfg.problem;
  const std::size_t d = oracle.dim();
  WorkerReport rep;
  rep.state = make_initial_workers(cfg)[opt.worker_id];
  ParamVector acc(d);
  detail::Link link(opt.center, opt.max_retries, opt.backoff);
  const auto t0 = std::chrono::steady_clock::now();

  auto fetch = [&](std::size_t step) -> std::optional<ParamVector> {
    const WireMessage r = link.request(make_fetch(), step);
    if (r.type == MsgType::shutdown) return std::nullopt;
    detail::expect_type(r, MsgType::fetch_reply);
    if (r.values.size() != d)
      throw ProtocolError("FETCH_REPLY dim " + std::to_string(r.values.size()) + ", expected " +
                          std::to_string(d));
    ++rep.fetches;
    rep.last_version = r.version;
    return ParamVector(r.values);
  };
  auto push = [&](const ParamVector& v, bool grad, std::size_t step) -> bool {
    const WireMessage r =
        link.request(grad ? make_push_grad(v.raw()) : make_push_elastic(v.raw()), step);
    if (r.type == MsgType::shutdown) return false;
    detail::expect_type(r, MsgType::ack);
    ++rep.pushes;
    rep.last_version = r.version;
    return true;
  };

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    double loss = 0.0;
    bool stop = false;
    try {
      switch (cfg.algorithm) {
        case Algorithm::easgd_async:
        case Algorithm::eamsgd: {
          std::optional<ParamVector> snap;
          if (is_comm_step(rep.state, cfg.hp)) {
            snap = fetch(step);
            if (!snap) {
              stop = true;
              break;
            }
          }
          AsyncStep s = cfg.algorithm == Algorithm::eamsgd
                            ? eamsgd_worker_step(std::move(rep.state), snap, oracle, cfg.hp)
                            : easgd_async_worker_step(std::move(rep.state), snap, oracle, cfg.hp);
          rep.state = std::move(s.state);
          loss = s.loss;
          if (s.elastic_update && cfg.hp.alpha() != 0.0 && !push(*s.elastic_update, false, step))
            stop = true;
          break;
        }
        case Algorithm::downpour: {
          DownpourStep s = downpour_worker_step(std::move(rep.state), std::move(acc), oracle, cfg.hp);
          rep.state = std::move(s.state);
          acc = std::move(s.accumulated);
          loss = s.loss;
          if (s.push) {
            if (!push(*s.push, true, step)) {
              stop = true;
              break;
            }
            auto c = fetch(step);
            if (!c) {
              stop = true;
              break;
            }
            rep.state = downpour_fetch(std::move(rep.state), *c);
          }
          break;
        }
        default: break;
      }
    } catch (const NumericsError& e) {
      throw DivergedError(std::string("worker ") + std::to_string(opt.worker_id) + ": " + e.what(),
                          step);
    }
    if (stop) {
      rep.stopped_by_center = true;
      break;
    }
    rep.steps_done = step + 1;
    if (elastic::detail::exceeds(rep.state.x))
      throw DivergedError("worker state magnitude exceeded 1e12", step);
    if (opt.metrics_every > 0 && rep.steps_done % opt.metrics_every == 0) {
      MetricsRow row;
      row.wall_clock_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      row.sim_time = static_cast<double>(rep.steps_done);
      row.center_version = rep.last_version;
      row.worker_id = static_cast<long>(opt.worker_id);
      row.objective = loss;
      rep.metrics.push_back(row);
    }
  }
  return rep;
}

// Sends SHUTDOWN and waits for the echo.
inline void send_shutdown(const Endpoint& center) {
  Fd fd = connect_tcp(center);
  send_message(fd.get(), make_shutdown());
  (void)recv_message(fd.get());
}

}  // namespace elastic::net
