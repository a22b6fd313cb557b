#pragma once

#include <sys/socket.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <thread>
#include <vector>

#include "elastic/algorithms.hpp"
#include "elastic/log.hpp"
#include "elastic/metrics.hpp"
#include "elastic/net/socket.hpp"
#include "elastic/net/wire.hpp"

namespace elastic::net {

struct CenterOptions {
  Endpoint bind{"127.0.0.1", 0};
  ParamVector initial;  // defines dim
  // Full-data objective for metrics rows and the threshold check; optional.
  std::shared_ptr<const GradientOracle> objective;
  std::size_t cadence = 1;  // metrics row every `cadence` versions (0: start/end only)
  std::optional<double> threshold;
  std::size_t poll_every = 1;  // threshold check every `poll_every` versions
  std::size_t stop_after_workers = 0;  // stop after this many clean disconnects (0: never)
  std::optional<double> budget_s;  // wall-clock limit, measured from the first message
  double drain_grace_s = 5.0;  // after threshold or budget, wait this long for workers to leave
};

struct CenterReport {
  CenterState center;
  std::vector<MetricsRow> metrics;
  std::optional<double> time_to_threshold;
  std::optional<std::uint64_t> version_at_threshold;
  bool timed_out = false;
  std::size_t fetches = 0;
  std::size_t elastic_pushes = 0;
  std::size_t grad_pushes = 0;
  std::size_t clean_disconnects = 0;
};

// Owns x~. One thread per connection; every mutation goes through the single
// applier thread in arrival order. Reads (FETCH) take a consistent snapshot
// under the same lock.
class CenterServer {
 public:
  explicit CenterServer(CenterOptions opt) : opt_(std::move(opt)) {
    if (opt_.initial.dim() < 1) throw ConfigError("center: dim must be >= 1");
    if (opt_.objective && opt_.objective->dim() != opt_.initial.dim())
      throw ConfigError("center: objective dimension differs from dim");
    if (opt_.poll_every < 1) throw ConfigError("center: poll_every must be >= 1");
    listener_ = listen_tcp(opt_.bind);
    state_.x_tilde = opt_.initial;
  }

  CenterServer(const CenterServer&) = delete;
  CenterServer& operator=(const CenterServer&) = delete;

  std::uint16_t port() const { return listener_.port; }
  Endpoint endpoint() const { return {opt_.bind.host, listener_.port}; }

  // Thread-safe; makes serve() return soon.
  void request_stop() { stop_.store(true); }

  // Blocks until SHUTDOWN, request_stop(), enough clean disconnects, or the
  // end of draining after threshold/budget.
  CenterReport serve() {
    start_ = Clock::now();
    {
      std::lock_guard lk(state_mu_);
      emit_row_locked();
    }
    std::thread applier([this] { apply_loop(); });
    std::vector<std::thread> sessions;

    while (!should_stop()) {
      pollfd pfd{listener_.fd.get(), POLLIN, 0};
      if (::poll(&pfd, 1, 20) <= 0) continue;
      const int c = ::accept4(listener_.fd.get(), nullptr, nullptr, SOCK_CLOEXEC);
      if (c < 0) continue;
      set_nodelay(c);
      {
        std::lock_guard lk(conn_mu_);
        open_.insert(c);
      }
      ++active_;
      sessions.emplace_back([this, c] { session(c); });
    }

    {
      std::lock_guard lk(conn_mu_);
      for (int c : open_) ::shutdown(c, SHUT_RDWR);
    }
    for (auto& t : sessions) t.join();
    {
      std::lock_guard lk(queue_mu_);
      applier_done_ = true;
    }
    queue_cv_.notify_all();
    applier.join();

    std::lock_guard lk(state_mu_);
    if (report_.metrics.empty() || report_.metrics.back().center_version != state_.version)
      emit_row_locked();
    report_.center = state_;
    report_.timed_out = timed_out_.load();
    report_.clean_disconnects = clean_disconnects_.load();
    return report_;
  }

 private:
  using Clock = std::chrono::steady_clock;

  struct Job {
    std::vector<double> delta;
    bool grad = false;
    std::promise<std::uint64_t> done;
  };

  double elapsed() const {
    const auto t0 = first_msg_ns_.load();
    if (t0 < 0) return 0.0;
    const auto now = std::chrono::duration_cast<std::chrono::nanoseconds>(
                         Clock::now() - start_).count();
    return static_cast<double>(now - t0) * 1e-9;
  }

  void mark_first_message() {
    std::int64_t expect = -1;
    const auto now =
        std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - start_).count();
    first_msg_ns_.compare_exchange_strong(expect, now);
  }

  bool should_stop() {
    if (stop_.load()) return true;
    if (opt_.stop_after_workers > 0 && clean_disconnects_.load() >= opt_.stop_after_workers)
      return true;
    if (opt_.budget_s && !draining_.load() && first_msg_ns_.load() >= 0 &&
        elapsed() > *opt_.budget_s) {
      timed_out_.store(true);
      start_draining();
    }
    if (draining_.load()) {
      if (active_.load() == 0) return true;
      const auto since = Clock::now().time_since_epoch().count() - drain_start_.load();
      if (static_cast<double>(since) * Clock::period::num / Clock::period::den > opt_.drain_grace_s)
        return true;
    }
    return false;
  }

  void start_draining() {
    if (draining_.load()) return;
    drain_start_.store(Clock::now().time_since_epoch().count());  // before the flag
    draining_.store(true);
  }

  void emit_row_locked() {
    MetricsRow row;
    row.wall_clock_s = elapsed();
    row.sim_time = row.wall_clock_s;
    row.center_version = state_.version;
    row.worker_id = -1;
    if (opt_.objective) {
      row.objective = opt_.objective->exact_loss(state_.x_tilde);
      if (auto xs = opt_.objective->minimizer()) row.dist_to_opt = distance(state_.x_tilde, *xs);
    } else {
      row.objective = std::nan("");
    }
    report_.metrics.push_back(row);
  }

  void apply_loop() {
    for (;;) {
      std::unique_ptr<Job> job;
      {
        std::unique_lock lk(queue_mu_);
        queue_cv_.wait(lk, [this] { return applier_done_ || !queue_.empty(); });
        if (queue_.empty()) return;
        job = std::move(queue_.front());
        queue_.pop_front();
      }
      try {
        std::lock_guard lk(state_mu_);
        state_ = center_apply_elastic(std::move(state_), ParamVector(std::move(job->delta)));
        if (job->grad) {
          ++report_.grad_pushes;
        } else {
          ++report_.elastic_pushes;
        }
        const std::uint64_t v = state_.version;
        if (opt_.cadence > 0 && v % opt_.cadence == 0) emit_row_locked();
        if (opt_.threshold && !report_.time_to_threshold && opt_.objective &&
            v % opt_.poll_every == 0 && opt_.objective->exact_loss(state_.x_tilde) <= *opt_.threshold) {
          report_.time_to_threshold = elapsed();
          report_.version_at_threshold = v;
          log::info("center: threshold reached at version " + std::to_string(v));
          start_draining();
        }
        job->done.set_value(v);
      } catch (...) {
        job->done.set_exception(std::current_exception());
      }
    }
  }

  std::uint64_t submit(std::vector<double> delta, bool grad) {
    auto job = std::make_unique<Job>();
    job->delta = std::move(delta);
    job->grad = grad;
    auto fut = job->done.get_future();
    {
      std::lock_guard lk(queue_mu_);
      queue_.push_back(std::move(job));
    }
    queue_cv_.notify_one();
    return fut.get();
  }

  void session(int c) {
    bool clean = false, spoke = false;
    try {
      for (;;) {
        auto msg = recv_message(c);
        if (!msg) {
          clean = spoke;
          break;
        }
        spoke = true;
        mark_first_message();
        if (msg->type == MsgType::shutdown) {
          stop_.store(true);
          send_message(c, make_shutdown());
          break;
        }
        if (draining_.load() &&
            (msg->type == MsgType::fetch || msg->type == MsgType::push_elastic ||
             msg->type == MsgType::push_grad)) {
          send_message(c, make_shutdown());
          continue;
        }
        switch (msg->type) {
          case MsgType::fetch: {
            WireMessage reply;
            {
              std::lock_guard lk(state_mu_);
              ++report_.fetches;
              reply = make_fetch_reply(state_.version, state_.x_tilde.raw());
            }
            send_message(c, reply);
            break;
          }
          case MsgType::push_elastic:
          case MsgType::push_grad: {
            if (msg->values.size() != opt_.initial.dim())
              throw ProtocolError("push of dim " + std::to_string(msg->values.size()) +
                                  ", center dim " + std::to_string(opt_.initial.dim()));
            const auto v = submit(std::move(msg->values), msg->type == MsgType::push_grad);
            send_message(c, make_ack(v));
            break;
          }
          default:
            throw ProtocolError(std::string("unexpected ") + std::string(to_string(msg->type)) +
                                " from worker");
        }
      }
    } catch (const ConnectionError& e) {
      log::debug(std::string("center: connection dropped: ") + e.what());
    } catch (const Error& e) {
      // malformed frame, bad dim, non-finite push
      log::warn(std::string("center: closing connection: ") + e.what());
      try {
        send_message(c, make_error(e.what()));
      } catch (const Error&) {
      }
    }
    if (clean) ++clean_disconnects_;
    {
      std::lock_guard lk(conn_mu_);
      open_.erase(c);
    }
    ::close(c);
    --active_;
  }

  CenterOptions opt_;
  Listener listener_;
  Clock::time_point start_{};
  std::atomic<Clock::rep> drain_start_{0};
  std::atomic<std::int64_t> first_msg_ns_{-1};

  std::mutex state_mu_;
  CenterState state_;
  CenterReport report_;

  std::mutex queue_mu_;
  std::condition_variable queue_cv_;
  std::deque<std::unique_ptr<Job>> queue_;
  bool applier_done_ = false;

  std::mutex conn_mu_;
  std::set<int> open_;
  std::atomic<int> active_{0};
  std::atomic<bool> stop_{false};
  std::atomic<bool> draining_{false};
  std::atomic<bool> timed_out_{false};
  std::atomic<std::size_t> clean_disconnects_{0};
};

}  // namespace elastic::net
