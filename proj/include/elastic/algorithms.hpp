#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "elastic/error.hpp"
#include "elastic/gradient.hpp"
#include "elastic/linalg.hpp"
#include "elastic/log.hpp"
#include "elastic/problems.hpp"
#include "elastic/rng.hpp"

namespace elastic {

// Where the elastic exchange sits inside a communication iteration.
enum class CommOrder { before, after };

struct HyperParams {
  double eta = 0.01;   // learning rate
  double rho = 0.1;    // elastic penalty
  std::size_t tau = 1; // communication period
  std::size_t p = 1;   // worker count
  double delta = 0.0;  // momentum
  CommOrder comm_order = CommOrder::before;

  double alpha() const noexcept { return eta * rho; }
  double beta() const noexcept { return static_cast<double>(p) * alpha(); }

  // Throws ConfigError on invalid values. beta >= 1 is only warned about:
  // the center is then no longer a moving average, but such settings are
  // legitimate inputs for divergence studies.
  void validate() const {
    if (!(eta > 0.0) || !std::isfinite(eta)) throw ConfigError("eta must be > 0");
    if (!(rho >= 0.0) || !std::isfinite(rho)) throw ConfigError("rho must be >= 0");
    if (tau < 1) throw ConfigError("tau must be >= 1");
    if (p < 1) throw ConfigError("p must be >= 1");
    if (!(delta >= 0.0 && delta < 1.0)) throw ConfigError("delta must be in [0, 1)");
    if (beta() >= 1.0)
      log::warn("beta = p*eta*rho = " + std::to_string(beta()) +
                " >= 1; the center update is not a moving average");
  }
};

struct WorkerState {
  ParamVector x;
  ParamVector v;  // momentum buffer
  std::size_t t = 0;
  DataShard shard;
  Rng rng;
  std::size_t batch_size = 1;

  static WorkerState start(ParamVector x0, DataShard shard, Rng rng,
                           std::size_t batch_size = 1) {
    WorkerState ws;
    ws.v = ParamVector(x0.dim());
    ws.x = std::move(x0);
    ws.shard = std::move(shard);
    ws.rng = rng;
    ws.batch_size = batch_size;
    return ws;
  }

  friend bool operator==(const WorkerState&, const WorkerState&) = default;
};

struct CenterState {
  ParamVector x_tilde;
  std::uint64_t version = 0;

  friend bool operator==(const CenterState&, const CenterState&) = default;
};

struct AdmmWorkerState {
  ParamVector x;
  ParamVector lambda;  // scaled dual

  friend bool operator==(const AdmmWorkerState&, const AdmmWorkerState&) = default;
};

// Draws the worker's minibatch and evaluates the stochastic gradient at `at`.
// Consumes the worker's stream: minibatch indices first, then noise.
inline Evaluation sample_gradient(const GradientOracle& oracle, WorkerState& ws,
                                  const ParamVector& at) {
  const auto batch = draw_minibatch(ws.shard, ws.batch_size, ws.rng);
  return oracle.eval(at, batch, &ws.rng);
}

// x - eta * grad
inline ParamVector sgd_step(const ParamVector& x, const ParamVector& grad, double eta) {
  detail::require_same_dim(x.dim(), grad.dim(), "sgd_step");
  x.check_finite("sgd_step x");
  grad.check_finite("sgd_step grad");
  ParamVector out(x);
  for (std::size_t i = 0; i < x.dim(); ++i) out[i] = x[i] - eta * grad[i];
  out.check_finite("sgd_step");
  return out;
}

struct StepResult {
  WorkerState state;
  double loss = 0.0;
};

// Plain SGD on the worker's own stochastic gradient; t advances by one.
inline StepResult sgd_worker_step(WorkerState ws, const GradientOracle& oracle, double eta) {
  const Evaluation ev = sample_gradient(oracle, ws, ws.x);
  ws.x = sgd_step(ws.x, ev.grad, eta);
  ++ws.t;
  return {std::move(ws), ev.loss};
}

namespace detail {

// Nesterov step in place: v = delta v - eta grad(x + delta v); x = x + v.
inline double nesterov_update(WorkerState& ws, const GradientOracle& oracle, double eta,
                              double delta) {
  ParamVector look(ws.x);
  for (std::size_t i = 0; i < look.dim(); ++i) look[i] = ws.x[i] + delta * ws.v[i];
  const Evaluation ev = sample_gradient(oracle, ws, look);
  for (std::size_t i = 0; i < ws.x.dim(); ++i) {
    ws.v[i] = delta * ws.v[i] - eta * ev.grad[i];
    ws.x[i] = ws.x[i] + ws.v[i];
  }
  ws.x.check_finite("momentum step");
  ws.v.check_finite("momentum buffer");
  return ev.loss;
}

inline void gradient_update(WorkerState& ws, const GradientOracle& oracle, double eta,
                            double& loss) {
  const Evaluation ev = sample_gradient(oracle, ws, ws.x);
  ws.x = sgd_step(ws.x, ev.grad, eta);
  loss = ev.loss;
}

}  // namespace detail

inline StepResult msgd_step(WorkerState ws, const GradientOracle& oracle, double eta,
                            double delta) {
  if (!(delta >= 0.0 && delta < 1.0)) throw ConfigError("msgd_step: delta must be in [0, 1)");
  detail::require_same_dim(ws.x.dim(), ws.v.dim(), "msgd_step");
  const double loss = detail::nesterov_update(ws, oracle, eta, delta);
  ++ws.t;
  return {std::move(ws), loss};
}

struct SyncRound {
  std::vector<WorkerState> workers;
  CenterState center;
};

// Center update in moving-average form: (1 - beta) x~ + beta * mean(x_i).
inline ParamVector center_moving_average(const ParamVector& x_tilde,
                                         const std::vector<ParamVector>& xs, double alpha) {
  const double p = static_cast<double>(xs.size());
  const double beta = p * alpha;
  ParamVector mean(x_tilde.dim());
  for (const auto& x : xs) {
    detail::require_same_dim(x.dim(), x_tilde.dim(), "center_moving_average");
    for (std::size_t k = 0; k < x.dim(); ++k) mean[k] += x[k];
  }
  ParamVector out(x_tilde);
  for (std::size_t k = 0; k < out.dim(); ++k)
    out[k] = (1.0 - beta) * x_tilde[k] + beta * (mean[k] / p);
  out.check_finite("center_moving_average");
  return out;
}

// Center update in sum-of-elastic-differences form: x~ + alpha sum(x_i - x~).
inline ParamVector center_elastic_sum(const ParamVector& x_tilde,
                                      const std::vector<ParamVector>& xs, double alpha) {
  ParamVector sum(x_tilde.dim());
  for (const auto& x : xs) {
    detail::require_same_dim(x.dim(), x_tilde.dim(), "center_elastic_sum");
    for (std::size_t k = 0; k < x.dim(); ++k) sum[k] += x[k] - x_tilde[k];
  }
  ParamVector out(x_tilde);
  for (std::size_t k = 0; k < out.dim(); ++k) out[k] = x_tilde[k] + alpha * sum[k];
  out.check_finite("center_elastic_sum");
  return out;
}

// One synchronous EASGD round. Every worker update reads the pre-round
// center and every center term reads the pre-round worker values:
//   x_i+ = x_i - eta g_i(x_i) - alpha (x_i - x~)
//   x~+  = x~ + alpha sum_i (x_i - x~)
// The center version advances by one per round.
inline SyncRound easgd_sync_round(std::vector<WorkerState> workers, CenterState center,
                                  const GradientOracle& oracle, const HyperParams& hp) {
  if (workers.size() != hp.p)
    throw ConfigError("easgd_sync_round: hp.p = " + std::to_string(hp.p) + " but " +
                      std::to_string(workers.size()) + " workers");
  const double alpha = hp.alpha();
  std::vector<ParamVector> pre;
  pre.reserve(workers.size());
  for (const auto& w : workers) {
    detail::require_same_dim(w.x.dim(), center.x_tilde.dim(), "easgd_sync_round");
    pre.push_back(w.x);
  }
  for (auto& w : workers) {
    const Evaluation ev = sample_gradient(oracle, w, w.x);
    ParamVector next(w.x);
    for (std::size_t k = 0; k < next.dim(); ++k)
      next[k] = w.x[k] - hp.eta * ev.grad[k] - alpha * (w.x[k] - center.x_tilde[k]);
    next.check_finite("easgd_sync_round worker");
    w.x = std::move(next);
    ++w.t;
  }
  center.x_tilde = center_elastic_sum(center.x_tilde, pre, alpha);
  ++center.version;
  return {std::move(workers), std::move(center)};
}

// True when the worker's next local iteration is a communication iteration.
inline bool is_comm_step(const WorkerState& ws, const HyperParams& hp) noexcept {
  return ws.t % hp.tau == 0;
}

struct AsyncStep {
  WorkerState state;
  std::optional<ParamVector> elastic_update;
  double loss = 0.0;
};

namespace detail {

inline void check_snapshot(const WorkerState& ws, const std::optional<ParamVector>& snapshot,
                           const HyperParams& hp, const char* who) {
  const bool due = is_comm_step(ws, hp);
  if (due && !snapshot)
    throw ProtocolError(std::string(who) + ": communication step " + std::to_string(ws.t) +
                        " without a center snapshot");
  if (!due && snapshot)
    throw ProtocolError(std::string(who) + ": center snapshot supplied at step " +
                        std::to_string(ws.t) + ", which is not a communication step");
  if (snapshot) require_same_dim(snapshot->dim(), ws.x.dim(), who);
}

// e = alpha (x - x~snapshot); x -= e. Returns e.
inline ParamVector elastic_exchange(WorkerState& ws, const ParamVector& snapshot,
                                    double alpha) {
  ParamVector e(ws.x.dim());
  for (std::size_t k = 0; k < e.dim(); ++k) e[k] = alpha * (ws.x[k] - snapshot[k]);
  for (std::size_t k = 0; k < e.dim(); ++k) ws.x[k] = ws.x[k] - e[k];
  ws.x.check_finite("elastic exchange");
  return e;
}

}  // namespace detail

// Asynchronous EASGD, worker side. A snapshot must be supplied exactly when
// tau divides ws.t. The returned elastic update is for the caller to deliver
// to the center (center_apply_elastic).
inline AsyncStep easgd_async_worker_step(WorkerState ws,
                                         const std::optional<ParamVector>& center_snapshot,
                                         const GradientOracle& oracle, const HyperParams& hp) {
  detail::check_snapshot(ws, center_snapshot, hp, "easgd_async_worker_step");
  AsyncStep out;
  if (hp.comm_order == CommOrder::before) {
    if (center_snapshot) out.elastic_update = detail::elastic_exchange(ws, *center_snapshot, hp.alpha());
    detail::gradient_update(ws, oracle, hp.eta, out.loss);
  } else {
    detail::gradient_update(ws, oracle, hp.eta, out.loss);
    if (center_snapshot) out.elastic_update = detail::elastic_exchange(ws, *center_snapshot, hp.alpha());
  }
  ++ws.t;
  out.state = std::move(ws);
  return out;
}

// x~ += e; version + 1. The owner of the center serializes calls.
inline CenterState center_apply_elastic(CenterState center, const ParamVector& e) {
  detail::require_same_dim(center.x_tilde.dim(), e.dim(), "center_apply_elastic");
  for (std::size_t k = 0; k < e.dim(); ++k) center.x_tilde[k] = center.x_tilde[k] + e[k];
  center.x_tilde.check_finite("center_apply_elastic");
  ++center.version;
  return center;
}

// EAMSGD: the asynchronous EASGD exchange (moving x only, never v) combined
// with the Nesterov momentum step of msgd_step.
inline AsyncStep eamsgd_worker_step(WorkerState ws,
                                    const std::optional<ParamVector>& center_snapshot,
                                    const GradientOracle& oracle, const HyperParams& hp) {
  detail::check_snapshot(ws, center_snapshot, hp, "eamsgd_worker_step");
  detail::require_same_dim(ws.x.dim(), ws.v.dim(), "eamsgd_worker_step");
  AsyncStep out;
  if (hp.comm_order == CommOrder::before) {
    if (center_snapshot) out.elastic_update = detail::elastic_exchange(ws, *center_snapshot, hp.alpha());
    out.loss = detail::nesterov_update(ws, oracle, hp.eta, hp.delta);
  } else {
    out.loss = detail::nesterov_update(ws, oracle, hp.eta, hp.delta);
    if (center_snapshot) out.elastic_update = detail::elastic_exchange(ws, *center_snapshot, hp.alpha());
  }
  ++ws.t;
  out.state = std::move(ws);
  return out;
}

struct DownpourStep {
  WorkerState state;
  ParamVector accumulated;
  std::optional<ParamVector> push;
  double loss = 0.0;
};

// DOWNPOUR worker: x -= eta g; acc -= eta g. After every tau-th local step the
// accumulated update is returned as `push`; the caller applies it to the
// center (x~ += push) and then calls downpour_fetch with the post-apply
// center. The returned accumulator is already reset when a push is emitted.
inline DownpourStep downpour_worker_step(WorkerState ws, ParamVector accumulated,
                                         const GradientOracle& oracle, const HyperParams& hp) {
  detail::require_same_dim(accumulated.dim(), ws.x.dim(), "downpour_worker_step");
  const Evaluation ev = sample_gradient(oracle, ws, ws.x);
  for (std::size_t k = 0; k < ws.x.dim(); ++k) {
    ws.x[k] = ws.x[k] - hp.eta * ev.grad[k];
    accumulated[k] = accumulated[k] - hp.eta * ev.grad[k];
  }
  ws.x.check_finite("downpour_worker_step");
  accumulated.check_finite("downpour accumulator");
  ++ws.t;
  DownpourStep out;
  out.loss = ev.loss;
  if (ws.t % hp.tau == 0) {
    out.push = std::move(accumulated);
    out.accumulated = ParamVector(ws.x.dim());
  } else {
    out.accumulated = std::move(accumulated);
  }
  out.state = std::move(ws);
  return out;
}

// Replace the worker's parameters with a freshly fetched center.
inline WorkerState downpour_fetch(WorkerState ws, const ParamVector& center) {
  detail::require_same_dim(center.dim(), ws.x.dim(), "downpour_fetch");
  ws.x = center;
  return ws;
}

enum class AdmmVariant {
  exact,       // x = argmin_z h z^2/2 - b z + rho/2 (z - x~ + lambda)^2
  linearized,  // one gradient step of size eta on that same objective
};

struct AdmmRound {
  std::vector<AdmmWorkerState> workers;
  ParamVector x_tilde;
};

// Round-robin consensus ADMM on the scalar quadratic h x^2/2 - b x, acting
// for the scheduled worker i:
//   lambda_i += x_i - x~
//   x_i = (b + rho (x~ - lambda_i)) / (h + rho)        (exact)
//   x_i -= eta (h x_i - b + rho (x_i - x~ + lambda_i)) (linearized)
//   x~ = mean_j (x_j + lambda_j)
inline AdmmRound admm_roundrobin_step(std::vector<AdmmWorkerState> workers, std::size_t i,
                                      ParamVector x_tilde, double h, double eta, double rho,
                                      AdmmVariant variant = AdmmVariant::exact,
                                      double b = 0.0) {
  if (i >= workers.size()) throw ConfigError("admm_roundrobin_step: worker index out of range");
  if (x_tilde.dim() != 1) throw DimensionError("admm_roundrobin_step: scalar case only");
  for (const auto& w : workers)
    if (w.x.dim() != 1 || w.lambda.dim() != 1)
      throw DimensionError("admm_roundrobin_step: scalar case only");
  auto& w = workers[i];
  w.lambda[0] = w.lambda[0] + (w.x[0] - x_tilde[0]);
  if (variant == AdmmVariant::exact) {
    if (h + rho == 0.0) throw NumericsError("admm_roundrobin_step: h + rho == 0");
    w.x[0] = (b + rho * (x_tilde[0] - w.lambda[0])) / (h + rho);
  } else {
    w.x[0] = w.x[0] - eta * (h * w.x[0] - b + rho * (w.x[0] - x_tilde[0] + w.lambda[0]));
  }
  double sum = 0.0;
  for (const auto& wj : workers) sum += wj.x[0] + wj.lambda[0];
  x_tilde[0] = sum / static_cast<double>(workers.size());
  w.x.check_finite("admm x");
  w.lambda.check_finite("admm lambda");
  x_tilde.check_finite("admm center");
  return {std::move(workers), std::move(x_tilde)};
}

}  // namespace elastic
