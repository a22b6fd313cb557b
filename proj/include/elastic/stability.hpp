#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "elastic/algorithms.hpp"
#include "elastic/error.hpp"
#include "elastic/linalg.hpp"
#include "elastic/metrics.hpp"
#include "elastic/problems.hpp"
#include "elastic/spectral.hpp"

namespace elastic {

// Linear round maps on f(x) = h x^2 / 2 (b = 0).
enum class MapAlgorithm { easgd_sync, easgd_rr, admm_rr, sgd, msgd };

inline std::string_view to_string(MapAlgorithm a) {
  switch (a) {
    case MapAlgorithm::easgd_sync: return "easgd_sync";
    case MapAlgorithm::easgd_rr: return "easgd_rr";
    case MapAlgorithm::admm_rr: return "admm_rr";
    case MapAlgorithm::sgd: return "sgd";
    case MapAlgorithm::msgd: return "msgd";
  }
  return "?";
}

// State layout:
//   easgd_*: (x_1..x_p, x~)            p+1
//   admm_rr: (x_1..x_p, l_1..l_p, x~)  2p+1
//   msgd:    (x, v)                    2
//   sgd:     (x)                       1
// One round is one communication period: every worker acts tau times.
struct RoundMapSpec {
  MapAlgorithm algorithm = MapAlgorithm::easgd_rr;
  std::size_t p = 1;
  double h = 1.0;
  double eta = 0.1;
  double rho = 1.0;
  double delta = 0.0;
  std::size_t tau = 1;
  CommOrder comm_order = CommOrder::before;
  AdmmVariant admm_variant = AdmmVariant::exact;

  double alpha() const { return eta * rho; }

  std::size_t state_dim() const {
    switch (algorithm) {
      case MapAlgorithm::easgd_sync:
      case MapAlgorithm::easgd_rr: return p + 1;
      case MapAlgorithm::admm_rr: return 2 * p + 1;
      case MapAlgorithm::msgd: return 2;
      case MapAlgorithm::sgd: return 1;
    }
    return 0;
  }

  void validate() const {
    if (p < 1) throw ConfigError("round map: p must be >= 1");
    if (!(h > 0.0) || !std::isfinite(h)) throw ConfigError("round map: h must be > 0");
    if (!(eta >= 0.0) || !std::isfinite(eta)) throw ConfigError("round map: eta must be >= 0");
    if (!(rho >= 0.0) || !std::isfinite(rho)) throw ConfigError("round map: rho must be >= 0");
    if (!(delta >= 0.0 && delta < 1.0)) throw ConfigError("round map: delta must be in [0, 1)");
    if (tau < 1) throw ConfigError("round map: tau must be >= 1");
    if ((algorithm == MapAlgorithm::sgd || algorithm == MapAlgorithm::msgd) && p != 1)
      throw ConfigError("round map: sgd and msgd maps are single-worker (p = 1)");
  }
};

namespace detail {

// state <- E state, then independent noise sigma * xi_k along each direction.
struct MapOp {
  DenseMatrix e;
  std::vector<ParamVector> noise;  // per unit sigma
};

inline MapOp identity_op(std::size_t n) { return {DenseMatrix::identity(n), {}}; }

inline ParamVector unit(std::size_t n, std::size_t k, double scale) {
  ParamVector v(n);
  v[k] = scale;
  return v;
}

// gradient step of worker i only
inline MapOp grad_op(const RoundMapSpec& s, std::size_t i) {
  const std::size_t n = s.state_dim();
  MapOp op = identity_op(n);
  op.e(i, i) = 1.0 - s.eta * s.h;
  op.noise.push_back(unit(n, i, -s.eta));
  return op;
}

inline MapOp grad_all_op(const RoundMapSpec& s) {
  const std::size_t n = s.state_dim();
  MapOp op = identity_op(n);
  for (std::size_t i = 0; i < s.p; ++i) {
    op.e(i, i) = 1.0 - s.eta * s.h;
    op.noise.push_back(unit(n, i, -s.eta));
  }
  return op;
}

// elastic exchange of worker i with the center
inline MapOp exchange_op(const RoundMapSpec& s, std::size_t i) {
  const std::size_t n = s.state_dim(), c = s.p;
  const double a = s.alpha();
  MapOp op = identity_op(n);
  op.e(i, i) = 1.0 - a;
  op.e(i, c) = a;
  op.e(c, i) = a;
  op.e(c, c) = 1.0 - a;
  return op;
}

inline MapOp sync_round_op(const RoundMapSpec& s) {
  const std::size_t n = s.state_dim(), c = s.p;
  const double a = s.alpha();
  MapOp op{DenseMatrix(n, n), {}};
  for (std::size_t i = 0; i < s.p; ++i) {
    op.e(i, i) = 1.0 - s.eta * s.h - a;
    op.e(i, c) = a;
    op.e(c, i) = a;
    op.noise.push_back(unit(n, i, -s.eta));
  }
  op.e(c, c) = 1.0 - static_cast<double>(s.p) * a;
  return op;
}

inline std::vector<MapOp> admm_worker_ops(const RoundMapSpec& s, std::size_t i) {
  const std::size_t n = s.state_dim(), p = s.p, c = 2 * p, li = p + i;
  std::vector<MapOp> ops;
  MapOp dual = identity_op(n);  // l_i += x_i - x~
  dual.e(li, i) = 1.0;
  dual.e(li, c) = -1.0;
  ops.push_back(std::move(dual));

  MapOp primal = identity_op(n);
  if (s.admm_variant == AdmmVariant::exact) {
    const double denom = s.h + s.rho;
    if (denom == 0.0) throw NumericsError("round map: h + rho == 0");
    primal.e(i, i) = 0.0;
    primal.e(i, c) = s.rho / denom;
    primal.e(i, li) = -s.rho / denom;
  } else {
    primal.e(i, i) = 1.0 - s.eta * s.h - s.eta * s.rho;
    primal.e(i, c) = s.eta * s.rho;
    primal.e(i, li) = -s.eta * s.rho;
  }
  ops.push_back(std::move(primal));

  MapOp center = identity_op(n);  // x~ = mean(x_j + l_j)
  center.e(c, c) = 0.0;
  for (std::size_t j = 0; j < p; ++j) {
    center.e(c, j) = 1.0 / static_cast<double>(p);
    center.e(c, p + j) = 1.0 / static_cast<double>(p);
  }
  ops.push_back(std::move(center));
  return ops;
}

// Elementary operations of one round, in application order.
inline std::vector<MapOp> round_ops(const RoundMapSpec& s) {
  s.validate();
  std::vector<MapOp> ops;
  switch (s.algorithm) {
    case MapAlgorithm::sgd: {
      ops.push_back(grad_op(s, 0));
      break;
    }
    case MapAlgorithm::msgd: {
      // Nesterov: v' = d(1-eta h) v - eta h x, x' = (1-eta h) x + d(1-eta h) v
      const double g = 1.0 - s.eta * s.h;
      MapOp op{DenseMatrix{{g, s.delta * g}, {-s.eta * s.h, s.delta * g}}, {}};
      op.noise.push_back(ParamVector{-s.eta, -s.eta});
      ops.push_back(std::move(op));
      break;
    }
    case MapAlgorithm::easgd_sync: {
      ops.push_back(sync_round_op(s));
      for (std::size_t k = 1; k < s.tau; ++k) ops.push_back(grad_all_op(s));
      break;
    }
    case MapAlgorithm::easgd_rr: {
      for (std::size_t i = 0; i < s.p; ++i) {
        if (s.comm_order == CommOrder::before) {
          ops.push_back(exchange_op(s, i));
          ops.push_back(grad_op(s, i));
        } else {
          ops.push_back(grad_op(s, i));
          ops.push_back(exchange_op(s, i));
        }
      }
      for (std::size_t k = 1; k < s.tau; ++k) ops.push_back(grad_all_op(s));
      break;
    }
    case MapAlgorithm::admm_rr: {
      for (std::size_t i = 0; i < s.p; ++i)
        for (auto& op : admm_worker_ops(s, i)) ops.push_back(std::move(op));
      break;
    }
  }
  return ops;
}

}  // namespace detail

// Matrix M with state_{k+1} = M state_k for one noiseless round.
inline DenseMatrix build_round_map(const RoundMapSpec& spec) {
  const auto ops = detail::round_ops(spec);
  DenseMatrix m = DenseMatrix::identity(spec.state_dim());
  for (const auto& op : ops) m = op.e * m;
  return m;
}

// Covariance injected by one round's gradient noise, propagated through the
// rest of the round.
inline DenseMatrix round_noise_covariance(const RoundMapSpec& spec, double sigma) {
  const auto ops = detail::round_ops(spec);
  const std::size_t n = spec.state_dim();
  DenseMatrix q(n, n);
  for (const auto& op : ops) {
    q = op.e * q * op.e.transposed();
    for (const auto& d : op.noise)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) q(i, j) += sigma * sigma * d[i] * d[j];
  }
  return q;
}

// Diagonal of the stationary covariance of the stacked state.
inline std::vector<double> stationary_variance(const RoundMapSpec& spec, double sigma) {
  if (spec.algorithm == MapAlgorithm::admm_rr)
    throw ConfigError("stationary_variance: no noise model for admm_rr");
  if (!(sigma >= 0.0) || !std::isfinite(sigma))
    throw ConfigError("stationary_variance: sigma must be >= 0");
  const DenseMatrix m = build_round_map(spec);
  const DenseMatrix sig = lyapunov_stationary(m, round_noise_covariance(spec, sigma));
  std::vector<double> out(spec.state_dim());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sig(i, i);
  return out;
}

// Empirical per-coordinate variance from running the actual worker kernels on
// a scalar noisy quadratic for `rounds` rounds after `burn_in` rounds.
inline std::vector<double> empirical_variance(const RoundMapSpec& spec, double sigma,
                                              std::size_t rounds, std::size_t burn_in,
                                              std::uint64_t seed) {
  if (spec.algorithm == MapAlgorithm::admm_rr)
    throw ConfigError("empirical_variance: no noise model for admm_rr");
  spec.validate();
  const QuadraticProblem prob = QuadraticProblem::scalar(spec.h, sigma);
  HyperParams hp;
  hp.eta = spec.eta;
  hp.rho = spec.rho;
  hp.tau = spec.tau;
  hp.p = spec.p;
  hp.delta = spec.delta;
  hp.comm_order = spec.comm_order;

  std::vector<WorkerState> ws;
  for (std::size_t i = 0; i < spec.p; ++i) {
    DataShard sh;
    sh.worker = i;
    ws.push_back(WorkerState::start(ParamVector{0.0}, sh, Rng::substream(seed, i), 1));
  }
  CenterState center{ParamVector{0.0}, 0};

  const std::size_t n = spec.state_dim();
  std::vector<double> mean(n, 0.0), m2(n, 0.0);
  std::vector<double> state(n);
  std::size_t count = 0;

  for (std::size_t r = 0; r < burn_in + rounds; ++r) {
    switch (spec.algorithm) {
      case MapAlgorithm::sgd:
        ws[0] = sgd_worker_step(std::move(ws[0]), prob, hp.eta).state;
        break;
      case MapAlgorithm::msgd:
        ws[0] = msgd_step(std::move(ws[0]), prob, hp.eta, hp.delta).state;
        break;
      case MapAlgorithm::easgd_sync:
        for (std::size_t k = 0; k < spec.tau; ++k) {
          if (k == 0) {
            auto rr = easgd_sync_round(std::move(ws), std::move(center), prob, hp);
            ws = std::move(rr.workers);
            center = std::move(rr.center);
          } else {
            for (auto& w : ws) w = sgd_worker_step(std::move(w), prob, hp.eta).state;
          }
        }
        break;
      case MapAlgorithm::easgd_rr:
        for (std::size_t k = 0; k < spec.tau; ++k)
          for (auto& w : ws) {
            std::optional<ParamVector> snap;
            if (is_comm_step(w, hp)) snap = center.x_tilde;
            auto s = easgd_async_worker_step(std::move(w), snap, prob, hp);
            w = std::move(s.state);
            if (s.elastic_update) center = center_apply_elastic(std::move(center), *s.elastic_update);
          }
        break;
      case MapAlgorithm::admm_rr: break;
    }
    if (spec.algorithm == MapAlgorithm::msgd) {
      state[0] = ws[0].x[0];
      state[1] = ws[0].v[0];
    } else {
      for (std::size_t i = 0; i < spec.p; ++i) state[i] = ws[i].x[0];
      if (n > spec.p) state[spec.p] = center.x_tilde[0];
    }
    if (r < burn_in) continue;
    ++count;  // Welford
    for (std::size_t k = 0; k < n; ++k) {
      const double d = state[k] - mean[k];
      mean[k] += d / static_cast<double>(count);
      m2[k] += d * (state[k] - mean[k]);
    }
  }
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = count > 1 ? m2[k] / static_cast<double>(count - 1) : 0.0;
  return out;
}

inline constexpr double kStableMargin = 1e-10;

inline bool is_stable(double radius) { return radius < 1.0 - kStableMargin; }

struct GridAxes {
  std::vector<double> eta_h;
  std::vector<double> alpha;
};

// lo, lo+step, ..., hi with values rounded to 12 decimals so that grid
// coordinates print cleanly.
inline std::vector<double> axis_range(double lo, double hi, double step) {
  if (!(step > 0.0) || hi < lo) throw ConfigError("axis_range: need step > 0 and hi >= lo");
  const auto n = static_cast<std::size_t>(std::llround((hi - lo) / step)) + 1;
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i)
    v[i] = std::round((lo + static_cast<double>(i) * step) * 1e12) / 1e12;
  return v;
}

struct StabilityCell {
  double eta_h = 0.0;
  double alpha = 0.0;
  double radius = 0.0;
  bool stable() const { return is_stable(radius); }
};

struct StabilityGrid {
  MapAlgorithm algorithm = MapAlgorithm::easgd_rr;
  std::size_t p = 1;
  GridAxes axes;
  std::vector<StabilityCell> cells;  // row-major: eta_h outer, alpha inner

  const StabilityCell& at(std::size_t i_eta, std::size_t i_alpha) const {
    return cells.at(i_eta * axes.alpha.size() + i_alpha);
  }
};

// Options that are not grid coordinates.
struct ScanOptions {
  double delta = 0.0;
  std::size_t tau = 1;
  CommOrder comm_order = CommOrder::before;
  AdmmVariant admm_variant = AdmmVariant::exact;
};

inline RoundMapSpec cell_spec(MapAlgorithm alg, std::size_t p, double eta_h, double alpha,
                              const ScanOptions& opt) {
  RoundMapSpec s;
  s.algorithm = alg;
  s.p = p;
  s.h = 1.0;
  s.eta = eta_h;
  s.rho = eta_h > 0.0 ? alpha / eta_h : 0.0;
  s.delta = opt.delta;
  s.tau = opt.tau;
  s.comm_order = opt.comm_order;
  s.admm_variant = opt.admm_variant;
  return s;
}

inline StabilityGrid scan_stability(MapAlgorithm alg, std::size_t p, const GridAxes& axes,
                                    const ScanOptions& opt = {}) {
  if (axes.eta_h.empty() || axes.alpha.empty()) throw ConfigError("scan_stability: empty axis");
  StabilityGrid g{alg, p, axes, {}};
  g.cells.reserve(axes.eta_h.size() * axes.alpha.size());
  for (double eh : axes.eta_h)
    for (double a : axes.alpha) {
      double r = 0.0;
      try {
        r = spectral_radius(build_round_map(cell_spec(alg, p, eh, a, opt)));
      } catch (const NumericsError& e) {
        throw NumericsError(std::string(e.what()) + " at eta_h=" + format_double(eh) +
                            ", alpha=" + format_double(a));
      }
      g.cells.push_back({eh, a, r});
    }
  return g;
}

inline constexpr const char* kGridHeader = "eta_h,alpha,radius,stable";

inline void write_grid_csv(std::ostream& out, const StabilityGrid& g) {
  out << kGridHeader << '\n';
  for (const auto& c : g.cells)
    out << format_double(c.eta_h) << ',' << format_double(c.alpha) << ','
        << format_double(c.radius) << ',' << (c.stable() ? 1 : 0) << '\n';
}

struct ComparisonCell {
  double eta_h = 0.0;
  double alpha = 0.0;
  double easgd_radius = 0.0;
  double admm_radius = 0.0;
};

struct ComparisonReport {
  std::size_t p = 1;
  AdmmVariant admm_variant = AdmmVariant::exact;
  std::size_t cells_scanned = 0;
  std::vector<ComparisonCell> differing;  // exactly one of the two stable
  std::size_t admm_unstable_easgd_stable = 0;  // admm radius > 1, easgd stable
  std::size_t easgd_unstable_admm_stable = 0;
  double max_easgd_radius = 0.0;
  double max_admm_radius = 0.0;

  bool found_admm_unstable_easgd_stable() const { return admm_unstable_easgd_stable > 0; }
};

// Round-robin EASGD against round-robin ADMM over the same grid.
inline ComparisonReport compare_easgd_admm(std::size_t p, const GridAxes& axes,
                                           const ScanOptions& opt = {}) {
  const StabilityGrid e = scan_stability(MapAlgorithm::easgd_rr, p, axes, opt);
  const StabilityGrid a = scan_stability(MapAlgorithm::admm_rr, p, axes, opt);
  ComparisonReport rep;
  rep.p = p;
  rep.admm_variant = opt.admm_variant;
  rep.cells_scanned = e.cells.size();
  for (std::size_t k = 0; k < e.cells.size(); ++k) {
    const auto& ce = e.cells[k];
    const auto& ca = a.cells[k];
    rep.max_easgd_radius = std::max(rep.max_easgd_radius, ce.radius);
    rep.max_admm_radius = std::max(rep.max_admm_radius, ca.radius);
    if (ce.stable() != ca.stable())
      rep.differing.push_back({ce.eta_h, ce.alpha, ce.radius, ca.radius});
    if (ce.stable() && ca.radius > 1.0) ++rep.admm_unstable_easgd_stable;
    if (ca.stable() && !ce.stable()) ++rep.easgd_unstable_admm_stable;
  }
  return rep;
}

inline void write_comparison_report(std::ostream& out, const ComparisonReport& r) {
  out << "# easgd_rr vs admm_rr (" << (r.admm_variant == AdmmVariant::exact ? "exact" : "linearized")
      << "), p=" << r.p << '\n';
  out << "# cells_scanned=" << r.cells_scanned << " differing=" << r.differing.size()
      << " admm_unstable_easgd_stable=" << r.admm_unstable_easgd_stable
      << " easgd_unstable_admm_stable=" << r.easgd_unstable_admm_stable << '\n';
  out << "# max_easgd_radius=" << format_double(r.max_easgd_radius)
      << " max_admm_radius=" << format_double(r.max_admm_radius) << '\n';
  out << "eta_h,alpha,easgd_radius,admm_radius\n";
  for (const auto& c : r.differing)
    out << format_double(c.eta_h) << ',' << format_double(c.alpha) << ','
        << format_double(c.easgd_radius) << ',' << format_double(c.admm_radius) << '\n';
}

}  // namespace elastic
