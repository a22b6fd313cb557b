#pragma once

#include <memory>
#include <vector>

#include "elastic/rng.hpp"
#include "elastic/sim.hpp"
#include "elastic/stability.hpp"

// Glue between round maps and the simulator: the simulator run whose state
// after `rounds` rounds is M^rounds z0.
namespace elastic {

// Simulator state stacked in round-map layout.
inline std::vector<double> stacked_state(const RoundMapSpec& s, const SimResult& r) {
  std::vector<double> out;
  switch (s.algorithm) {
    case MapAlgorithm::sgd: out = {r.workers[0].x[0]}; break;
    case MapAlgorithm::msgd: out = {r.workers[0].x[0], r.workers[0].v[0]}; break;
    case MapAlgorithm::easgd_sync:
    case MapAlgorithm::easgd_rr:
      for (const auto& w : r.workers) out.push_back(w.x[0]);
      out.push_back(r.center.x_tilde[0]);
      break;
    case MapAlgorithm::admm_rr:
      for (const auto& a : r.admm) out.push_back(a.x[0]);
      for (const auto& a : r.admm) out.push_back(a.lambda[0]);
      out.push_back(r.center.x_tilde[0]);
      break;
  }
  return out;
}

inline SimConfig map_oracle_config(const RoundMapSpec& s, const std::vector<double>& z0, std::size_t rounds) {
  SimConfig c;
  c.problem = std::make_shared<QuadraticProblem>(QuadraticProblem::scalar(s.h, 0.0));
  c.hp.eta = s.eta;
  c.hp.rho = s.rho;
  c.hp.p = s.p;
  c.hp.tau = s.tau;
  c.hp.delta = s.delta;
  c.hp.comm_order = s.comm_order;
  c.admm_variant = s.admm_variant;
  c.schedule.kind = ScheduleKind::round_robin;
  c.steps = rounds;
  switch (s.algorithm) {
    case MapAlgorithm::sgd:
      c.algorithm = Algorithm::sgd;
      c.x0 = ParamVector{z0[0]};
      break;
    case MapAlgorithm::msgd:
      c.algorithm = Algorithm::msgd;
      c.x0 = ParamVector{z0[0]};
      c.initial_momentum = {ParamVector{z0[1]}};
      break;
    case MapAlgorithm::easgd_sync:
    case MapAlgorithm::easgd_rr:
      c.algorithm = s.algorithm == MapAlgorithm::easgd_sync ? Algorithm::easgd_sync
                                                            : Algorithm::easgd_async;
      if (s.algorithm == MapAlgorithm::easgd_sync) c.schedule.kind = ScheduleKind::sync;
      c.steps = rounds * s.tau;
      for (std::size_t i = 0; i < s.p; ++i) c.initial_workers.push_back(ParamVector{z0[i]});
      c.initial_center = ParamVector{z0[s.p]};
      break;
    case MapAlgorithm::admm_rr:
      c.algorithm = Algorithm::admm_rr;
      for (std::size_t i = 0; i < s.p; ++i) {
        c.initial_workers.push_back(ParamVector{z0[i]});
        c.initial_duals.push_back(ParamVector{z0[s.p + i]});
      }
      c.initial_center = ParamVector{z0[2 * s.p]};
      break;
  }
  return c;
}

inline RoundMapSpec random_stable_spec(MapAlgorithm a, Rng& rng) {
  for (;;) {
    RoundMapSpec s;
    s.algorithm = a;
    s.p = (a == MapAlgorithm::sgd || a == MapAlgorithm::msgd) ? 1 : 1 + rng.below(4);
    s.h = rng.uniform(0.2, 3.0);
    s.eta = rng.uniform(0.01, 1.5) / s.h;
    const double alpha = rng.uniform(0.01, 0.95) / static_cast<double>(s.p);
    s.rho = alpha / s.eta;
    s.delta = a == MapAlgorithm::msgd ? rng.uniform(0.0, 0.9) : 0.0;
    s.tau = (a == MapAlgorithm::easgd_sync || a == MapAlgorithm::easgd_rr) ? 1 + rng.below(3) : 1;
    s.comm_order = rng.below(2) ? CommOrder::before : CommOrder::after;
    s.admm_variant = rng.below(2) ? AdmmVariant::exact : AdmmVariant::linearized;
    if (spectral_radius(build_round_map(s)) < 1.0) return s;
  }
}

// Max |sim - M^k z0| over k = 1..rounds for a random start.
inline double map_oracle_gap(const RoundMapSpec& s, Rng& rng, std::size_t rounds) {
  const DenseMatrix m = build_round_map(s);
  ParamVector z(s.state_dim());
  for (auto& v : z) v = rng.normal();
  const std::vector<double> z0(z.begin(), z.end());
  double gap = 0.0;
  for (std::size_t k = 1; k <= rounds; ++k) {
    z = m * z;
    const auto got = stacked_state(s, run_sim(map_oracle_config(s, z0, k)));
    for (std::size_t j = 0; j < z.dim(); ++j) gap = std::max(gap, std::abs(got[j] - z[j]));
  }
  return gap;
}

}  // namespace elastic
