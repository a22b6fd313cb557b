#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>

#include "elastic/error.hpp"
#include "elastic/linalg.hpp"
#include "elastic/rng.hpp"

namespace elastic {

struct Evaluation {
  double loss = 0.0;
  ParamVector grad;
};

// Stochastic gradient source. eval() is deterministic given (x, minibatch,
// noise stream state); a null noise stream means "no injected noise", which
// is what finite-difference checks use. An empty minibatch selects the full
// dataset.
class GradientOracle {
 public:
  virtual ~GradientOracle() = default;

  virtual std::size_t dim() const = 0;
  virtual Evaluation eval(const ParamVector& x, std::span<const std::size_t> minibatch,
                          Rng* noise) const = 0;
  // Full-data objective.
  virtual double exact_loss(const ParamVector& x) const {
    return eval(x, {}, nullptr).loss;
  }
  // Number of samples available for sharding; 0 for data-free objectives.
  virtual std::size_t num_samples() const { return 0; }
  // Known minimizer, if any.
  virtual std::optional<ParamVector> minimizer() const { return std::nullopt; }
};

inline constexpr double kDefaultFiniteDiffStep = 1e-5;

// Central differences (f(x + h e_j) - f(x - h e_j)) / 2h on the noiseless loss.
inline ParamVector finite_diff_grad(const GradientOracle& oracle, const ParamVector& x,
                                    std::span<const std::size_t> minibatch,
                                    double h = kDefaultFiniteDiffStep) {
  if (!(h > 0.0)) throw NumericsError("finite_diff_grad: step must be positive");
  detail::require_same_dim(oracle.dim(), x.dim(), "finite_diff_grad");
  ParamVector g(x.dim());
  ParamVector probe(x);
  for (std::size_t j = 0; j < x.dim(); ++j) {
    probe[j] = x[j] + h;
    const double up = oracle.eval(probe, minibatch, nullptr).loss;
    probe[j] = x[j] - h;
    const double down = oracle.eval(probe, minibatch, nullptr).loss;
    probe[j] = x[j];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericsError("finite_diff_grad: non-finite loss at coordinate " +
                          std::to_string(j));
    }
    g[j] = (up - down) / (2.0 * h);
  }
  return g;
}

// ||grad - fd||_inf / (1 + ||grad||_inf)
inline double gradient_check_error(const GradientOracle& oracle, const ParamVector& x,
                                   std::span<const std::size_t> minibatch,
                                   double h = kDefaultFiniteDiffStep) {
  const ParamVector analytic = oracle.eval(x, minibatch, nullptr).grad;
  const ParamVector numeric = finite_diff_grad(oracle, x, minibatch, h);
  return norm_inf(analytic - numeric) / (1.0 + norm_inf(analytic));
}

}  // namespace elastic
