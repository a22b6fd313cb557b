#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "elastic/error.hpp"
#include "elastic/gradient.hpp"
#include "elastic/linalg.hpp"
#include "elastic/rng.hpp"

namespace elastic {

namespace detail {

// Solve A x = b by Gaussian elimination with partial pivoting. Returns
// nullopt for a (numerically) singular A.
inline std::optional<ParamVector> solve(const DenseMatrix& a, const ParamVector& b) {
  const std::size_t n = a.rows();
  DenseMatrix m(a);
  ParamVector x(b);
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(m(r, c)) > std::abs(m(piv, c))) piv = r;
    if (std::abs(m(piv, c)) < 1e-300) return std::nullopt;
    if (piv != c) {
      for (std::size_t j = 0; j < n; ++j) std::swap(m(c, j), m(piv, j));
      std::swap(x[c], x[piv]);
    }
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = m(r, c) / m(c, c);
      if (f == 0.0) continue;
      for (std::size_t j = c; j < n; ++j) m(r, j) -= f * m(c, j);
      x[r] -= f * x[c];
    }
  }
  for (std::size_t c = n; c-- > 0;) {
    double s = x[c];
    for (std::size_t j = c + 1; j < n; ++j) s -= m(c, j) * x[j];
    x[c] = s / m(c, c);
  }
  x.check_finite("solve");
  return x;
}

// Orthogonal matrix from modified Gram-Schmidt on a seeded Gaussian matrix.
inline DenseMatrix random_rotation(std::size_t n, Rng& rng) {
  DenseMatrix q(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) q(i, j) = rng.normal();
  // columns are the basis vectors
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t k = 0; k < c; ++k) {
      double proj = 0.0;
      for (std::size_t i = 0; i < n; ++i) proj += q(i, c) * q(i, k);
      for (std::size_t i = 0; i < n; ++i) q(i, c) -= proj * q(i, k);
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) norm += q(i, c) * q(i, c);
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < n; ++i) q(i, c) /= norm;
  }
  return q;
}

inline double log1p_exp(double z) {
  // log(1 + e^z) without overflow
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace detail

// f(x) = 1/2 x^T H x - b^T x, gradient H x - b + sigma * xi with xi drawn
// from the caller's noise stream (one standard normal per coordinate).
class QuadraticProblem final : public GradientOracle {
 public:
  QuadraticProblem(DenseMatrix h, ParamVector b, double noise_sigma)
      : h_(std::move(h)), b_(std::move(b)), sigma_(noise_sigma) {
    if (!h_.square()) throw DimensionError("QuadraticProblem: H not square");
    detail::require_same_dim(h_.rows(), b_.dim(), "QuadraticProblem");
    if (h_.rows() == 0) throw ConfigError("QuadraticProblem: dim must be >= 1");
    if (!(sigma_ >= 0.0) || !std::isfinite(sigma_))
      throw ConfigError("QuadraticProblem: noise_sigma must be >= 0");
    for (std::size_t i = 0; i < h_.rows(); ++i)
      for (std::size_t j = i + 1; j < h_.cols(); ++j)
        if (std::abs(h_(i, j) - h_(j, i)) > 1e-12)
          throw ConfigError("QuadraticProblem: H is not symmetric");
    x_star_ = detail::solve(h_, b_);
  }

  // The one-dimensional f(x) = h x^2 / 2 - b x.
  static QuadraticProblem scalar(double h, double noise_sigma, double b = 0.0) {
    return QuadraticProblem(DenseMatrix{{h}}, ParamVector{b}, noise_sigma);
  }

  std::size_t dim() const override { return b_.dim(); }

  Evaluation eval(const ParamVector& x, std::span<const std::size_t>,
                  Rng* noise) const override {
    detail::require_same_dim(x.dim(), dim(), "QuadraticProblem::eval");
    const ParamVector hx = h_ * x;
    Evaluation out{0.5 * dot(x, hx) - dot(b_, x), hx - b_};
    if (noise != nullptr && sigma_ > 0.0) {
      for (std::size_t i = 0; i < out.grad.dim(); ++i)
        out.grad[i] += sigma_ * noise->normal();
    }
    out.grad.check_finite("QuadraticProblem gradient");
    return out;
  }

  std::optional<ParamVector> minimizer() const override { return x_star_; }

  const DenseMatrix& curvature() const noexcept { return h_; }
  const ParamVector& linear_term() const noexcept { return b_; }
  double noise_sigma() const noexcept { return sigma_; }

 private:
  DenseMatrix h_;
  ParamVector b_;
  double sigma_;
  std::optional<ParamVector> x_star_;
};

// H = Q diag(lambda) Q^T with lambda_k = condition^(k / (dim - 1)) (evenly
// spaced in log between 1 and condition_number; a single eigenvalue 1 when
// dim == 1) and Q a seeded random rotation. b is standard normal.
inline QuadraticProblem make_quadratic(std::size_t dim, double condition_number,
                                       double noise_sigma, std::uint64_t seed) {
  if (dim == 0) throw ConfigError("make_quadratic: dim must be >= 1");
  if (!(condition_number >= 1.0))
    throw ConfigError("make_quadratic: condition_number must be >= 1");
  Rng rng(seed);
  const DenseMatrix q = detail::random_rotation(dim, rng);
  std::vector<double> lambda(dim, 1.0);
  for (std::size_t k = 1; k < dim; ++k)
    lambda[k] = std::pow(condition_number,
                         static_cast<double>(k) / static_cast<double>(dim - 1));
  if (dim > 1) lambda[dim - 1] = condition_number;
  DenseMatrix h(dim, dim);
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < dim; ++k) s += q(i, k) * lambda[k] * q(j, k);
      h(i, j) = s;
      h(j, i) = s;
    }
  ParamVector b(dim);
  for (std::size_t i = 0; i < dim; ++i) b[i] = rng.normal();
  return QuadraticProblem(std::move(h), std::move(b), noise_sigma);
}

// Labelled dense dataset; labels are +-1 for classification problems.
struct Dataset {
  DenseMatrix features;
  std::vector<double> labels;

  std::size_t size() const noexcept { return features.rows(); }
  std::size_t features_dim() const noexcept { return features.cols(); }
};

// n/2 samples labelled +1 around +separation*u, the rest labelled -1 around
// -separation*u, identity covariance; u = (1, ..., 1) / sqrt(d).
inline Dataset make_two_gaussians(std::size_t n, std::size_t d, double separation,
                                  std::uint64_t seed) {
  if (n < 2) throw ConfigError("make_two_gaussians: n must be >= 2");
  if (d < 1) throw ConfigError("make_two_gaussians: d must be >= 1");
  if (!std::isfinite(separation)) throw ConfigError("make_two_gaussians: separation");
  Rng rng(seed);
  const double u = 1.0 / std::sqrt(static_cast<double>(d));
  Dataset ds{DenseMatrix(n, d), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const double y = i < n / 2 ? 1.0 : -1.0;
    ds.labels[i] = y;
    for (std::size_t j = 0; j < d; ++j)
      ds.features(i, j) = y * separation * u + rng.normal();
  }
  return ds;
}

// Reads `f0,...,f{d-1},label`. Labels may be -1/+1 or 0/1 (0 maps to -1).
inline Dataset read_csv_dataset(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!s.empty() && s.back() == ',') cells.emplace_back();
    return cells;
  };
  auto strip = [](std::string s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
    std::size_t b = 0;
    while (b < s.size() && s[b] == ' ') ++b;
    return s.substr(b);
  };
  if (!std::getline(in, line)) throw ParseError("csv dataset: missing header", 1);
  ++lineno;
  const auto header = split(strip(line));
  if (header.size() < 2 || strip(header.back()) != "label")
    throw ParseError("csv dataset: header must end with 'label'", lineno);
  const std::size_t d = header.size() - 1;
  for (std::size_t j = 0; j < d; ++j)
    if (strip(header[j]) != "f" + std::to_string(j))
      throw ParseError("csv dataset: expected header column f" + std::to_string(j), lineno);

  std::vector<double> feats;
  std::vector<double> labels;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip(line);
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != d + 1)
      throw ParseError("csv dataset: expected " + std::to_string(d + 1) + " cells", lineno);
    for (std::size_t j = 0; j <= d; ++j) {
      const std::string cell = strip(cells[j]);
      double v = 0.0;
      std::size_t used = 0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (cell.empty() || used != cell.size() || !std::isfinite(v))
        throw ParseError("csv dataset: non-numeric cell '" + cell + "'", lineno);
      if (j < d) {
        feats.push_back(v);
      } else {
        if (v == 0.0 || v == -1.0) {
          labels.push_back(-1.0);
        } else if (v == 1.0) {
          labels.push_back(1.0);
        } else {
          throw ParseError("csv dataset: label must be -1, 0 or 1", lineno);
        }
      }
    }
  }
  if (labels.empty()) throw ParseError("csv dataset: no data rows", lineno);
  const std::size_t n = labels.size();
  return Dataset{DenseMatrix(n, d, std::move(feats)), std::move(labels)};
}

inline Dataset load_csv_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset '" + path + "'");
  return read_csv_dataset(in);
}

// Mean logistic loss log(1 + exp(-y w.a)) over the minibatch plus l2/2 |w|^2.
class LogisticProblem final : public GradientOracle {
 public:
  LogisticProblem(Dataset data, double l2) : data_(std::move(data)), l2_(l2) {
    if (data_.size() == 0) throw ConfigError("LogisticProblem: empty dataset");
    if (data_.labels.size() != data_.size())
      throw DimensionError("LogisticProblem: label count mismatch");
    if (!(l2 >= 0.0)) throw ConfigError("LogisticProblem: l2 must be >= 0");
  }

  std::size_t dim() const override { return data_.features_dim(); }
  std::size_t num_samples() const override { return data_.size(); }

  Evaluation eval(const ParamVector& w, std::span<const std::size_t> minibatch,
                  Rng*) const override {
    detail::require_same_dim(w.dim(), dim(), "LogisticProblem::eval");
    Evaluation out{0.0, ParamVector(dim())};
    const std::size_t count = minibatch.empty() ? data_.size() : minibatch.size();
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t i = minibatch.empty() ? k : minibatch[k];
      if (i >= data_.size()) throw DimensionError("LogisticProblem: sample index out of range");
      double margin = 0.0;
      for (std::size_t j = 0; j < dim(); ++j) margin += w[j] * data_.features(i, j);
      margin *= data_.labels[i];
      out.loss += detail::log1p_exp(-margin);
      const double coef = -data_.labels[i] * detail::sigmoid(-margin);
      for (std::size_t j = 0; j < dim(); ++j) out.grad[j] += coef * data_.features(i, j);
    }
    const double inv = 1.0 / static_cast<double>(count);
    out.loss *= inv;
    for (std::size_t j = 0; j < dim(); ++j) out.grad[j] = out.grad[j] * inv + l2_ * w[j];
    out.loss += 0.5 * l2_ * dot(w, w);
    out.grad.check_finite("LogisticProblem gradient");
    return out;
  }

  double accuracy(const ParamVector& w) const {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data_.size(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < dim(); ++j) s += w[j] * data_.features(i, j);
      if ((s >= 0.0 ? 1.0 : -1.0) == data_.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data_.size());
  }

  const Dataset& data() const noexcept { return data_; }

 private:
  Dataset data_;
  double l2_;
};

enum class MlpLoss { squared, logistic };

// d -> hidden (tanh) -> 1 network. Weights are flattened as
// [W1 (hidden x d, row-major), b1 (hidden), w2 (hidden), b2].
class TinyMlpProblem final : public GradientOracle {
 public:
  TinyMlpProblem(Dataset data, std::size_t hidden, MlpLoss loss)
      : data_(std::move(data)), hidden_(hidden), loss_(loss) {
    if (data_.size() == 0) throw ConfigError("TinyMlpProblem: empty dataset");
    if (hidden_ == 0) throw ConfigError("TinyMlpProblem: hidden must be >= 1");
  }

  std::size_t input_dim() const noexcept { return data_.features_dim(); }
  std::size_t hidden() const noexcept { return hidden_; }
  std::size_t dim() const override { return hidden_ * input_dim() + 2 * hidden_ + 1; }
  std::size_t num_samples() const override { return data_.size(); }

  // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer.
  ParamVector initial_weights(std::uint64_t seed) const {
    Rng rng(seed);
    ParamVector w(dim());
    const double a1 = 1.0 / std::sqrt(static_cast<double>(input_dim()));
    const double a2 = 1.0 / std::sqrt(static_cast<double>(hidden_));
    const std::size_t first = hidden_ * input_dim() + hidden_;
    for (std::size_t k = 0; k < first; ++k) w[k] = rng.uniform(-a1, a1);
    for (std::size_t k = first; k < dim(); ++k) w[k] = rng.uniform(-a2, a2);
    return w;
  }

  double predict(const ParamVector& w, std::size_t i) const {
    const std::size_t d = input_dim();
    const std::size_t b1 = hidden_ * d, w2 = b1 + hidden_, b2 = w2 + hidden_;
    double out = w[b2];
    for (std::size_t h = 0; h < hidden_; ++h) {
      double z = w[b1 + h];
      for (std::size_t j = 0; j < d; ++j) z += w[h * d + j] * data_.features(i, j);
      out += w[w2 + h] * std::tanh(z);
    }
    return out;
  }

  Evaluation eval(const ParamVector& w, std::span<const std::size_t> minibatch,
                  Rng*) const override {
    detail::require_same_dim(w.dim(), dim(), "TinyMlpProblem::eval");
    const std::size_t d = input_dim();
    const std::size_t b1 = hidden_ * d, w2 = b1 + hidden_, b2 = w2 + hidden_;
    Evaluation out{0.0, ParamVector(dim())};
    std::vector<double> act(hidden_);
    const std::size_t count = minibatch.empty() ? data_.size() : minibatch.size();
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t i = minibatch.empty() ? k : minibatch[k];
      if (i >= data_.size()) throw DimensionError("TinyMlpProblem: sample index out of range");
      double y_hat = w[b2];
      for (std::size_t h = 0; h < hidden_; ++h) {
        double z = w[b1 + h];
        for (std::size_t j = 0; j < d; ++j) z += w[h * d + j] * data_.features(i, j);
        act[h] = std::tanh(z);
        y_hat += w[w2 + h] * act[h];
      }
      const double y = data_.labels[i];
      double dout = 0.0;
      if (loss_ == MlpLoss::squared) {
        out.loss += 0.5 * (y_hat - y) * (y_hat - y);
        dout = y_hat - y;
      } else {
        out.loss += detail::log1p_exp(-y * y_hat);
        dout = -y * detail::sigmoid(-y * y_hat);
      }
      out.grad[b2] += dout;
      for (std::size_t h = 0; h < hidden_; ++h) {
        out.grad[w2 + h] += dout * act[h];
        const double dz = dout * w[w2 + h] * (1.0 - act[h] * act[h]);
        out.grad[b1 + h] += dz;
        for (std::size_t j = 0; j < d; ++j) out.grad[h * d + j] += dz * data_.features(i, j);
      }
    }
    const double inv = 1.0 / static_cast<double>(count);
    out.loss *= inv;
    for (std::size_t j = 0; j < dim(); ++j) out.grad[j] *= inv;
    out.grad.check_finite("TinyMlpProblem gradient");
    return out;
  }

 private:
  Dataset data_;
  std::size_t hidden_;
  MlpLoss loss_;
};

// Adds a fixed wall-clock cost to every gradient evaluation (stands in for an
// expensive model in speedup measurements). exact_loss is not slowed down.
class CostlyOracle final : public GradientOracle {
 public:
  CostlyOracle(std::shared_ptr<const GradientOracle> inner, std::chrono::microseconds cost)
      : inner_(std::move(inner)), cost_(cost) {}

  std::size_t dim() const override { return inner_->dim(); }
  std::size_t num_samples() const override { return inner_->num_samples(); }
  std::optional<ParamVector> minimizer() const override { return inner_->minimizer(); }
  double exact_loss(const ParamVector& x) const override { return inner_->exact_loss(x); }

  Evaluation eval(const ParamVector& x, std::span<const std::size_t> minibatch,
                  Rng* noise) const override {
    if (cost_.count() > 0) std::this_thread::sleep_for(cost_);
    return inner_->eval(x, minibatch, noise);
  }

 private:
  std::shared_ptr<const GradientOracle> inner_;
  std::chrono::microseconds cost_;
};

// Worker i's portion of the dataset; minibatches are drawn uniformly with
// replacement from `indices`.
struct DataShard {
  std::size_t worker = 0;
  std::vector<std::size_t> indices;

  friend bool operator==(const DataShard&, const DataShard&) = default;
};

// Seeded permutation of [0, n) cut into p contiguous blocks; the first n % p
// shards hold one extra sample.
inline std::vector<DataShard> shard(std::size_t n_samples, std::size_t p, std::uint64_t seed) {
  if (p < 1) throw ConfigError("shard: p must be >= 1");
  if (p > n_samples)
    throw ConfigError("shard: p (" + std::to_string(p) + ") exceeds n_samples (" +
                      std::to_string(n_samples) + ")");
  std::vector<std::size_t> perm(n_samples);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n_samples; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  std::vector<DataShard> out(p);
  const std::size_t base = n_samples / p, extra = n_samples % p;
  std::size_t pos = 0;
  for (std::size_t w = 0; w < p; ++w) {
    const std::size_t len = base + (w < extra ? 1 : 0);
    out[w].worker = w;
    out[w].indices.assign(perm.begin() + static_cast<std::ptrdiff_t>(pos),
                          perm.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return out;
}

// Empty shard or batch_size 0 yields an empty draw, which oracles read as
// "full data" (data-free objectives ignore it). batch_size 0 with a
// non-empty shard returns the whole shard.
inline std::vector<std::size_t> draw_minibatch(const DataShard& s, std::size_t batch_size,
                                               Rng& rng) {
  if (s.indices.empty()) return {};
  if (batch_size == 0) return s.indices;
  std::vector<std::size_t> batch(batch_size);
  for (auto& b : batch) b = s.indices[rng.below(s.indices.size())];
  return batch;
}

}  // namespace elastic
