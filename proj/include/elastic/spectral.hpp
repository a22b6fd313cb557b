#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "elastic/error.hpp"
#include "elastic/linalg.hpp"

namespace elastic {

namespace detail {

// Reduce `a` (n x n, row-major) to upper Hessenberg form by stabilized
// elementary similarity transforms (Gaussian elimination with pivoting).
inline void to_hessenberg(std::vector<double>& a, std::size_t n) {
  auto at = [&](std::size_t r, std::size_t c) -> double& { return a[r * n + c]; };
  for (std::size_t m = 1; m + 1 < n; ++m) {
    double x = 0.0;
    std::size_t piv = m;
    for (std::size_t j = m; j < n; ++j) {
      if (std::abs(at(j, m - 1)) > std::abs(x)) {
        x = at(j, m - 1);
        piv = j;
      }
    }
    if (piv != m) {
      for (std::size_t j = m - 1; j < n; ++j) std::swap(at(piv, j), at(m, j));
      for (std::size_t j = 0; j < n; ++j) std::swap(at(j, piv), at(j, m));
    }
    if (x == 0.0) continue;
    for (std::size_t i = m + 1; i < n; ++i) {
      double y = at(i, m - 1);
      if (y == 0.0) continue;
      y /= x;
      at(i, m - 1) = 0.0;
      for (std::size_t j = m; j < n; ++j) at(i, j) -= y * at(m, j);
      for (std::size_t j = 0; j < n; ++j) at(j, m) += y * at(j, i);
    }
  }
}

inline double sign_of(double magnitude, double s) {
  return s >= 0.0 ? std::abs(magnitude) : -std::abs(magnitude);
}

}  // namespace detail

inline constexpr int kQrMaxIterationsPerEigenvalue = 60;

// All eigenvalues of a square matrix: Hessenberg reduction followed by the
// Francis double-shift QR iteration. A subdiagonal entry is treated as zero
// once it falls below `tol` times the neighbouring diagonal magnitudes
// (tol is clamped below at machine epsilon). Exceptional shifts are taken
// every 10 iterations; more than kQrMaxIterationsPerEigenvalue iterations on
// one eigenvalue raises NumericsError.
inline std::vector<std::complex<double>> eigenvalues(
    const DenseMatrix& m, double tol = std::numeric_limits<double>::epsilon()) {
  if (!m.square()) throw DimensionError("eigenvalues: matrix is not square");
  m.check_finite("eigenvalues input");
  const std::size_t n = m.rows();
  std::vector<std::complex<double>> w(n);
  if (n == 0) return w;
  const double eps = std::max(tol, std::numeric_limits<double>::epsilon());

  std::vector<double> a(m.values().begin(), m.values().end());
  detail::to_hessenberg(a, n);
  auto at = [&](long r, long c) -> double& {
    return a[static_cast<std::size_t>(r) * n + static_cast<std::size_t>(c)];
  };

  double anorm = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = (i == 0 ? 0 : i - 1); j < n; ++j)
      anorm += std::abs(a[i * n + j]);

  long nn = static_cast<long>(n) - 1;
  double t = 0.0;
  double p = 0, q = 0, r = 0, s = 0, x = 0, y = 0, z = 0, wv = 0;
  while (nn >= 0) {
    int its = 0;
    long l = 0;
    do {
      for (l = nn; l > 0; --l) {
        s = std::abs(at(l - 1, l - 1)) + std::abs(at(l, l));
        if (s == 0.0) s = anorm;
        if (std::abs(at(l, l - 1)) <= eps * s) {
          at(l, l - 1) = 0.0;
          break;
        }
      }
      x = at(nn, nn);
      if (l == nn) {
        w[static_cast<std::size_t>(nn)] = x + t;
        --nn;
      } else {
        y = at(nn - 1, nn - 1);
        wv = at(nn, nn - 1) * at(nn - 1, nn);
        if (l == nn - 1) {
          p = 0.5 * (y - x);
          q = p * p + wv;
          z = std::sqrt(std::abs(q));
          x += t;
          if (q >= 0.0) {
            z = p + detail::sign_of(z, p);
            w[static_cast<std::size_t>(nn - 1)] = x + z;
            w[static_cast<std::size_t>(nn)] = x + z;
            if (z != 0.0) w[static_cast<std::size_t>(nn)] = x - wv / z;
          } else {
            w[static_cast<std::size_t>(nn)] = {x + p, -z};
            w[static_cast<std::size_t>(nn - 1)] = {x + p, z};
          }
          nn -= 2;
        } else {
          if (its == kQrMaxIterationsPerEigenvalue) {
            throw NumericsError("eigenvalues: QR iteration did not converge");
          }
          if (its > 0 && its % 10 == 0) {
            t += x;
            for (long i = 0; i <= nn; ++i) at(i, i) -= x;
            s = std::abs(at(nn, nn - 1)) + std::abs(at(nn - 1, nn - 2));
            y = x = 0.75 * s;
            wv = -0.4375 * s * s;
          }
          ++its;
          long mm = nn - 2;
          for (; mm >= l; --mm) {
            z = at(mm, mm);
            r = x - z;
            s = y - z;
            p = (r * s - wv) / at(mm + 1, mm) + at(mm, mm + 1);
            q = at(mm + 1, mm + 1) - z - r - s;
            r = at(mm + 2, mm + 1);
            s = std::abs(p) + std::abs(q) + std::abs(r);
            p /= s;
            q /= s;
            r /= s;
            if (mm == l) break;
            const double u = std::abs(at(mm, mm - 1)) * (std::abs(q) + std::abs(r));
            const double v = std::abs(p) * (std::abs(at(mm - 1, mm - 1)) +
                                            std::abs(z) +
                                            std::abs(at(mm + 1, mm + 1)));
            if (u <= std::numeric_limits<double>::epsilon() * v) break;
          }
          for (long i = mm; i < nn - 1; ++i) {
            at(i + 2, i) = 0.0;
            if (i != mm) at(i + 2, i - 1) = 0.0;
          }
          for (long k = mm; k < nn; ++k) {
            if (k != mm) {
              p = at(k, k - 1);
              q = at(k + 1, k - 1);
              r = 0.0;
              if (k + 1 != nn) r = at(k + 2, k - 1);
              if ((x = std::abs(p) + std::abs(q) + std::abs(r)) != 0.0) {
                p /= x;
                q /= x;
                r /= x;
              }
            }
            if ((s = detail::sign_of(std::sqrt(p * p + q * q + r * r), p)) != 0.0) {
              if (k == mm) {
                if (l != mm) at(k, k - 1) = -at(k, k - 1);
              } else {
                at(k, k - 1) = -s * x;
              }
              p += s;
              x = p / s;
              y = q / s;
              z = r / s;
              q /= p;
              r /= p;
              for (long j = k; j <= nn; ++j) {
                p = at(k, j) + q * at(k + 1, j);
                if (k + 1 != nn) {
                  p += r * at(k + 2, j);
                  at(k + 2, j) -= p * z;
                }
                at(k + 1, j) -= p * y;
                at(k, j) -= p * x;
              }
              const long mmin = nn < k + 3 ? nn : k + 3;
              for (long i = l; i <= mmin; ++i) {
                p = x * at(i, k) + y * at(i, k + 1);
                if (k + 1 != nn) {
                  p += z * at(i, k + 2);
                  at(i, k + 2) -= p * r;
                }
                at(i, k + 1) -= p * q;
                at(i, k) -= p;
              }
            }
          }
        }
      }
    } while (nn >= 0 && l + 1 < nn);
  }
  for (const auto& e : w) {
    if (!std::isfinite(e.real()) || !std::isfinite(e.imag())) {
      throw NumericsError("eigenvalues: non-finite eigenvalue");
    }
  }
  return w;
}

// Largest eigenvalue modulus, via eigenvalues().
inline double spectral_radius(const DenseMatrix& m,
                              double tol = std::numeric_limits<double>::epsilon()) {
  if (!(tol > 0.0)) throw NumericsError("spectral_radius: tol must be positive");
  double radius = 0.0;
  for (const auto& e : eigenvalues(m, tol)) radius = std::max(radius, std::abs(e));
  return radius;
}

// Stationary covariance of x+ = M x + noise (noise covariance Q): the fixed
// point of Sigma = M Sigma M^T + Q, reached by iterating from Sigma = 0 until
// the max-abs residual is at most `tol`. The result is symmetrized.
inline DenseMatrix lyapunov_stationary(const DenseMatrix& m, const DenseMatrix& q,
                                       double tol = 1e-14,
                                       long max_iter = 10'000'000) {
  if (!m.square()) throw DimensionError("lyapunov_stationary: M not square");
  detail::require_same_dim(m.rows(), q.rows(), "lyapunov_stationary Q rows");
  detail::require_same_dim(m.cols(), q.cols(), "lyapunov_stationary Q cols");
  if (!(tol > 0.0)) throw NumericsError("lyapunov_stationary: tol must be positive");
  const double radius = spectral_radius(m);
  if (radius >= 1.0) {
    throw UnstableSystemError("lyapunov_stationary: spectral radius " +
                              std::to_string(radius) + " >= 1");
  }
  const DenseMatrix mt = m.transposed();
  DenseMatrix sigma(m.rows(), m.cols());
  for (long it = 0; it < max_iter; ++it) {
    DenseMatrix next = m * sigma * mt + q;
    // residual of the current iterate
    double residual = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i)
      for (std::size_t j = 0; j < m.cols(); ++j)
        residual = std::max(residual, std::abs(next(i, j) - sigma(i, j)));
    if (residual > tol) {
      sigma = std::move(next);
    } else {
      for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = i + 1; j < m.cols(); ++j) {
          const double avg = 0.5 * (sigma(i, j) + sigma(j, i));
          sigma(i, j) = avg;
          sigma(j, i) = avg;
        }
      return sigma;
    }
  }
  throw NumericsError("lyapunov_stationary: no convergence within " +
                      std::to_string(max_iter) + " iterations");
}

}  // namespace elastic
