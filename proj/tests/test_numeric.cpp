#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "elastic/gradient.hpp"
#include "elastic/linalg.hpp"
#include "elastic/rng.hpp"
#include "elastic/spectral.hpp"

namespace elastic {
namespace {

TEST(Axpy, ZeroScalarReturnsY) {
  EXPECT_EQ(axpy(0.0, ParamVector{3, 4}, ParamVector{1, 2}), (ParamVector{1, 2}));
}

TEST(Axpy, ZeroVectorIdentity) {
  EXPECT_EQ(axpy(1.0, ParamVector{0, 0}, ParamVector{5, 6}), (ParamVector{5, 6}));
}

TEST(Axpy, HandArithmetic) {
  EXPECT_EQ(axpy(2.0, ParamVector{1, -1}, ParamVector{1, 1}), (ParamVector{3, -1}));
}

TEST(Axpy, InputsUnmodifiedAndErrors) {
  const ParamVector x{1, 2}, y{3, 4};
  (void)axpy(3.0, x, y);
  EXPECT_EQ(x, (ParamVector{1, 2}));
  EXPECT_EQ(y, (ParamVector{3, 4}));
  EXPECT_THROW(axpy(1.0, ParamVector{1}, ParamVector{1, 2}), DimensionError);
  EXPECT_THROW(axpy(NAN, x, y), NumericsError);
  EXPECT_THROW(axpy(1e308, ParamVector{1e308}, ParamVector{1e308}), NumericsError);
}

TEST(ParamVector, RejectsNonFinite) {
  EXPECT_THROW(ParamVector({1.0, INFINITY}), NumericsError);
  EXPECT_THROW(DenseMatrix(1, 1, std::vector<double>{NAN}), NumericsError);
}

// f(x) = x^2/2 or x1*x2 etc. with analytic gradients.
class LambdaOracle final : public GradientOracle {
 public:
  using Fn = double (*)(const ParamVector&);
  LambdaOracle(std::size_t d, Fn f) : d_(d), f_(f) {}
  std::size_t dim() const override { return d_; }
  Evaluation eval(const ParamVector& x, std::span<const std::size_t>, Rng*) const override {
    return {f_(x), ParamVector(d_)};
  }

 private:
  std::size_t d_;
  Fn f_;
};

TEST(FiniteDiff, HalfSquare) {
  LambdaOracle o(1, [](const ParamVector& x) { return 0.5 * x[0] * x[0]; });
  const ParamVector g = finite_diff_grad(o, ParamVector{3.0}, {}, 1e-5);
  EXPECT_NEAR(g[0], 3.0, 1e-7);
}

TEST(FiniteDiff, ConstantIsZero) {
  LambdaOracle o(3, [](const ParamVector&) { return 7.0; });
  EXPECT_EQ(finite_diff_grad(o, ParamVector{1, 2, 3}, {}), ParamVector(3));
}

TEST(FiniteDiff, Bilinear) {
  LambdaOracle o(2, [](const ParamVector& x) { return x[0] * x[1]; });
  const ParamVector g = finite_diff_grad(o, ParamVector{2, 5}, {});
  EXPECT_NEAR(g[0], 5.0, 1e-8);
  EXPECT_NEAR(g[1], 2.0, 1e-8);
}

TEST(FiniteDiff, Errors) {
  LambdaOracle nan_fn(1, [](const ParamVector&) -> double { return NAN; });
  EXPECT_THROW(finite_diff_grad(nan_fn, ParamVector{1.0}, {}), NumericsError);
  LambdaOracle ok(1, [](const ParamVector& x) { return x[0]; });
  EXPECT_THROW(finite_diff_grad(ok, ParamVector{1.0}, {}, 0.0), NumericsError);
}

TEST(SpectralRadius, Identity) {
  EXPECT_DOUBLE_EQ(spectral_radius(DenseMatrix::identity(2)), 1.0);
}

TEST(SpectralRadius, Diagonal) {
  EXPECT_DOUBLE_EQ(spectral_radius(DenseMatrix{{0.5, 0}, {0, -0.25}}), 0.5);
}

TEST(SpectralRadius, SymmetricTwoByTwo) {
  // trace 0, det -0.5 => |lambda| = sqrt(0.5)
  EXPECT_NEAR(spectral_radius(DenseMatrix{{-0.5, 0.5}, {0.5, 0.5}}), std::sqrt(0.5), 1e-14);
}

TEST(SpectralRadius, MatchesFrozenReferenceValues) {
  // reference radii from an independent eigenvalue routine (LAPACK geev)
  EXPECT_NEAR(spectral_radius(DenseMatrix{{0.2, -0.9, 0.1}, {0.8, 0.1, 0.3}, {-0.2, 0.4, 0.5}}),
              0.8274608698327511, 1e-12);
  EXPECT_NEAR(spectral_radius(DenseMatrix{{1, 2, 0, 0, 1},
                                          {0, 1, 3, 0, 0},
                                          {0.5, 0, 0.2, 1, 0},
                                          {0, 0, 0.1, 0.3, 2},
                                          {1, 0, 0, -1, 0.4}}),
              2.585415312387206, 1e-12);
  EXPECT_NEAR(spectral_radius(DenseMatrix{{0, 0.9}, {-0.9, 0}}), 0.9, 1e-14);
  // defective Jordan block
  EXPECT_NEAR(spectral_radius(DenseMatrix{{1, 1}, {0, 1}}), 1.0, 1e-12);
}

TEST(SpectralRadius, DiagonalExactProperty) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(8);
    std::vector<double> d(n);
    double expect = 0.0;
    for (auto& v : d) {
      v = rng.uniform(-3, 3);
      expect = std::max(expect, std::abs(v));
    }
    EXPECT_NEAR(spectral_radius(DenseMatrix::diagonal(d)), expect, 1e-12);
  }
}

TEST(SpectralRadius, GelfandFormulaAgreement) {
  // rho(M) = lim |M^k|^(1/k); compare loosely on random matrices via repeated
  // squaring with renormalization.
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + rng.below(7);
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) m(i, j) = rng.normal();
    DenseMatrix pw = m;
    double log_scale = 0.0;
    const int squarings = 12;
    for (int s = 0; s < squarings; ++s) {
      pw = pw * pw;
      log_scale *= 2.0;
      const double norm = max_abs(pw);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) pw(i, j) /= norm;
      log_scale += std::log(norm);
    }
    const double gelfand = std::exp(log_scale / std::pow(2.0, squarings));
    EXPECT_NEAR(spectral_radius(m) / gelfand, 1.0, 5e-3);
  }
}

TEST(SpectralRadius, Errors) {
  EXPECT_THROW(spectral_radius(DenseMatrix(2, 3)), DimensionError);
  EXPECT_THROW(spectral_radius(DenseMatrix::identity(2), 0.0), NumericsError);
}

TEST(Lyapunov, MemorylessScalar) {
  const DenseMatrix s = lyapunov_stationary(DenseMatrix{{0.0}}, DenseMatrix{{2.5}});
  EXPECT_DOUBLE_EQ(s(0, 0), 2.5);
}

TEST(Lyapunov, GeometricSeries) {
  const double a = 0.7, q = 0.3;
  const DenseMatrix s = lyapunov_stationary(DenseMatrix{{a}}, DenseMatrix{{q}}, 1e-16);
  EXPECT_NEAR(s(0, 0), q / (1 - a * a), 1e-14);
}

TEST(Lyapunov, PerCoordinateSeries) {
  const DenseMatrix s =
      lyapunov_stationary(DenseMatrix{{0.5, 0}, {0, 0}}, DenseMatrix::identity(2), 1e-16);
  EXPECT_NEAR(s(0, 0), 4.0 / 3.0, 1e-14);
  EXPECT_NEAR(s(1, 1), 1.0, 1e-15);
  EXPECT_EQ(s(0, 1), 0.0);
}

TEST(Lyapunov, ResidualAndSymmetryProperty) {
  Rng rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 1 + rng.below(6);
    DenseMatrix m(n, n), l(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        m(i, j) = rng.normal();
        l(i, j) = rng.normal();
      }
    const double r = spectral_radius(m);
    const double shrink = rng.uniform(0.1, 0.95) / r;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) m(i, j) *= shrink;
    const DenseMatrix q = l * l.transposed();
    const double tol = 1e-12;
    const DenseMatrix s = lyapunov_stationary(m, q, tol);
    const DenseMatrix again = m * s * m.transposed() + q;
    double residual = 0.0, asym = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        residual = std::max(residual, std::abs(s(i, j) - again(i, j)));
        asym = std::max(asym, std::abs(s(i, j) - s(j, i)));
      }
    EXPECT_LE(residual, tol * 1.01);
    EXPECT_LE(asym, 1e-10);
  }
}

TEST(Lyapunov, Errors) {
  EXPECT_THROW(lyapunov_stationary(DenseMatrix{{1.0}}, DenseMatrix{{1.0}}), UnstableSystemError);
  EXPECT_THROW(lyapunov_stationary(DenseMatrix{{0.999}}, DenseMatrix{{1.0}}, 1e-15, 10),
               NumericsError);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next(), b.next());
}

TEST(Rng, SplitMixReferenceValues) {
  // Reference output of SplitMix64 seeded with 0 (Vigna's splitmix64.c).
  Rng r(0);
  EXPECT_EQ(r.next(), 0xE220A8397B1DCDAFULL);
  EXPECT_EQ(r.next(), 0x6E789E6AA1B965F4ULL);
  EXPECT_EQ(r.next(), 0x06C45D188009454FULL);
}

TEST(Rng, UniformAndNormalMoments) {
  Rng r(9);
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
    const double z = r.normal();
    sn += z;
    sn2 += z * z;
  }
  EXPECT_NEAR(su / n, 0.5, 0.005);
  EXPECT_NEAR(sn / n, 0.0, 0.01);
  EXPECT_NEAR(sn2 / n, 1.0, 0.01);
}

}  // namespace
}  // namespace elastic
