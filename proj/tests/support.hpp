#pragma once

// Hand-rolled generators for property tests.

#include <cmath>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "ha/linalg.hpp"
#include "ha/random.hpp"
#include "ha/tensor.hpp"

namespace ha::test {

inline Dims random_dims(RngStream& rng, std::size_t max_order, std::size_t max_dim, std::size_t max_size) {
  for (;;) {
    const std::size_t k = 1 + rng.below(max_order);
    Dims d(k);
    for (auto& m : d) m = 1 + rng.below(max_dim);
    if (product(d) <= max_size) return d;
  }
}

inline Tensor random_tensor(const Dims& dims, RngStream& rng) {
  Tensor t(dims);
  for (auto& v : t.values()) v = rng.normal();
  return t;
}

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, RngStream& rng) {
  Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j) {
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = rng.normal();
  }
  return m;
}

/// Well-conditioned SPD matrix: B B^T / m + I/2.
inline SymMatrix random_spd(std::size_t m, RngStream& rng) {
  const auto mi = static_cast<Eigen::Index>(m);
  const Matrix b = random_matrix(mi, mi, rng);
  SymMatrix s = b * b.transpose() / static_cast<double>(m) + 0.5 * Matrix::Identity(mi, mi);
  return 0.5 * (s + s.transpose());
}

// Independent oracle: A (x) B by the block definition.
inline Matrix kron2(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  }
  return out;
}

inline double rel_diff(const Matrix& a, const Matrix& b) {
  return (a - b).norm() / std::max(1.0, b.norm());
}

inline double rel_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.dims() == b.dims());
  double d = 0.0, n = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    n += b[i] * b[i];
  }
  return std::sqrt(d) / std::max(1.0, std::sqrt(n));
}

struct Moments {
  double mean = 0.0;
  double var = 0.0;
};

inline Moments moments(const std::vector<double>& x) {
  Moments m;
  for (double v : x) m.mean += v;
  m.mean /= static_cast<double>(x.size());
  for (double v : x) m.var += (v - m.mean) * (v - m.mean);
  m.var /= static_cast<double>(x.size() - 1);
  return m;
}

inline double chi2_upper(double df) {
  return boost::math::quantile(boost::math::chi_squared(df), 0.9973);
}

// Whitened moment test: draws x with claimed N(mean, cov). Returns
// {mean statistic, mean threshold, covariance statistic, covariance threshold};
// each statistic is approximately chi-square, thresholds at the 3-sigma level.
struct MomentTest {
  double mean_stat, mean_limit, cov_stat, cov_limit;
};

inline MomentTest moment_test(const std::vector<Vector>& xs, const Vector& mean, const Matrix& cov) {
  const Eigen::Index d = mean.size();
  const Eigen::LLT<Matrix> llt(cov);
  const Matrix l = llt.matrixL();
  Vector zbar = Vector::Zero(d);
  Matrix szz = Matrix::Zero(d, d);
  for (const auto& x : xs) {
    const Vector z = l.triangularView<Eigen::Lower>().solve(x - mean);
    zbar += z;
    szz += z * z.transpose();
  }
  const double n = static_cast<double>(xs.size());
  zbar /= n;
  szz /= n;
  double cstat = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) {
    cstat += n * (szz(i, i) - 1.0) * (szz(i, i) - 1.0) / 2.0;
    for (Eigen::Index j = 0; j < i; ++j) cstat += n * szz(i, j) * szz(i, j);
  }
  const double dd = static_cast<double>(d);
  return {n * zbar.squaredNorm(), chi2_upper(dd), cstat, chi2_upper(dd * (dd + 1) / 2)};
}

}  // namespace ha::test
