#include "ha/linalg.hpp"

#include <cmath>
#include <string>

namespace ha {

PDFactorization PDFactorization::from(const SymMatrix& s, bool with_eigen) {
  PDFactorization f = chol(s);
  if (with_eigen) f.eigen_ = sym_eigen(s);
  return f;
}

Matrix PDFactorization::inverse() const {
  if (eigen_) {
    const auto& e = *eigen_;
    return e.vectors * e.values.cwiseInverse().asDiagonal() * e.vectors.transpose();
  }
  const Matrix linv = lower_.triangularView<Eigen::Lower>().solve(Matrix::Identity(lower_.rows(), lower_.cols()));
  return linv.transpose() * linv;
}

Vector PDFactorization::solve(const Vector& b) const {
  const Vector y = lower_.triangularView<Eigen::Lower>().solve(b);
  return lower_.transpose().triangularView<Eigen::Upper>().solve(y);
}

PDFactorization chol(const SymMatrix& s) {
  if (s.rows() != s.cols()) throw DimensionError("chol: matrix not square");
  const Eigen::Index m = s.rows();
  const double tol = 1e-12 * std::abs(s.trace()) / static_cast<double>(std::max<Eigen::Index>(m, 1));
  Matrix l = Matrix::Zero(m, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    double pivot = s(j, j);
    for (Eigen::Index k = 0; k < j; ++k) pivot -= l(j, k) * l(j, k);
    if (!(pivot > tol)) {
      throw NotPositiveDefinite("chol: pivot " + std::to_string(pivot) + " at index " + std::to_string(j));
    }
    const double ljj = std::sqrt(pivot);
    l(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < m; ++i) {
      double v = 0.5 * (s(i, j) + s(j, i));
      for (Eigen::Index k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
      l(i, j) = v / ljj;
    }
  }
  PDFactorization f;
  f.lower_ = std::move(l);
  return f;
}

PDFactorization chol_with_jitter(const SymMatrix& s) {
  try {
    return chol(s);
  } catch (const NotPositiveDefinite&) {
    const double jitter = 1e-8 * std::abs(s.trace()) / static_cast<double>(s.rows());
    SymMatrix bumped = s;
    bumped.diagonal().array() += jitter;
    return chol(bumped);
  }
}

EigenPair sym_eigen(const SymMatrix& s) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(0.5 * (s + s.transpose()));
  if (solver.info() != Eigen::Success) throw NotPositiveDefinite("eigendecomposition failed");
  if (!(solver.eigenvalues()(0) > 0.0)) throw NotPositiveDefinite("eigenvalue not positive");
  return {solver.eigenvalues(), solver.eigenvectors()};
}

Vector sample_mvn_prec(const Vector& h, const PDFactorization& precision, RngStream& rng) {
  if (static_cast<std::size_t>(h.size()) != precision.order()) throw DimensionError("sample_mvn_prec: size mismatch");
  Vector z(h.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  const Matrix& l = precision.lower();
  // L^T x0 = z gives Cov[x0] = (L L^T)^{-1}.
  Vector x = l.transpose().triangularView<Eigen::Upper>().solve(z);
  x += precision.solve(h);
  return x;
}

Tensor sample_effect_kron(const Tensor& rbar, std::span<const EigenPair> eig, double gamma, double kappa,
                          RngStream& rng) {
  if (eig.size() != rbar.order()) throw DimensionError("sample_effect_kron: one eigendecomposition per mode");
  if (!(kappa > 0.0) || !(gamma > 0.0)) throw std::invalid_argument("sample_effect_kron: gamma and kappa must be positive");
  for (std::size_t d = 0; d < eig.size(); ++d) {
    if (static_cast<std::size_t>(eig[d].values.size()) != rbar.dim(d)) {
      throw DimensionError("sample_effect_kron: eigendecomposition order mismatch");
    }
  }
  // Rotate into the joint eigenbasis: w = (U_K (x) ... (x) U_1)^T vec(rbar).
  Tensor w = rbar;
  for (std::size_t d = 0; d < eig.size(); ++d) w = mode_product(w, d, eig[d].vectors.transpose());

  std::vector<std::size_t> idx;
  for (std::size_t flat = 0; flat < w.size(); ++flat) {
    w.multi_index(flat, idx);
    double lambda = 1.0;
    for (std::size_t d = 0; d < idx.size(); ++d) lambda *= eig[d].values(static_cast<Eigen::Index>(idx[d]));
    const double prec = gamma / lambda + kappa;
    w[flat] = kappa * w[flat] / prec + rng.normal() / std::sqrt(prec);
  }
  for (std::size_t d = 0; d < eig.size(); ++d) w = mode_product(w, d, eig[d].vectors);
  return w;
}

SymMatrix sample_inverse_wishart(double eta, const SymMatrix& scale, RngStream& rng) {
  const Eigen::Index m = scale.rows();
  if (scale.cols() != m) throw DimensionError("sample_inverse_wishart: scale not square");
  if (!(eta > static_cast<double>(m) - 1.0)) {
    throw std::invalid_argument("sample_inverse_wishart: eta must exceed m - 1");
  }
  const Matrix r = chol(scale).lower();
  // Bartlett factor of a standard Wishart(eta, I).
  Matrix a = Matrix::Zero(m, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    a(j, j) = std::sqrt(rng.chi_square(eta - static_cast<double>(j)));
    for (Eigen::Index i = j + 1; i < m; ++i) a(i, j) = rng.normal();
  }
  // Sigma = (R^{-T} A A^T R^{-1})^{-1} = (R A^{-T}) (R A^{-T})^T.
  const Matrix xt = a.triangularView<Eigen::Lower>().solve(r.transpose());
  SymMatrix sigma = xt.transpose() * xt;
  return 0.5 * (sigma + sigma.transpose());
}

double sample_gamma_dist(double shape, double rate, RngStream& rng) { return rng.gamma(shape, rate); }

}  // namespace ha
