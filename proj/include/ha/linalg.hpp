#pragma once

// Positive-definite factorizations and the conjugate samplers used by the
// Gibbs sweep.

#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "ha/random.hpp"
#include "ha/tensor.hpp"

namespace ha {

class NotPositiveDefinite : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EigenPair {
  Vector values;   // strictly positive, ascending
  Matrix vectors;  // orthonormal columns
};

/// Cholesky factor of a PD matrix, with an optional eigendecomposition.
class PDFactorization {
 public:
  static PDFactorization from(const SymMatrix& s, bool with_eigen = false);

  std::size_t order() const { return static_cast<std::size_t>(lower_.rows()); }
  const Matrix& lower() const { return lower_; }
  const std::optional<EigenPair>& eigen() const { return eigen_; }

  Matrix reconstruct() const { return lower_ * lower_.transpose(); }
  Matrix inverse() const;
  Vector solve(const Vector& b) const;

 private:
  friend PDFactorization chol(const SymMatrix& s);
  Matrix lower_;
  std::optional<EigenPair> eigen_;
};

/// Cholesky; throws NotPositiveDefinite when a pivot <= 1e-12 * trace(S)/m.
PDFactorization chol(const SymMatrix& s);

/// chol, retried once with 1e-8 * trace/m added to the diagonal.
PDFactorization chol_with_jitter(const SymMatrix& s);

EigenPair sym_eigen(const SymMatrix& s);

/// Draw from N(P^{-1} h, P^{-1}) given the factorized precision P.
Vector sample_mvn_prec(const Vector& h, const PDFactorization& precision, RngStream& rng);

/// Draw vec(E) from N(Q^{-1} kappa vec(rbar), Q^{-1}) with
/// Q = gamma (Sigma_K (x) ... (x) Sigma_1)^{-1} + kappa I, working in the joint
/// eigenbasis. `eig[d]` is the eigendecomposition of Sigma_d for mode d of rbar.
Tensor sample_effect_kron(const Tensor& rbar, std::span<const EigenPair> eig, double gamma, double kappa,
                          RngStream& rng);

/// Inverse-Wishart with mean S / (eta - m - 1): the inverse of a
/// Wishart(eta, S^{-1}) draw, built from a Bartlett factor.
SymMatrix sample_inverse_wishart(double eta, const SymMatrix& scale, RngStream& rng);

/// Gamma(shape, rate); mean shape/rate.
double sample_gamma_dist(double shape, double rate, RngStream& rng);

}  // namespace ha
