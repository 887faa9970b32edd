#pragma once

// Dense multiway arrays stored column-major (first index fastest).
//
// The vec ordering is a hard contract: for an array A with separable
// covariance, Cov[vectorize(A)] = Sigma_K (x) ... (x) Sigma_1. Every sampler
// formula in this library depends on it.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace ha {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Real symmetric matrix (Sigma_d, scale matrices). Symmetry is checked, not enforced by storage.
using SymMatrix = Eigen::MatrixXd;

using Dims = std::vector<std::size_t>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::size_t product(std::span<const std::size_t> dims);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Dims dims, double fill = 0.0);
  Tensor(Dims dims, std::vector<double> data);

  const Dims& dims() const { return dims_; }
  std::size_t order() const { return dims_.size(); }
  std::size_t dim(std::size_t mode) const { return dims_.at(mode); }
  std::size_t size() const { return data_.size(); }

  double& operator[](std::size_t flat) { return data_[flat]; }
  double operator[](std::size_t flat) const { return data_[flat]; }

  double& at(std::span<const std::size_t> index) { return data_[flat_index(index)]; }
  double at(std::span<const std::size_t> index) const { return data_[flat_index(index)]; }
  double& at(std::initializer_list<std::size_t> index) {
    return at(std::span<const std::size_t>(index.begin(), index.size()));
  }
  double at(std::initializer_list<std::size_t> index) const {
    return at(std::span<const std::size_t>(index.begin(), index.size()));
  }

  std::size_t flat_index(std::span<const std::size_t> index) const;
  /// Inverse of flat_index; writes into `index` (resized to order()).
  void multi_index(std::size_t flat, std::vector<std::size_t>& index) const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double s);

  double squared_norm() const;

  bool operator==(const Tensor& other) const = default;

 private:
  Dims dims_;
  std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(double s, Tensor a);

/// Column-major flattening; element (i_1..i_K) lands at i_1 + m_1 i_2 + m_1 m_2 i_3 + ...
std::vector<double> vectorize(const Tensor& a);
Tensor reshape(std::span<const double> v, Dims dims);

/// Mode-d unfolding: row i holds every entry with index d equal to i; columns
/// run over the remaining modes with lower-numbered modes varying fastest.
Matrix matricize(const Tensor& a, std::size_t mode);
Tensor unmatricize(const Matrix& m, const Dims& dims, std::size_t mode);

/// A x_d B: replaces mode d (size m_d) by B.rows(); requires B.cols() == m_d.
Tensor mode_product(const Tensor& a, std::size_t mode, const Matrix& b);

/// Kronecker product in listed order: kronecker({A, B}) = A (x) B.
/// Dense materialization is an oracle tool; refuses results above kMaxDenseKronecker.
inline constexpr std::size_t kMaxDenseKronecker = 4096;
Matrix kronecker(std::span<const Matrix> factors);

/// A_(d) (Sigma_K^{-1} (x) ... (x) Sigma_1^{-1}, d omitted) A_(d)^T via mode
/// products. `inverse_factors` holds one pre-inverted matrix for each mode
/// e != d, in increasing mode order.
SymMatrix mode_quadratic(const Tensor& a, std::size_t mode, std::span<const Matrix> inverse_factors);

/// vec(A)^T (Sigma_K^{-1} (x) ... (x) Sigma_1^{-1}) vec(A), one pre-inverted
/// factor per mode.
double kron_quadratic_form(const Tensor& a, std::span<const Matrix> inverse_factors);

bool is_symmetric(const Matrix& m, double rel_tol = 1e-12);

}  // namespace ha
