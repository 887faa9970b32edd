#include "ha/tensor.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace ha {

std::size_t product(std::span<const std::size_t> dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

void check_dims(const Dims& dims) {
  for (auto m : dims) {
    if (m == 0) throw DimensionError("tensor dimensions must be positive");
  }
}

void check_same_dims(const Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims()) throw DimensionError("tensor dimension mismatch");
}

void check_mode(const Tensor& a, std::size_t mode) {
  if (mode >= a.order()) {
    throw DimensionError("mode " + std::to_string(mode) + " out of range for order-" +
                         std::to_string(a.order()) + " tensor");
  }
}

struct ModeSplit {
  std::size_t left;
  std::size_t mid;
  std::size_t right;
};

ModeSplit split_at(const Dims& dims, std::size_t mode) {
  ModeSplit s{1, dims[mode], 1};
  for (std::size_t e = 0; e < mode; ++e) s.left *= dims[e];
  for (std::size_t e = mode + 1; e < dims.size(); ++e) s.right *= dims[e];
  return s;
}

}  // namespace

Tensor::Tensor(Dims dims, double fill) : dims_(std::move(dims)) {
  check_dims(dims_);
  data_.assign(product(dims_), fill);
}

Tensor::Tensor(Dims dims, std::vector<double> data) : dims_(std::move(dims)), data_(std::move(data)) {
  check_dims(dims_);
  if (data_.size() != product(dims_)) throw DimensionError("data length does not match dimensions");
}

std::size_t Tensor::flat_index(std::span<const std::size_t> index) const {
  if (index.size() != dims_.size()) throw DimensionError("index rank mismatch");
  std::size_t flat = 0;
  std::size_t stride = 1;
  for (std::size_t d = 0; d < dims_.size(); ++d) {
    if (index[d] >= dims_[d]) throw DimensionError("index out of range");
    flat += index[d] * stride;
    stride *= dims_[d];
  }
  return flat;
}

void Tensor::multi_index(std::size_t flat, std::vector<std::size_t>& index) const {
  index.resize(dims_.size());
  for (std::size_t d = 0; d < dims_.size(); ++d) {
    index[d] = flat % dims_[d];
    flat /= dims_[d];
  }
}

Tensor& Tensor::operator+=(const Tensor& other) {
  check_same_dims(*this, other);
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  check_same_dims(*this, other);
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (auto& x : data_) x *= s;
  return *this;
}

double Tensor::squared_norm() const {
  double s = 0.0;
  for (double x : data_) s += x * x;
  return s;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(double s, Tensor a) { return a *= s; }

std::vector<double> vectorize(const Tensor& a) { return a.values(); }

Tensor reshape(std::span<const double> v, Dims dims) {
  return Tensor(std::move(dims), std::vector<double>(v.begin(), v.end()));
}

Matrix matricize(const Tensor& a, std::size_t mode) {
  check_mode(a, mode);
  const auto s = split_at(a.dims(), mode);
  Matrix out(s.mid, s.left * s.right);
  const auto src = a.data();
  for (std::size_t r = 0; r < s.right; ++r) {
    for (std::size_t i = 0; i < s.mid; ++i) {
      const std::size_t base = (r * s.mid + i) * s.left;
      for (std::size_t l = 0; l < s.left; ++l) {
        out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(r * s.left + l)) = src[base + l];
      }
    }
  }
  return out;
}

Tensor unmatricize(const Matrix& m, const Dims& dims, std::size_t mode) {
  Tensor out(dims);
  check_mode(out, mode);
  const auto s = split_at(dims, mode);
  if (static_cast<std::size_t>(m.rows()) != s.mid ||
      static_cast<std::size_t>(m.cols()) != s.left * s.right) {
    throw DimensionError("matrix shape does not match target dimensions");
  }
  auto dst = out.data();
  for (std::size_t r = 0; r < s.right; ++r) {
    for (std::size_t i = 0; i < s.mid; ++i) {
      const std::size_t base = (r * s.mid + i) * s.left;
      for (std::size_t l = 0; l < s.left; ++l) {
        dst[base + l] = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(r * s.left + l));
      }
    }
  }
  return out;
}

Tensor mode_product(const Tensor& a, std::size_t mode, const Matrix& b) {
  check_mode(a, mode);
  const auto s = split_at(a.dims(), mode);
  if (static_cast<std::size_t>(b.cols()) != s.mid) throw DimensionError("mode product: inner dimension mismatch");
  Dims out_dims = a.dims();
  out_dims[mode] = static_cast<std::size_t>(b.rows());
  Tensor out(out_dims);
  const std::size_t rows = out_dims[mode];
  const auto src = a.data();
  auto dst = out.data();
  for (std::size_t r = 0; r < s.right; ++r) {
    for (std::size_t i = 0; i < s.mid; ++i) {
      const double* in = src.data() + (r * s.mid + i) * s.left;
      for (std::size_t k = 0; k < rows; ++k) {
        const double coef = b(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i));
        if (coef == 0.0) continue;
        double* o = dst.data() + (r * rows + k) * s.left;
        for (std::size_t l = 0; l < s.left; ++l) o[l] += coef * in[l];
      }
    }
  }
  return out;
}

Matrix kronecker(std::span<const Matrix> factors) {
  if (factors.empty()) return Matrix::Identity(1, 1);
  std::size_t rows = 1;
  std::size_t cols = 1;
  for (const auto& f : factors) {
    rows *= static_cast<std::size_t>(f.rows());
    cols *= static_cast<std::size_t>(f.cols());
  }
  if (rows > kMaxDenseKronecker || cols > kMaxDenseKronecker) {
    throw DimensionError("dense Kronecker product larger than the oracle guard");
  }
  Matrix out = factors[0];
  for (std::size_t f = 1; f < factors.size(); ++f) {
    const Matrix& b = factors[f];
    Matrix next(out.rows() * b.rows(), out.cols() * b.cols());
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      for (Eigen::Index j = 0; j < out.cols(); ++j) {
        next.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = out(i, j) * b;
      }
    }
    out = std::move(next);
  }
  return out;
}

SymMatrix mode_quadratic(const Tensor& a, std::size_t mode, std::span<const Matrix> inverse_factors) {
  check_mode(a, mode);
  if (inverse_factors.size() + 1 != a.order()) throw DimensionError("mode_quadratic: wrong number of factors");
  Tensor weighted = a;
  std::size_t f = 0;
  for (std::size_t e = 0; e < a.order(); ++e) {
    if (e == mode) continue;
    const Matrix& w = inverse_factors[f++];
    if (static_cast<std::size_t>(w.rows()) != a.dim(e) || w.rows() != w.cols()) {
      throw DimensionError("mode_quadratic: factor order does not match dimension");
    }
    weighted = mode_product(weighted, e, w);
  }
  const Matrix lhs = matricize(a, mode);
  const Matrix rhs = matricize(weighted, mode);
  SymMatrix out = lhs * rhs.transpose();
  return 0.5 * (out + out.transpose());
}

double kron_quadratic_form(const Tensor& a, std::span<const Matrix> inverse_factors) {
  if (inverse_factors.size() != a.order()) throw DimensionError("kron_quadratic_form: wrong number of factors");
  Tensor weighted = a;
  for (std::size_t e = 0; e < a.order(); ++e) {
    const Matrix& w = inverse_factors[e];
    if (static_cast<std::size_t>(w.rows()) != a.dim(e) || w.rows() != w.cols()) {
      throw DimensionError("kron_quadratic_form: factor order does not match dimension");
    }
    weighted = mode_product(weighted, e, w);
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * weighted[i];
  return s;
}

bool is_symmetric(const Matrix& m, double rel_tol) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(m.cwiseAbs().maxCoeff(), 1e-300);
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

}  // namespace ha
