#pragma once

// Dense matrix and order-3 tensor primitives shared by the pipeline.
//
// Flattening convention: a p x q matrix A is stacked row-major,
// vec(A)[i1 * q + i2] = A(i1, i2). Kronecker and Khatri-Rao products index
// their rows with the same rule, so the hyper-adjacency row of the pair
// (u, t) is u * |T| + t and mat() of a column recovers the |U| x |T| slice.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "mmsf/errors.hpp"
#include "mmsf/rng.hpp"

namespace mmsf {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, std::int64_t>;
using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kOrthonormalityTolerance = 1e-8;

/// Implicit (|U|, |T|) shape used by mat().
struct MatricizationShape {
  Index rows;
  Index cols;

  MatricizationShape(Index r, Index c) : rows(r), cols(c) {
    if (r < 1 || c < 1) throw DimensionError("matricization shape must be at least 1 x 1");
  }

  Index size() const noexcept { return rows * cols; }
  bool operator==(const MatricizationShape&) const = default;
};

inline Vector vec(const Matrix& a) {
  Vector out(a.size());
  Eigen::Map<RowMajorMatrix>(out.data(), a.rows(), a.cols()) = a;
  return out;
}

inline Matrix mat(const Eigen::Ref<const Vector>& a, const MatricizationShape& shape) {
  if (a.size() != shape.size()) {
    throw DimensionError("mat: vector of length " + std::to_string(a.size()) +
                         " does not fit shape " + std::to_string(shape.rows) + " x " +
                         std::to_string(shape.cols));
  }
  return Eigen::Map<const RowMajorMatrix>(a.data(), shape.rows, shape.cols);
}

inline Matrix kronecker(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index i1 = 0; i1 < a.rows(); ++i1) {
    for (Index j1 = 0; j1 < a.cols(); ++j1) {
      out.block(i1 * b.rows(), j1 * b.cols(), b.rows(), b.cols()) = a(i1, j1) * b;
    }
  }
  return out;
}

/// Column-wise Kronecker product: column j is a_j (x) b_j.
inline Matrix khatri_rao(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("khatri_rao: column counts differ (" + std::to_string(a.cols()) +
                         " vs " + std::to_string(b.cols()) + ")");
  }
  Matrix out(a.rows() * b.rows(), a.cols());
  for (Index j = 0; j < a.cols(); ++j) {
    for (Index i1 = 0; i1 < a.rows(); ++i1) {
      out.col(j).segment(i1 * b.rows(), b.rows()) = a(i1, j) * b.col(j);
    }
  }
  return out;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("hadamard: shapes differ");
  }
  return a.cwiseProduct(b);
}

struct TruncatedSvd {
  Matrix u;       // m x k, orthonormal columns
  Vector values;  // k, nonincreasing
  Matrix v;       // n x k, orthonormal columns

  Matrix reconstruct() const { return u * values.asDiagonal() * v.transpose(); }
};

/// Best rank-k approximation U_k S_k V_k^T.
inline TruncatedSvd ksvd(const Matrix& m, Index k) {
  if (k < 0 || k > std::min(m.rows(), m.cols())) {
    throw ArgumentError("ksvd: k = " + std::to_string(k) + " exceeds min dimension " +
                        std::to_string(std::min(m.rows(), m.cols())));
  }
  Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return {svd.matrixU().leftCols(k), svd.singularValues().head(k), svd.matrixV().leftCols(k)};
}

/// Number of singular values (nonincreasing) above rel * s[0].
inline Index numerical_rank(const Vector& s, double rel) {
  if (s.size() == 0 || !(s[0] > 0.0)) return 0;
  Index r = 0;
  while (r < s.size() && s[r] > rel * s[0]) ++r;
  return r;
}

/// Largest absolute deviation of U^T U from the identity.
inline double orthonormality_defect(const Matrix& u) {
  const Matrix gram = u.transpose() * u;
  return (gram - Matrix::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
}

inline Matrix projector(const Matrix& uk) {
  if (uk.cols() > 0 && orthonormality_defect(uk) > kOrthonormalityTolerance) {
    throw ContractViolation("projector: columns are not orthonormal within 1e-8");
  }
  return uk * uk.transpose();
}

/// Moore-Penrose pseudo-inverse keeping at most `rank` singular values above
/// rel_cutoff * sigma_1.
inline Matrix pinv_truncated(const Matrix& m, Index rank, double rel_cutoff = 1e-10) {
  if (m.size() == 0) return Matrix::Zero(m.cols(), m.rows());
  Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  Matrix out = Matrix::Zero(m.cols(), m.rows());
  const Index keep = std::min<Index>(rank, s.size());
  for (Index i = 0; i < keep; ++i) {
    if (s[i] <= rel_cutoff * s[0] || s[i] == 0.0) break;
    out.noalias() += svd.matrixV().col(i) * (svd.matrixU().col(i).transpose() / s[i]);
  }
  return out;
}

namespace detail {

inline constexpr Index kDirectSvdLimit = 48;

/// Top singular values of the upper bidiagonal matrix with the given diagonal
/// and superdiagonal, plus the last-row entries of its left singular vectors.
inline void bidiagonal_svd(const std::vector<double>& alpha, const std::vector<double>& beta,
                           Index steps, Vector& values, Vector& last_row) {
  Matrix b = Matrix::Zero(steps, steps);
  for (Index i = 0; i < steps; ++i) {
    b(i, i) = alpha[static_cast<std::size_t>(i)];
    if (i + 1 < steps) b(i, i + 1) = beta[static_cast<std::size_t>(i)];
  }
  if (steps <= 40) {
    Eigen::JacobiSVD<Matrix> svd(b, Eigen::ComputeFullU);
    values = svd.singularValues();
    last_row = svd.matrixU().row(steps - 1).transpose();
  } else {
    Eigen::BDCSVD<Matrix> svd(b, Eigen::ComputeFullU);
    values = svd.singularValues();
    last_row = svd.matrixU().row(steps - 1).transpose();
  }
}

/// Golub-Kahan-Lanczos bidiagonalization with full reorthogonalization.
/// Stops once the Ritz residual of each requested value is below
/// rel_tol * sigma_1, on breakdown, or after min(m, n) steps (exact).
inline Vector lanczos_top_singular_values(const Matrix& a, Index count, double rel_tol) {
  const Index m = a.rows();
  const Index n = a.cols();
  const Index max_steps = std::min(m, n);
  Vector result = Vector::Zero(count);

  Matrix vbasis(n, max_steps);
  Matrix ubasis(m, max_steps);
  Vector v(n);
  for (Index i = 0; i < n; ++i) {
    v[i] = 2.0 * counter_uniform(0x5eedULL, static_cast<std::uint64_t>(i)) - 1.0;
  }
  v.normalize();

  std::vector<double> alpha;
  std::vector<double> beta;
  double previous_beta = 0.0;
  Vector u(m);
  Vector w(n);
  Vector values;
  Vector last_row;
  const double breakdown = 1e-14 * std::max(1.0, a.cwiseAbs().maxCoeff());

  for (Index j = 0; j < max_steps; ++j) {
    vbasis.col(j) = v;
    u.noalias() = a * v;
    if (j > 0) u -= previous_beta * ubasis.col(j - 1);
    for (int pass = 0; pass < 2 && j > 0; ++pass) {
      u -= ubasis.leftCols(j) * (ubasis.leftCols(j).transpose() * u);
    }
    const double a_j = u.norm();
    alpha.push_back(a_j);
    if (a_j > breakdown) u /= a_j;
    ubasis.col(j) = u;

    w.noalias() = a.transpose() * u;
    w -= a_j * v;
    for (int pass = 0; pass < 2; ++pass) {
      w -= vbasis.leftCols(j + 1) * (vbasis.leftCols(j + 1).transpose() * w);
    }
    const double b_j = w.norm();
    beta.push_back(b_j);

    const Index steps = j + 1;
    const bool stop = a_j <= breakdown || b_j <= breakdown || steps == max_steps;
    if (stop || (steps > count && steps % 2 == 0)) {
      bidiagonal_svd(alpha, beta, steps, values, last_row);
      const Index have = std::min<Index>(count, values.size());
      bool converged = true;
      for (Index i = 0; i < have; ++i) {
        if (b_j * std::abs(last_row[i]) > rel_tol * values[0]) converged = false;
      }
      if (stop || converged) {
        result.head(have) = values.head(have);
        return result;
      }
    }
    previous_beta = b_j;
    v = w / b_j;
  }
  return result;
}

}  // namespace detail

/// The `count` largest singular values of m, zero-padded when m has fewer.
/// Small matrices use a full SVD; larger ones use Lanczos bidiagonalization
/// converged to rel_tol relative to sigma_1.
inline Vector top_singular_values(const Matrix& m, Index count, double rel_tol = 1e-12) {
  Vector out = Vector::Zero(count);
  if (m.size() == 0 || count <= 0) return out;
  if (std::min(m.rows(), m.cols()) <= detail::kDirectSvdLimit) {
    Eigen::BDCSVD<Matrix> svd(m);
    const Index have = std::min<Index>(count, svd.singularValues().size());
    out.head(have) = svd.singularValues().head(have);
    return out;
  }
  if (m.cwiseAbs().maxCoeff() == 0.0) return out;
  return detail::lanczos_top_singular_values(m, count, rel_tol);
}

/// (sigma_1, sigma_2); sigma_2 is 0 for rank-one shapes such as 1 x n.
inline std::pair<double, double> top_two_singvals(const Matrix& m) {
  const Vector s = top_singular_values(m, 2);
  return {s[0], s[1]};
}

/// Spectral norm.
inline double spectral_norm(const Matrix& m, double rel_tol = 1e-12) {
  return top_singular_values(m, 1, rel_tol)[0];
}

/// Dense k1 x k2 x k3 tensor stored with the last index fastest.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(Index d0, Index d1, Index d2)
      : d0_(d0), d1_(d1), d2_(d2), data_(static_cast<std::size_t>(d0 * d1 * d2), 0.0) {}

  Index dim(int mode) const noexcept { return mode == 0 ? d0_ : (mode == 1 ? d1_ : d2_); }
  double& operator()(Index i, Index j, Index l) { return data_[offset(i, j, l)]; }
  double operator()(Index i, Index j, Index l) const { return data_[offset(i, j, l)]; }
  const std::vector<double>& data() const noexcept { return data_; }

  double frobenius_norm() const {
    double s = 0.0;
    for (double x : data_) s += x * x;
    return std::sqrt(s);
  }

  Tensor3& operator+=(const Tensor3& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor3& operator-=(const Tensor3& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  friend Tensor3 operator-(Tensor3 a, const Tensor3& b) { return a -= b; }

  /// this += weight * a (x) b (x) c
  void add_rank_one(double weight, const Vector& a, const Vector& b, const Vector& c) {
    if (a.size() != d0_ || b.size() != d1_ || c.size() != d2_) {
      throw DimensionError("Tensor3::add_rank_one: factor lengths do not match");
    }
    for (Index i = 0; i < d0_; ++i) {
      for (Index j = 0; j < d1_; ++j) {
        const double s = weight * a[i] * b[j];
        double* row = &data_[offset(i, j, 0)];
        for (Index l = 0; l < d2_; ++l) row[l] += s * c[l];
      }
    }
  }

  /// T(I, x, x) for a cubical tensor.
  Vector contract_last_two(const Vector& x) const {
    Vector out = Vector::Zero(d0_);
    for (Index i = 0; i < d0_; ++i) {
      double s = 0.0;
      for (Index j = 0; j < d1_; ++j) {
        const double* row = &data_[offset(i, j, 0)];
        double inner = 0.0;
        for (Index l = 0; l < d2_; ++l) inner += row[l] * x[l];
        s += x[j] * inner;
      }
      out[i] = s;
    }
    return out;
  }

  /// T(x, y, z)
  double evaluate(const Vector& x, const Vector& y, const Vector& z) const {
    double s = 0.0;
    for (Index i = 0; i < d0_; ++i) {
      for (Index j = 0; j < d1_; ++j) {
        const double* row = &data_[offset(i, j, 0)];
        double inner = 0.0;
        for (Index l = 0; l < d2_; ++l) inner += row[l] * z[l];
        s += x[i] * y[j] * inner;
      }
    }
    return s;
  }

  double evaluate(const Vector& x) const { return evaluate(x, x, x); }

  /// T(M1, M2, M3): contracts mode n with the columns of Mn.
  Tensor3 multilinear(const Matrix& m1, const Matrix& m2, const Matrix& m3) const {
    if (m1.rows() != d0_ || m2.rows() != d1_ || m3.rows() != d2_) {
      throw DimensionError("Tensor3::multilinear: contraction rows do not match");
    }
    Tensor3 out(m1.cols(), m2.cols(), m3.cols());
    for (Index i = 0; i < d0_; ++i) {
      for (Index j = 0; j < d1_; ++j) {
        for (Index l = 0; l < d2_; ++l) {
          const double t = (*this)(i, j, l);
          if (t == 0.0) continue;
          for (Index a = 0; a < m1.cols(); ++a) {
            const double ta = t * m1(i, a);
            for (Index b = 0; b < m2.cols(); ++b) {
              const double tab = ta * m2(j, b);
              for (Index c = 0; c < m3.cols(); ++c) out(a, b, c) += tab * m3(l, c);
            }
          }
        }
      }
    }
    return out;
  }

  /// Largest deviation from symmetry under the mode permutations.
  double asymmetry() const {
    if (d0_ != d1_ || d1_ != d2_) return std::numeric_limits<double>::infinity();
    double worst = 0.0;
    for (Index i = 0; i < d0_; ++i) {
      for (Index j = 0; j < d0_; ++j) {
        for (Index l = 0; l < d0_; ++l) {
          const double t = (*this)(i, j, l);
          worst = std::max({worst, std::abs(t - (*this)(j, i, l)), std::abs(t - (*this)(l, j, i)),
                            std::abs(t - (*this)(i, l, j))});
        }
      }
    }
    return worst;
  }

 private:
  std::size_t offset(Index i, Index j, Index l) const noexcept {
    return static_cast<std::size_t>((i * d1_ + j) * d2_ + l);
  }
  void check_same(const Tensor3& o) const {
    if (o.d0_ != d0_ || o.d1_ != d1_ || o.d2_ != d2_) throw DimensionError("Tensor3: shape mismatch");
  }

  Index d0_ = 0;
  Index d1_ = 0;
  Index d2_ = 0;
  std::vector<double> data_;
};

/// sum_i w_i a_i (x) b_i (x) c_i over the columns of A, B, C.
inline Tensor3 cp_tensor(const Vector& w, const Matrix& a, const Matrix& b, const Matrix& c) {
  if (a.cols() != w.size() || b.cols() != w.size() || c.cols() != w.size()) {
    throw DimensionError("cp_tensor: factor column counts differ from weight length");
  }
  Tensor3 t(a.rows(), b.rows(), c.rows());
  for (Index i = 0; i < w.size(); ++i) t.add_rank_one(w[i], a.col(i), b.col(i), c.col(i));
  return t;
}

}  // namespace mmsf
