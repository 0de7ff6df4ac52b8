#pragma once

// Tensor stage: the 3-star moment over detected pure resources, multi-view
// whitening and symmetrization, robust tensor power iteration with guarded
// deflation, and reconstruction of memberships.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "mmsf/errors.hpp"
#include "mmsf/linalg.hpp"
#include "mmsf/model.hpp"
#include "mmsf/parallel.hpp"
#include "mmsf/rng.hpp"

namespace mmsf {

namespace detail {

/// G(rows, cols) as a sparse |rows| x |cols| matrix.
template <class G>
SparseMatrix extract_block(const G& g, const std::vector<Index>& rows, const std::vector<Index>& cols) {
  std::vector<std::int64_t> row_map(static_cast<std::size_t>(g.rows()), -1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= g.rows()) throw DimensionError("extract_block: row out of range");
    row_map[static_cast<std::size_t>(rows[i])] = static_cast<std::int64_t>(i);
  }
  std::vector<Eigen::Triplet<double, std::int64_t>> trip;
  for (std::size_t j = 0; j < cols.size(); ++j) {
    const Index c = cols[j];
    if (c < 0 || c >= g.cols()) throw DimensionError("extract_block: column out of range");
    if constexpr (std::is_same_v<G, SparseMatrix>) {
      for (SparseMatrix::InnerIterator it(g, c); it; ++it) {
        const auto r = row_map[static_cast<std::size_t>(it.row())];
        if (r >= 0) trip.emplace_back(r, static_cast<std::int64_t>(j), it.value());
      }
    } else {
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const double v = g(rows[i], c);
        if (v != 0.0) trip.emplace_back(static_cast<std::int64_t>(i), static_cast<std::int64_t>(j), v);
      }
    }
  }
  SparseMatrix out(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
  out.setFromTriplets(trip.begin(), trip.end());
  return out;
}

inline std::vector<Index> all_indices(Index n) {
  std::vector<Index> v(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = i;
  return v;
}

}  // namespace detail

/// Empirical 3-star moment (1/|R~|) sum_r g_A(r) (x) g_B(r) (x) g_C(r), kept
/// as its three |block| x |R~| factor matrices.
class ThreeStarMoment {
 public:
  ThreeStarMoment(SparseMatrix a, SparseMatrix b, SparseMatrix c) : a_(std::move(a)), b_(std::move(b)), c_(std::move(c)) {
    if (a_.cols() == 0) throw ArgumentError("three-star moment: empty pure set");
    if (b_.cols() != a_.cols() || c_.cols() != a_.cols()) throw DimensionError("three-star moment: factor widths differ");
  }

  template <class G>
  static ThreeStarMoment from_adjacency(const G& g, const std::vector<Index>& pure, const std::vector<Index>& a,
                                        const std::vector<Index>& b, const std::vector<Index>& c) {
    if (pure.empty()) throw ArgumentError("three-star moment: empty pure set");
    std::vector<Index> rows;
    rows.insert(rows.end(), a.begin(), a.end());
    rows.insert(rows.end(), b.begin(), b.end());
    rows.insert(rows.end(), c.begin(), c.end());
    std::sort(rows.begin(), rows.end());
    if (std::adjacent_find(rows.begin(), rows.end()) != rows.end()) {
      throw ArgumentError("three-star moment: blocks A, B, C must be disjoint");
    }
    return {detail::extract_block(g, a, pure), detail::extract_block(g, b, pure), detail::extract_block(g, c, pure)};
  }

  Index terms() const noexcept { return a_.cols(); }
  const SparseMatrix& factor(int mode) const noexcept { return mode == 0 ? a_ : (mode == 1 ? b_ : c_); }

  /// T(M1, M2, M3) from the factored form.
  Tensor3 contract(const Matrix& m1, const Matrix& m2, const Matrix& m3) const {
    if (m1.rows() != a_.rows() || m2.rows() != b_.rows() || m3.rows() != c_.rows()) {
      throw DimensionError("three-star moment: contraction rows do not match block sizes");
    }
    const Matrix pa = Matrix(a_.transpose() * m1);
    const Matrix pb = Matrix(b_.transpose() * m2);
    const Matrix pc = Matrix(c_.transpose() * m3);
    return from_projected(pa, pb, pc);
  }

  /// (1/m) sum_r pa.row(r) (x) pb.row(r) (x) pc.row(r)
  static Tensor3 from_projected(const Matrix& pa, const Matrix& pb, const Matrix& pc) {
    Tensor3 t(pa.cols(), pb.cols(), pc.cols());
    const double inv = 1.0 / static_cast<double>(pa.rows());
    for (Index r = 0; r < pa.rows(); ++r) {
      t.add_rank_one(inv, pa.row(r).transpose(), pb.row(r).transpose(), pc.row(r).transpose());
    }
    return t;
  }

  double entry(Index i, Index j, Index l) const {
    const Vector x = Vector(a_.row(i).transpose());
    const Vector y = Vector(b_.row(j).transpose());
    const Vector z = Vector(c_.row(l).transpose());
    return (x.array() * y.array() * z.array()).sum() / static_cast<double>(terms());
  }

  /// Dense |A| x |B| x |C| tensor; small blocks only.
  Tensor3 materialize() const {
    const double cells = static_cast<double>(a_.rows()) * static_cast<double>(b_.rows()) * static_cast<double>(c_.rows());
    if (cells > 5e7) throw ArgumentError("three-star moment too large to materialize");
    return from_projected(Matrix(a_.transpose()), Matrix(b_.transpose()), Matrix(c_.transpose()));
  }

 private:
  SparseMatrix a_;
  SparseMatrix b_;
  SparseMatrix c_;
};

struct WhiteningBundle {
  Matrix w_a;  // |A| x k
  Matrix w_b;
  Matrix w_c;
  Matrix s_ab;  // k x k
  Matrix s_ac;
  Matrix y_a;  // k x |R~|: whitened pure columns W_X^T G(X, R~)
  Matrix y_b;
  Matrix y_c;
  double cond_ab = 0.0;  // sigma_1 / sigma_k of the pair matrices
  double cond_ac = 0.0;
  double cond_bc = 0.0;
  double whitening_defect = 0.0;  // max_X |W_X^T M2_X W_X - I|
};

namespace detail {

struct BlockBasis {
  Matrix v_scaled;  // V Lambda^{-1/2}: maps data coordinates to an orthonormal basis of col(X)
  Matrix l;         // Lambda^{1/2} V^T
};

inline BlockBasis block_basis(const SparseMatrix& x) {
  const Matrix gram = Matrix(x.transpose() * x);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
  const Vector& ev = eig.eigenvalues();
  const Index n = ev.size();
  const double top = n > 0 ? ev[n - 1] : 0.0;
  Index r = 0;
  while (r < n && ev[n - 1 - r] > 1e-10 * top && ev[n - 1 - r] > 0.0) ++r;
  BlockBasis b;
  b.v_scaled.resize(n, r);
  b.l.resize(r, n);
  for (Index i = 0; i < r; ++i) {
    const double lam = ev[n - 1 - i];
    const auto vi = eig.eigenvectors().col(n - 1 - i);
    b.v_scaled.col(i) = vi / std::sqrt(lam);
    b.l.row(i) = std::sqrt(lam) * vi.transpose();
  }
  return b;
}

inline double pair_condition(const Matrix& core, Index k, const char* name) {
  const Vector s = Eigen::BDCSVD<Matrix>(core).singularValues();
  const Index rank = numerical_rank(s, 1e-10);
  if (rank < k) {
    throw RankDeficiency(std::string("pair matrix ") + name + " has numerical rank " + std::to_string(rank) +
                         " < k = " + std::to_string(k));
  }
  return s[0] / s[k - 1];
}

/// Top-k eigenpairs of the symmetrized core; all k must be positive.
inline std::pair<Matrix, Vector> top_eigenpairs(const Matrix& core, Index k, const char* name) {
  const Matrix sym = 0.5 * (core + core.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  const Index n = sym.rows();
  if (n < k) {
    throw RankDeficiency(std::string("second moment for view ") + name + " has dimension below k");
  }
  Matrix u(n, k);
  Vector d(k);
  const double top = std::abs(eig.eigenvalues()[n - 1]);
  for (Index i = 0; i < k; ++i) {
    d[i] = eig.eigenvalues()[n - 1 - i];
    u.col(i) = eig.eigenvectors().col(n - 1 - i);
    if (!(d[i] > 1e-12 * top)) {
      throw RankDeficiency(std::string("symmetrized second moment for view ") + name +
                           " is not positive definite on k directions");
    }
  }
  return {u, d};
}

}  // namespace detail

/// Multi-view whitening. With Pairs_XY = (1/m) G(X, R~) G(Y, R~)^T, view A is
/// whitened against M2_A = Pairs_AC Pairs_BC^+ Pairs_BA (and cyclically for
/// B and C), all computed inside the column spaces of the three blocks. The
/// symmetrizers S_AB, S_AC map whitened B and C vectors into the A frame.
inline WhiteningBundle build_whitening(const ThreeStarMoment& moment, Index k) {
  if (k < 1) throw ArgumentError("build_whitening: k must be positive");
  const double m = static_cast<double>(moment.terms());
  std::array<detail::BlockBasis, 3> basis;
  // A block of rank below k surfaces as a deficient pair matrix below.
  for (int v = 0; v < 3; ++v) basis[static_cast<std::size_t>(v)] = detail::block_basis(moment.factor(v));
  const Matrix& la = basis[0].l;
  const Matrix& lb = basis[1].l;
  const Matrix& lc = basis[2].l;
  const Matrix c_ab = la * lb.transpose() / m;
  const Matrix c_ac = la * lc.transpose() / m;
  const Matrix c_bc = lb * lc.transpose() / m;

  WhiteningBundle out;
  out.cond_ab = detail::pair_condition(c_ab, k, "Pairs_AB");
  out.cond_ac = detail::pair_condition(c_ac, k, "Pairs_AC");
  out.cond_bc = detail::pair_condition(c_bc, k, "Pairs_BC");

  const Matrix k_a = c_ac * pinv_truncated(c_bc, k) * c_ab.transpose();
  const Matrix k_b = c_bc * pinv_truncated(c_ac, k) * c_ab;
  const Matrix k_c = c_bc.transpose() * pinv_truncated(c_ab, k) * c_ac;

  const Matrix* cores[] = {&k_a, &k_b, &k_c};
  const char* names[] = {"A", "B", "C"};
  Matrix* whiteners[] = {&out.w_a, &out.w_b, &out.w_c};
  Matrix* whitened[] = {&out.y_a, &out.y_b, &out.y_c};
  for (int v = 0; v < 3; ++v) {
    const auto& bb = basis[static_cast<std::size_t>(v)];
    const auto [u, d] = detail::top_eigenpairs(*cores[v], k, names[v]);
    const Matrix ud = u * d.cwiseSqrt().cwiseInverse().asDiagonal();  // U_k D^{-1/2}
    *whiteners[v] = Matrix(moment.factor(v) * (bb.v_scaled * ud));
    *whitened[v] = ud.transpose() * bb.l;
    const Matrix sym = 0.5 * (*cores[v] + cores[v]->transpose());
    const Matrix check = ud.transpose() * sym * ud - Matrix::Identity(k, k);
    out.whitening_defect = std::max(out.whitening_defect, check.cwiseAbs().maxCoeff());
  }
  out.s_ab = out.y_b * out.y_a.transpose() / m;
  out.s_ac = out.y_c * out.y_a.transpose() / m;
  return out;
}

/// T(W_A, W_B S_AB, W_C S_AC), a k x k x k tensor.
inline Tensor3 whitened_tensor(const WhiteningBundle& wb) {
  const Matrix pb = wb.y_b.transpose() * wb.s_ab;
  const Matrix pc = wb.y_c.transpose() * wb.s_ac;
  return ThreeStarMoment::from_projected(wb.y_a.transpose(), pb, pc);
}

inline Tensor3 whitened_tensor(const ThreeStarMoment& moment, const WhiteningBundle& wb) {
  return moment.contract(wb.w_a, wb.w_b * wb.s_ab, wb.w_c * wb.s_ac);
}

struct PowerConfig {
  int inits = 0;  // 0: max(10k, 100)
  int iterations = 50;
  double xi = 1e-6;
  int threads = 1;

  int resolved_inits(Index k) const { return inits > 0 ? inits : std::max<int>(10 * static_cast<int>(k), 100); }
};

struct EigenResult {
  Vector eigenvalues;
  Matrix eigenvectors;  // columns
  double residual = 0.0;
  std::vector<int> iterations;  // power updates performed per component
};

namespace detail {

/// Current deflation state seen by one power iteration.
struct Deflated {
  const Tensor3& t;
  const Vector& lambda;
  const Matrix& phi;
  Index found;
  double xi;

  bool guarded(Index j, const Vector& theta) const { return std::abs(lambda[j] * theta.dot(phi.col(j))) > xi; }

  /// T~(I, theta, theta) with T~ deflated by the components that pass the guard at theta.
  Vector apply(const Vector& theta) const {
    Vector v = t.contract_last_two(theta);
    for (Index j = 0; j < found; ++j) {
      if (guarded(j, theta)) {
        const double ip = theta.dot(phi.col(j));
        v -= lambda[j] * ip * ip * phi.col(j);
      }
    }
    return v;
  }

  double value(const Vector& theta) const {
    double s = t.evaluate(theta);
    for (Index j = 0; j < found; ++j) {
      if (guarded(j, theta)) s -= lambda[j] * std::pow(theta.dot(phi.col(j)), 3);
    }
    return s;
  }

  /// N power updates; a zero update leaves theta unchanged.
  int iterate(Vector& theta, int n, Index component) const {
    int done = 0;
    for (int it = 0; it < n; ++it) {
      const Vector v = apply(theta);
      const double nv = v.norm();
      if (!std::isfinite(nv)) {
        throw NumericalFailure("tensor power iteration produced non-finite values at component " +
                               std::to_string(component + 1));
      }
      if (nv == 0.0) break;
      theta = v / nv;
      ++done;
    }
    return done;
  }
};

}  // namespace detail

/// Robust tensor power method with deflation. `inits` holds the L starting
/// vectors as columns.
inline EigenResult tensor_eigen(const Tensor3& t, const Matrix& inits, int n_iter, double xi, int threads = 1) {
  const Index k = t.dim(0);
  if (t.dim(1) != k || t.dim(2) != k) throw DimensionError("tensor_eigen: tensor must be cubical");
  if (inits.rows() != k) throw DimensionError("tensor_eigen: initialization length differs from k");
  if (inits.cols() < k) throw ArgumentError("tensor_eigen: need at least k initializations");
  if (n_iter < 1) throw ArgumentError("tensor_eigen: N must be at least 1");
  const Index trials = inits.cols();

  EigenResult res;
  res.eigenvalues = Vector::Zero(k);
  res.eigenvectors = Matrix::Zero(k, k);
  res.iterations.assign(static_cast<std::size_t>(k), 0);

  for (Index i = 0; i < k; ++i) {
    const detail::Deflated defl{t, res.eigenvalues, res.eigenvectors, i, xi};
    std::vector<Vector> theta(static_cast<std::size_t>(trials));
    std::vector<double> score(static_cast<std::size_t>(trials));
    std::vector<int> steps(static_cast<std::size_t>(trials));
    parallel_for(static_cast<std::size_t>(trials), threads, [&](std::size_t tr) {
      Vector th = inits.col(static_cast<Index>(tr));
      const double nrm = th.norm();
      if (!(nrm > 0.0) || !std::isfinite(nrm)) {
        throw ArgumentError("tensor_eigen: initialization " + std::to_string(tr + 1) + " is zero or non-finite");
      }
      th /= nrm;
      steps[tr] = defl.iterate(th, n_iter, i);
      score[tr] = defl.value(th);
      theta[tr] = std::move(th);
    });
    std::size_t best = 0;
    for (std::size_t tr = 1; tr < score.size(); ++tr) {
      if (score[tr] > score[best]) best = tr;
    }
    Vector phi = theta[best];
    int total = 0;
    for (int s : steps) total += s;
    total += defl.iterate(phi, n_iter, i);
    double lambda = defl.value(phi);
    if (!std::isfinite(lambda)) {
      throw NumericalFailure("tensor power iteration produced a non-finite eigenvalue at component " +
                             std::to_string(i + 1));
    }
    if (lambda < 0.0) {
      lambda = -lambda;
      phi = -phi;
    }
    res.eigenvalues[i] = lambda;
    res.eigenvectors.col(i) = phi;
    res.iterations[static_cast<std::size_t>(i)] = total;
  }
  Tensor3 fit = cp_tensor(res.eigenvalues, res.eigenvectors, res.eigenvectors, res.eigenvectors);
  res.residual = (t - fit).frobenius_norm();
  return res;
}

inline EigenResult tensor_eigen(const Tensor3& t, const Matrix& inits, const PowerConfig& cfg) {
  return tensor_eigen(t, inits, cfg.iterations, cfg.xi, cfg.threads);
}

/// Starting vectors: normalized whitened pure-node columns, topped up with
/// seeded uniform random unit vectors when there are fewer than L of them.
inline Matrix default_initializations(const Matrix& whitened_columns, int count, std::uint64_t seed) {
  const Index k = whitened_columns.rows();
  Matrix out(k, count);
  Index filled = 0;
  for (Index j = 0; j < whitened_columns.cols() && filled < count; ++j) {
    const double n = whitened_columns.col(j).norm();
    if (n > 0.0 && std::isfinite(n)) out.col(filled++) = whitened_columns.col(j) / n;
  }
  std::normal_distribution<double> gauss(0.0, 1.0);
  while (filled < count) {
    Engine rng = make_engine(seed, Stream::power_inits, static_cast<std::uint64_t>(filled));
    Vector v(k);
    for (Index i = 0; i < k; ++i) v[i] = gauss(rng);
    const double n = v.norm();
    if (n > 0.0) out.col(filled++) = v / n;
  }
  return out;
}

namespace detail {

/// W^T G(rows, :) as a k x |cols(G)| matrix.
template <class G>
Matrix block_transpose_product(const G& g, const std::vector<Index>& rows, const Matrix& w) {
  if (static_cast<Index>(rows.size()) != w.rows()) throw DimensionError("block product: row count mismatch");
  if constexpr (std::is_same_v<G, SparseMatrix>) {
    std::vector<std::int64_t> row_map(static_cast<std::size_t>(g.rows()), -1);
    for (std::size_t i = 0; i < rows.size(); ++i) row_map[static_cast<std::size_t>(rows[i])] = static_cast<std::int64_t>(i);
    Matrix out = Matrix::Zero(w.cols(), g.cols());
    for (Index c = 0; c < g.cols(); ++c) {
      for (SparseMatrix::InnerIterator it(g, c); it; ++it) {
        const auto r = row_map[static_cast<std::size_t>(it.row())];
        if (r >= 0) out.col(c) += it.value() * w.row(r).transpose();
      }
    }
    return out;
  } else {
    Matrix sub(static_cast<Index>(rows.size()), g.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) sub.row(static_cast<Index>(i)) = g.row(rows[i]);
    return w.transpose() * sub;
  }
}

}  // namespace detail

/// Pi~ = Diag(lambda)^{-1} Phi^T W_A^T G(A, :), one column per resource.
template <class G>
Matrix reconstruct_memberships(const EigenResult& eig, const Matrix& w_a, const G& g, const std::vector<Index>& a) {
  for (Index i = 0; i < eig.eigenvalues.size(); ++i) {
    if (eig.eigenvalues[i] == 0.0 || !std::isfinite(eig.eigenvalues[i])) {
      throw NumericalFailure("reconstruct_memberships: eigenvalue " + std::to_string(i + 1) +
                             " is zero or non-finite");
    }
  }
  const Matrix proj = detail::block_transpose_product(g, a, w_a);
  return eig.eigenvalues.cwiseInverse().asDiagonal() * (eig.eigenvectors.transpose() * proj);
}

/// Clamps negatives to zero, then zeroes entries below tau. No renormalization.
inline Matrix threshold_memberships(const Matrix& pi, double tau) {
  if (!(tau >= 0.0)) throw ArgumentError("threshold_memberships: tau must be nonnegative");
  return pi.unaryExpr([tau](double x) { return x < tau || x < 0.0 ? 0.0 : x; });
}

/// Euclidean projection of every column onto the probability simplex.
inline Matrix project_to_simplex(const Matrix& pi) {
  Matrix out(pi.rows(), pi.cols());
  std::vector<double> u(static_cast<std::size_t>(pi.rows()));
  for (Index j = 0; j < pi.cols(); ++j) {
    for (Index i = 0; i < pi.rows(); ++i) u[static_cast<std::size_t>(i)] = pi(i, j);
    std::sort(u.begin(), u.end(), std::greater<>());
    double cum = 0.0;
    double theta = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
      cum += u[i];
      const double t = (cum - 1.0) / static_cast<double>(i + 1);
      if (u[i] - t > 0.0) theta = t;
    }
    for (Index i = 0; i < pi.rows(); ++i) out(i, j) = std::max(pi(i, j) - theta, 0.0);
  }
  return out;
}

struct UserTagEstimate {
  Matrix users;  // k x n_u, before thresholding
  Matrix tags;   // k x n_t
};

/// Users and tags from the recovered resource memberships and the known
/// connectivity. H = G Pi~^T (Pi~ Pi~^T)^{-1} estimates F (.) F~; each
/// column is split into F_c and F~_c by a rank-one SVD of its |U| x |T|
/// matricization, and the unknown per-column scales are fixed by requiring
/// the rows of F P^{-1} (resp. F~ P~^{-1}) to sum to one.
template <class G>
UserTagEstimate reconstruct_user_tag_memberships(const G& g, const Matrix& pi_tilde, const ConnectivityPair& conn,
                                                 const Dims& dims) {
  const Index k = pi_tilde.rows();
  if (pi_tilde.cols() != dims.n_r || g.rows() != dims.pair_count()) {
    throw DimensionError("reconstruct_user_tag_memberships: shapes do not match dims");
  }
  const Matrix gram = pi_tilde * pi_tilde.transpose();
  Eigen::FullPivLU<Matrix> lu(gram);
  if (!lu.isInvertible()) throw NumericalFailure("recovered resource memberships are rank deficient");
  const Matrix h = Matrix(g * pi_tilde.transpose()) * lu.inverse();
  const MatricizationShape shape(dims.n_u, dims.n_t);
  Matrix fu(dims.n_u, k);
  Matrix ft(dims.n_t, k);
  for (Index c = 0; c < k; ++c) {
    Eigen::BDCSVD<Matrix> svd(mat(h.col(c), shape), Eigen::ComputeThinU | Eigen::ComputeThinV);
    const double s = std::sqrt(svd.singularValues()[0]);
    fu.col(c) = s * svd.matrixU().col(0);
    ft.col(c) = s * svd.matrixV().col(0);
  }
  auto solve = [&](const Matrix& f, const Matrix& p) -> Matrix {
    Eigen::FullPivLU<Matrix> plu(p);
    if (!plu.isInvertible()) throw NumericalFailure("connectivity matrix is singular");
    const Matrix pinv = plu.inverse();
    const Vector d = pinv * Vector::Ones(k);
    const Matrix design = f * d.asDiagonal();
    const Vector scale = design.colPivHouseholderQr().solve(Vector::Ones(f.rows()));
    return (f * scale.asDiagonal() * pinv).transpose();
  };
  return {solve(fu, conn.p), solve(ft, conn.p_tilde)};
}

}  // namespace mmsf
