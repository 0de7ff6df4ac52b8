#pragma once

// Recovery metrics, sample-size and separation predicates with unit
// constants, plug-in error bounds, and community alignment.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "mmsf/errors.hpp"
#include "mmsf/generator.hpp"
#include "mmsf/linalg.hpp"
#include "mmsf/model.hpp"

namespace mmsf {

// ---------------------------------------------------------------------------
// Alignment. Memberships are k x n with one row per community; perm[i] is the
// row of the estimate matched to truth row i.

using Permutation = std::vector<int>;

inline Matrix alignment_costs(const Matrix& est, const Matrix& truth) {
  if (est.rows() != truth.rows() || est.cols() != truth.cols()) {
    throw DimensionError("align_columns: estimate and truth shapes differ");
  }
  const Index k = truth.rows();
  Matrix cost(k, k);
  for (Index i = 0; i < k; ++i) {
    for (Index j = 0; j < k; ++j) cost(i, j) = (est.row(j) - truth.row(i)).norm();
  }
  return cost;
}

namespace detail {

/// Minimum-cost assignment (Hungarian method, O(k^3)); result[i] = column for row i.
inline Permutation hungarian(const Matrix& cost) {
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<int> p(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(n + 1), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  Permutation out(static_cast<std::size_t>(n));
  for (int j = 1; j <= n; ++j) out[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return out;
}

inline double assignment_cost(const Matrix& cost, const Permutation& perm) {
  double s = 0.0;
  for (std::size_t i = 0; i < perm.size(); ++i) s += cost(static_cast<Index>(i), perm[i]);
  return s;
}

}  // namespace detail

inline constexpr int kExhaustiveAlignmentLimit = 8;

/// Permutation minimizing sum_i ||est^{perm[i]} - truth^i||_2. Exhaustive in
/// lexicographic order for k <= 8 (first minimum wins), Hungarian above.
inline Permutation align_columns(const Matrix& est, const Matrix& truth) {
  const Matrix cost = alignment_costs(est, truth);
  const int k = static_cast<int>(cost.rows());
  Permutation perm(static_cast<std::size_t>(k));
  std::iota(perm.begin(), perm.end(), 0);
  if (k > kExhaustiveAlignmentLimit) return detail::hungarian(cost);
  Permutation best = perm;
  double best_cost = detail::assignment_cost(cost, perm);
  while (std::next_permutation(perm.begin(), perm.end())) {
    const double c = detail::assignment_cost(cost, perm);
    if (c < best_cost) {
      best_cost = c;
      best = perm;
    }
  }
  return best;
}

inline Matrix apply_alignment(const Matrix& est, const Permutation& perm) {
  if (static_cast<Index>(perm.size()) != est.rows()) throw DimensionError("apply_alignment: permutation length");
  Matrix out(est.rows(), est.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) out.row(static_cast<Index>(i)) = est.row(perm[i]);
  return out;
}

inline bool is_permutation_of_k(const Permutation& perm) {
  std::vector<int> s = perm;
  std::sort(s.begin(), s.end());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != static_cast<int>(i)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Error metrics on aligned k x n memberships.

inline double l2_max_row_error(const Matrix& est, const Matrix& truth) {
  if (est.rows() != truth.rows() || est.cols() != truth.cols()) {
    throw DimensionError("l2_max_row_error: shapes differ");
  }
  if (est.size() == 0) return 0.0;
  return (est - truth).rowwise().norm().maxCoeff();
}

inline double l1_max_row_error(const Matrix& est, const Matrix& truth) {
  if (est.rows() != truth.rows() || est.cols() != truth.cols()) {
    throw DimensionError("l1_max_row_error: shapes differ");
  }
  if (est.size() == 0) return 0.0;
  return (est - truth).cwiseAbs().rowwise().sum().maxCoeff();
}

inline double max_abs_error(const Matrix& est, const Matrix& truth) {
  if (est.rows() != truth.rows() || est.cols() != truth.cols()) throw DimensionError("max_abs_error: shapes differ");
  if (est.size() == 0) return 0.0;
  return (est - truth).cwiseAbs().maxCoeff();
}

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  Index true_positives = 0;
};

/// Empty detections have precision 0; an empty truth set has recall 1.
inline PrecisionRecall pure_precision_recall(const std::vector<Index>& detected, const std::vector<Index>& truth) {
  std::vector<Index> d = detected;
  std::vector<Index> t = truth;
  std::sort(d.begin(), d.end());
  std::sort(t.begin(), t.end());
  std::vector<Index> both;
  std::set_intersection(d.begin(), d.end(), t.begin(), t.end(), std::back_inserter(both));
  PrecisionRecall pr;
  pr.true_positives = static_cast<Index>(both.size());
  pr.precision = d.empty() ? 0.0 : static_cast<double>(both.size()) / static_cast<double>(d.size());
  pr.recall = t.empty() ? 1.0 : static_cast<double>(both.size()) / static_cast<double>(t.size());
  return pr;
}

// ---------------------------------------------------------------------------
// Second moments E[pi pi^T]

/// Closed form for the mixture: rho/k I plus (1 - rho) times the Dirichlet
/// second moment (alpha_i alpha_j + [i = j] alpha_i) / (alpha_0 (alpha_0 + 1)).
inline Matrix analytic_second_moment(int k, double rho, const std::vector<double>& alpha) {
  if (static_cast<int>(alpha.size()) != k) throw DimensionError("analytic_second_moment: alpha length");
  const double a0 = std::accumulate(alpha.begin(), alpha.end(), 0.0);
  Matrix m(k, k);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      const double ai = alpha[static_cast<std::size_t>(i)];
      const double aj = alpha[static_cast<std::size_t>(j)];
      const double dir = (ai * aj + (i == j ? ai : 0.0)) / (a0 * (a0 + 1.0));
      m(i, j) = (1.0 - rho) * dir + (i == j ? rho / k : 0.0);
    }
  }
  return m;
}

inline Matrix empirical_second_moment(const Matrix& pi) {
  if (pi.cols() == 0) throw ArgumentError("empirical_second_moment: no nodes");
  return pi * pi.transpose() / static_cast<double>(pi.cols());
}

struct SpectrumSummary {
  double sigma_k = 0.0;
  double sigma_1 = 0.0;
  double kappa = std::numeric_limits<double>::infinity();
};

inline SpectrumSummary second_moment_spectrum(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  const Vector& ev = eig.eigenvalues();
  SpectrumSummary s;
  s.sigma_k = std::max(ev[0], 0.0);
  s.sigma_1 = ev[ev.size() - 1];
  if (s.sigma_k > 0.0) s.kappa = s.sigma_1 / s.sigma_k;
  return s;
}

// ---------------------------------------------------------------------------
// Assumption predicates with all hidden constants set to one.

struct AssumptionInputs {
  int k = 2;
  double n = 0.0;  // nodes per part
  double p = 0.0;
  double q = 0.0;
  double rho = 0.0;
  Matrix second_moment;  // E[pi pi^T]
};

struct AssumptionReport {
  double sigma_k = 0.0;
  double kappa = 0.0;
  double rank_test_required_n = 0.0;  // sample requirement of the rank test
  double rank_test_margin = 0.0;      // n / required
  bool rank_test_pass = false;
  double separation_lhs = 0.0;  // (p - q)^2 / p
  double separation_rhs = 0.0;  // sqrt(k) / (sqrt(n rho) sigma_k)
  double separation_margin = 0.0;
  bool separation_pass = false;
  std::optional<bool> kr_full_column_rank;  // F (.) F~
  std::optional<bool> pi_y_full_row_rank;   // both resource halves
  std::string constants = "all hidden constants and log factors set to 1";

  bool all_pass() const {
    return rank_test_pass && separation_pass && kr_full_column_rank.value_or(true) && pi_y_full_row_rank.value_or(true);
  }
};

/// n = sigma_k^-3 kappa^-2 (((p-q)/k + q) / ((p-q)/sqrt(k) + q))^2.
inline double rank_test_sample_requirement(int k, double p, double q, double sigma_k, double kappa) {
  const double d = p - q;
  const double num = d / k + q;
  const double den = d / std::sqrt(static_cast<double>(k)) + q;
  if (!(sigma_k > 0.0) || !(den > 0.0)) return std::numeric_limits<double>::infinity();
  const double ratio = num / den;
  return std::pow(sigma_k, -3.0) * std::pow(kappa, -2.0) * ratio * ratio;
}

inline AssumptionReport assumption_report(const AssumptionInputs& in) {
  AssumptionReport r;
  const SpectrumSummary s = second_moment_spectrum(in.second_moment);
  r.sigma_k = s.sigma_k;
  r.kappa = s.kappa;
  r.rank_test_required_n = rank_test_sample_requirement(in.k, in.p, in.q, s.sigma_k, s.kappa);
  r.rank_test_margin = in.n / r.rank_test_required_n;
  r.rank_test_pass = r.rank_test_margin >= 1.0;
  const double d = in.p - in.q;
  r.separation_lhs = in.p > 0.0 ? d * d / in.p : 0.0;
  if (in.p <= in.q) r.separation_lhs = 0.0;
  const double denom = std::sqrt(in.n * in.rho) * s.sigma_k;
  r.separation_rhs = denom > 0.0 ? std::sqrt(static_cast<double>(in.k)) / denom
                                 : std::numeric_limits<double>::infinity();
  r.separation_margin = r.separation_lhs / r.separation_rhs;
  r.separation_pass = r.separation_margin >= 1.0 && r.separation_lhs > 0.0;
  return r;
}

/// Adds the exact-moment rank hypotheses for a concrete instance.
inline void add_rank_checks(AssumptionReport& r, const GroundTruth& truth, const PartitionSpec& part) {
  const Matrix h = khatri_rao(connectivity_factor(truth.users, truth.conn.p),
                              connectivity_factor(truth.tags, truth.conn.p_tilde));
  const Index k = truth.conn.k();
  r.kr_full_column_rank = numerical_rank(Eigen::BDCSVD<Matrix>(h).singularValues(), 1e-10) == k;
  bool ok = true;
  for (const auto* half : {&part.x, &part.y}) {
    Matrix pi(k, static_cast<Index>(half->size()));
    for (std::size_t j = 0; j < half->size(); ++j) pi.col(static_cast<Index>(j)) = truth.resources.weights.col((*half)[j]);
    ok = ok && numerical_rank(Eigen::BDCSVD<Matrix>(pi).singularValues(), 1e-10) == k;
  }
  r.pi_y_full_row_rank = ok;
}

// ---------------------------------------------------------------------------
// Plug-in error bounds with unit constants.

struct BoundInputs {
  int k = 2;
  double n = 0.0;
  double p = 0.0;
  double q = 0.0;
  double rho = 0.0;
  double kappa = 1.0;
  double sigma_k = 0.0;   // of E[pi pi^T]
  double w_min = 0.0;     // smallest pure-community frequency; 0 means 1/k
};

struct ErrorBound {
  bool infinite = false;
  double recovery = 0.0;  // sqrt(k) p kappa / (sqrt(rho) (p - q)^2)
  double distance = 0.0;  // sqrt(k) p
  double subspace = 0.0;  // sqrt(n / sigma_k) ((p - q)/k + q)
  double eps_g = 0.0;     // n ((p - q)/k + q)
  double eps_w = 0.0;     // p / (sqrt(n rho w_min) (p - q)^2 sigma_k)
  double eps_t = 0.0;     // p / (sqrt(n rho) w_min (p - q)^2 sigma_k)
};

inline ErrorBound theoretical_error_bound(const BoundInputs& in) {
  if (!(in.k >= 1) || !(in.n > 0.0) || !(in.rho > 0.0) || !(in.p > 0.0) || !(in.q >= 0.0)) {
    throw ArgumentError("theoretical_error_bound: inputs must be positive");
  }
  ErrorBound b;
  const double inf = std::numeric_limits<double>::infinity();
  const double d = in.p - in.q;
  const double sk = std::sqrt(static_cast<double>(in.k));
  const double w_min = in.w_min > 0.0 ? in.w_min : 1.0 / in.k;
  b.distance = sk * in.p;
  b.eps_g = in.n * (d / in.k + in.q);
  b.subspace = in.sigma_k > 0.0 ? std::sqrt(in.n / in.sigma_k) * (d / in.k + in.q) : inf;
  if (!(d > 0.0)) {
    b.infinite = true;
    b.recovery = b.eps_w = b.eps_t = inf;
    return b;
  }
  b.recovery = sk * in.p * in.kappa / (std::sqrt(in.rho) * d * d);
  b.eps_w = in.sigma_k > 0.0 ? in.p / (std::sqrt(in.n * in.rho * w_min) * d * d * in.sigma_k) : inf;
  b.eps_t = in.sigma_k > 0.0 ? in.p / (std::sqrt(in.n * in.rho) * w_min * d * d * in.sigma_k) : inf;
  return b;
}

/// Membership threshold tau = bound * k / n.
inline double membership_threshold(const ErrorBound& b, int k, double n) {
  if (b.infinite || !std::isfinite(b.recovery)) return 0.0;
  return b.recovery * k / n;
}

// ---------------------------------------------------------------------------

struct RecoveryReport {
  Permutation permutation;
  double l2_max_row = 0.0;       // before thresholding
  double l1_max_row_pre = 0.0;   // before thresholding
  double l1_max_row = 0.0;       // after thresholding
  double max_abs = 0.0;          // before thresholding
  PrecisionRecall pure;
  std::optional<AssumptionReport> assumptions;
  std::optional<ErrorBound> bound;
  double bound_ratio = 0.0;  // l2_max_row / recovery bound

  void check() const {
    if (!is_permutation_of_k(permutation)) throw ContractViolation("recovery report: alignment is not a permutation");
    if (l2_max_row < 0.0 || l1_max_row < 0.0 || l1_max_row_pre < 0.0) {
      throw ContractViolation("recovery report: negative metric");
    }
  }
};

/// Aligns the pre-threshold estimate to the truth and scores both versions
/// under that alignment.
inline RecoveryReport evaluate_recovery(const Matrix& pi_tilde, const Matrix& pi_hat, const Matrix& truth) {
  RecoveryReport r;
  r.permutation = align_columns(pi_tilde, truth);
  const Matrix pre = apply_alignment(pi_tilde, r.permutation);
  const Matrix post = apply_alignment(pi_hat, r.permutation);
  r.l2_max_row = l2_max_row_error(pre, truth);
  r.l1_max_row_pre = l1_max_row_error(pre, truth);
  r.l1_max_row = l1_max_row_error(post, truth);
  r.max_abs = max_abs_error(pre, truth);
  return r;
}

}  // namespace mmsf
