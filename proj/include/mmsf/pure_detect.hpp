#pragma once

// Pure resource detection: project each resource column onto the top-k left
// singular subspace of the other resource half, matricize the projection to
// |U| x |T| and accept the node when it is numerically rank one.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "mmsf/errors.hpp"
#include "mmsf/generator.hpp"
#include "mmsf/linalg.hpp"
#include "mmsf/model.hpp"
#include "mmsf/parallel.hpp"

namespace mmsf {

enum class ThresholdMode { oracle, heuristic, manual };

inline const char* to_string(ThresholdMode m) {
  switch (m) {
    case ThresholdMode::oracle: return "oracle";
    case ThresholdMode::heuristic: return "heuristic";
    case ThresholdMode::manual: return "manual";
  }
  return "?";
}

inline ThresholdMode parse_threshold_mode(const std::string& s) {
  if (s == "oracle") return ThresholdMode::oracle;
  if (s == "heuristic") return ThresholdMode::heuristic;
  if (s == "manual") return ThresholdMode::manual;
  throw ArgumentError("unknown threshold mode '" + s + "' (expected oracle, heuristic or manual)");
}

struct RankTestConfig {
  double tau1 = 0.0;
  double tau2 = 0.0;
  ThresholdMode mode = ThresholdMode::manual;

  void validate() const {
    if (!(tau1 > 0.0)) throw ArgumentError("rank test: tau1 must be positive");
    if (!(tau2 >= 0.0)) throw ArgumentError("rank test: tau2 must be nonnegative");
    if (!(tau1 > tau2)) throw ArgumentError("rank test: tau1 must exceed tau2");
  }
};

/// Implicit projector M_k M_k^T kept as its N x k basis.
struct Projection {
  Matrix basis;
  Vector singular_values;  // leading k singular values of G(:, Y)
  Index numerical_rank = 0;
  bool rank_deficient = false;

  Vector apply(const Vector& g) const { return basis * (basis.transpose() * g); }
  Matrix dense() const { return projector(basis); }
};

namespace detail {

inline constexpr double kRankCutoff = 1e-10;

inline SparseMatrix select_columns(const SparseMatrix& g, const std::vector<Index>& cols) {
  SparseMatrix out(g.rows(), static_cast<Index>(cols.size()));
  std::vector<std::int64_t> nnz(cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j) nnz[j] = g.col(cols[j]).nonZeros();
  out.reserve(nnz);
  for (std::size_t j = 0; j < cols.size(); ++j) {
    for (SparseMatrix::InnerIterator it(g, cols[j]); it; ++it) {
      out.insert(it.row(), static_cast<Index>(j)) = it.value();
    }
  }
  out.makeCompressed();
  return out;
}

inline Matrix select_columns(const Matrix& g, const std::vector<Index>& cols) {
  Matrix out(g.rows(), static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Index>(j)) = g.col(cols[j]);
  return out;
}

inline Vector column(const Matrix& g, Index j) { return g.col(j); }
inline Vector column(const SparseMatrix& g, Index j) { return Vector(g.col(j)); }

}  // namespace detail

/// Projection from dense columns G(:, Y).
inline Projection build_projection(const Matrix& g_y, Index k) {
  if (g_y.cols() < k) throw ArgumentError("build_projection: need at least k columns");
  TruncatedSvd svd = ksvd(g_y, k);
  Projection proj;
  proj.singular_values = svd.values;
  proj.numerical_rank = numerical_rank(svd.values, detail::kRankCutoff);
  proj.rank_deficient = proj.numerical_rank < k;
  proj.basis = std::move(svd.u);
  return proj;
}

/// Projection from sparse columns: eigen-decomposition of the |Y| x |Y| Gram
/// matrix, then M_k = G_Y V_k S_k^{-1} re-orthonormalized by QR. Directions
/// below the rank cutoff are dropped and flagged.
inline Projection build_projection(const SparseMatrix& g_y, Index k) {
  if (g_y.cols() < k) throw ArgumentError("build_projection: need at least k columns");
  const Matrix gram = Matrix(g_y.transpose() * g_y);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
  const Index n = gram.rows();
  Vector sv(k);
  for (Index i = 0; i < k; ++i) sv[i] = std::sqrt(std::max(eig.eigenvalues()[n - 1 - i], 0.0));
  Projection proj;
  proj.singular_values = sv;
  proj.numerical_rank = numerical_rank(sv, 1e-7);  // eigenvalues carry squared precision
  proj.rank_deficient = proj.numerical_rank < k;
  const Index r = proj.numerical_rank;
  Matrix v(n, r);
  for (Index i = 0; i < r; ++i) v.col(i) = eig.eigenvectors().col(n - 1 - i) / sv[i];
  Matrix m = g_y * v;
  Eigen::HouseholderQR<Matrix> qr(m);
  Matrix q = qr.householderQ() * Matrix::Identity(m.rows(), r);
  // keep the orientation of the singular vectors
  for (Index i = 0; i < r; ++i) {
    if (q.col(i).dot(m.col(i)) < 0.0) q.col(i) = -q.col(i);
  }
  proj.basis = std::move(q);
  return proj;
}

struct RankTestOutcome {
  bool is_pure = false;
  double sigma1 = 0.0;
  double sigma2 = 0.0;
};

/// Ties at either threshold count as not pure.
inline bool passes(const RankTestConfig& cfg, double s1, double s2) noexcept {
  return s1 > cfg.tau1 && s2 < cfg.tau2;
}

inline RankTestOutcome rank_test_node(const Projection& proj, const Vector& g_x, const MatricizationShape& shape,
                                      const RankTestConfig& cfg) {
  if (g_x.size() != shape.size()) throw DimensionError("rank_test_node: column length differs from |U||T|");
  const auto [s1, s2] = top_two_singvals(mat(proj.apply(g_x), shape));
  return {passes(cfg, s1, s2), s1, s2};
}

/// Rank-test singular values of every resource, each scored against the
/// projection built from the opposite half.
struct RankProfiles {
  Vector sigma1;
  Vector sigma2;
  Vector perturbation;  // ||mat(P g_x) - F diag(pi_x) F~^T||_2, synthetic runs only
  bool x_projection_deficient = false;
  bool y_projection_deficient = false;
  Index x_projection_rank = 0;
  Index y_projection_rank = 0;
};

template <class G>
RankProfiles score_resources(const G& g, const PartitionSpec& part, Index k, int threads = 0,
                             const GroundTruth* truth = nullptr) {
  const Dims& d = part.dims;
  if (g.rows() != d.pair_count() || g.cols() != d.n_r) {
    throw DimensionError("score_resources: adjacency shape does not match partition dims");
  }
  const MatricizationShape shape(d.n_u, d.n_t);
  RankProfiles out;
  out.sigma1 = Vector::Zero(d.n_r);
  out.sigma2 = Vector::Zero(d.n_r);
  if (truth) out.perturbation = Vector::Zero(d.n_r);

  Matrix fu;
  Matrix ft;
  if (truth) {
    fu = connectivity_factor(truth->users, truth->conn.p);
    ft = connectivity_factor(truth->tags, truth->conn.p_tilde);
  }

  auto score_half = [&](const std::vector<Index>& tested, const std::vector<Index>& basis_cols) {
    const Projection proj = build_projection(detail::select_columns(g, basis_cols), k);
    parallel_for(tested.size(), threads, [&](std::size_t i) {
      const Index x = tested[i];
      const Vector coeff = proj.basis.transpose() * g.col(x);
      const Matrix m = mat(proj.basis * coeff, shape);
      const auto [s1, s2] = top_two_singvals(m);
      out.sigma1[x] = s1;
      out.sigma2[x] = s2;
      if (truth) {
        const Matrix expected = fu * truth->resources.weights.col(x).asDiagonal() * ft.transpose();
        out.perturbation[x] = spectral_norm(m - expected);
      }
    });
    return proj;
  };
  const Projection from_y = score_half(part.x, part.y);
  out.x_projection_deficient = from_y.rank_deficient;
  out.x_projection_rank = from_y.numerical_rank;
  const Projection from_x = score_half(part.y, part.x);
  out.y_projection_deficient = from_x.rank_deficient;
  out.y_projection_rank = from_x.numerical_rank;
  return out;
}

/// Sorted indices of resources passing the rank test.
inline std::vector<Index> pure_set_from_profiles(const RankProfiles& prof, const RankTestConfig& cfg) {
  std::vector<Index> out;
  for (Index x = 0; x < prof.sigma1.size(); ++x) {
    if (passes(cfg, prof.sigma1[x], prof.sigma2[x])) out.push_back(x);
  }
  return out;
}

inline std::vector<Index> detect_pure_nodes(const RankProfiles& prof, const RankTestConfig& cfg) {
  cfg.validate();
  auto out = pure_set_from_profiles(prof, cfg);
  if (out.empty()) throw NoPureNodes();
  return out;
}

template <class G>
std::vector<Index> detect_pure_nodes(const G& g, const PartitionSpec& part, Index k, const RankTestConfig& cfg,
                                     int threads = 0) {
  cfg.validate();
  return detect_pure_nodes(score_resources(g, part, k, threads), cfg);
}

// ---------------------------------------------------------------------------
// Thresholds

/// Extremes over communities of ||(F_U)_i|| * ||(F~_T)_i||.
struct FactorNormProducts {
  double min_product = 0.0;
  double max_product = 0.0;
  Vector per_community;
};

inline FactorNormProducts factor_norm_products(const MembershipMatrix& pu, const MembershipMatrix& pt,
                                               const ConnectivityPair& conn) {
  const Matrix fu = connectivity_factor(pu, conn.p);
  const Matrix ft = connectivity_factor(pt, conn.p_tilde);
  FactorNormProducts out;
  out.per_community = Vector(fu.cols());
  for (Index i = 0; i < fu.cols(); ++i) out.per_community[i] = fu.col(i).norm() * ft.col(i).norm();
  out.min_product = out.per_community.minCoeff();
  out.max_product = out.per_community.maxCoeff();
  return out;
}

inline FactorNormProducts factor_norm_products(const GroundTruth& truth) {
  return factor_norm_products(truth.users, truth.tags, truth.conn);
}

/// ||(Pi^T P)_i|| for homogeneous P from the i-th membership row alone:
/// sqrt((p-q)^2 ||row||^2 + n q^2 + 2 (p-q) q ||row||_1).
inline double homogeneous_factor_column_norm(const Eigen::Ref<const Vector>& row, double p, double q) {
  const double n = static_cast<double>(row.size());
  const double d = p - q;
  return std::sqrt(d * d * row.squaredNorm() + n * q * q + 2.0 * d * q * row.lpNorm<1>());
}

inline constexpr double kTau1Safety = 0.9;
inline constexpr double kTau2Safety = 1.1;
inline constexpr double kTau2Floor = 1e-9;  // relative to the smallest norm product

inline RankTestConfig oracle_thresholds(const FactorNormProducts& norms, double eps_r) {
  if (!(eps_r >= 0.0)) throw ArgumentError("oracle_thresholds: eps_R must be nonnegative");
  const double room = norms.min_product - eps_r;
  if (!(room > 0.0)) {
    throw InfeasibleThresholds("infeasible rank-test thresholds: need min_i ||F_i||*||F~_i|| - eps_R > 0, got " +
                               std::to_string(norms.min_product) + " - " + std::to_string(eps_r));
  }
  RankTestConfig cfg{kTau1Safety * room, kTau2Safety * eps_r + kTau2Floor * norms.min_product,
                     ThresholdMode::oracle};
  if (!(cfg.tau1 > cfg.tau2)) {
    throw InfeasibleThresholds("infeasible rank-test thresholds: tau1 = " + std::to_string(cfg.tau1) +
                               " does not exceed tau2 = " + std::to_string(cfg.tau2));
  }
  return cfg;
}

inline RankTestConfig oracle_thresholds(const GroundTruth& truth, double eps_r) {
  return oracle_thresholds(factor_norm_products(truth), eps_r);
}

/// Lower bound on the largest membership weight of any node that passes the
/// rank test: (tau1 - tau2 - 2 eps_R) / max_i ||F_i|| ||F~_i||.
inline double max_weight_lower_bound(const RankTestConfig& cfg, double eps_r, const FactorNormProducts& norms) {
  return (cfg.tau1 - cfg.tau2 - 2.0 * eps_r) / norms.max_product;
}

/// Subspace perturbation bound 2 sigma_k(Pi_Y)^{-1} sqrt(||F (.) F~||_1), with
/// ||.||_1 the largest absolute column sum; the larger value over the two
/// resource halves.
inline double subspace_perturbation_bound(const GroundTruth& truth, const PartitionSpec& part) {
  const Matrix h = khatri_rao(connectivity_factor(truth.users, truth.conn.p),
                              connectivity_factor(truth.tags, truth.conn.p_tilde));
  const double col_sum = h.cwiseAbs().colwise().sum().maxCoeff();
  double worst = 0.0;
  for (const auto* half : {&part.x, &part.y}) {
    Matrix pi_y(truth.resources.k(), static_cast<Index>(half->size()));
    for (std::size_t j = 0; j < half->size(); ++j) {
      pi_y.col(static_cast<Index>(j)) = truth.resources.weights.col((*half)[j]);
    }
    const Vector s = Eigen::BDCSVD<Matrix>(pi_y).singularValues();
    const double sk = s.size() >= truth.resources.k() ? s[truth.resources.k() - 1] : 0.0;
    if (!(sk > 0.0)) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, 2.0 / sk * std::sqrt(col_sum));
  }
  return worst;
}

inline double realized_rank_perturbation(const RankProfiles& prof) {
  if (prof.perturbation.size() == 0) {
    throw ArgumentError("realized_rank_perturbation: profiles were scored without ground truth");
  }
  return prof.perturbation.maxCoeff();
}

struct HeuristicThresholds {
  RankTestConfig config;
  bool degenerate_gap = false;
  std::string warning;
};

inline constexpr double kHeuristicTau1Quantile = 0.2;
inline constexpr double kHeuristicTau1Fraction = 0.5;

namespace detail {

inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace detail

/// Data-driven thresholds. tau2 sits at the geometric midpoint of the widest
/// gap of the sorted log sigma2 values; tau1 is half of the 0.2-quantile of
/// the sigma1 values above tau2. Gaps narrower than a factor of 2 count as
/// no gap: tau2 then falls back to the sigma2 median.
inline HeuristicThresholds heuristic_thresholds(const Vector& sigma1, const Vector& sigma2, Index k) {
  if (sigma1.size() != sigma2.size()) throw DimensionError("heuristic_thresholds: profile lengths differ");
  if (sigma1.size() < 2 * k) throw ArgumentError("heuristic_thresholds: need at least 2k profiled columns");
  HeuristicThresholds out;
  out.config.mode = ThresholdMode::heuristic;
  const double scale = sigma1.maxCoeff();
  if (!(scale > 0.0)) {
    out.degenerate_gap = true;
    out.warning = "all projected columns are zero";
    out.config.tau1 = 1.0;
    out.config.tau2 = 0.0;
    return out;
  }
  const double floor = 1e-10 * scale;
  std::vector<double> logs(static_cast<std::size_t>(sigma2.size()));
  for (Index i = 0; i < sigma2.size(); ++i) logs[static_cast<std::size_t>(i)] = std::log(std::max(sigma2[i], floor));
  std::sort(logs.begin(), logs.end());
  if (std::exp(logs.back()) <= 1e-8 * scale) {
    out.config.tau2 = 1e-6 * scale;  // every column is numerically rank one
  } else {
    double best_gap = 0.0;
    std::size_t best = 0;
    for (std::size_t i = 0; i + 1 < logs.size(); ++i) {
      const double gap = logs[i + 1] - logs[i];
      if (gap > best_gap) {
        best_gap = gap;
        best = i;
      }
    }
    if (best_gap < std::log(2.0)) {
      out.degenerate_gap = true;
      out.warning = "no discernible gap in the sigma2 distribution; using quantile defaults";
      std::vector<double> s2(sigma2.data(), sigma2.data() + sigma2.size());
      out.config.tau2 = detail::quantile(s2, 0.5);
    } else {
      out.config.tau2 = std::exp(0.5 * (logs[best] + logs[best + 1]));
    }
  }
  std::vector<double> above;
  for (Index i = 0; i < sigma1.size(); ++i) {
    if (sigma1[i] > out.config.tau2) above.push_back(sigma1[i]);
  }
  out.config.tau1 = kHeuristicTau1Fraction * detail::quantile(above, kHeuristicTau1Quantile);
  if (!(out.config.tau1 > out.config.tau2)) out.config.tau1 = std::nextafter(out.config.tau2, scale + 1.0);
  return out;
}

}  // namespace mmsf
