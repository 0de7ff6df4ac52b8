#pragma once

// End-to-end learning: partition, pure-node detection, tensor decomposition
// and reconstruction, plus the exact-moment oracle run.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mmsf/errors.hpp"
#include "mmsf/eval.hpp"
#include "mmsf/generator.hpp"
#include "mmsf/linalg.hpp"
#include "mmsf/model.hpp"
#include "mmsf/pure_detect.hpp"
#include "mmsf/tensor_decomp.hpp"

namespace mmsf {

enum class PerturbationSource { realized, subspace_bound };

struct LearnConfig {
  int k = 2;
  std::uint64_t seed = 0;
  ThresholdMode mode = ThresholdMode::oracle;
  double tau1 = 0.0;  // manual mode
  double tau2 = 0.0;
  std::optional<double> eps_r;  // oracle mode override
  PerturbationSource eps_source = PerturbationSource::realized;
  PowerConfig power;
  std::optional<double> membership_tau;
  std::optional<double> p;  // known connectivity for the membership threshold
  std::optional<double> q;  // and for user/tag recovery when no truth is given
  bool recover_users_tags = true;
  int threads = 0;
};

struct LearnResult {
  PartitionSpec partition;
  RankProfiles profiles;
  RankTestConfig rank_test;
  std::optional<HeuristicThresholds> heuristic;
  double eps_r = 0.0;  // oracle mode only
  std::vector<Index> pure;
  WhiteningBundle whitening;
  EigenResult eigen;
  Matrix pi_tilde;  // k x n_r before thresholding
  Matrix pi_hat;    // after thresholding
  double membership_tau = 0.0;
  std::optional<UserTagEstimate> users_tags;
  std::optional<UserTagEstimate> users_tags_hat;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::optional<ConnectivityPair> known_connectivity(const LearnConfig& cfg, const GroundTruth* truth) {
  if (truth) return truth->conn;
  if (cfg.p && cfg.q) return ConnectivityPair::make_homogeneous(cfg.k, *cfg.p, *cfg.q);
  return std::nullopt;
}

}  // namespace detail

/// Runs the whole pipeline on an observed (or expected) adjacency. Oracle
/// thresholds require `truth`; a precomputed pure set skips detection.
template <class G>
LearnResult learn_memberships(const G& g, const Dims& dims, const LearnConfig& cfg, const GroundTruth* truth = nullptr,
                              const std::optional<std::vector<Index>>& pure_override = std::nullopt) {
  if (cfg.k < 1) throw ArgumentError("learn: k must be positive");
  if (g.rows() != dims.pair_count() || g.cols() != dims.n_r) {
    throw DimensionError("learn: adjacency shape does not match dims");
  }
  LearnResult res;
  res.partition = make_partition(dims, cfg.k, cfg.seed);
  const Index k = cfg.k;

  if (pure_override) {
    res.pure = *pure_override;
    std::sort(res.pure.begin(), res.pure.end());
    if (res.pure.empty()) throw NoPureNodes();
  } else {
    res.profiles = score_resources(g, res.partition, k, cfg.threads,
                                   cfg.mode == ThresholdMode::oracle ? truth : nullptr);
    if (res.profiles.x_projection_deficient || res.profiles.y_projection_deficient) {
      res.warnings.push_back("projection subspace has fewer than k nonzero singular values");
    }
    switch (cfg.mode) {
      case ThresholdMode::oracle: {
        if (!truth) throw ArgumentError("oracle thresholds need ground truth");
        if (cfg.eps_r) {
          res.eps_r = *cfg.eps_r;
        } else if (cfg.eps_source == PerturbationSource::subspace_bound) {
          res.eps_r = subspace_perturbation_bound(*truth, res.partition);
        } else {
          res.eps_r = realized_rank_perturbation(res.profiles);
        }
        res.rank_test = oracle_thresholds(*truth, res.eps_r);
        break;
      }
      case ThresholdMode::heuristic: {
        res.heuristic = heuristic_thresholds(res.profiles.sigma1, res.profiles.sigma2, k);
        if (res.heuristic->degenerate_gap) res.warnings.push_back(res.heuristic->warning);
        res.rank_test = res.heuristic->config;
        break;
      }
      case ThresholdMode::manual:
        res.rank_test = {cfg.tau1, cfg.tau2, ThresholdMode::manual};
        break;
    }
    res.pure = detect_pure_nodes(res.profiles, res.rank_test);
  }

  const PartitionSpec& part = res.partition;
  const ThreeStarMoment moment = ThreeStarMoment::from_adjacency(g, res.pure, part.a, part.b, part.c);
  res.whitening = build_whitening(moment, k);
  const Tensor3 t = whitened_tensor(res.whitening);
  PowerConfig power = cfg.power;
  const Matrix inits = default_initializations(res.whitening.y_a, power.resolved_inits(k), cfg.seed);
  res.eigen = tensor_eigen(t, inits, power);
  res.pi_tilde = reconstruct_memberships(res.eigen, res.whitening.w_a, g, part.a);

  const auto conn = detail::known_connectivity(cfg, truth);
  if (cfg.membership_tau) {
    res.membership_tau = *cfg.membership_tau;
  } else if (conn && conn->homogeneous) {
    const auto [p, q] = *conn->homogeneous;
    if (p > q && !res.pure.empty()) {
      BoundInputs bi;
      bi.k = cfg.k;
      bi.n = static_cast<double>(dims.n_r);
      bi.p = p;
      bi.q = q;
      bi.rho = static_cast<double>(res.pure.size()) / static_cast<double>(dims.n_r);
      const Matrix est = truth ? truth->resources.weights : threshold_memberships(res.pi_tilde, 0.0);
      const SpectrumSummary s = second_moment_spectrum(empirical_second_moment(est));
      bi.kappa = std::isfinite(s.kappa) ? s.kappa : 1.0;
      bi.sigma_k = s.sigma_k;
      res.membership_tau = membership_threshold(theoretical_error_bound(bi), cfg.k, bi.n);
    }
  }
  res.pi_hat = threshold_memberships(res.pi_tilde, res.membership_tau);

  if (cfg.recover_users_tags && conn) {
    try {
      res.users_tags = reconstruct_user_tag_memberships(g, res.pi_tilde, *conn, dims);
      res.users_tags_hat = UserTagEstimate{threshold_memberships(res.users_tags->users, res.membership_tau),
                                           threshold_memberships(res.users_tags->tags, res.membership_tau)};
    } catch (const NumericalFailure& e) {
      res.warnings.push_back(std::string("user/tag recovery skipped: ") + e.what());
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Exact-moment oracle

struct OracleReport {
  Index k = 0;
  std::vector<Index> true_pure;
  std::vector<Index> detected_pure;
  bool pure_sets_equal = false;
  Permutation permutation;
  double max_abs_error_resources = 0.0;
  double max_abs_error_users = 0.0;
  double max_abs_error_tags = 0.0;
  double eps_r = 0.0;
  RankTestConfig rank_test;
  double whitening_defect = 0.0;
  double tensor_residual = 0.0;
  Vector eigenvalues;

  double max_abs_error() const {
    return std::max({max_abs_error_resources, max_abs_error_users, max_abs_error_tags});
  }
  bool success(double tol = 1e-6) const { return pure_sets_equal && max_abs_error() < tol; }
};

/// Throws ContractViolation naming the failed hypothesis.
inline void check_exact_moment_preconditions(const GroundTruth& truth, const PartitionSpec& part) {
  AssumptionReport r;
  add_rank_checks(r, truth, part);
  if (!*r.kr_full_column_rank) {
    throw ContractViolation("precondition failed: F (.) F~ full column rank");
  }
  if (!*r.pi_y_full_row_rank) {
    throw ContractViolation("precondition failed: Pi_Y full row rank (membership matrix of a resource half)");
  }
}

inline OracleReport run_exact_oracle(const GroundTruth& truth, const LearnConfig& cfg_in) {
  LearnConfig cfg = cfg_in;
  cfg.mode = ThresholdMode::oracle;
  const Dims dims{truth.users.nodes(), truth.tags.nodes(), truth.resources.nodes()};
  const PartitionSpec part = make_partition(dims, cfg.k, cfg.seed);
  check_exact_moment_preconditions(truth, part);
  const Matrix g = expected_adjacency(truth);
  const LearnResult res = learn_memberships(g, dims, cfg, &truth);

  OracleReport rep;
  rep.k = cfg.k;
  rep.true_pure = truth.resources.pure_columns();
  rep.detected_pure = res.pure;
  rep.pure_sets_equal = rep.true_pure == rep.detected_pure;
  rep.permutation = align_columns(res.pi_tilde, truth.resources.weights);
  rep.max_abs_error_resources = max_abs_error(apply_alignment(res.pi_tilde, rep.permutation), truth.resources.weights);
  if (res.users_tags) {
    rep.max_abs_error_users =
        max_abs_error(apply_alignment(res.users_tags->users, rep.permutation), truth.users.weights);
    rep.max_abs_error_tags = max_abs_error(apply_alignment(res.users_tags->tags, rep.permutation), truth.tags.weights);
  }
  rep.eps_r = res.eps_r;
  rep.rank_test = res.rank_test;
  rep.whitening_defect = res.whitening.whitening_defect;
  rep.tensor_residual = res.eigen.residual;
  rep.eigenvalues = res.eigen.eigenvalues;
  return rep;
}

}  // namespace mmsf
