#include <gtest/gtest.h>

#include "mmsf/pipeline.hpp"

using namespace mmsf;

namespace {

GroundTruth make_truth(int k, Index n, double p, double q, double rho, std::uint64_t seed) {
  ModelParams mp;
  mp.k = k;
  mp.n_u = mp.n_t = mp.n_r = n;
  mp.p = p;
  mp.q = q;
  mp.rho = rho;
  mp.alpha.assign(static_cast<std::size_t>(k), 1.0);
  mp.seed = seed;
  return sample_ground_truth(mp);
}

LearnConfig learn_cfg(int k, std::uint64_t seed) {
  LearnConfig cfg;
  cfg.k = k;
  cfg.seed = seed;
  cfg.threads = 1;
  return cfg;
}

}  // namespace

TEST(Oracle, ExactRecoveryK3) {
  const auto truth = make_truth(3, 60, 0.8, 0.1, 0.4, 7);
  const auto rep = run_exact_oracle(truth, learn_cfg(3, 7));
  EXPECT_TRUE(rep.pure_sets_equal);
  EXPECT_FALSE(rep.true_pure.empty());
  EXPECT_LT(rep.max_abs_error_resources, 1e-6);
  EXPECT_LT(rep.max_abs_error_users, 1e-6);
  EXPECT_LT(rep.max_abs_error_tags, 1e-6);
  EXPECT_TRUE(rep.success());
  EXPECT_TRUE(is_permutation_of_k(rep.permutation));
}

TEST(Oracle, SeveralSeedsAndShapes) {
  for (std::uint64_t seed : {1, 2, 3}) {
    ModelParams mp;
    mp.k = 2;
    mp.n_u = 24;
    mp.n_t = 30;
    mp.n_r = 36;
    mp.p = 0.7;
    mp.q = 0.2;
    mp.rho = 0.5;
    mp.alpha = {0.5, 2.0};
    mp.seed = seed;
    const auto truth = sample_ground_truth(mp);
    const auto rep = run_exact_oracle(truth, learn_cfg(2, seed));
    EXPECT_TRUE(rep.success()) << "seed " << seed << " err " << rep.max_abs_error();
  }
}

TEST(Oracle, SingleCommunityIsTrivial) {
  const auto truth = make_truth(1, 9, 0.6, 0.0, 0.5, 3);
  const auto rep = run_exact_oracle(truth, learn_cfg(1, 3));
  EXPECT_TRUE(rep.success());
  EXPECT_EQ(rep.detected_pure.size(), 9u);
}

TEST(Oracle, DuplicateResourceColumnsFailPrecondition) {
  auto truth = make_truth(3, 30, 0.8, 0.1, 0.4, 4);
  for (Index r = 0; r < truth.resources.nodes(); ++r) {
    truth.resources.weights.col(r) = (Vector(3) << 0.2, 0.3, 0.5).finished();
  }
  try {
    run_exact_oracle(truth, learn_cfg(3, 4));
    FAIL() << "expected a precondition failure";
  } catch (const ContractViolation& e) {
    EXPECT_NE(std::string(e.what()).find("Pi_Y full row rank"), std::string::npos) << e.what();
  }
}

TEST(Oracle, RankDeficientConnectivityFailsPrecondition) {
  auto truth = make_truth(2, 30, 0.8, 0.1, 0.4, 5);
  for (Index u = 0; u < truth.users.nodes(); ++u) truth.users.weights.col(u) = Vector::Constant(2, 0.5);
  for (Index t = 0; t < truth.tags.nodes(); ++t) truth.tags.weights.col(t) = Vector::Constant(2, 0.5);
  try {
    run_exact_oracle(truth, learn_cfg(2, 5));
    FAIL() << "expected a precondition failure";
  } catch (const ContractViolation& e) {
    EXPECT_NE(std::string(e.what()).find("full column rank"), std::string::npos) << e.what();
  }
}

TEST(Learn, SampledRecoveryIsReasonable) {
  const auto truth = make_truth(2, 80, 0.9, 0.05, 0.5, 6);
  const auto sample = sample_hypergraph(truth, 6);
  const SparseMatrix g = sample.to_sparse();
  LearnConfig cfg = learn_cfg(2, 6);
  cfg.mode = ThresholdMode::oracle;
  const auto res = learn_memberships(g, sample.dims(), cfg, &truth);
  const auto pr = pure_precision_recall(res.pure, truth.resources.pure_columns());
  EXPECT_GE(pr.recall, 0.9);
  EXPECT_GE(pr.precision, 0.7);
  const auto rep = evaluate_recovery(res.pi_tilde, res.pi_hat, truth.resources.weights);
  EXPECT_LT(rep.l2_max_row, 0.5 * std::sqrt(80.0));
  ASSERT_TRUE(res.users_tags.has_value());
  EXPECT_EQ(res.users_tags->users.cols(), 80);
  EXPECT_GE(res.membership_tau, 0.0);
  EXPECT_EQ(res.pi_hat, threshold_memberships(res.pi_tilde, res.membership_tau));
}

TEST(Learn, HeuristicAndManualModesRun) {
  const auto truth = make_truth(2, 60, 0.9, 0.05, 0.5, 7);
  const auto sample = sample_hypergraph(truth, 7);
  const SparseMatrix g = sample.to_sparse();
  LearnConfig cfg = learn_cfg(2, 7);
  cfg.mode = ThresholdMode::heuristic;
  const auto h = learn_memberships(g, sample.dims(), cfg);
  ASSERT_TRUE(h.heuristic.has_value());
  EXPECT_FALSE(h.pure.empty());
  cfg.mode = ThresholdMode::manual;
  cfg.tau1 = h.rank_test.tau1;
  cfg.tau2 = h.rank_test.tau2;
  const auto m = learn_memberships(g, sample.dims(), cfg);
  EXPECT_EQ(m.pure, h.pure);
  EXPECT_EQ(m.pi_tilde, h.pi_tilde);
}

TEST(Learn, OracleModeNeedsTruth) {
  const auto truth = make_truth(2, 30, 0.9, 0.05, 0.5, 8);
  const auto sample = sample_hypergraph(truth, 8);
  LearnConfig cfg = learn_cfg(2, 8);
  cfg.mode = ThresholdMode::oracle;
  EXPECT_THROW(learn_memberships(sample.to_sparse(), sample.dims(), cfg), ArgumentError);
  EXPECT_THROW(learn_memberships(sample.to_sparse(), Dims{30, 30, 31}, cfg, &truth), DimensionError);
}

TEST(Learn, PureOverrideSkipsDetection) {
  const auto truth = make_truth(2, 40, 0.8, 0.1, 0.5, 9);
  const Matrix g = expected_adjacency(truth);
  const auto pure = truth.resources.pure_columns();
  const auto res = learn_memberships(g, Dims{40, 40, 40}, learn_cfg(2, 9), nullptr, pure);
  EXPECT_EQ(res.pure, pure);
  EXPECT_EQ(res.profiles.sigma1.size(), 0);
  const auto perm = align_columns(res.pi_tilde, truth.resources.weights);
  EXPECT_LT(max_abs_error(apply_alignment(res.pi_tilde, perm), truth.resources.weights), 1e-6);
  EXPECT_THROW(learn_memberships(g, Dims{40, 40, 40}, learn_cfg(2, 9), nullptr, std::vector<Index>{}), NoPureNodes);
}

TEST(Learn, ThreadCountDoesNotChangeOutput) {
  const auto truth = make_truth(2, 80, 0.9, 0.05, 0.5, 10);
  const auto sample = sample_hypergraph(truth, 10);
  const SparseMatrix g = sample.to_sparse();
  LearnConfig cfg = learn_cfg(2, 10);
  cfg.mode = ThresholdMode::oracle;
  const auto a = learn_memberships(g, sample.dims(), cfg, &truth);
  cfg.threads = 4;
  cfg.power.threads = 4;
  const auto b = learn_memberships(g, sample.dims(), cfg, &truth);
  EXPECT_EQ(a.pure, b.pure);
  EXPECT_EQ(a.pi_tilde, b.pi_tilde);
  EXPECT_EQ(a.eigen.eigenvalues, b.eigen.eigenvalues);
}
