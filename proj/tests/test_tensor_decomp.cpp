#include <gtest/gtest.h>

#include <random>

#include <Eigen/QR>
#include <Eigen/SVD>

#include "mmsf/generator.hpp"
#include "mmsf/pure_detect.hpp"
#include "mmsf/tensor_decomp.hpp"

using namespace mmsf;

namespace {

GroundTruth truth_for(int k, Index n, double p, double q, double rho, std::uint64_t seed) {
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

Matrix random_orthonormal(Index k, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Matrix g(k, k);
  for (Index i = 0; i < g.size(); ++i) g.data()[i] = n(rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  return qr.householderQ() * Matrix::Identity(k, k);
}

Matrix random_inits(Index k, int count, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Matrix m(k, count);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

/// Greedy match of recovered columns to true ones by |inner product|.
std::vector<Index> match(const Matrix& est, const Matrix& truth) {
  std::vector<Index> out(static_cast<std::size_t>(truth.cols()));
  for (Index i = 0; i < truth.cols(); ++i) {
    Index best = 0;
    (est.transpose() * truth.col(i)).cwiseAbs().maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

struct ExactSetup {
  GroundTruth truth;
  Matrix g;
  PartitionSpec part;
  std::vector<Index> pure;
};

ExactSetup exact_setup(int k, Index n, std::uint64_t seed) {
  ExactSetup s{truth_for(k, n, 0.8, 0.1, 0.5, seed), {}, {}, {}};
  s.g = expected_adjacency(s.truth);
  s.part = make_partition({n, n, n}, k, seed);
  s.pure = s.truth.resources.pure_columns();
  return s;
}

}  // namespace

TEST(ThreeStarMoment, SingleTermIsOuterProduct) {
  std::mt19937_64 rng(1);
  const Matrix g = random_inits(9, 4, rng);
  const auto m = ThreeStarMoment::from_adjacency(g, {2}, {0, 1}, {3, 4, 5}, {7});
  Tensor3 expect(2, 3, 1);
  expect.add_rank_one(1.0, g.col(2).segment(0, 2), g.col(2).segment(3, 3), g.col(2).segment(7, 1));
  EXPECT_LT((m.materialize() - expect).frobenius_norm(), 1e-15);
}

TEST(ThreeStarMoment, ExactPureColumnsMatchFactoredForm) {
  const auto s = exact_setup(2, 12, 2);
  const auto m = ThreeStarMoment::from_adjacency(s.g, s.pure, s.part.a, s.part.b, s.part.c);
  const auto f = expected_three_star(s.truth.users, s.truth.tags, s.truth.resources, s.truth.conn, s.pure, s.part.a,
                                     s.part.b, s.part.c);
  EXPECT_LT((m.materialize() - f.materialize()).frobenius_norm(), 1e-12);
}

TEST(ThreeStarMoment, EntryAndContractionMatchDirectLoops) {
  const auto truth = truth_for(2, 10, 0.8, 0.1, 0.5, 3);
  const auto sample = sample_hypergraph(truth, 3);
  const SparseMatrix g = sample.to_sparse();
  const Matrix dense = Matrix(g);
  const std::vector<Index> pure{0, 2, 3, 5, 7, 9};
  const auto part = make_partition({10, 10, 10}, 2, 3);
  const auto m = ThreeStarMoment::from_adjacency(g, pure, part.a, part.b, part.c);
  const Index na = static_cast<Index>(part.a.size()), nb = static_cast<Index>(part.b.size()),
              nc = static_cast<Index>(part.c.size());
  for (Index i : {Index{0}, na - 1})
    for (Index j : {Index{0}, nb / 2, nb - 1})
      for (Index l : {Index{0}, nc - 1}) {
        double direct = 0.0;
        for (Index r : pure) direct += dense(part.a[i], r) * dense(part.b[j], r) * dense(part.c[l], r);
        EXPECT_NEAR(m.entry(i, j, l), direct / pure.size(), 1e-15);
        EXPECT_NEAR(m.materialize()(i, j, l), direct / pure.size(), 1e-15);
      }
  std::mt19937_64 rng(3);
  const Matrix m1 = random_inits(static_cast<Index>(part.a.size()), 2, rng);
  const Matrix m2 = random_inits(static_cast<Index>(part.b.size()), 3, rng);
  const Matrix m3 = random_inits(static_cast<Index>(part.c.size()), 2, rng);
  EXPECT_LT((m.contract(m1, m2, m3) - m.materialize().multilinear(m1, m2, m3)).frobenius_norm(), 1e-10);
}

TEST(ThreeStarMoment, Errors) {
  const Matrix g = Matrix::Ones(6, 3);
  EXPECT_THROW(ThreeStarMoment::from_adjacency(g, {}, {0}, {1}, {2}), ArgumentError);
  EXPECT_THROW(ThreeStarMoment::from_adjacency(g, {0}, {0, 1}, {1}, {2}), ArgumentError);
}

TEST(Whitening, ExactMomentsGiveOrthogonalDecomposition) {
  for (std::uint64_t seed : {4, 5, 6}) {
    const auto s = exact_setup(2, 16, seed);
    const auto m = ThreeStarMoment::from_adjacency(s.g, s.pure, s.part.a, s.part.b, s.part.c);
    const auto wb = build_whitening(m, 2);
    EXPECT_LT(wb.whitening_defect, 1e-8);
    const Tensor3 t = whitened_tensor(wb);
    EXPECT_LT((t - whitened_tensor(m, wb)).frobenius_norm(), 1e-8 * t.frobenius_norm());
    EXPECT_LT(t.asymmetry(), 1e-8);

    std::mt19937_64 rng(seed);
    const auto eig = tensor_eigen(t, random_inits(2, 100, rng), 50, 1e-6);
    EXPECT_LT(eig.residual, 1e-8);
    EXPECT_LT(orthonormality_defect(eig.eigenvectors), 1e-8);
    // Eigenvalues equal w_i^{-1/2} for the community frequencies of the pure set.
    const auto f = expected_three_star(s.truth.users, s.truth.tags, s.truth.resources, s.truth.conn, s.pure,
                                       s.part.a, s.part.b, s.part.c);
    std::vector<double> expect, got;
    for (Index i = 0; i < 2; ++i) {
      expect.push_back(1.0 / std::sqrt(f.w[i]));
      got.push_back(eig.eigenvalues[i]);
    }
    std::sort(expect.begin(), expect.end());
    std::sort(got.begin(), got.end());
    for (int i = 0; i < 2; ++i) EXPECT_NEAR(got[i], expect[i], 1e-8);
  }
}

TEST(Whitening, UniformDisjointCommunitiesGiveSqrtK) {
  const int k = 3;
  const Index n = 60;
  MembershipMatrix pu{Matrix::Zero(k, n), NodeRole::users};
  MembershipMatrix pt{Matrix::Zero(k, n), NodeRole::tags};
  MembershipMatrix pr{Matrix::Zero(k, n), NodeRole::resources};
  for (Index j = 0; j < n; ++j) {
    pu.weights(j % k, j) = 1.0;
    pt.weights((j / 2) % k, j) = 1.0;
    pr.weights(j % k, j) = 1.0;
  }
  const auto conn = ConnectivityPair::make_homogeneous(k, 0.9, 0.0);
  const Matrix g = expected_adjacency(pu, pt, pr, conn);
  const auto part = make_partition({n, n, n}, k, 7);
  std::vector<Index> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), 0);
  const auto m = ThreeStarMoment::from_adjacency(g, all, part.a, part.b, part.c);
  const auto wb = build_whitening(m, k);
  std::mt19937_64 rng(7);
  const auto eig = tensor_eigen(whitened_tensor(wb), random_inits(k, 100, rng), 50, 1e-6);
  for (Index i = 0; i < k; ++i) EXPECT_NEAR(eig.eigenvalues[i], std::sqrt(3.0), 1e-8);
}

TEST(Whitening, ConditionNumbersMatchFullSvd) {
  const auto truth = truth_for(3, 30, 0.8, 0.1, 0.5, 8);
  const SparseMatrix g = sample_hypergraph(truth, 8).to_sparse();
  const auto part = make_partition({30, 30, 30}, 3, 8);
  const auto pure = truth.resources.pure_columns();
  const auto m = ThreeStarMoment::from_adjacency(g, pure, part.a, part.b, part.c);
  const auto wb = build_whitening(m, 3);
  const double mm = static_cast<double>(pure.size());
  auto cond = [&](int x, int y) {
    const Matrix pairs = Matrix(m.factor(x)) * Matrix(m.factor(y)).transpose() / mm;
    const Vector s = Eigen::JacobiSVD<Matrix>(pairs).singularValues();
    return s[0] / s[2];
  };
  EXPECT_NEAR(wb.cond_ab, cond(0, 1), 1e-8 * wb.cond_ab);
  EXPECT_NEAR(wb.cond_ac, cond(0, 2), 1e-8 * wb.cond_ac);
  EXPECT_NEAR(wb.cond_bc, cond(1, 2), 1e-8 * wb.cond_bc);
  EXPECT_LT(wb.whitening_defect, 1e-8);
}

TEST(Whitening, RankDeficiencyNamesPairMatrix) {
  const auto s = exact_setup(3, 18, 9);
  std::vector<Index> one_community;
  for (Index r : s.pure) {
    if (s.truth.resources.weights(0, r) == 1.0) one_community.push_back(r);
  }
  ASSERT_FALSE(one_community.empty());
  const auto m = ThreeStarMoment::from_adjacency(s.g, one_community, s.part.a, s.part.b, s.part.c);
  try {
    build_whitening(m, 3);
    FAIL() << "expected RankDeficiency";
  } catch (const RankDeficiency& e) {
    EXPECT_NE(std::string(e.what()).find("Pairs_AB"), std::string::npos) << e.what();
  }
}

TEST(TensorEigen, DiagonalTwoComponents) {
  Tensor3 t(2, 2, 2);
  t(0, 0, 0) = 2.0;
  t(1, 1, 1) = 1.0;
  std::mt19937_64 rng(10);
  const auto eig = tensor_eigen(t, random_inits(2, 100, rng), 50, 1e-6);
  EXPECT_NEAR(eig.eigenvalues[0], 2.0, 1e-8);
  EXPECT_NEAR(eig.eigenvalues[1], 1.0, 1e-8);
  EXPECT_NEAR(std::abs(eig.eigenvectors(0, 0)), 1.0, 1e-8);
  EXPECT_NEAR(std::abs(eig.eigenvectors(1, 1)), 1.0, 1e-8);
  EXPECT_EQ(eig.iterations.size(), 2u);
}

TEST(TensorEigen, RandomOrthogonalRecovery) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> lam(1.0, 3.0);
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix phi = random_orthonormal(5, rng);
    Vector l(5);
    for (Index i = 0; i < 5; ++i) l[i] = lam(rng);
    const Tensor3 t = cp_tensor(l, phi, phi, phi);
    const auto eig = tensor_eigen(t, random_inits(5, 100, rng), 50, 1e-6);
    const auto idx = match(eig.eigenvectors, phi);
    for (Index i = 0; i < 5; ++i) {
      const Index j = idx[static_cast<std::size_t>(i)];
      EXPECT_NEAR(eig.eigenvalues[j], l[i], 1e-6);
      EXPECT_LT((eig.eigenvectors.col(j) - phi.col(i)).norm(), 1e-6);  // sign fixed by lambda > 0
    }
    EXPECT_LT(eig.residual, 1e-8);
    // Deflation: every extracted component is removed.
    for (Index j = 0; j < 5; ++j) {
      double deflated = t.evaluate(eig.eigenvectors.col(j));
      for (Index i = 0; i < 5; ++i) deflated -= eig.eigenvalues[i] * std::pow(eig.eigenvectors.col(j).dot(eig.eigenvectors.col(i)), 3);
      EXPECT_LT(std::abs(deflated), 1e-6);
    }
    for (Index i = 0; i < 5; ++i) EXPECT_NEAR(eig.eigenvectors.col(i).norm(), 1.0, 1e-10);
  }
}

TEST(TensorEigen, ZeroTensor) {
  std::mt19937_64 rng(12);
  const auto eig = tensor_eigen(Tensor3(3, 3, 3), random_inits(3, 10, rng), 50, 1e-6);
  EXPECT_EQ(eig.eigenvalues, Vector::Zero(3));
  EXPECT_EQ(eig.residual, 0.0);
}

TEST(TensorEigen, ThreadCountDoesNotChangeResult) {
  std::mt19937_64 rng(13);
  const Matrix phi = random_orthonormal(4, rng);
  const Tensor3 t = cp_tensor((Vector(4) << 1.0, 1.5, 2.0, 2.5).finished(), phi, phi, phi);
  const Matrix inits = random_inits(4, 100, rng);
  const auto a = tensor_eigen(t, inits, 50, 1e-6, 1);
  const auto b = tensor_eigen(t, inits, 50, 1e-6, 4);
  EXPECT_EQ(a.eigenvalues, b.eigenvalues);
  EXPECT_EQ(a.eigenvectors, b.eigenvectors);
}

TEST(TensorEigen, ErrorsAndNonFinite) {
  Tensor3 t(2, 2, 2);
  EXPECT_THROW(tensor_eigen(t, Matrix::Ones(2, 1), 50, 1e-6), ArgumentError);
  EXPECT_THROW(tensor_eigen(t, Matrix::Ones(3, 4), 50, 1e-6), DimensionError);
  EXPECT_THROW(tensor_eigen(t, Matrix::Ones(2, 4), 0, 1e-6), ArgumentError);
  t(0, 1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(tensor_eigen(t, Matrix::Ones(2, 4), 5, 1e-6), NumericalFailure);
}

TEST(DefaultInitializations, WhitenedColumnsThenSeededRandom) {
  const Matrix cols = (Matrix(2, 3) << 3, 0, 1, 4, 0, 1).finished();
  const Matrix a = default_initializations(cols, 6, 5);
  EXPECT_NEAR(a(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(a(1, 0), 0.8, 1e-15);
  for (Index j = 0; j < 6; ++j) EXPECT_NEAR(a.col(j).norm(), 1.0, 1e-14);
  EXPECT_EQ(a, default_initializations(cols, 6, 5));
  EXPECT_EQ(PowerConfig{}.resolved_inits(3), 100);
  EXPECT_EQ(PowerConfig{}.resolved_inits(20), 200);
}

TEST(Reconstruct, SingleCommunityIsAllOnes) {
  const auto truth = truth_for(1, 9, 0.7, 0.0, 0.5, 14);
  const Matrix g = expected_adjacency(truth);
  std::vector<Index> all(9);
  std::iota(all.begin(), all.end(), 0);
  const auto part = make_partition({9, 9, 9}, 1, 14);
  const auto m = ThreeStarMoment::from_adjacency(g, all, part.a, part.b, part.c);
  const auto wb = build_whitening(m, 1);
  const auto eig = tensor_eigen(whitened_tensor(wb), default_initializations(wb.y_a, 100, 1), 50, 1e-6);
  const Matrix pi = reconstruct_memberships(eig, wb.w_a, g, part.a);
  EXPECT_LT((pi - Matrix::Ones(1, 9)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Reconstruct, ExactPureNodesComeBackNearBasis) {
  const auto s = exact_setup(3, 30, 15);
  const auto pure = detect_pure_nodes(s.g, s.part, 3, oracle_thresholds(s.truth, 0.0), 1);
  const auto m = ThreeStarMoment::from_adjacency(s.g, pure, s.part.a, s.part.b, s.part.c);
  const auto wb = build_whitening(m, 3);
  const auto eig = tensor_eigen(whitened_tensor(wb), default_initializations(wb.y_a, 100, 1), 50, 1e-6);
  const Matrix pi = reconstruct_memberships(eig, wb.w_a, s.g, s.part.a);
  for (Index r : pure) EXPECT_GT(pi.col(r).maxCoeff(), 0.95);
  // Sparse and dense adjacency give the same answer.
  const Matrix pi_sparse = reconstruct_memberships(eig, wb.w_a, SparseMatrix(s.g.sparseView()), s.part.a);
  EXPECT_LT((pi - pi_sparse).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Reconstruct, ZeroEigenvalueRejected) {
  EigenResult eig;
  eig.eigenvalues = (Vector(2) << 1.0, 0.0).finished();
  eig.eigenvectors = Matrix::Identity(2, 2);
  EXPECT_THROW(reconstruct_memberships(eig, Matrix::Ones(2, 2), Matrix::Ones(4, 3), {0, 1}), NumericalFailure);
}

TEST(Threshold, Basics) {
  const Matrix pi = (Matrix(2, 3) << 0.5, -0.1, 0.02, 0.5, 1.1, 0.98).finished();
  EXPECT_EQ(threshold_memberships(pi, 0.0), pi.cwiseMax(0.0));
  EXPECT_EQ(threshold_memberships(pi, 2.0), Matrix::Zero(2, 3));
  const Matrix t = threshold_memberships(pi, 0.05);
  EXPECT_EQ(t(0, 2), 0.0);
  EXPECT_EQ(t(1, 1), 1.1);  // kept, not renormalized
  EXPECT_THROW(threshold_memberships(pi, -1.0), ArgumentError);
}

TEST(Threshold, PropertyKeepOrZero) {
  std::mt19937_64 rng(16);
  std::normal_distribution<double> n(0.3, 0.4);
  std::uniform_real_distribution<double> u(0.0, 0.8);
  for (int c = 0; c < 1000; ++c) {
    Matrix pi(3, 7);
    for (Index i = 0; i < pi.size(); ++i) pi.data()[i] = n(rng);
    const double tau = u(rng);
    const Matrix t = threshold_memberships(pi, tau);
    for (Index i = 0; i < pi.size(); ++i) {
      const double x = pi.data()[i], y = t.data()[i];
      ASSERT_TRUE((x >= tau && x >= 0.0 && y == x) || (y == 0.0 && (x < tau || x < 0.0)));
    }
  }
}

TEST(ProjectToSimplex, ColumnsOnSimplex) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n(0.3, 0.5);
  Matrix pi(4, 50);
  for (Index i = 0; i < pi.size(); ++i) pi.data()[i] = n(rng);
  const MembershipMatrix out{project_to_simplex(pi), NodeRole::resources};
  EXPECT_TRUE(out.on_simplex(1e-12));
  EXPECT_LT((project_to_simplex(out.weights) - out.weights).cwiseAbs().maxCoeff(), 1e-14);
}
