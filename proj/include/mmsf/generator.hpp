#pragma once

// Sampling from the MMSF model and its exact population moments.
//
// Randomness is counter based: membership column j of a node set uses an
// engine seeded from (seed, set, j), and the draws for hyperedge (u, t, r)
// are indexed by the triple's position (r * n_u + u) * n_t + t. The sampled
// hypergraph is therefore the same for any thread count.

#include <cstdint>
#include <random>
#include <vector>

#include "mmsf/errors.hpp"
#include "mmsf/linalg.hpp"
#include "mmsf/model.hpp"
#include "mmsf/parallel.hpp"
#include "mmsf/rng.hpp"

namespace mmsf {

/// Draws one membership vector: a uniformly chosen basis vector with
/// probability rho, otherwise Dirichlet(alpha).
inline Vector draw_membership(int k, double rho, const std::vector<double>& alpha, Engine& rng) {
  Vector pi = Vector::Zero(k);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  if (unif(rng) < rho) {
    std::uniform_int_distribution<int> pick(0, k - 1);
    pi[pick(rng)] = 1.0;
    return pi;
  }
  double total = 0.0;
  for (int c = 0; c < k; ++c) {
    std::gamma_distribution<double> g(alpha[static_cast<std::size_t>(c)], 1.0);
    pi[c] = g(rng);
    total += pi[c];
  }
  if (!(total > 0.0)) {
    // every gamma draw underflowed (tiny alpha); the limit is a vertex
    std::uniform_int_distribution<int> pick(0, k - 1);
    pi.setZero();
    pi[pick(rng)] = 1.0;
    return pi;
  }
  return pi / total;
}

inline MembershipMatrix sample_memberships(const ModelParams& params, Index n, NodeRole role,
                                           std::uint64_t seed) {
  Stream stream = Stream::resources;
  if (role == NodeRole::users) stream = Stream::users;
  else if (role == NodeRole::tags) stream = Stream::tags;
  MembershipMatrix m{Matrix(params.k, n), role};
  for (Index j = 0; j < n; ++j) {
    Engine rng = make_engine(seed, stream, static_cast<std::uint64_t>(j));
    m.weights.col(j) = draw_membership(params.k, params.rho, params.alpha, rng);
  }
  return m;
}

/// Ground truth for one synthetic instance.
struct GroundTruth {
  MembershipMatrix users;
  MembershipMatrix tags;
  MembershipMatrix resources;
  ConnectivityPair conn;
};

inline GroundTruth sample_ground_truth(const ModelParams& params) {
  params.validate();
  return {sample_memberships(params, params.n_u, NodeRole::users, params.seed),
          sample_memberships(params, params.n_t, NodeRole::tags, params.seed),
          sample_memberships(params, params.n_r, NodeRole::resources, params.seed),
          ConnectivityPair::make_homogeneous(params.k, params.p, params.q)};
}

/// F = Pi_U^T P (users) or F_tilde = Pi_T^T P_tilde (tags): n x k.
inline Matrix connectivity_factor(const MembershipMatrix& pi, const Matrix& p) {
  if (pi.k() != p.rows()) throw DimensionError("connectivity_factor: k mismatch");
  return pi.weights.transpose() * p;
}

/// Marginal probability of hyperedge {u, t, r} given the three memberships.
inline double hyperedge_prob(const Vector& pi_u, const Vector& pi_t, const Vector& pi_r,
                             const ConnectivityPair& conn) {
  const Vector f = conn.p.transpose() * pi_u;
  const Vector ft = conn.p_tilde.transpose() * pi_t;
  return (pi_r.array() * f.array() * ft.array()).sum();
}

/// The same probability by enumerating every latent assignment (z_u, z_t, z_r).
inline double hyperedge_prob_enumerated(const Vector& pi_u, const Vector& pi_t, const Vector& pi_r,
                                        const ConnectivityPair& conn) {
  const Index k = pi_u.size();
  double total = 0.0;
  for (Index a = 0; a < k; ++a) {
    for (Index b = 0; b < k; ++b) {
      for (Index c = 0; c < k; ++c) {
        total += pi_u[a] * pi_t[b] * pi_r[c] * conn.p(a, c) * conn.p_tilde(b, c);
      }
    }
  }
  return total;
}

namespace detail {

inline std::uint64_t triple_counter(const Dims& d, Index u, Index t, Index r) noexcept {
  return static_cast<std::uint64_t>((r * d.n_u + u) * d.n_t + t);
}

inline int categorical(const double* weights, int k, double u) noexcept {
  double acc = 0.0;
  for (int c = 0; c < k - 1; ++c) {
    acc += weights[c];
    if (u < acc) return c;
  }
  return k - 1;
}

inline void check_sampler_inputs(const MembershipMatrix& pu, const MembershipMatrix& pt,
                                 const MembershipMatrix& pr, const ConnectivityPair& conn) {
  conn.validate();
  if (pu.k() != conn.k() || pt.k() != conn.k() || pr.k() != conn.k()) {
    throw DimensionError("sampler: membership and connectivity k differ");
  }
  pu.validate_simplex();
  pt.validate_simplex();
  pr.validate_simplex();
}

/// Runs sample_resource(r, out) over resource ranges and concatenates the
/// per-range outputs in resource order.
template <class PerResource>
std::vector<Triple> sample_by_resource(Index n_r, int threads, PerResource&& sample_resource) {
  if (threads <= 0) threads = default_thread_count();
  const std::size_t chunks = static_cast<std::size_t>(std::min<Index>(n_r, std::max(1, threads) * 4));
  std::vector<std::vector<Triple>> parts(chunks);
  parallel_for(chunks, threads, [&](std::size_t ci) {
    const Index begin = n_r * static_cast<Index>(ci) / static_cast<Index>(chunks);
    const Index end = n_r * static_cast<Index>(ci + 1) / static_cast<Index>(chunks);
    for (Index r = begin; r < end; ++r) sample_resource(r, parts[ci]);
  });
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  std::vector<Triple> out;
  out.reserve(total);
  for (auto& p : parts) {
    out.insert(out.end(), p.begin(), p.end());
    std::vector<Triple>().swap(p);
  }
  return out;
}

}  // namespace detail

/// Samples through the latent community draws: five counter-indexed uniforms
/// per triple (three categorical draws and two Bernoulli draws).
inline HypergraphSample sample_hypergraph_latent(const MembershipMatrix& pu, const MembershipMatrix& pt,
                                                 const MembershipMatrix& pr, const ConnectivityPair& conn,
                                                 std::uint64_t seed, int threads = 0) {
  detail::check_sampler_inputs(pu, pt, pr, conn);
  const Dims dims{pu.nodes(), pt.nodes(), pr.nodes()};
  const int k = conn.k();
  const std::uint64_t key = derive_seed(seed, Stream::edges, 1);
  auto triples = detail::sample_by_resource(dims.n_r, threads, [&](Index r, std::vector<Triple>& out) {
    const double* wr = pr.weights.col(r).data();
    for (Index u = 0; u < dims.n_u; ++u) {
      const double* wu = pu.weights.col(u).data();
      for (Index t = 0; t < dims.n_t; ++t) {
        const double* wt = pt.weights.col(t).data();
        const std::uint64_t base = 5 * detail::triple_counter(dims, u, t, r);
        const int zu = detail::categorical(wu, k, counter_uniform(key, base));
        const int zt = detail::categorical(wt, k, counter_uniform(key, base + 1));
        const int zr = detail::categorical(wr, k, counter_uniform(key, base + 2));
        const bool b_user = counter_uniform(key, base + 3) < conn.p(zu, zr);
        const bool b_tag = counter_uniform(key, base + 4) < conn.p_tilde(zt, zr);
        if (b_user && b_tag) {
          out.push_back({static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(t),
                         static_cast<std::uint32_t>(r)});
        }
      }
    }
  });
  return {dims, std::move(triples)};
}

/// Samples each triple independently with its marginal probability.
inline HypergraphSample sample_hypergraph_collapsed(const MembershipMatrix& pu, const MembershipMatrix& pt,
                                                    const MembershipMatrix& pr, const ConnectivityPair& conn,
                                                    std::uint64_t seed, int threads = 0) {
  detail::check_sampler_inputs(pu, pt, pr, conn);
  const Dims dims{pu.nodes(), pt.nodes(), pr.nodes()};
  const std::uint64_t key = derive_seed(seed, Stream::edges, 2);
  const RowMajorMatrix f = connectivity_factor(pu, conn.p);
  const RowMajorMatrix ft = connectivity_factor(pt, conn.p_tilde);
  const Index k = conn.k();
  auto triples = detail::sample_by_resource(dims.n_r, threads, [&](Index r, std::vector<Triple>& out) {
    RowMajorMatrix fr = f;
    for (Index c = 0; c < k; ++c) fr.col(c) *= pr.weights(c, r);
    for (Index u = 0; u < dims.n_u; ++u) {
      const double* a = fr.row(u).data();
      const std::uint64_t base = detail::triple_counter(dims, u, 0, r);
      for (Index t = 0; t < dims.n_t; ++t) {
        const double* b = ft.row(t).data();
        double prob = 0.0;
        for (Index c = 0; c < k; ++c) prob += a[c] * b[c];
        if (counter_uniform(key, base + static_cast<std::uint64_t>(t)) < prob) {
          out.push_back({static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(t),
                         static_cast<std::uint32_t>(r)});
        }
      }
    }
  });
  return {dims, std::move(triples)};
}

enum class SamplerKind { collapsed, latent };

inline HypergraphSample sample_hypergraph(const GroundTruth& truth, std::uint64_t seed,
                                          SamplerKind kind = SamplerKind::collapsed, int threads = 0) {
  return kind == SamplerKind::collapsed
             ? sample_hypergraph_collapsed(truth.users, truth.tags, truth.resources, truth.conn, seed, threads)
             : sample_hypergraph_latent(truth.users, truth.tags, truth.resources, truth.conn, seed, threads);
}

/// Expected hyper-adjacency G = (F (.) F_tilde) Pi_R, |U||T| x |R|.
inline Matrix expected_adjacency(const MembershipMatrix& pu, const MembershipMatrix& pt,
                                 const MembershipMatrix& pr, const ConnectivityPair& conn) {
  if (pr.k() != conn.k()) throw DimensionError("expected_adjacency: k mismatch");
  return khatri_rao(connectivity_factor(pu, conn.p), connectivity_factor(pt, conn.p_tilde)) * pr.weights;
}

inline Matrix expected_adjacency(const GroundTruth& truth) {
  return expected_adjacency(truth.users, truth.tags, truth.resources, truth.conn);
}

/// CP factors of the population 3-star moment over a set of pure resources.
struct ThreeStarFactors {
  Matrix h_a;  // |A| x k
  Matrix h_b;
  Matrix h_c;
  Vector w;    // community frequencies within the pure set

  Tensor3 materialize() const { return cp_tensor(w, h_a, h_b, h_c); }
};

inline Matrix select_rows(const Matrix& m, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= m.rows()) throw DimensionError("select_rows: index out of range");
    out.row(static_cast<Index>(i)) = m.row(rows[i]);
  }
  return out;
}

inline ThreeStarFactors expected_three_star(const MembershipMatrix& pu, const MembershipMatrix& pt,
                                            const MembershipMatrix& pr, const ConnectivityPair& conn,
                                            const std::vector<Index>& pure_set, const std::vector<Index>& a,
                                            const std::vector<Index>& b, const std::vector<Index>& c) {
  if (pure_set.empty()) throw ArgumentError("expected_three_star: empty pure set");
  const Index k = conn.k();
  Vector w = Vector::Zero(k);
  for (Index r : pure_set) {
    if (r < 0 || r >= pr.nodes()) throw DimensionError("expected_three_star: resource out of range");
    Index hot = -1;
    for (Index i = 0; i < k; ++i) {
      const double x = pr.weights(i, r);
      if (x == 1.0 && hot < 0) hot = i;
      else if (x != 0.0) { hot = -2; break; }
    }
    if (hot < 0) {
      throw ContractViolation("expected_three_star: resource " + std::to_string(r) + " is not pure");
    }
    w[hot] += 1.0;
  }
  w /= static_cast<double>(pure_set.size());
  const Matrix h = khatri_rao(connectivity_factor(pu, conn.p), connectivity_factor(pt, conn.p_tilde));
  return {select_rows(h, a), select_rows(h, b), select_rows(h, c), w};
}

}  // namespace mmsf
