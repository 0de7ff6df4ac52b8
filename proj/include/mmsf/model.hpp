#pragma once

// Domain types of the mixed-membership folksonomy model: parameters,
// membership matrices, connectivity matrices, sampled hypergraphs and the
// random node partitions used by the learning pipeline.

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "mmsf/errors.hpp"
#include "mmsf/linalg.hpp"
#include "mmsf/rng.hpp"

namespace mmsf {

enum class NodeRole { users, tags, resources, combined };

inline const char* to_string(NodeRole role) {
  switch (role) {
    case NodeRole::users: return "users";
    case NodeRole::tags: return "tags";
    case NodeRole::resources: return "resources";
    case NodeRole::combined: return "combined";
  }
  return "?";
}

struct Dims {
  Index n_u = 0;
  Index n_t = 0;
  Index n_r = 0;

  Index pair_count() const noexcept { return n_u * n_t; }
  MatricizationShape shape() const { return {n_u, n_t}; }
  bool operator==(const Dims&) const = default;
};

/// Parameters of the generative model with homogeneous connectivity.
struct ModelParams {
  int k = 2;
  Index n_u = 0;
  Index n_t = 0;
  Index n_r = 0;
  double p = 0.0;
  double q = 0.0;
  double rho = 0.0;
  std::vector<double> alpha;  // Dirichlet concentration of the mixed part
  std::uint64_t seed = 0;

  Dims dims() const noexcept { return {n_u, n_t, n_r}; }

  /// Throws ArgumentError naming the violated invariant. k = 1 is accepted as
  /// the degenerate single-community model.
  void validate() const {
    if (k < 1) throw ArgumentError("k must be at least 1");
    if (n_u < k || n_t < k || n_r < k) {
      throw ArgumentError("node counts n_u, n_t, n_r must each be at least k");
    }
    if (!(p >= 0.0 && p <= 1.0) || !(q >= 0.0 && q <= 1.0)) {
      throw ArgumentError("connection probabilities p and q must lie in [0, 1]");
    }
    if (!(q < p)) {
      throw ArgumentError("separation p - q > 0 violated: need 0 <= q < p <= 1 (p = " +
                          std::to_string(p) + ", q = " + std::to_string(q) + ")");
    }
    if (!(rho >= 0.0 && rho <= 1.0)) throw ArgumentError("rho must lie in [0, 1]");
    if (static_cast<int>(alpha.size()) != k) {
      throw ArgumentError("alpha must have exactly k = " + std::to_string(k) + " entries");
    }
    for (double a : alpha) {
      if (!(a > 0.0)) throw ArgumentError("alpha entries must be positive");
    }
  }
};

/// k x n matrix of per-node community weights. Ground-truth matrices live on
/// the simplex; estimates before thresholding need not.
struct MembershipMatrix {
  Matrix weights;
  NodeRole role = NodeRole::combined;

  Index k() const noexcept { return weights.rows(); }
  Index nodes() const noexcept { return weights.cols(); }

  bool on_simplex(double tol = 1e-9) const {
    if (weights.size() == 0) return true;
    if (weights.minCoeff() < -tol || weights.maxCoeff() > 1.0 + tol) return false;
    for (Index j = 0; j < weights.cols(); ++j) {
      if (std::abs(weights.col(j).sum() - 1.0) > tol) return false;
    }
    return true;
  }

  void validate_simplex(double tol = 1e-9) const {
    if (!on_simplex(tol)) {
      throw ContractViolation(std::string("membership matrix for ") + to_string(role) +
                              " is not column-stochastic");
    }
  }

  /// Indices of columns that are exactly coordinate basis vectors.
  std::vector<Index> pure_columns() const {
    std::vector<Index> out;
    for (Index j = 0; j < weights.cols(); ++j) {
      Index ones = 0;
      Index zeros = 0;
      for (Index i = 0; i < weights.rows(); ++i) {
        if (weights(i, j) == 1.0) ++ones;
        else if (weights(i, j) == 0.0) ++zeros;
      }
      if (ones == 1 && zeros == weights.rows() - 1) out.push_back(j);
    }
    return out;
  }
};

/// Community connectivity (P: users <-> resources, P_tilde: tags <-> resources).
struct ConnectivityPair {
  Matrix p;
  Matrix p_tilde;
  std::optional<std::pair<double, double>> homogeneous;  // (p, q)

  static ConnectivityPair make_homogeneous(int k, double p_in, double q_in) {
    Matrix m = Matrix::Constant(k, k, q_in);
    m.diagonal().setConstant(p_in);
    return {m, m, std::make_pair(p_in, q_in)};
  }

  int k() const noexcept { return static_cast<int>(p.rows()); }

  void validate() const {
    if (p.rows() != p.cols() || p_tilde.rows() != p_tilde.cols() || p.rows() != p_tilde.rows()) {
      throw DimensionError("connectivity matrices must both be k x k");
    }
    auto in_unit = [](const Matrix& m) { return m.minCoeff() >= 0.0 && m.maxCoeff() <= 1.0; };
    if (!in_unit(p) || !in_unit(p_tilde)) {
      throw ArgumentError("connectivity entries must lie in [0, 1]");
    }
  }

  bool full_rank(double rel_tol = 1e-12) const {
    auto rank = [&](const Matrix& m) {
      Eigen::JacobiSVD<Matrix> svd(m);
      const Vector& s = svd.singularValues();
      return s.size() > 0 && s[s.size() - 1] > rel_tol * s[0];
    };
    return rank(p) && rank(p_tilde);
  }
};

struct Triple {
  std::uint32_t u = 0;
  std::uint32_t t = 0;
  std::uint32_t r = 0;

  auto operator<=>(const Triple&) const = default;
};

/// Canonical order: resource-major, then user, then tag (the column-major
/// order of the |U||T| x |R| matricized adjacency).
inline bool canonical_less(const Triple& a, const Triple& b) {
  if (a.r != b.r) return a.r < b.r;
  if (a.u != b.u) return a.u < b.u;
  return a.t < b.t;
}

/// Observed {0,1} hyper-adjacency as a sorted, duplicate-free triple list.
class HypergraphSample {
 public:
  HypergraphSample() = default;

  /// Validates ranges and rejects duplicates; `triples` may be in any order.
  HypergraphSample(Dims dims, std::vector<Triple> triples) : dims_(dims), triples_(std::move(triples)) {
    check_dims(dims_);
    if (!std::is_sorted(triples_.begin(), triples_.end(), canonical_less)) {
      std::sort(triples_.begin(), triples_.end(), canonical_less);
    }
    for (std::size_t i = 0; i < triples_.size(); ++i) {
      const Triple& e = triples_[i];
      if (e.u >= dims_.n_u || e.t >= dims_.n_t || e.r >= dims_.n_r) {
        throw ArgumentError("hyperedge index out of range");
      }
      if (i > 0 && triples_[i - 1] == e) throw ArgumentError("duplicate hyperedge");
    }
  }

  const Dims& dims() const noexcept { return dims_; }
  const std::vector<Triple>& triples() const noexcept { return triples_; }
  std::size_t edge_count() const noexcept { return triples_.size(); }

  static Index row_index(const Dims& d, Index u, Index t) noexcept { return u * d.n_t + t; }

  /// |U||T| x |R| sparse matricized adjacency.
  SparseMatrix to_sparse() const {
    SparseMatrix g(dims_.pair_count(), dims_.n_r);
    std::vector<std::int64_t> per_column(static_cast<std::size_t>(dims_.n_r), 0);
    for (const Triple& e : triples_) ++per_column[e.r];
    g.reserve(per_column);
    for (const Triple& e : triples_) {
      g.insert(row_index(dims_, e.u, e.t), e.r) = 1.0;
    }
    g.makeCompressed();
    return g;
  }

  /// Dense matricized adjacency; intended for small instances.
  Matrix to_dense() const {
    Matrix g = Matrix::Zero(dims_.pair_count(), dims_.n_r);
    for (const Triple& e : triples_) g(row_index(dims_, e.u, e.t), e.r) = 1.0;
    return g;
  }

  static HypergraphSample from_dense(Dims dims, const Matrix& g) {
    if (g.rows() != dims.pair_count() || g.cols() != dims.n_r) {
      throw DimensionError("from_dense: matrix shape does not match dims");
    }
    std::vector<Triple> triples;
    for (Index r = 0; r < dims.n_r; ++r) {
      for (Index u = 0; u < dims.n_u; ++u) {
        for (Index t = 0; t < dims.n_t; ++t) {
          const double x = g(row_index(dims, u, t), r);
          if (x != 0.0 && x != 1.0) throw ArgumentError("from_dense: entries must be 0 or 1");
          if (x == 1.0) {
            triples.push_back({static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(t),
                               static_cast<std::uint32_t>(r)});
          }
        }
      }
    }
    return {dims, std::move(triples)};
  }

 private:
  static void check_dims(const Dims& d) {
    if (d.n_u < 1 || d.n_t < 1 || d.n_r < 1) throw ArgumentError("hypergraph dims must be positive");
    constexpr Index limit = std::numeric_limits<std::uint32_t>::max();
    if (d.n_u > limit || d.n_t > limit || d.n_r > limit) throw ArgumentError("hypergraph dims too large");
  }

  Dims dims_{};
  std::vector<Triple> triples_;
};

/// Random balanced partitions: resources into X / Y, users and tags into
/// three groups each, and the pair rows of U_2 x T_2 into blocks A, B, C.
/// All index lists are 0-based and sorted; A/B/C hold hyper-adjacency row
/// indices u * |T| + t.
struct PartitionSpec {
  Dims dims;
  std::vector<Index> x;
  std::vector<Index> y;
  std::array<std::vector<Index>, 3> users;
  std::array<std::vector<Index>, 3> tags;
  std::vector<Index> a;
  std::vector<Index> b;
  std::vector<Index> c;

  void validate() const {
    auto check_cover = [](std::vector<std::vector<Index>> parts, Index n, const char* what) {
      std::vector<int> seen(static_cast<std::size_t>(n), 0);
      for (const auto& part : parts) {
        if (part.empty()) throw ContractViolation(std::string(what) + ": empty block");
        for (Index i : part) {
          if (i < 0 || i >= n) throw ContractViolation(std::string(what) + ": index out of range");
          if (seen[static_cast<std::size_t>(i)]++) {
            throw ContractViolation(std::string(what) + ": blocks overlap");
          }
        }
      }
      for (int s : seen) {
        if (s == 0) throw ContractViolation(std::string(what) + ": blocks do not cover the set");
      }
    };
    check_cover({x, y}, dims.n_r, "resource partition");
    check_cover({users[0], users[1], users[2]}, dims.n_u, "user partition");
    check_cover({tags[0], tags[1], tags[2]}, dims.n_t, "tag partition");

    std::vector<Index> pairs;
    for (Index u : users[1]) {
      for (Index t : tags[1]) pairs.push_back(HypergraphSample::row_index(dims, u, t));
    }
    std::sort(pairs.begin(), pairs.end());
    std::vector<Index> blocks;
    for (const auto* blk : {&a, &b, &c}) {
      if (blk->empty()) throw ContractViolation("A/B/C: empty block");
      blocks.insert(blocks.end(), blk->begin(), blk->end());
    }
    std::sort(blocks.begin(), blocks.end());
    if (std::adjacent_find(blocks.begin(), blocks.end()) != blocks.end()) {
      throw ContractViolation("A/B/C: blocks overlap");
    }
    if (!std::includes(pairs.begin(), pairs.end(), blocks.begin(), blocks.end())) {
      throw ContractViolation("A/B/C: rows outside U_2 x T_2");
    }
  }
};

namespace detail {

/// Shuffles 0..n-1 and cuts it into `parts` contiguous, sorted pieces whose
/// sizes differ by at most one.
inline std::vector<std::vector<Index>> balanced_split(std::vector<Index> items, int parts, Engine& rng) {
  std::shuffle(items.begin(), items.end(), rng);
  std::vector<std::vector<Index>> out(static_cast<std::size_t>(parts));
  const std::size_t n = items.size();
  for (int p = 0; p < parts; ++p) {
    const std::size_t begin = n * static_cast<std::size_t>(p) / static_cast<std::size_t>(parts);
    const std::size_t end = n * static_cast<std::size_t>(p + 1) / static_cast<std::size_t>(parts);
    out[static_cast<std::size_t>(p)].assign(items.begin() + static_cast<std::ptrdiff_t>(begin),
                                            items.begin() + static_cast<std::ptrdiff_t>(end));
    std::sort(out[static_cast<std::size_t>(p)].begin(), out[static_cast<std::size_t>(p)].end());
  }
  return out;
}

inline std::vector<Index> iota_indices(Index n) {
  std::vector<Index> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), Index{0});
  return v;
}

}  // namespace detail

inline PartitionSpec make_partition(const Dims& dims, int k, std::uint64_t seed) {
  if (k < 1) throw ArgumentError("make_partition: k must be positive");
  const Index need = 3 * static_cast<Index>(k);
  if (dims.n_u < need || dims.n_t < need || dims.n_r < need) {
    throw ArgumentError("make_partition: each of U, T, R needs at least 3k = " + std::to_string(need) +
                        " nodes");
  }
  Engine rng = make_engine(seed, Stream::partition);
  PartitionSpec spec;
  spec.dims = dims;
  auto halves = detail::balanced_split(detail::iota_indices(dims.n_r), 2, rng);
  spec.x = std::move(halves[0]);
  spec.y = std::move(halves[1]);
  auto u3 = detail::balanced_split(detail::iota_indices(dims.n_u), 3, rng);
  auto t3 = detail::balanced_split(detail::iota_indices(dims.n_t), 3, rng);
  for (int i = 0; i < 3; ++i) {
    spec.users[static_cast<std::size_t>(i)] = std::move(u3[static_cast<std::size_t>(i)]);
    spec.tags[static_cast<std::size_t>(i)] = std::move(t3[static_cast<std::size_t>(i)]);
  }
  std::vector<Index> pairs;
  pairs.reserve(spec.users[1].size() * spec.tags[1].size());
  for (Index u : spec.users[1]) {
    for (Index t : spec.tags[1]) pairs.push_back(HypergraphSample::row_index(dims, u, t));
  }
  auto abc = detail::balanced_split(std::move(pairs), 3, rng);
  spec.a = std::move(abc[0]);
  spec.b = std::move(abc[1]);
  spec.c = std::move(abc[2]);
  return spec;
}

}  // namespace mmsf
