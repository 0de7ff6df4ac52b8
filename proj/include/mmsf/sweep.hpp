#pragma once

// Parameter sweeps: every grid cell x trial runs generate, detect, learn and
// evaluate on its own seed stream. Rows come back in (cell, trial) order no
// matter how many workers ran them.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mmsf/errors.hpp"
#include "mmsf/eval.hpp"
#include "mmsf/generator.hpp"
#include "mmsf/io.hpp"
#include "mmsf/parallel.hpp"
#include "mmsf/pipeline.hpp"
#include "mmsf/rng.hpp"

namespace mmsf {

struct SweepGrid {
  std::vector<Index> n{150, 300, 600};
  std::vector<int> k{3};
  std::vector<double> p{0.8};
  std::vector<double> q{0.1};
  std::vector<double> rho{0.5};
  double alpha = 1.0;  // per-community Dirichlet concentration
  int trials = 10;
  std::uint64_t seed = 0;
  ThresholdMode mode = ThresholdMode::oracle;
  SamplerKind sampler = SamplerKind::collapsed;
  int threads = 0;
  bool include_runtime = false;

  void validate() const {
    if (n.empty() || k.empty() || p.empty() || q.empty() || rho.empty()) throw ArgumentError("sweep: empty grid");
    if (trials < 1) throw ArgumentError("sweep: trials must be at least 1");
    if (!(alpha > 0.0)) throw ArgumentError("sweep: alpha must be positive");
    if (mode == ThresholdMode::manual) throw ArgumentError("sweep: manual thresholds are not supported");
  }
};

struct SweepCell {
  Index n = 0;
  int k = 0;
  double p = 0.0;
  double q = 0.0;
  double rho = 0.0;
};

struct SweepRow {
  std::size_t cell = 0;
  int trial = 0;
  SweepCell params;
  std::uint64_t seed = 0;
  std::string status = "ok";
  std::size_t edges = 0;
  std::size_t true_pure = 0;
  std::size_t detected_pure = 0;
  double precision = std::numeric_limits<double>::quiet_NaN();
  double recall = std::numeric_limits<double>::quiet_NaN();
  double eps_pi = std::numeric_limits<double>::quiet_NaN();
  double l1_pre = std::numeric_limits<double>::quiet_NaN();
  double l1_post = std::numeric_limits<double>::quiet_NaN();
  double sample_margin = std::numeric_limits<double>::quiet_NaN();
  bool sample_pass = false;
  double separation_margin = std::numeric_limits<double>::quiet_NaN();
  bool separation_pass = false;
  double bound = std::numeric_limits<double>::quiet_NaN();
  double bound_ratio = std::numeric_limits<double>::quiet_NaN();
  double runtime_s = 0.0;

  bool ok() const { return status == "ok"; }
};

/// Cells in row-major order over (k, p, q, rho, n); n varies fastest.
inline std::vector<SweepCell> sweep_cells(const SweepGrid& g) {
  std::vector<SweepCell> cells;
  for (int k : g.k)
    for (double p : g.p)
      for (double q : g.q)
        for (double rho : g.rho)
          for (Index n : g.n) cells.push_back({n, k, p, q, rho});
  return cells;
}

namespace detail {

inline std::string sanitize_status(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r' || c == '"') c = ';';
  }
  return s;
}

inline void run_sweep_trial(const SweepGrid& grid, SweepRow& row) {
  const SweepCell& c = row.params;
  ModelParams mp;
  mp.k = c.k;
  mp.n_u = mp.n_t = mp.n_r = c.n;
  mp.p = c.p;
  mp.q = c.q;
  mp.rho = c.rho;
  mp.alpha.assign(static_cast<std::size_t>(c.k), grid.alpha);
  mp.seed = row.seed;

  // Assumption margins depend only on the cell, so they are reported even
  // when the trial itself fails.
  AssumptionInputs ai;
  ai.k = c.k;
  ai.n = static_cast<double>(c.n);
  ai.p = c.p;
  ai.q = c.q;
  ai.rho = c.rho;
  ai.second_moment = analytic_second_moment(c.k, c.rho, mp.alpha);
  const AssumptionReport ar = assumption_report(ai);
  row.sample_margin = ar.rank_test_margin;
  row.sample_pass = ar.rank_test_pass;
  row.separation_margin = ar.separation_margin;
  row.separation_pass = ar.separation_pass;
  BoundInputs bi;
  bi.k = c.k;
  bi.n = ai.n;
  bi.p = c.p;
  bi.q = c.q;
  bi.rho = c.rho;
  bi.kappa = ar.kappa;
  bi.sigma_k = ar.sigma_k;
  const ErrorBound eb = theoretical_error_bound(bi);
  row.bound = eb.infinite ? std::numeric_limits<double>::infinity() : eb.recovery;

  // p <= q cells are legal here (they probe the no-signal regime), so the
  // truth is assembled without the separation check.
  if (!(c.p >= 0.0 && c.p <= 1.0 && c.q >= 0.0 && c.q <= 1.0 && c.rho >= 0.0 && c.rho <= 1.0) || c.k < 1 ||
      c.n < c.k) {
    throw ArgumentError("sweep cell parameters out of range");
  }
  const GroundTruth truth{sample_memberships(mp, c.n, NodeRole::users, mp.seed),
                          sample_memberships(mp, c.n, NodeRole::tags, mp.seed),
                          sample_memberships(mp, c.n, NodeRole::resources, mp.seed),
                          ConnectivityPair::make_homogeneous(c.k, c.p, c.q)};
  const HypergraphSample sample = sample_hypergraph(truth, mp.seed, grid.sampler, 1);
  row.edges = sample.edge_count();
  const std::vector<Index> truth_pure = truth.resources.pure_columns();
  row.true_pure = truth_pure.size();

  LearnConfig lc;
  lc.k = c.k;
  lc.seed = mp.seed;
  lc.mode = grid.mode;
  lc.recover_users_tags = false;
  lc.threads = 1;
  lc.power.threads = 1;
  const LearnResult res = learn_memberships(sample.to_sparse(), mp.dims(), lc, &truth);
  row.detected_pure = res.pure.size();
  const PrecisionRecall pr = pure_precision_recall(res.pure, truth_pure);
  row.precision = pr.precision;
  row.recall = pr.recall;
  const RecoveryReport rep = evaluate_recovery(res.pi_tilde, res.pi_hat, truth.resources.weights);
  row.eps_pi = rep.l2_max_row;
  row.l1_pre = rep.l1_max_row_pre;
  row.l1_post = rep.l1_max_row;
  if (std::isfinite(row.bound) && row.bound > 0.0) row.bound_ratio = row.eps_pi / row.bound;
}

}  // namespace detail

/// Runs the whole grid. Per-trial failures land in the status column.
inline std::vector<SweepRow> run_sweep(const SweepGrid& grid) {
  grid.validate();
  const auto cells = sweep_cells(grid);
  const std::size_t trials = static_cast<std::size_t>(grid.trials);
  std::vector<SweepRow> rows(cells.size() * trials);
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    for (std::size_t t = 0; t < trials; ++t) {
      SweepRow& r = rows[ci * trials + t];
      r.cell = ci;
      r.trial = static_cast<int>(t);
      r.params = cells[ci];
      r.seed = derive_seed(grid.seed, Stream::sweep, ci, t);
    }
  }
  parallel_for(rows.size(), grid.threads, [&](std::size_t i) {
    SweepRow& r = rows[i];
    const auto start = std::chrono::steady_clock::now();
    try {
      detail::run_sweep_trial(grid, r);
    } catch (const Error& e) {
      r.status = detail::sanitize_status(std::string("failed: ") + e.what());
    } catch (const std::exception& e) {
      r.status = detail::sanitize_status(std::string("failed: ") + e.what());
    }
    r.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  });
  return rows;
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows, bool include_runtime) {
  out << "cell,trial,n,k,p,q,rho,seed,status,edges,true_pure,detected_pure,precision,recall,eps_pi,l1_pre,"
         "l1_post,sample_margin,sample_pass,separation_margin,separation_pass,error_bound,bound_ratio";
  if (include_runtime) out << ",runtime_s";
  out << '\n';
  auto f = [](double x) { return detail::format_double(x); };
  for (const SweepRow& r : rows) {
    const SweepCell& c = r.params;
    out << (r.cell + 1) << ',' << (r.trial + 1) << ',' << c.n << ',' << c.k << ',' << f(c.p) << ',' << f(c.q) << ','
        << f(c.rho) << ',' << r.seed << ',' << r.status << ',' << r.edges << ',' << r.true_pure << ','
        << r.detected_pure << ',' << f(r.precision) << ',' << f(r.recall) << ',' << f(r.eps_pi) << ','
        << f(r.l1_pre) << ',' << f(r.l1_post) << ',' << f(r.sample_margin) << ',' << (r.sample_pass ? 1 : 0) << ','
        << f(r.separation_margin) << ',' << (r.separation_pass ? 1 : 0) << ',' << f(r.bound) << ',' << f(r.bound_ratio);
    if (include_runtime) out << ',' << f(r.runtime_s);
    out << '\n';
  }
}

struct CellSummary {
  SweepCell params;
  int trials = 0;
  int failures = 0;
  double median_precision = std::numeric_limits<double>::quiet_NaN();
  double median_recall = std::numeric_limits<double>::quiet_NaN();
  double median_eps_pi = std::numeric_limits<double>::quiet_NaN();
  double median_l1_post = std::numeric_limits<double>::quiet_NaN();
  int threshold_helped = 0;  // trials with l1_post <= l1_pre
  bool sample_pass = false;
  bool separation_pass = false;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Medians over successful trials of each cell.
inline std::vector<CellSummary> summarize_sweep(const std::vector<SweepRow>& rows) {
  std::vector<CellSummary> out;
  std::size_t i = 0;
  while (i < rows.size()) {
    const std::size_t cell = rows[i].cell;
    CellSummary s;
    s.params = rows[i].params;
    s.sample_pass = rows[i].sample_pass;
    s.separation_pass = rows[i].separation_pass;
    std::vector<double> prec, rec, eps, l1;
    for (; i < rows.size() && rows[i].cell == cell; ++i) {
      const SweepRow& r = rows[i];
      ++s.trials;
      if (!r.ok()) {
        ++s.failures;
        continue;
      }
      prec.push_back(r.precision);
      rec.push_back(r.recall);
      eps.push_back(r.eps_pi);
      l1.push_back(r.l1_post);
      if (r.l1_post <= r.l1_pre) ++s.threshold_helped;
    }
    s.median_precision = median(prec);
    s.median_recall = median(rec);
    s.median_eps_pi = median(eps);
    s.median_l1_post = median(l1);
    out.push_back(s);
  }
  return out;
}

inline void write_sweep_summary(std::ostream& out, const std::vector<CellSummary>& cells) {
  out << "cell  n  k  p  q  rho | trials failed | precision recall eps_pi l1_post | thr<=pre | size sep\n";
  auto f = [](double x) { return detail::format_double(x); };
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const CellSummary& s = cells[i];
    const SweepCell& c = s.params;
    out << (i + 1) << "  " << c.n << "  " << c.k << "  " << f(c.p) << "  " << f(c.q) << "  " << f(c.rho) << " | "
        << s.trials << ' ' << s.failures << " | " << f(s.median_precision) << ' ' << f(s.median_recall) << ' '
        << f(s.median_eps_pi) << ' ' << f(s.median_l1_post) << " | " << s.threshold_helped << '/'
        << (s.trials - s.failures) << " | " << (s.sample_pass ? "pass" : "fail") << ' '
        << (s.separation_pass ? "pass" : "fail") << '\n';
  }
  out << "medians over successful trials; assumption checks use unit constants\n";
}

/// [sweep] section: list keys n, k, p, q, rho; scalars alpha, trials, seed,
/// threshold_mode, sampler, threads.
inline SweepGrid sweep_grid_from_config(const Config& cfg) {
  SweepGrid g;
  if (auto v = cfg.get_list<long long>("sweep", "n")) {
    g.n.clear();
    for (auto x : *v) g.n.push_back(static_cast<Index>(x));
  }
  if (auto v = cfg.get_list<int>("sweep", "k")) g.k = *v;
  if (auto v = cfg.get_list<double>("sweep", "p")) g.p = *v;
  if (auto v = cfg.get_list<double>("sweep", "q")) g.q = *v;
  if (auto v = cfg.get_list<double>("sweep", "rho")) g.rho = *v;
  g.alpha = cfg.get_or<double>("sweep", "alpha", g.alpha);
  g.trials = cfg.get_or<int>("sweep", "trials", g.trials);
  g.seed = cfg.get_or<std::uint64_t>("sweep", "seed", g.seed);
  g.mode = parse_threshold_mode(cfg.get_string("sweep", "threshold_mode", "oracle"));
  const std::string sampler = cfg.get_string("sweep", "sampler", "collapsed");
  if (sampler == "collapsed") g.sampler = SamplerKind::collapsed;
  else if (sampler == "latent") g.sampler = SamplerKind::latent;
  else throw ArgumentError("config: [sweep] sampler must be collapsed or latent");
  g.threads = cfg.get_or<int>("sweep", "threads", 0);
  g.validate();
  return g;
}

}  // namespace mmsf
