// mmsf command-line tool: generate, detect-pure, learn, evaluate, sweep,
// oracle, ingest and replay.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "mmsf/mmsf.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "0.1.0";

enum ExitCode { kOk = 0, kUsage = 2, kNumerical = 3, kAssumption = 4 };

/// Raised when strict mode rejects a run on its assumption checks.
struct AssumptionFailure : mmsf::Error {
  using mmsf::Error::Error;
};

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw mmsf::Error("sha256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw mmsf::ArgumentError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Everything that determines a run's outputs: command, config and inputs.
struct Invocation {
  std::string command;
  mmsf::Config config;
  std::map<std::string, std::string> inputs;  // role -> path
  fs::path out_dir;
  bool timings = false;
};

class Run {
 public:
  explicit Run(const Invocation& inv) : inv_(inv) { fs::create_directories(inv.out_dir); }

  const mmsf::Config& config() const { return inv_.config; }

  std::optional<std::string> input(const std::string& role) const {
    const auto it = inv_.inputs.find(role);
    if (it == inv_.inputs.end()) return std::nullopt;
    return it->second;
  }

  std::string require_input(const std::string& role) const {
    auto v = input(role);
    if (!v) throw mmsf::ArgumentError(inv_.command + ": missing input '" + role + "'");
    return *v;
  }

  void emit(const std::string& name, const std::string& bytes) {
    const fs::path path = inv_.out_dir / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw mmsf::ArgumentError("cannot open '" + path.string() + "' for writing");
    out << bytes;
    if (!out) throw mmsf::Error("write failed: " + path.string());
    outputs_.emplace_back(name, sha256_hex(bytes));
  }

  template <class F>
  auto timed(const std::string& stage, F&& f) {
    const auto start = std::chrono::steady_clock::now();
    if constexpr (std::is_void_v<decltype(f())>) {
      f();
      record(stage, start);
    } else {
      auto r = f();
      record(stage, start);
      return r;
    }
  }

  std::uint64_t seed() const {
    for (const char* section : {"learn", "sweep", "model"}) {
      if (auto s = inv_.config.get<std::uint64_t>(section, "seed")) return *s;
    }
    return 0;
  }

  void write_manifest() {
    json m;
    m["tool"] = "mmsf";
    m["version"] = kVersion;
    m["command"] = inv_.command;
    m["seed"] = seed();
    m["config"] = inv_.config.dump();
    json inputs = json::array();
    for (const auto& [role, path] : inv_.inputs) {
      inputs.push_back({{"role", role}, {"path", path}, {"sha256", sha256_hex(read_file(path))}});
    }
    m["inputs"] = inputs;
    json outputs = json::array();
    for (const auto& [name, hash] : outputs_) outputs.push_back({{"path", name}, {"sha256", hash}});
    m["outputs"] = outputs;
    if (inv_.timings) {
      json t = json::object();
      for (const auto& [stage, secs] : timings_) t[stage] = secs;
      m["timings_s"] = t;
    }
    const fs::path path = inv_.out_dir / "manifest.json";
    std::ofstream out(path, std::ios::binary);
    out << m.dump(2) << '\n';
  }

 private:
  void record(const std::string& stage, std::chrono::steady_clock::time_point start) {
    timings_.emplace_back(stage, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }

  const Invocation& inv_;
  std::vector<std::pair<std::string, std::string>> outputs_;
  std::vector<std::pair<std::string, double>> timings_;
};

template <class W>
std::string to_text(W&& write) {
  std::ostringstream ss;
  write(ss);
  return ss.str();
}

json matrix_json(const mmsf::Matrix& m) {
  json rows = json::array();
  for (mmsf::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (mmsf::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

json vector_json(const mmsf::Vector& v) {
  json a = json::array();
  for (mmsf::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

json one_based(const std::vector<mmsf::Index>& idx) {
  json a = json::array();
  for (auto i : idx) a.push_back(i + 1);
  return a;
}

json assumptions_json(const mmsf::AssumptionReport& r) {
  json j;
  j["constants"] = r.constants;
  j["sigma_k"] = r.sigma_k;
  j["kappa"] = r.kappa;
  j["rank_test"] = {{"required_n", r.rank_test_required_n}, {"margin", r.rank_test_margin}, {"pass", r.rank_test_pass}};
  j["separation"] = {{"lhs", r.separation_lhs},
                     {"rhs", r.separation_rhs},
                     {"margin", r.separation_margin},
                     {"pass", r.separation_pass}};
  if (r.kr_full_column_rank) j["kr_full_column_rank"] = *r.kr_full_column_rank;
  if (r.pi_y_full_row_rank) j["pi_y_full_row_rank"] = *r.pi_y_full_row_rank;
  return j;
}

json bound_json(const mmsf::ErrorBound& b) {
  return {{"infinite", b.infinite}, {"recovery", b.recovery}, {"distance", b.distance}, {"subspace", b.subspace},
          {"eps_g", b.eps_g},       {"eps_w", b.eps_w},       {"eps_t", b.eps_t}};
}

int config_threads(const mmsf::Config& cfg) { return cfg.get_or<int>("run", "threads", 0); }
bool strict_mode(const mmsf::Config& cfg) { return cfg.get_or<bool>("run", "strict", false); }

/// Assumption report from the [model] section, analytic second moment.
std::optional<mmsf::AssumptionReport> model_assumptions(const mmsf::Config& cfg) {
  if (!cfg.has("model", "p") || !cfg.has("model", "q") || !cfg.has("model", "rho") || !cfg.has("model", "k")) {
    return std::nullopt;
  }
  const int k = cfg.require<int>("model", "k");
  mmsf::AssumptionInputs ai;
  ai.k = k;
  ai.n = static_cast<double>(cfg.get<long long>("model", "n_r").value_or(cfg.require<long long>("model", "n")));
  ai.p = cfg.require<double>("model", "p");
  ai.q = cfg.require<double>("model", "q");
  ai.rho = cfg.require<double>("model", "rho");
  auto alpha = cfg.get_list<double>("model", "alpha").value_or(std::vector<double>{1.0});
  if (alpha.size() == 1) alpha.assign(static_cast<std::size_t>(k), alpha[0]);
  ai.second_moment = mmsf::analytic_second_moment(k, ai.rho, alpha);
  return mmsf::assumption_report(ai);
}

void enforce_strict(const mmsf::Config& cfg, const std::optional<mmsf::AssumptionReport>& r) {
  if (!strict_mode(cfg) || !r) return;
  if (!r->rank_test_pass) {
    throw AssumptionFailure("strict: rank-test sample requirement not met (margin " +
                            mmsf::detail::format_double(r->rank_test_margin) + ")");
  }
  if (!r->separation_pass) {
    throw AssumptionFailure("strict: separation condition not met (margin " +
                            mmsf::detail::format_double(r->separation_margin) + ")");
  }
}

mmsf::SamplerKind sampler_from(const mmsf::Config& cfg) {
  const std::string s = cfg.get_string("generate", "sampler", "collapsed");
  if (s == "collapsed") return mmsf::SamplerKind::collapsed;
  if (s == "latent") return mmsf::SamplerKind::latent;
  throw mmsf::ArgumentError("config: [generate] sampler must be collapsed or latent");
}

mmsf::HypergraphSample load_graph(const Run& run) {
  return mmsf::read_hypergraph(run.require_input("graph")).sample;
}

/// Ground truth from the three membership files plus homogeneous P from [model].
std::optional<mmsf::GroundTruth> load_truth(const Run& run) {
  auto users = run.input("truth_users");
  auto tags = run.input("truth_tags");
  auto resources = run.input("truth_resources");
  if (!users && !tags && !resources) return std::nullopt;
  if (!users || !tags || !resources) throw mmsf::ArgumentError("truth needs users, tags and resources files");
  const auto& cfg = run.config();
  const int k = cfg.require<int>("model", "k");
  mmsf::GroundTruth t{{mmsf::read_memberships(*users), mmsf::NodeRole::users},
                      {mmsf::read_memberships(*tags), mmsf::NodeRole::tags},
                      {mmsf::read_memberships(*resources), mmsf::NodeRole::resources},
                      mmsf::ConnectivityPair::make_homogeneous(k, cfg.require<double>("model", "p"),
                                                               cfg.require<double>("model", "q"))};
  for (const auto* m : {&t.users, &t.tags, &t.resources}) {
    if (m->k() != k) throw mmsf::DimensionError("truth membership files must have k = " + std::to_string(k) + " columns");
  }
  return t;
}

void check_truth_dims(const mmsf::GroundTruth& t, const mmsf::Dims& d) {
  if (t.users.nodes() != d.n_u || t.tags.nodes() != d.n_t || t.resources.nodes() != d.n_r) {
    throw mmsf::DimensionError("truth membership files do not match the hypergraph dims");
  }
}

// ---------------------------------------------------------------------------
// Subcommands

void cmd_generate(Run& run) {
  const mmsf::ModelParams mp = mmsf::model_params_from_config(run.config());
  enforce_strict(run.config(), model_assumptions(run.config()));
  const int threads = config_threads(run.config());
  const auto truth = run.timed("memberships", [&] { return mmsf::sample_ground_truth(mp); });
  const auto sample = run.timed("hypergraph", [&] {
    return mmsf::sample_hypergraph(truth, mp.seed, sampler_from(run.config()), threads);
  });
  run.timed("write", [&] {
    run.emit("hypergraph.tsv", to_text([&](std::ostream& o) { mmsf::write_hypergraph(o, sample); }));
    run.emit("users.csv", to_text([&](std::ostream& o) { mmsf::write_memberships(o, truth.users.weights); }));
    run.emit("tags.csv", to_text([&](std::ostream& o) { mmsf::write_memberships(o, truth.tags.weights); }));
    run.emit("resources.csv",
             to_text([&](std::ostream& o) { mmsf::write_memberships(o, truth.resources.weights); }));
  });
  std::cout << "generated " << sample.edge_count() << " hyperedges over " << mp.n_u << " x " << mp.n_t << " x "
            << mp.n_r << " nodes (" << truth.resources.pure_columns().size() << " pure resources)\n";
}

void cmd_detect_pure(Run& run) {
  const auto& cfg = run.config();
  mmsf::LearnConfig lc = mmsf::learn_config_from_config(cfg);
  lc.threads = config_threads(cfg);
  const auto sample = run.timed("read", [&] { return load_graph(run); });
  const auto truth = load_truth(run);
  if (truth) check_truth_dims(*truth, sample.dims());
  if (lc.mode == mmsf::ThresholdMode::oracle && !truth) {
    throw mmsf::ArgumentError("detect-pure: oracle thresholds need --truth");
  }
  const mmsf::SparseMatrix g = sample.to_sparse();
  const mmsf::PartitionSpec part = mmsf::make_partition(sample.dims(), lc.k, lc.seed);
  const auto prof = run.timed("rank_test", [&] {
    return mmsf::score_resources(g, part, lc.k, lc.threads,
                                 lc.mode == mmsf::ThresholdMode::oracle ? &*truth : nullptr);
  });
  mmsf::RankTestConfig rt{lc.tau1, lc.tau2, mmsf::ThresholdMode::manual};
  json report;
  report["threshold_mode"] = mmsf::to_string(lc.mode);
  if (lc.mode == mmsf::ThresholdMode::oracle) {
    double eps = 0.0;
    if (lc.eps_r) eps = *lc.eps_r;
    else if (lc.eps_source == mmsf::PerturbationSource::subspace_bound) eps = mmsf::subspace_perturbation_bound(*truth, part);
    else eps = mmsf::realized_rank_perturbation(prof);
    rt = mmsf::oracle_thresholds(*truth, eps);
    report["eps_r"] = eps;
  } else if (lc.mode == mmsf::ThresholdMode::heuristic) {
    const auto h = mmsf::heuristic_thresholds(prof.sigma1, prof.sigma2, lc.k);
    rt = h.config;
    if (h.degenerate_gap) {
      report["warning"] = h.warning;
      std::cerr << "warning: " << h.warning << '\n';
    }
  } else {
    rt.validate();
  }
  report["tau1"] = rt.tau1;
  report["tau2"] = rt.tau2;
  run.emit("rank_diagnostics.csv", to_text([&](std::ostream& o) { mmsf::write_diagnostics(o, prof, rt); }));
  const auto pure = mmsf::detect_pure_nodes(prof, rt);
  report["detected_pure"] = pure.size();
  if (truth) {
    const auto pr = mmsf::pure_precision_recall(pure, truth->resources.pure_columns());
    report["precision"] = pr.precision;
    report["recall"] = pr.recall;
  }
  run.emit("pure_resources.txt", to_text([&](std::ostream& o) { mmsf::write_index_list(o, pure); }));
  run.emit("detect.json", report.dump(2) + "\n");
  std::cout << "detected " << pure.size() << " pure resources of " << sample.dims().n_r << " (tau1 "
            << mmsf::detail::format_double(rt.tau1) << ", tau2 " << mmsf::detail::format_double(rt.tau2) << ")\n";
}

void cmd_learn(Run& run) {
  const auto& cfg = run.config();
  mmsf::LearnConfig lc = mmsf::learn_config_from_config(cfg);
  lc.threads = config_threads(cfg);
  lc.power.threads = lc.threads;
  enforce_strict(cfg, model_assumptions(cfg));
  const auto sample = run.timed("read", [&] { return load_graph(run); });
  const auto truth = load_truth(run);
  if (truth) check_truth_dims(*truth, sample.dims());
  std::optional<std::vector<mmsf::Index>> pure_override;
  if (auto p = run.input("pure")) pure_override = mmsf::read_index_list(*p, sample.dims().n_r);
  const auto res = run.timed("learn", [&] {
    return mmsf::learn_memberships(sample.to_sparse(), sample.dims(), lc, truth ? &*truth : nullptr, pure_override);
  });
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
  run.timed("write", [&] {
    run.emit("memberships_resources.csv",
             to_text([&](std::ostream& o) { mmsf::write_memberships(o, res.pi_hat); }));
    run.emit("memberships_resources_raw.csv",
             to_text([&](std::ostream& o) { mmsf::write_memberships(o, res.pi_tilde); }));
    if (res.users_tags_hat) {
      run.emit("memberships_users.csv",
               to_text([&](std::ostream& o) { mmsf::write_memberships(o, res.users_tags_hat->users); }));
      run.emit("memberships_tags.csv",
               to_text([&](std::ostream& o) { mmsf::write_memberships(o, res.users_tags_hat->tags); }));
    }
    run.emit("pure_resources.txt", to_text([&](std::ostream& o) { mmsf::write_index_list(o, res.pure); }));
    if (!pure_override) {
      run.emit("rank_diagnostics.csv",
               to_text([&](std::ostream& o) { mmsf::write_diagnostics(o, res.profiles, res.rank_test); }));
    }
    json e;
    e["k"] = lc.k;
    e["threshold_mode"] = pure_override ? "given" : mmsf::to_string(res.rank_test.mode);
    e["tau1"] = res.rank_test.tau1;
    e["tau2"] = res.rank_test.tau2;
    if (lc.mode == mmsf::ThresholdMode::oracle && !pure_override) e["eps_r"] = res.eps_r;
    e["pure_count"] = res.pure.size();
    e["eigenvalues"] = vector_json(res.eigen.eigenvalues);
    e["eigenvectors"] = matrix_json(res.eigen.eigenvectors);
    e["power_residual"] = res.eigen.residual;
    e["power_iterations"] = res.eigen.iterations;
    e["whitening"] = {{"cond_ab", res.whitening.cond_ab},
                      {"cond_ac", res.whitening.cond_ac},
                      {"cond_bc", res.whitening.cond_bc},
                      {"defect", res.whitening.whitening_defect}};
    e["membership_tau"] = res.membership_tau;
    e["warnings"] = res.warnings;
    run.emit("eigen.json", e.dump(2) + "\n");
  });
  std::cout << "learned k = " << lc.k << " communities from " << res.pure.size() << " pure resources\n";
}

void cmd_evaluate(Run& run) {
  const auto& cfg = run.config();
  const mmsf::Matrix est = mmsf::read_memberships(run.require_input("estimate"));
  const mmsf::Matrix truth = mmsf::read_memberships(run.require_input("truth"));
  if (est.rows() != truth.rows() || est.cols() != truth.cols()) {
    throw mmsf::DimensionError("evaluate: estimate and truth differ in shape");
  }
  const auto raw_path = run.input("raw");
  const mmsf::Matrix raw = raw_path ? mmsf::read_memberships(*raw_path) : est;
  if (raw.rows() != truth.rows() || raw.cols() != truth.cols()) {
    throw mmsf::DimensionError("evaluate: raw estimate and truth differ in shape");
  }
  const auto assumptions = model_assumptions(cfg);
  enforce_strict(cfg, assumptions);

  mmsf::RecoveryReport rep = mmsf::evaluate_recovery(raw, est, truth);
  json j;
  j["k"] = truth.rows();
  j["nodes"] = truth.cols();
  json perm = json::array();
  for (int p : rep.permutation) perm.push_back(p + 1);
  j["permutation"] = perm;
  j["l2_max_row"] = rep.l2_max_row;
  j["l1_max_row_pre"] = rep.l1_max_row_pre;
  j["l1_max_row"] = rep.l1_max_row;
  j["max_abs"] = rep.max_abs;
  if (auto p = run.input("pure")) {
    const auto detected = mmsf::read_index_list(*p, truth.cols());
    const auto truth_pure = mmsf::MembershipMatrix{truth, mmsf::NodeRole::resources}.pure_columns();
    rep.pure = mmsf::pure_precision_recall(detected, truth_pure);
    j["pure"] = {{"precision", rep.pure.precision},
                 {"recall", rep.pure.recall},
                 {"detected", detected.size()},
                 {"true", truth_pure.size()}};
  }
  if (assumptions) {
    j["assumptions"] = assumptions_json(*assumptions);
    mmsf::BoundInputs bi;
    bi.k = cfg.require<int>("model", "k");
    bi.n = static_cast<double>(truth.cols());
    bi.p = cfg.require<double>("model", "p");
    bi.q = cfg.require<double>("model", "q");
    bi.rho = cfg.require<double>("model", "rho");
    bi.kappa = assumptions->kappa;
    bi.sigma_k = assumptions->sigma_k;
    const auto b = mmsf::theoretical_error_bound(bi);
    j["bound"] = bound_json(b);
    if (!b.infinite && b.recovery > 0.0) j["bound_ratio"] = rep.l2_max_row / b.recovery;
  }
  rep.check();
  run.emit("evaluation.json", j.dump(2) + "\n");
  std::cout << "eps_pi " << mmsf::detail::format_double(rep.l2_max_row) << ", l1 max row "
            << mmsf::detail::format_double(rep.l1_max_row) << '\n';
}

void cmd_sweep(Run& run, bool timings) {
  mmsf::SweepGrid grid = mmsf::sweep_grid_from_config(run.config());
  if (!run.config().has("sweep", "threads")) grid.threads = config_threads(run.config());
  grid.include_runtime = timings;
  const auto rows = run.timed("sweep", [&] { return mmsf::run_sweep(grid); });
  run.emit("sweep.csv", to_text([&](std::ostream& o) { mmsf::write_sweep_csv(o, rows, grid.include_runtime); }));
  const auto summary = mmsf::summarize_sweep(rows);
  run.emit("sweep_summary.txt", to_text([&](std::ostream& o) { mmsf::write_sweep_summary(o, summary); }));
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.ok() ? 0 : 1;
  std::cout << "sweep: " << summary.size() << " cells, " << rows.size() << " trials, " << failed << " failed\n";
}

int cmd_oracle(Run& run) {
  const auto& cfg = run.config();
  const mmsf::ModelParams mp = mmsf::model_params_from_config(cfg);
  mmsf::LearnConfig lc = mmsf::learn_config_from_config(cfg);
  lc.mode = mmsf::ThresholdMode::oracle;
  lc.threads = config_threads(cfg);
  lc.power.threads = lc.threads;
  const auto truth = mmsf::sample_ground_truth(mp);
  const auto rep = run.timed("oracle", [&] { return mmsf::run_exact_oracle(truth, lc); });
  const double tol = cfg.get_or<double>("oracle", "tolerance", 1e-6);
  json j;
  j["k"] = rep.k;
  j["true_pure"] = one_based(rep.true_pure);
  j["detected_pure"] = one_based(rep.detected_pure);
  j["pure_sets_equal"] = rep.pure_sets_equal;
  json perm = json::array();
  for (int p : rep.permutation) perm.push_back(p + 1);
  j["permutation"] = perm;
  j["max_abs_error"] = {{"resources", rep.max_abs_error_resources},
                        {"users", rep.max_abs_error_users},
                        {"tags", rep.max_abs_error_tags}};
  j["eps_r"] = rep.eps_r;
  j["tau1"] = rep.rank_test.tau1;
  j["tau2"] = rep.rank_test.tau2;
  j["whitening_defect"] = rep.whitening_defect;
  j["tensor_residual"] = rep.tensor_residual;
  j["eigenvalues"] = vector_json(rep.eigenvalues);
  j["tolerance"] = tol;
  j["success"] = rep.success(tol);
  run.emit("oracle.json", j.dump(2) + "\n");
  std::cout << "oracle: pure sets " << (rep.pure_sets_equal ? "equal" : "differ") << ", max abs error "
            << mmsf::detail::format_double(rep.max_abs_error()) << (rep.success(tol) ? " (recovered)" : " (FAILED)")
            << '\n';
  return rep.success(tol) ? kOk : kNumerical;
}

void cmd_ingest(Run& run) {
  const auto& cfg = run.config();
  std::optional<mmsf::Dims> dims;
  if (auto d = cfg.get_list<long long>("ingest", "dims")) {
    if (d->size() != 3) throw mmsf::ArgumentError("ingest: dims needs three values n_u,n_t,n_r");
    dims = mmsf::Dims{static_cast<mmsf::Index>((*d)[0]), static_cast<mmsf::Index>((*d)[1]),
                      static_cast<mmsf::Index>((*d)[2])};
  }
  const auto rep = mmsf::read_hypergraph(run.require_input("input"), dims);
  run.emit("hypergraph.tsv", to_text([&](std::ostream& o) { mmsf::write_hypergraph(o, rep.sample); }));
  json j;
  const auto& d = rep.sample.dims();
  j["dims"] = {d.n_u, d.n_t, d.n_r};
  j["lines"] = rep.lines_read;
  j["duplicates_removed"] = rep.duplicates_removed;
  j["hyperedges"] = rep.sample.edge_count();
  run.emit("ingest.json", j.dump(2) + "\n");
  std::cout << "ingested " << rep.sample.edge_count() << " hyperedges (" << rep.duplicates_removed
            << " duplicates removed)\n";
}

int dispatch(const Invocation& inv) {
  Run run(inv);
  int code = kOk;
  if (inv.command == "generate") cmd_generate(run);
  else if (inv.command == "detect-pure") cmd_detect_pure(run);
  else if (inv.command == "learn") cmd_learn(run);
  else if (inv.command == "evaluate") cmd_evaluate(run);
  else if (inv.command == "sweep") cmd_sweep(run, inv.timings);
  else if (inv.command == "oracle") code = cmd_oracle(run);
  else if (inv.command == "ingest") cmd_ingest(run);
  else throw mmsf::ArgumentError("unknown command '" + inv.command + "'");
  run.write_manifest();
  return code;
}

/// Rebuilds the invocation recorded in a manifest; input hashes must still match.
Invocation from_manifest(const std::string& path) {
  json m;
  try {
    m = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw mmsf::ArgumentError("manifest '" + path + "': " + e.what());
  }
  Invocation inv;
  try {
    inv.command = m.at("command").get<std::string>();
    inv.config = mmsf::Config::parse_string(m.at("config").get<std::string>());
    for (const auto& in : m.at("inputs")) {
      const std::string p = in.at("path").get<std::string>();
      if (sha256_hex(read_file(p)) != in.at("sha256").get<std::string>()) {
        throw mmsf::ArgumentError("replay: input '" + p + "' changed since the manifest was written");
      }
      inv.inputs[in.at("role").get<std::string>()] = p;
    }
    inv.timings = m.contains("timings_s");
  } catch (const json::exception& e) {
    throw mmsf::ArgumentError("manifest '" + path + "': " + e.what());
  }
  return inv;
}

fs::path default_out_dir() {
  if (const char* env = std::getenv("MMSF_OUTPUT_DIR")) return env;
  return ".";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed-membership community learning on tripartite folksonomy hypergraphs"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  bool timings = false;
  bool strict = false;
  std::map<std::string, std::string> inputs;
  std::string truth_dir;
  std::string dims;
  std::string manifest_path;

  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "config file (key = value, [sections])")->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "override a config value: section.key=value")->take_all();
    sub->add_option("-o,--out", out_dir, "output directory (default: $MMSF_OUTPUT_DIR or .)");
    sub->add_flag("--timings", timings, "record wall-clock stage timings in the manifest");
    sub->add_flag("--strict", strict, "exit with code 4 when assumption checks fail");
  };
  auto input = [&](CLI::App* sub, const std::string& flag, const std::string& role, const std::string& help,
                   bool required) {
    auto* o = sub->add_option(flag, inputs[role], help)->check(CLI::ExistingFile);
    if (required) o->required();
  };

  auto* gen = app.add_subcommand("generate", "sample ground truth and a hypergraph");
  common(gen);
  auto* det = app.add_subcommand("detect-pure", "run the rank test on every resource");
  common(det);
  input(det, "-g,--graph", "graph", "hypergraph TSV", true);
  det->add_option("--truth", truth_dir, "directory with users.csv, tags.csv, resources.csv")
      ->check(CLI::ExistingDirectory);
  auto* learn = app.add_subcommand("learn", "estimate community memberships");
  common(learn);
  input(learn, "-g,--graph", "graph", "hypergraph TSV", true);
  input(learn, "--pure", "pure", "use this pure-resource list instead of the rank test", false);
  learn->add_option("--truth", truth_dir, "directory with users.csv, tags.csv, resources.csv")
      ->check(CLI::ExistingDirectory);
  auto* eval = app.add_subcommand("evaluate", "compare an estimate against ground truth");
  common(eval);
  input(eval, "-e,--estimate", "estimate", "estimated membership CSV", true);
  input(eval, "-t,--truth", "truth", "ground-truth membership CSV", true);
  input(eval, "--raw", "raw", "pre-threshold estimate CSV", false);
  input(eval, "--pure", "pure", "detected pure-node list", false);
  auto* sweep = app.add_subcommand("sweep", "grid of generate/learn/evaluate trials");
  common(sweep);
  auto* oracle = app.add_subcommand("oracle", "end-to-end run on exact moments");
  common(oracle);
  auto* ingest = app.add_subcommand("ingest", "validate and canonicalize a triple list");
  common(ingest);
  input(ingest, "-i,--input", "input", "TSV of 1-based u t r triples", true);
  ingest->add_option("--dims", dims, "n_u,n_t,n_r when the file has no #dims header");
  auto* replay = app.add_subcommand("replay", "re-execute the run recorded in a manifest");
  replay->add_option("manifest", manifest_path, "manifest.json")->required()->check(CLI::ExistingFile);
  replay->add_option("-o,--out", out_dir, "output directory (default: $MMSF_OUTPUT_DIR or .)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    Invocation inv;
    if (replay->parsed()) {
      inv = from_manifest(manifest_path);
    } else {
      CLI::App* sub = app.get_subcommands().front();
      inv.command = sub->get_name();
      if (!config_path.empty()) inv.config = mmsf::Config::load(config_path);
      for (const auto& o : overrides) {
        const auto eq = o.find('=');
        const auto dot = o.find('.');
        if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
          throw mmsf::ArgumentError("--set expects section.key=value, got '" + o + "'");
        }
        inv.config.set(o.substr(0, dot), o.substr(dot + 1, eq - dot - 1), o.substr(eq + 1));
      }
      if (strict) inv.config.set("run", "strict", "true");
      if (!dims.empty()) inv.config.set("ingest", "dims", dims);
      for (const auto& [role, path] : inputs) {
        if (!path.empty()) inv.inputs[role] = path;
      }
      if (!truth_dir.empty()) {
        inv.inputs["truth_users"] = (fs::path(truth_dir) / "users.csv").string();
        inv.inputs["truth_tags"] = (fs::path(truth_dir) / "tags.csv").string();
        inv.inputs["truth_resources"] = (fs::path(truth_dir) / "resources.csv").string();
      }
      inv.timings = timings;
    }
    inv.out_dir = out_dir.empty() ? default_out_dir() : fs::path(out_dir);
    return dispatch(inv);
  } catch (const AssumptionFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kAssumption;
  } catch (const mmsf::ContractViolation& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kAssumption;
  } catch (const mmsf::NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const mmsf::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
}
