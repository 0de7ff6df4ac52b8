#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "mmsf/io.hpp"
#include "mmsf/sweep.hpp"

using namespace mmsf;

namespace {

long parse_error_line(const std::string& text) {
  try {
    Config::parse_string(text);
  } catch (const ParseError& e) {
    return e.line();
  }
  return -1;
}

}  // namespace

TEST(Config, ParsesSectionsCommentsAndLists) {
  const auto cfg = Config::parse_string(
      "# top comment\n"
      "[model]\n"
      "k = 3   # trailing\n"
      "p=0.8\n"
      "alpha = 0.5, 1, 2\n"
      "\n"
      "[learn]\n"
      "threshold_mode = oracle\n"
      "recover_users_tags = no\n");
  EXPECT_EQ(cfg.require<int>("model", "k"), 3);
  EXPECT_EQ(cfg.require<double>("model", "p"), 0.8);
  EXPECT_EQ(*cfg.get_list<double>("model", "alpha"), (std::vector<double>{0.5, 1.0, 2.0}));
  EXPECT_EQ(cfg.get_string("learn", "threshold_mode", ""), "oracle");
  EXPECT_FALSE(cfg.require<bool>("learn", "recover_users_tags"));
  EXPECT_FALSE(cfg.has("learn", "tau1"));
  EXPECT_EQ(cfg.get_or<int>("learn", "power_iterations", 50), 50);
}

TEST(Config, ErrorsCarryLineNumbers) {
  EXPECT_EQ(parse_error_line("[model]\nk 3\n"), 2);
  EXPECT_EQ(parse_error_line("[model\n"), 1);
  EXPECT_EQ(parse_error_line("[a]\nx = 1\n\nx = 2\n"), 4);
  EXPECT_EQ(parse_error_line("[a]\n = 1\n"), 2);
  const auto cfg = Config::parse_string("[model]\nk = three\n");
  EXPECT_THROW(cfg.require<int>("model", "k"), ArgumentError);
  EXPECT_THROW(cfg.require<double>("model", "p"), ArgumentError);
}

TEST(Config, DumpRoundTrip) {
  auto cfg = Config::parse_string("[b]\nz = 1\ny = two\n[a]\nx = 0.25\n");
  cfg.set("c", "w", "3,4");
  const std::string text = cfg.dump();
  EXPECT_EQ(Config::parse_string(text), cfg);
  EXPECT_EQ(Config::parse_string(text).dump(), text);
  EXPECT_LT(text.find("[a]"), text.find("[b]"));
}

TEST(Config, ModelParamsFromConfig) {
  const auto cfg = Config::parse_string("[model]\nk = 2\nn = 40\nn_r = 50\np = 0.9\nq = 0.1\nrho = 0.5\nalpha = 0.7\nseed = 9\n");
  const ModelParams mp = model_params_from_config(cfg);
  EXPECT_EQ(mp.n_u, 40);
  EXPECT_EQ(mp.n_r, 50);
  EXPECT_EQ(mp.alpha, (std::vector<double>{0.7, 0.7}));
  EXPECT_EQ(mp.seed, 9u);
  const auto bad = Config::parse_string("[model]\nk = 2\nn = 40\np = 0.1\nq = 0.3\nrho = 0.5\n");
  try {
    model_params_from_config(bad);
    FAIL();
  } catch (const ArgumentError& e) {
    EXPECT_NE(std::string(e.what()).find("separation"), std::string::npos) << e.what();
  }
}

TEST(Config, LearnConfigDefaults) {
  const auto cfg = Config::parse_string("[model]\nk = 3\np = 0.8\nq = 0.1\nseed = 4\n");
  const LearnConfig lc = learn_config_from_config(cfg);
  EXPECT_EQ(lc.k, 3);
  EXPECT_EQ(lc.seed, 4u);
  EXPECT_EQ(lc.mode, ThresholdMode::heuristic);
  EXPECT_EQ(lc.power.iterations, 50);
  EXPECT_EQ(*lc.p, 0.8);
  EXPECT_THROW(learn_config_from_config(Config::parse_string("[model]\nk = 3\n[learn]\neps_source = magic\n")),
               ArgumentError);
}

TEST(Memberships, RoundTripIsExact) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix pi(3, 17);
  for (Index i = 0; i < pi.size(); ++i) pi.data()[i] = u(rng);
  pi(0, 0) = 1.0 / 3.0;
  pi(1, 0) = -0.0;
  std::stringstream ss;
  write_memberships(ss, pi);
  EXPECT_EQ(ss.str().substr(0, 36), "community_1,community_2,community_3\n");
  EXPECT_EQ(read_memberships(ss), pi);
}

TEST(Memberships, Errors) {
  std::istringstream bad_header("community_2,community_1\n0,1\n");
  EXPECT_THROW(read_memberships(bad_header), ParseError);
  std::istringstream short_row("community_1,community_2\n0.5,0.5\n1\n");
  try {
    read_memberships(short_row);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3);
  }
}

TEST(Hypergraph, RoundTrip) {
  const Dims d{4, 3, 5};
  const HypergraphSample s(d, {{0, 0, 0}, {3, 2, 4}, {1, 2, 0}});
  std::stringstream ss;
  write_hypergraph(ss, s);
  EXPECT_EQ(ss.str().substr(0, 12), "#dims\t4\t3\t5\n");
  const auto rep = read_hypergraph(ss);
  EXPECT_EQ(rep.sample.triples(), s.triples());
  EXPECT_EQ(rep.sample.dims(), d);
  EXPECT_EQ(rep.lines_read, 3u);
  EXPECT_EQ(rep.duplicates_removed, 0u);
}

TEST(Hypergraph, IngestDedupAndWhitespace) {
  std::istringstream in("# comment\n1 2 3\n2\t2\t2\n1  2   3\n");
  const auto rep = read_hypergraph(in, Dims{3, 3, 3});
  EXPECT_EQ(rep.sample.edge_count(), 2u);
  EXPECT_EQ(rep.lines_read, 3u);
  EXPECT_EQ(rep.duplicates_removed, 1u);
}

TEST(Hypergraph, IngestErrors) {
  auto line_of = [](const std::string& text, std::optional<Dims> d) -> long {
    std::istringstream in(text);
    try {
      read_hypergraph(in, d);
    } catch (const ParseError& e) {
      return e.line();
    }
    return -1;
  };
  EXPECT_EQ(line_of("1 1 1\n1 4 1\n", Dims{3, 3, 3}), 2);
  EXPECT_EQ(line_of("1 1 1\n1 1\n", Dims{3, 3, 3}), 2);
  EXPECT_EQ(line_of("1 1 x\n", Dims{3, 3, 3}), 1);
  EXPECT_EQ(line_of("0 1 1\n", Dims{3, 3, 3}), 1);
  EXPECT_EQ(line_of("1 1 1\n", std::nullopt), 1);
  EXPECT_EQ(line_of("#dims\t2\t2\t2\n", Dims{3, 3, 3}), 1);
  std::istringstream msg("1 1 9\n");
  try {
    read_hypergraph(msg, Dims{3, 3, 3});
  } catch (const ParseError& e) {
    EXPECT_STREQ(e.what(), "line 1: resource index 9 out of range 1..3");
  }
}

TEST(IndexList, RoundTripSortsAndDedups) {
  std::stringstream ss;
  write_index_list(ss, {4, 0, 2});
  EXPECT_EQ(ss.str(), "5\n1\n3\n");
  std::istringstream in(ss.str() + "3\n");
  EXPECT_EQ(read_index_list(in, 5), (std::vector<Index>{0, 2, 4}));
  std::istringstream bad("1\n7\n");
  EXPECT_THROW(read_index_list(bad, 5), ParseError);
}

TEST(Diagnostics, Format) {
  RankProfiles prof;
  prof.sigma1 = (Vector(2) << 2.0, 1.0).finished();
  prof.sigma2 = (Vector(2) << 0.0, 0.5).finished();
  std::stringstream ss;
  write_diagnostics(ss, prof, {0.5, 0.1, ThresholdMode::manual});
  EXPECT_EQ(ss.str(), "node,sigma1,sigma2,verdict\n1,2,0,pure\n2,1,0.5,mixed\n");
}

namespace {

SweepGrid small_grid() {
  SweepGrid g;
  g.n = {30, 45};
  g.k = {2};
  g.p = {0.9};
  g.q = {0.1, 0.9};
  g.rho = {0.5};
  g.trials = 2;
  g.seed = 5;
  return g;
}

std::string sweep_csv(SweepGrid g, int threads) {
  g.threads = threads;
  std::ostringstream out;
  write_sweep_csv(out, run_sweep(g), false);
  return out.str();
}

}  // namespace

TEST(Sweep, CellsOrderNFastest) {
  const auto cells = sweep_cells(small_grid());
  ASSERT_EQ(cells.size(), 4u);
  EXPECT_EQ(cells[0].n, 30);
  EXPECT_EQ(cells[1].n, 45);
  EXPECT_EQ(cells[1].q, 0.1);
  EXPECT_EQ(cells[2].q, 0.9);
}

TEST(Sweep, DeterministicAcrossThreadCounts) {
  const std::string a = sweep_csv(small_grid(), 1);
  EXPECT_EQ(a, sweep_csv(small_grid(), 1));
  EXPECT_EQ(a, sweep_csv(small_grid(), 3));
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 9);
}

TEST(Sweep, EqualConnectivityCellIsFlaggedAndDoesNotAbort) {
  const auto rows = run_sweep(small_grid());
  ASSERT_EQ(rows.size(), 8u);
  for (const auto& r : rows) {
    if (r.params.q == r.params.p) {
      EXPECT_FALSE(r.separation_pass);
    } else {
      EXPECT_TRUE(r.ok()) << r.status;
      EXPECT_GE(r.precision, 0.0);
      EXPECT_LE(r.recall, 1.0);
    }
  }
  const auto summary = summarize_sweep(rows);
  ASSERT_EQ(summary.size(), 4u);
  EXPECT_FALSE(summary[2].separation_pass);
  std::ostringstream out;
  write_sweep_summary(out, summary);
  EXPECT_NE(out.str().find("fail"), std::string::npos);
}

TEST(Sweep, GridFromConfig) {
  const auto cfg = Config::parse_string("[sweep]\nn = 50, 100\nk = 2\nq = 0.05\ntrials = 3\nseed = 8\n");
  const SweepGrid g = sweep_grid_from_config(cfg);
  EXPECT_EQ(g.n, (std::vector<Index>{50, 100}));
  EXPECT_EQ(g.k, (std::vector<int>{2}));
  EXPECT_EQ(g.p, (std::vector<double>{0.8}));
  EXPECT_EQ(g.trials, 3);
  EXPECT_THROW(sweep_grid_from_config(Config::parse_string("[sweep]\ntrials = 0\n")), ArgumentError);
}

TEST(Sweep, Median) {
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
  EXPECT_TRUE(std::isnan(median({})));
}
