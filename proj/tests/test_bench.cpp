#include <doctest.h>

#include <cmath>
#include <sstream>

#include "cbpf/bench.hpp"
#include "cbpf/config.hpp"
#include "fixtures.hpp"
#include "stats.hpp"

using namespace cbpf;

namespace {

Config parse(const std::string& text) {
  std::istringstream in(text);
  return Config::parse(in, "test.cfg");
}

const char* kTiny =
    "# tiny sweep\n"
    "model.family = barriers\n"
    "model.params = 0.5, 0.2, 0.5\n"
    "model.T = 16, 32\n"
    "sweep.N = 3\n"
    "sweep.strategies = JMC, IIC\n"
    "replicates = 6\n"
    "seed = 9\n"
    "out_dir = unused\n";

}  // namespace

TEST_CASE("config parsing") {
  const Config c = parse(kTiny);
  CHECK(c.get("model.family") == "barriers");
  CHECK(c.get_doubles("model.params") == std::vector<double>{0.5, 0.2, 0.5});
  CHECK(c.get_sizes("model.T") == std::vector<std::size_t>{16, 32});
  CHECK(c.get_u64("seed") == 9);
  CHECK(c.get_or("missing", "x") == "x");

  CHECK_THROWS_WITH_AS(parse("a = 1\nb\n"), doctest::Contains("test.cfg:2"), ConfigError);
  CHECK_THROWS_WITH_AS(parse("a = 1\na = 2\n"), doctest::Contains("test.cfg:2"), ConfigError);
  CHECK_THROWS_WITH_AS(parse("\n\nx = \n"), doctest::Contains("test.cfg:3"), ConfigError);
  const Config bad = parse("# c\nseed = abc\nsweep.N = 1,,2\n");
  CHECK_THROWS_WITH_AS(bad.get_u64("seed"), doctest::Contains("test.cfg:2"), ConfigError);
  CHECK_THROWS_WITH_AS(bad.get_sizes("sweep.N"), doctest::Contains("test.cfg:3"), ConfigError);
  CHECK_THROWS_WITH_AS(parse("foo = 1\n").require_known({"bar"}), doctest::Contains("unknown key"),
                       ConfigError);
}

TEST_CASE("experiment config") {
  const ExperimentConfig e = ExperimentConfig::from_config(parse(kTiny));
  CHECK(e.model.family == "barriers");
  CHECK(e.horizons == std::vector<std::size_t>{16, 32});
  CHECK(e.strategies == std::vector<CouplingStrategy>{CouplingStrategy::kJMC, CouplingStrategy::kIIC});
  CHECK(e.replicates == 6);
  CHECK(e.time_budget_secs == 0.0);
  CHECK_THROWS_AS(ExperimentConfig::from_config(parse(std::string(kTiny) + "bogus = 1\n")), ConfigError);
  std::string bad_strategy = kTiny;
  bad_strategy.replace(bad_strategy.find("JMC, IIC"), 8, "JMC, XYZ");
  CHECK_THROWS_AS(ExperimentConfig::from_config(parse(bad_strategy)), ConfigError);
  std::string bad_params = kTiny;
  bad_params.replace(bad_params.find("0.5, 0.2, 0.5"), 13, "1.5, 0.2, 0.5");
  CHECK_THROWS_AS(ExperimentConfig::from_config(parse(bad_params)), ConfigError);
}

TEST_CASE("cost factors") {
  CHECK(cost_factor(CouplingStrategy::kIIC, 8, 3.0) == 24.0);
  CHECK(cost_factor(CouplingStrategy::kJIC, 8, 3.0) == 24.0);
  CHECK(cost_factor(CouplingStrategy::kIMC, 8, 3.0) == 192.0);
  CHECK(cost_factor(CouplingStrategy::kJMC, 8, 3.0) == 192.0);
}

TEST_CASE("parallel_for") {
  std::vector<int> hits(100, 0);
  parallel_for(100, 4, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);
  CHECK_THROWS_AS(parallel_for(10, 3, [](std::size_t i) {
                    if (i == 5) throw std::runtime_error("boom");
                  }),
                  std::runtime_error);
  parallel_for(0, 4, [](std::size_t) { FAIL("no work expected"); });
}

TEST_CASE("meeting benchmark is deterministic across thread counts") {
  ExperimentConfig e = ExperimentConfig::from_config(parse(kTiny));
  e.threads = 1;
  const BenchResult r1 = run_meeting_benchmark(e);
  e.threads = 4;
  const BenchResult r4 = run_meeting_benchmark(e);
  std::ostringstream m1, m4, c1, c4;
  write_meeting_csv(m1, r1, false);
  write_meeting_csv(m4, r4, false);
  write_cost_csv(c1, r1, e.seed);
  write_cost_csv(c4, r4, e.seed);
  CHECK(m1.str() == m4.str());
  CHECK(c1.str() == c4.str());
  CHECK(r1.rows.size() == 2 * 2 * 6);
  CHECK(r1.cells.size() == 4);
  CHECK(r1.all_completed());
  for (const auto& row : r1.rows) {
    CHECK(row.tau >= 1);
    CHECK(row.seed == derive_seed(9, cell_id(e.model, row.N, row.T, row.strategy), row.replicate));
  }
  for (const auto& c : r1.cells) CHECK(c.cost_factor == cost_factor(c.strategy, c.N, c.mean_tau));
}

TEST_CASE("time budget skips new replicates without censoring") {
  ExperimentConfig e = ExperimentConfig::from_config(parse(kTiny));
  e.time_budget_secs = 1e-12;
  e.replicates = 50;
  const BenchResult r = run_meeting_benchmark(e);
  CHECK_FALSE(r.all_completed());
  CHECK(r.rows.size() < 4 * 50);
  for (const auto& row : r.rows) CHECK(row.completed);

  e.time_budget_secs = 0.0;
  e.iteration_cap = 1;
  e.strategies = {CouplingStrategy::kIIC};
  e.horizons = {200};
  const BenchResult capped = run_meeting_benchmark(e);
  CHECK_FALSE(capped.all_completed());
}

TEST_CASE("coupling matrix") {
  const UniformModel m(40);
  Rng rng(1);
  const Path ref = particle_filter(m, 4, rng);
  const BinaryMatrix zero = coupling_matrix(m, ref, ref, 4, CouplingStrategy::kIMC, 5, rng);
  for (const auto& row : zero) {
    for (auto v : row) CHECK(v == 0);
  }

  // first coupled iteration per column is Geometric(N / (N + 1)) on {1, 2, ...}
  std::vector<double> firsts;
  std::vector<double> row_sums(6, 0.0);
  for (int rep = 0; rep < 100; ++rep) {
    const BinaryMatrix mat = coupling_matrix(m, 4, CouplingStrategy::kJMC, 12, rng);
    for (std::size_t t = 0; t < 40; ++t) {
      std::size_t i = 0;
      while (i < mat.size() && mat[i][t]) ++i;
      REQUIRE(i < mat.size());
      firsts.push_back(static_cast<double>(i + 1));
      for (std::size_t j = i; j < mat.size(); ++j) REQUIRE(mat[j][t] == 0);
    }
    for (std::size_t i = 0; i < 6; ++i) {
      for (auto v : mat[i]) row_sums[i] += v;
    }
  }
  const double p = 0.8;
  auto geom_cdf = [&](double k) { return k < 1 ? 0.0 : 1.0 - std::pow(1.0 - p, std::floor(k)); };
  CHECK(teststats::ks_test_discrete(firsts, geom_cdf) > 0.001);
  std::vector<double> counts(4, 0.0), expected(4, 0.0);
  for (double f : firsts) counts[std::min<std::size_t>(3, static_cast<std::size_t>(f) - 1)] += 1;
  for (int k = 0; k < 3; ++k) expected[k] = firsts.size() * p * std::pow(1.0 - p, k);
  expected[3] = firsts.size() * std::pow(1.0 - p, 3);
  CHECK(teststats::chi_square_gof(counts, expected) > 0.001);
  for (std::size_t i = 1; i < 6; ++i) CHECK(row_sums[i] <= row_sums[i - 1]);

  std::ostringstream pgm, csv;
  const BinaryMatrix small = {{1, 0, 1}, {0, 0, 0}};
  write_pgm(pgm, small);
  CHECK(pgm.str() == std::string("P5\n3 2\n255\n") + std::string("\0\xff\0\xff\xff\xff", 6));
  write_matrix_csv(csv, small);
  CHECK(csv.str() == "1,0,1\n0,0,0\n");
}

TEST_CASE("reference change rate") {
  const UniformModel m(20);
  Rng rng(2);
  const int iters = 5000;
  const auto rate = reference_change_rate(m, 4, iters, 100, rng);
  for (double r : rate) CHECK(std::fabs(r - 0.8) < teststats::binomial_band(0.8, iters - 100));

  const auto single = reference_change_rate(m, 4, 10, 9, rng);
  for (double r : single) CHECK((r == 0.0 || r == 1.0));
  CHECK_THROWS_AS(reference_change_rate(m, 4, 10, 10, rng), std::invalid_argument);

  const auto d = fixtures::three_state_hmm(5);
  double prev = -1.0;
  for (std::size_t N : {1u, 3u, 7u, 15u}) {
    const auto r = reference_change_rate(d, N, 20000, 100, rng);
    const double mean = std::accumulate(r.begin(), r.end(), 0.0) / r.size();
    CHECK(mean > prev);
    prev = mean;
  }
}
