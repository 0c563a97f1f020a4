#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cbpf/cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "cbpf");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cbpf::cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cbpf_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const fs::path kGolden = fs::path(CBPF_TEST_DIR) / "golden";

}  // namespace

TEST_CASE("usage errors exit with 1") {
  CHECK(run({}).code == cbpf::kExitUsage);
  CHECK(run({"frobnicate"}).code == cbpf::kExitUsage);
  CHECK(run({"bench"}).code == cbpf::kExitUsage);
  CHECK(run({"smooth", "--model", "nope"}).code == cbpf::kExitUsage);
  CHECK(run({"smooth", "--model", "barriers", "--params", "0.5,0.2"}).code == cbpf::kExitUsage);
  CHECK(run({"couple", "--strategy", "XYZ"}).code == cbpf::kExitUsage);
  CHECK(run({"--help"}).code == cbpf::kExitOk);
}

TEST_CASE("malformed config reports the line") {
  const fs::path dir = scratch("badcfg");
  {
    std::ofstream f(dir / "bad.cfg");
    f << "model.family = barriers\n# fine\nreplicates 4\n";
  }
  const Run r = run({"--config", (dir / "bad.cfg").string(), "bench"});
  CHECK(r.code == cbpf::kExitUsage);
  CHECK(r.err.find("bad.cfg:3") != std::string::npos);
  {
    std::ofstream f(dir / "bad2.cfg");
    f << "model.family = barriers\nmodel.T = 16\nsweep.N = 4\nsweep.strategies = IMC\nreplicates = 2\nseed = x1\n";
  }
  const Run r2 = run({"--config", (dir / "bad2.cfg").string(), "bench", "--out", dir.string()});
  CHECK(r2.code == cbpf::kExitUsage);
  CHECK(r2.err.find("bad2.cfg:6") != std::string::npos);
  CHECK(run({"--config", (dir / "missing.cfg").string(), "bench"}).code == cbpf::kExitUsage);
}

TEST_CASE("bench output matches the golden files") {
  const fs::path dir = scratch("golden");
  const Run r = run({"--config", (kGolden / "tiny.cfg").string(), "--out", dir.string(), "bench"});
  REQUIRE(r.code == cbpf::kExitOk);
  CHECK(slurp(dir / "meeting.csv") == slurp(kGolden / "meeting.csv"));
  CHECK(slurp(dir / "cost.csv") == slurp(kGolden / "cost.csv"));
}

TEST_CASE("outputs are identical across thread counts") {
  const fs::path d1 = scratch("t1"), d4 = scratch("t4");
  const std::string cfg = (kGolden / "tiny.cfg").string();
  REQUIRE(run({"--config", cfg, "--threads", "1", "--out", d1.string(), "bench"}).code == 0);
  REQUIRE(run({"--config", cfg, "--threads", "4", "--out", d4.string(), "bench"}).code == 0);
  CHECK(slurp(d1 / "meeting.csv") == slurp(d4 / "meeting.csv"));
  CHECK(slurp(d1 / "cost.csv") == slurp(d4 / "cost.csv"));

  const Run u1 = run({"--threads", "1", "--seed", "5", "--out", d1.string(), "unbiased", "--model", "lg",
                      "--T", "10", "--N", "8", "--replicates", "12", "--pilot-runs", "20"});
  const Run u4 = run({"--threads", "4", "--seed", "5", "--out", d4.string(), "unbiased", "--model", "lg",
                      "--T", "10", "--N", "8", "--replicates", "12", "--pilot-runs", "20"});
  REQUIRE(u1.code == 0);
  CHECK(u1.out == u4.out);
  CHECK(slurp(d1 / "unbiased.json") == slurp(d4 / "unbiased.json"));

  const Run s1 = run({"--threads", "1", "--out", d1.string(), "smooth", "--model", "barriers", "--T", "12",
                      "--iterations", "50", "--burn-in", "10", "--chains", "3"});
  const Run s4 = run({"--threads", "4", "--out", d4.string(), "smooth", "--model", "barriers", "--T", "12",
                      "--iterations", "50", "--burn-in", "10", "--chains", "3"});
  REQUIRE(s1.code == 0);
  CHECK(s1.out == s4.out);
  CHECK(slurp(d1 / "smooth_paths.csv") == slurp(d4 / "smooth_paths.csv"));
}

TEST_CASE("budget exhaustion exits with 3 and keeps partial output") {
  const fs::path dir = scratch("budget");
  const Run r = run({"--config", (kGolden / "tiny.cfg").string(), "--time-budget", "1e-12", "--out",
                     dir.string(), "bench"});
  CHECK(r.code == cbpf::kExitBudget);
  CHECK(fs::exists(dir / "meeting.csv"));
  CHECK(fs::exists(dir / "cost.csv"));
}

TEST_CASE("meeting.csv schema") {
  const fs::path dir = scratch("schema");
  REQUIRE(run({"--config", (kGolden / "tiny.cfg").string(), "--out", dir.string(), "--timing", "bench"}).code == 0);
  std::istringstream in(slurp(dir / "meeting.csv"));
  std::string header, line;
  std::getline(in, header);
  CHECK(header == "schema_version,seed,strategy,N,T,replicate,tau,wall_nanos,completed");
  int rows = 0;
  bool any_time = false;
  while (std::getline(in, line)) {
    ++rows;
    CHECK(line.rfind("1,", 0) == 0);
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string x; std::getline(ls, x, ',');) f.push_back(x);
    REQUIRE(f.size() == 9);
    any_time = any_time || f[7] != "0";
  }
  CHECK(rows == 2 * 2 * 4 * 4);
  CHECK(any_time);
  const std::string cost = slurp(dir / "cost.csv");
  CHECK(cost.rfind("schema_version,seed,strategy,N,T,mean_tau,cost_factor,completed\n", 0) == 0);
}

TEST_CASE("oracle and unbiased json") {
  const Run o = run({"oracle", "--model", "lg", "--params", "0.9,1,1", "--T", "8"});
  REQUIRE(o.code == 0);
  const auto j = nlohmann::json::parse(o.out);
  CHECK(j["means"].size() == 8);
  for (double m : j["means"]) CHECK(m == 0.0);

  const fs::path dir = scratch("unbiased");
  const Run u = run({"--out", dir.string(), "unbiased", "--model", "lg", "--T", "10", "--N", "8",
                     "--replicates", "4", "--pilot-runs", "20", "--h", "state:3"});
  REQUIRE(u.code == 0);
  const auto ju = nlohmann::json::parse(u.out);
  for (const char* key : {"value", "variance", "L", "k", "ell", "pilot_taus"}) CHECK(ju.contains(key));
  CHECK(ju["ell"].get<int>() == 5 * ju["k"].get<int>());
  CHECK(run({"unbiased", "--model", "lg", "--h", "state:99"}).code == cbpf::kExitUsage);
}

TEST_CASE("mle writes a trace") {
  const fs::path dir = scratch("mle");
  const Run r = run({"--out", dir.string(), "mle", "--model", "lg", "--T", "20", "--N", "8", "--iterations", "30"});
  REQUIRE(r.code == 0);
  std::istringstream in(slurp(dir / "trace.csv"));
  std::string header, line;
  std::getline(in, header);
  CHECK(header == "iteration,wall_nanos,raw_rho,raw_sigma_x,raw_sigma_y,rho,sigma_x,sigma_y,grad_norm,tau");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 31);
}
