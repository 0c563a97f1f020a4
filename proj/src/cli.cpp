#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "cbpf/bench.hpp"
#include "cbpf/cli.hpp"
#include "cbpf/config.hpp"
#include "cbpf/kernels.hpp"
#include "cbpf/oracles.hpp"
#include "cbpf/score.hpp"
#include "cbpf/unbiased.hpp"

namespace cbpf {

namespace {

using nlohmann::json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::string> out_dir;
  std::optional<double> time_budget;
  bool timing = false;
};

// Model options shared by the single-run subcommands.
struct ModelOptions {
  std::string family;
  std::string params;
  std::optional<std::size_t> T;
  std::size_t N = 16;
  std::string strategy = "IMC";

  void add_to(CLI::App* app, bool with_strategy = true) {
    app->add_option("--model", family, "model family: barriers, lg, sv, uniform");
    app->add_option("--params", params, "comma-separated model parameters");
    app->add_option("--T", T, "time horizon");
    app->add_option("--N", N, "number of particles (excluding the reference)");
    if (with_strategy) app->add_option("--strategy", strategy, "JMC, IMC, IIC or JIC");
  }
};

struct Context {
  Globals g;
  Config config;
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;

  std::uint64_t seed() const {
    if (g.seed) return *g.seed;
    return config.has("seed") ? config.get_u64("seed") : 1;
  }
  std::size_t threads() const {
    if (g.threads) return *g.threads;
    return config.has("threads") ? static_cast<std::size_t>(config.get_u64("threads")) : 1;
  }
  std::filesystem::path out_dir() const {
    const std::string d = g.out_dir ? *g.out_dir : config.get_or("out_dir", ".");
    std::filesystem::create_directories(d);
    return d;
  }
};

std::vector<double> default_params(const std::string& family) {
  if (family == "barriers") return {0.5, 0.2, 0.5};
  if (family == "lg") return {0.9, 1.0, 1.0};
  if (family == "sv") return {-9.2, 0.97, -0.67, 0.2};
  return {};
}

ModelSpec resolve_model(const Context& ctx, const ModelOptions& mo, const std::string& fallback) {
  ModelSpec spec;
  spec.family = !mo.family.empty() ? mo.family : ctx.config.get_or("model.family", fallback);
  if (!mo.params.empty()) {
    for (const auto& s : split_list(mo.params)) spec.params.push_back(parse_double(s));
  } else if (ctx.config.has("model.params") && mo.family.empty()) {
    spec.params = ctx.config.get_doubles("model.params");
  } else {
    spec.params = default_params(spec.family);
  }
  return spec;
}

std::size_t resolve_horizon(const Context& ctx, const ModelOptions& mo, std::size_t fallback) {
  if (mo.T) return *mo.T;
  if (ctx.config.has("model.T")) return ctx.config.get_sizes("model.T").front();
  return fallback;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

json meeting_json(const MeetingRecord& m, bool timing) {
  return json{{"tau", m.tau},
              {"tau_per_time", m.tau_per_time},
              {"seed", m.seed},
              {"iterations_run", m.iterations_run},
              {"wall_nanos", timing ? m.wall_nanos : 0},
              {"met", m.met}};
}

// ---------------------------------------------------------------------------

struct SmoothOptions {
  ModelOptions model;
  std::string kernel = "cbpf";
  std::size_t iterations = 1000;
  std::size_t burn_in = 100;
  std::size_t chains = 1;
};

int run_smooth(Context& ctx, const SmoothOptions& o) {
  const ModelSpec spec = resolve_model(ctx, o.model, "lg");
  const std::size_t T = resolve_horizon(ctx, o.model, 32);
  if (o.iterations <= o.burn_in) throw UsageError("--iterations must exceed --burn-in");
  if (o.chains == 0) throw UsageError("--chains must be >= 1");
  if (o.kernel != "cbpf" && o.kernel != "cpf") throw UsageError("--kernel must be cbpf or cpf");
  const auto model = make_model(spec, T, ctx.seed());
  const std::size_t N = o.model.N;
  const std::size_t kept = o.iterations - o.burn_in;

  std::vector<std::vector<Path>> samples(o.chains);
  std::vector<std::vector<std::size_t>> changes(o.chains, std::vector<std::size_t>(T, 0));
  parallel_for(o.chains, ctx.threads(), [&](std::size_t c) {
    Rng rng(derive_seed(ctx.seed(), "smooth", c));
    Path ref = particle_filter(*model, N, rng);
    for (std::size_t i = 0; i < o.iterations; ++i) {
      KernelOutput k = o.kernel == "cbpf" ? cbpf_transition(*model, ref, N, rng)
                                          : cpf_transition(*model, ref, N, rng);
      if (i >= o.burn_in) {
        for (std::size_t t = 0; t < T; ++t) changes[c][t] += k.path[t] != ref[t] ? 1 : 0;
        samples[c].push_back(k.path);
      }
      ref = std::move(k.path);
    }
  });

  const auto dir = ctx.out_dir();
  std::ostringstream paths;
  paths << std::setprecision(17) << "chain,iteration";
  for (std::size_t t = 0; t < T; ++t) paths << ",x" << t;
  paths << '\n';
  std::vector<double> sum(T, 0.0), sum2(T, 0.0), rate(T, 0.0);
  for (std::size_t c = 0; c < o.chains; ++c) {
    for (std::size_t i = 0; i < samples[c].size(); ++i) {
      paths << c << ',' << (o.burn_in + i + 1);
      for (std::size_t t = 0; t < T; ++t) {
        const double x = samples[c][i][t];
        paths << ',' << x;
        sum[t] += x;
        sum2[t] += x * x;
      }
      paths << '\n';
    }
    for (std::size_t t = 0; t < T; ++t) rate[t] += static_cast<double>(changes[c][t]);
  }
  const double n = static_cast<double>(kept * o.chains);
  std::ostringstream summary;
  summary << std::setprecision(17) << "t,mean,variance,reference_change_rate\n";
  for (std::size_t t = 0; t < T; ++t) {
    const double m = sum[t] / n;
    summary << t << ',' << m << ',' << (sum2[t] / n - m * m) << ',' << rate[t] / n << '\n';
  }
  write_text(dir / "smooth_paths.csv", paths.str());
  write_text(dir / "smooth_summary.csv", summary.str());
  *ctx.out << json{{"command", "smooth"}, {"kernel", o.kernel}, {"model", spec.family},
                   {"params", spec.params}, {"T", T}, {"N", N}, {"seed", ctx.seed()},
                   {"chains", o.chains}, {"kept_per_chain", kept}}
                  .dump(2)
           << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct CoupleOptions {
  ModelOptions model;
  std::size_t cap = 1000;
};

int run_couple(Context& ctx, const CoupleOptions& o) {
  const ModelSpec spec = resolve_model(ctx, o.model, "barriers");
  const std::size_t T = resolve_horizon(ctx, o.model, 64);
  const CouplingStrategy s = parse_strategy(o.model.strategy);
  const auto model = make_model(spec, T, ctx.seed());
  const std::size_t N = o.model.N;
  Rng rng(derive_seed(ctx.seed(), "couple", 0));
  Path a = particle_filter(*model, N, rng);
  Path b = particle_filter(*model, N, rng);
  const HoleProfile initial = hole_profile(a, b);

  BinaryMatrix matrix;
  std::vector<std::size_t> holes;
  std::vector<std::size_t> last_diff(T, 0);
  std::size_t tau = 0;
  for (std::size_t n = 1; n <= o.cap && tau == 0; ++n) {
    CoupledOutput step = coupled_cbpf_transition(*model, a, b, N, s, rng);
    a = std::move(step.path_a);
    b = std::move(step.path_b);
    std::vector<std::uint8_t> row(T);
    for (std::size_t t = 0; t < T; ++t) {
      row[t] = a[t] != b[t] ? 1 : 0;
      if (row[t]) last_diff[t] = n;
    }
    matrix.push_back(std::move(row));
    holes.push_back(step.holes);
    if (step.fully_met) tau = n;
  }
  std::vector<std::size_t> tau_t(T);
  for (std::size_t t = 0; t < T; ++t) tau_t[t] = last_diff[t] + 1;

  const auto dir = ctx.out_dir();
  std::ostringstream pgm, csv;
  write_pgm(pgm, matrix);
  write_matrix_csv(csv, matrix);
  write_text(dir / "coupling_matrix.pgm", pgm.str());
  write_text(dir / "coupling_matrix.csv", csv.str());
  const json j{{"command", "couple"}, {"model", spec.family}, {"params", spec.params},
               {"T", T}, {"N", N}, {"strategy", to_string(s)}, {"seed", ctx.seed()},
               {"met", tau != 0}, {"tau", tau}, {"tau_per_time", tau_t},
               {"initial_holes", initial.b_star}, {"holes_per_iteration", holes}};
  write_text(dir / "couple.json", j.dump(2) + "\n");
  *ctx.out << j.dump(2) << '\n';
  return tau != 0 ? kExitOk : kExitBudget;
}

// ---------------------------------------------------------------------------

int run_bench(Context& ctx) {
  if (ctx.g.config_path.empty()) throw UsageError("bench requires --config");
  Config c = ctx.config;
  if (ctx.g.seed) c.set("seed", std::to_string(*ctx.g.seed));
  if (ctx.g.threads) c.set("threads", std::to_string(*ctx.g.threads));
  if (ctx.g.out_dir) c.set("out_dir", *ctx.g.out_dir);
  if (ctx.g.time_budget) {
    std::ostringstream os;
    os << std::setprecision(17) << *ctx.g.time_budget;
    c.set("time_budget_secs", os.str());
  }
  const ExperimentConfig e = ExperimentConfig::from_config(c);
  const BenchResult r = run_meeting_benchmark(e);
  std::filesystem::create_directories(e.out_dir);
  std::ostringstream meeting, cost;
  write_meeting_csv(meeting, r, ctx.g.timing);
  write_cost_csv(cost, r, e.seed);
  write_text(std::filesystem::path(e.out_dir) / "meeting.csv", meeting.str());
  write_text(std::filesystem::path(e.out_dir) / "cost.csv", cost.str());
  if (!r.all_completed()) {
    *ctx.err << "cbpf: time budget or iteration cap reached; partial output written\n";
    return kExitBudget;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct UnbiasedOptions {
  ModelOptions model;
  std::string h = "mid-state";
  std::size_t replicates = 1;
  std::size_t pilot_runs = 100;
  double quantile = 0.9;
  std::size_t cap = 100'000;
};

PathFunctional parse_functional(const std::string& name, std::size_t T) {
  if (name == "mid-state") return state_at(T / 2);
  if (name.rfind("state:", 0) == 0) {
    const auto t = static_cast<std::size_t>(parse_u64(name.substr(6)));
    if (t >= T) throw UsageError("--h state index out of range");
    return state_at(t);
  }
  if (name == "mean") {
    return [](std::span<const State> x) {
      return std::vector<double>{std::accumulate(x.begin(), x.end(), 0.0) /
                                 static_cast<double>(x.size())};
    };
  }
  throw UsageError("unknown --h '" + name + "' (mid-state, state:<t>, mean)");
}

int run_unbiased(Context& ctx, const UnbiasedOptions& o) {
  const ModelSpec spec = resolve_model(ctx, o.model, "lg");
  const std::size_t T = resolve_horizon(ctx, o.model, 32);
  const CouplingStrategy s = parse_strategy(o.model.strategy);
  if (o.replicates == 0) throw UsageError("--replicates must be >= 1");
  const auto model = make_model(spec, T, ctx.seed());
  const PathFunctional h = parse_functional(o.h, T);
  const std::size_t N = o.model.N;

  Rng pilot_rng(derive_seed(ctx.seed(), "unbiased-pilot", 0));
  const LagTuning lag = tune_lag(*model, N, s, pilot_rng, o.pilot_runs, o.quantile, o.cap);
  std::vector<UnbiasedEstimate> est(o.replicates);
  parallel_for(o.replicates, ctx.threads(), [&](std::size_t r) {
    Rng rng(derive_seed(ctx.seed(), "unbiased", r));
    est[r] = averaged_estimate(*model, h, N, lag.k, lag.ell, lag.lag, s, rng,
                               std::max(o.cap, lag.ell));
  });

  const std::size_t dim = est.front().value.size();
  std::vector<double> mean(dim, 0.0), var(dim, 0.0);
  for (const auto& e : est) {
    for (std::size_t c = 0; c < dim; ++c) mean[c] += e.value[c];
  }
  for (double& m : mean) m /= static_cast<double>(est.size());
  for (const auto& e : est) {
    for (std::size_t c = 0; c < dim; ++c) var[c] += (e.value[c] - mean[c]) * (e.value[c] - mean[c]);
  }
  for (double& v : var) v = est.size() > 1 ? v / static_cast<double>(est.size() - 1) : 0.0;

  json j{{"command", "unbiased"}, {"model", spec.family}, {"params", spec.params}, {"T", T},
         {"N", N}, {"strategy", to_string(s)}, {"h", o.h}, {"seed", ctx.seed()},
         {"value", dim == 1 ? json(mean[0]) : json(mean)},
         {"variance", dim == 1 ? json(var[0]) : json(var)},
         {"replicates", o.replicates}, {"L", lag.lag}, {"k", lag.k}, {"ell", lag.ell},
         {"pilot_taus", lag.pilot_taus}};
  if (o.replicates == 1) {
    j["meeting"] = meeting_json(est.front().meeting, ctx.g.timing);
  } else {
    std::vector<double> values;
    std::vector<std::size_t> taus;
    for (const auto& e : est) {
      values.push_back(e.value.front());
      taus.push_back(e.meeting.tau);
    }
    j["estimates"] = values;
    j["taus"] = taus;
  }
  write_text(ctx.out_dir() / "unbiased.json", j.dump(2) + "\n");
  *ctx.out << j.dump(2) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct MleOptions {
  ModelOptions model;
  std::size_t iterations = 1000;
  std::string schedule = "markovian";
  double alpha = 0.01;
  std::size_t pilot_runs = 100;
  std::size_t cap = 1000;
  bool log_variance_mu = false;
};

std::vector<double> simulate_lg(double rho, double sx, double sy, std::size_t T, Rng& rng) {
  std::vector<double> y(T);
  double x = rng.normal(0.0, sx / std::sqrt(1.0 - rho * rho));
  for (std::size_t t = 0; t < T; ++t) {
    if (t > 0) x = rho * x + sx * rng.normal();
    y[t] = x + sy * rng.normal();
  }
  return y;
}

int run_mle(Context& ctx, const MleOptions& o) {
  const ModelSpec spec = resolve_model(ctx, o.model, "sv");
  const std::size_t T = resolve_horizon(ctx, o.model, 500);
  Rng data_rng(derive_seed(ctx.seed(), "mle-data", T));
  std::unique_ptr<ModelFamily> family;
  TransformedParams init;
  if (spec.family == "sv") {
    if (spec.params.size() != 4) throw UsageError("sv takes 4 parameters");
    const SVParams theta(spec.params[0], spec.params[1], spec.params[2], spec.params[3]);
    auto fam = std::make_unique<SvFamily>(simulate_sv(theta, T, data_rng).y);
    init = sv_initial_guess(fam->data(), o.log_variance_mu);
    family = std::move(fam);
  } else if (spec.family == "lg") {
    if (spec.params.size() != 3) throw UsageError("lg takes 3 parameters");
    LinearGaussianModel check(spec.params[0], spec.params[1], spec.params[2], 1);
    family = std::make_unique<LinearGaussianFamily>(
        simulate_lg(spec.params[0], spec.params[1], spec.params[2], T, data_rng));
    const double start[3] = {0.5, 1.0, 1.0};
    init = TransformedParams::from_constrained(start, family->transforms());
  } else {
    throw UsageError("mle supports --model sv or lg");
  }

  MleConfig mc;
  mc.num_particles = o.model.N;
  mc.strategy = parse_strategy(o.model.strategy);
  if (o.schedule == "markovian") {
    mc.schedule = MleSchedule::kMarkovian;
  } else if (o.schedule == "unbiased") {
    mc.schedule = MleSchedule::kUnbiased;
  } else {
    throw UsageError("--schedule must be markovian or unbiased");
  }
  mc.iterations = o.iterations;
  mc.alpha = o.alpha;
  mc.pilot_runs = o.pilot_runs;
  mc.cap = o.cap;

  Rng rng(derive_seed(ctx.seed(), "mle", 0));
  const auto trace = mle_fit(*family, init, mc, rng);
  const auto dir = ctx.out_dir();
  std::ostringstream csv;
  write_trace_csv(csv, trace, family->names(), ctx.g.timing);
  write_text(dir / "trace.csv", csv.str());
  const json j{{"command", "mle"}, {"model", spec.family}, {"generating_params", spec.params},
               {"names", family->names()}, {"T", T}, {"N", mc.num_particles},
               {"schedule", o.schedule}, {"iterations", o.iterations}, {"seed", ctx.seed()},
               {"initial", trace.front().constrained}, {"final", trace.back().constrained},
               {"tail_average", tail_average(trace, 0.1)}};
  write_text(dir / "mle.json", j.dump(2) + "\n");
  *ctx.out << j.dump(2) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

int run_oracle(Context& ctx, const ModelOptions& mo) {
  const ModelSpec spec = resolve_model(ctx, mo, "lg");
  const std::size_t T = resolve_horizon(ctx, mo, 8);
  if (spec.family != "lg") throw UsageError("oracle supports --model lg");
  if (spec.params.size() != 3) throw UsageError("lg takes 3 parameters");
  const KalmanResult k = kalman_smoother(spec.params[0], spec.params[1], spec.params[2], T);
  const json j{{"command", "oracle"}, {"model", "lg"}, {"params", spec.params}, {"T", T},
               {"means", k.means}, {"variances", k.variances},
               {"log_likelihood", k.log_likelihood}};
  *ctx.out << j.dump(2) << '\n';
  return kExitOk;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Coupled conditional backward-sampling particle filters"};
  app.require_subcommand(1);
  app.fallthrough();
  Context ctx;
  ctx.out = &out;
  ctx.err = &err;
  app.add_option("--config", ctx.g.config_path, "key=value configuration file");
  app.add_option("--seed", ctx.g.seed, "root seed");
  app.add_option("--threads", ctx.g.threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", ctx.g.out_dir, "output directory");
  app.add_option("--time-budget", ctx.g.time_budget, "seconds per benchmark cell");
  app.add_flag("--timing", ctx.g.timing, "record wall-clock times in outputs");

  SmoothOptions smooth;
  auto* smooth_cmd = app.add_subcommand("smooth", "run a kernel chain and summarize marginals");
  smooth.model.add_to(smooth_cmd, false);
  smooth_cmd->add_option("--kernel", smooth.kernel, "cbpf or cpf");
  smooth_cmd->add_option("--iterations", smooth.iterations);
  smooth_cmd->add_option("--burn-in", smooth.burn_in);
  smooth_cmd->add_option("--chains", smooth.chains);

  CoupleOptions couple;
  auto* couple_cmd = app.add_subcommand("couple", "single coupled run with hole diagnostics");
  couple.model.add_to(couple_cmd);
  couple_cmd->add_option("--cap", couple.cap, "maximum coupled iterations");

  auto* bench_cmd = app.add_subcommand("bench", "meeting-time benchmark sweep");

  UnbiasedOptions unbiased;
  auto* unbiased_cmd = app.add_subcommand("unbiased", "unbiased smoothing estimate with tuned lag");
  unbiased_cmd->set_help_flag("--help", "print this help message and exit");
  unbiased.model.add_to(unbiased_cmd);
  unbiased_cmd->add_option("--h", unbiased.h, "mid-state, state:<t> or mean");
  unbiased_cmd->add_option("--replicates", unbiased.replicates);
  unbiased_cmd->add_option("--pilot-runs", unbiased.pilot_runs);
  unbiased_cmd->add_option("--quantile", unbiased.quantile);
  unbiased_cmd->add_option("--cap", unbiased.cap);

  MleOptions mle;
  auto* mle_cmd = app.add_subcommand("mle", "stochastic-gradient maximum likelihood");
  mle.model.add_to(mle_cmd);
  mle_cmd->add_option("--iterations", mle.iterations);
  mle_cmd->add_option("--schedule", mle.schedule, "markovian or unbiased");
  mle_cmd->add_option("--alpha", mle.alpha);
  mle_cmd->add_option("--pilot-runs", mle.pilot_runs);
  mle_cmd->add_option("--cap", mle.cap);
  mle_cmd->add_flag("--log-variance-mu", mle.log_variance_mu, "initialize mu at log var(y)");

  ModelOptions oracle;
  auto* oracle_cmd = app.add_subcommand("oracle", "print exact reference values");
  oracle.add_to(oracle_cmd, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (!ctx.g.config_path.empty()) ctx.config = Config::load(ctx.g.config_path);
    if (*smooth_cmd) return run_smooth(ctx, smooth);
    if (*couple_cmd) return run_couple(ctx, couple);
    if (*bench_cmd) return run_bench(ctx);
    if (*unbiased_cmd) return run_unbiased(ctx, unbiased);
    if (*mle_cmd) return run_mle(ctx, mle);
    if (*oracle_cmd) return run_oracle(ctx, oracle);
  } catch (const ConfigError& e) {
    err << "cbpf: config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "cbpf: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "cbpf: invalid argument: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "cbpf: error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

int cli_main(int argc, const char* const* argv) { return cli_main(argc, argv, std::cout, std::cerr); }

}  // namespace cbpf
