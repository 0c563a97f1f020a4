#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "cbpf/bench.hpp"
#include "cbpf/kernels.hpp"
#include "cbpf/unbiased.hpp"

namespace cbpf {

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(n);
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t k = 0; k < threads; ++k) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

namespace {

void expect_params(const ModelSpec& spec, std::size_t n) {
  if (spec.params.size() != n) {
    throw std::invalid_argument("model '" + spec.family + "' takes " + std::to_string(n) +
                                " parameters, got " + std::to_string(spec.params.size()));
  }
}

}  // namespace

std::unique_ptr<FeynmanKacModel> make_model(const ModelSpec& spec, std::size_t horizon,
                                            std::uint64_t data_seed) {
  if (horizon == 0) throw std::invalid_argument("horizon must be >= 1");
  const auto& p = spec.params;
  if (spec.family == "barriers") {
    expect_params(spec, 3);
    return std::make_unique<BarriersModel>(p[0], p[1], p[2], horizon);
  }
  if (spec.family == "lg") {
    expect_params(spec, 3);
    return std::make_unique<LinearGaussianModel>(p[0], p[1], p[2], horizon);
  }
  if (spec.family == "sv") {
    expect_params(spec, 4);
    const SVParams theta(p[0], p[1], p[2], p[3]);
    Rng rng(derive_seed(data_seed, "sv-data", horizon));
    return std::make_unique<SvModel>(theta, simulate_sv(theta, horizon, rng).y);
  }
  if (spec.family == "uniform") {
    expect_params(spec, 0);
    return std::make_unique<UniformModel>(horizon);
  }
  throw std::invalid_argument("unknown model family '" + spec.family + "'");
}

ExperimentConfig ExperimentConfig::from_config(const Config& c) {
  c.require_known({"model.family", "model.params", "model.T", "sweep.N", "sweep.strategies",
                   "replicates", "seed", "time_budget_secs", "out_dir", "iteration_cap",
                   "threads"});
  ExperimentConfig e;
  e.model.family = c.get("model.family");
  if (c.has("model.params")) e.model.params = c.get_doubles("model.params");
  e.horizons = c.get_sizes("model.T");
  e.particle_counts = c.get_sizes("sweep.N");
  for (const auto& s : c.get_list("sweep.strategies")) {
    try {
      e.strategies.push_back(parse_strategy(s));
    } catch (const std::invalid_argument&) {
      throw ConfigError("key 'sweep.strategies': unknown strategy '" + s + "'");
    }
  }
  e.replicates = static_cast<std::size_t>(c.get_u64("replicates"));
  e.seed = c.get_u64("seed");
  if (c.has("time_budget_secs")) e.time_budget_secs = c.get_double("time_budget_secs");
  e.out_dir = c.get_or("out_dir", ".");
  if (c.has("iteration_cap")) e.iteration_cap = static_cast<std::size_t>(c.get_u64("iteration_cap"));
  if (c.has("threads")) e.threads = static_cast<std::size_t>(c.get_u64("threads"));

  if (e.replicates == 0) throw ConfigError("key 'replicates' must be >= 1");
  for (std::size_t T : e.horizons) {
    if (T == 0) throw ConfigError("key 'model.T' entries must be >= 1");
  }
  for (std::size_t N : e.particle_counts) {
    if (N == 0) throw ConfigError("key 'sweep.N' entries must be >= 1");
  }
  try {
    make_model(e.model, 1, e.seed);
  } catch (const std::invalid_argument& err) {
    throw ConfigError(std::string("model: ") + err.what());
  }
  return e;
}

double cost_factor(CouplingStrategy s, std::size_t N, double mean_tau) {
  const double n = static_cast<double>(N);
  return s == CouplingStrategy::kIIC || s == CouplingStrategy::kJIC ? mean_tau * n
                                                                     : mean_tau * n * n;
}

bool BenchResult::all_completed() const {
  return std::all_of(cells.begin(), cells.end(), [](const CostRecord& c) { return c.completed; });
}

std::string cell_id(const ModelSpec& model, std::size_t N, std::size_t T, CouplingStrategy s) {
  std::ostringstream os;
  os << std::setprecision(17) << model.family;
  for (double p : model.params) os << ':' << p;
  os << "|N=" << N << "|T=" << T << '|' << to_string(s);
  return os.str();
}

BenchResult run_meeting_benchmark(const ExperimentConfig& config) {
  using Clock = std::chrono::steady_clock;
  BenchResult result;
  for (std::size_t T : config.horizons) {
    const auto model = make_model(config.model, T, config.seed);
    for (std::size_t N : config.particle_counts) {
      for (CouplingStrategy s : config.strategies) {
        const std::string id = cell_id(config.model, N, T, s);
        const auto start = Clock::now();
        const auto budget = std::chrono::duration<double>(config.time_budget_secs);
        std::vector<MeetingRow> rows(config.replicates);
        std::vector<std::uint8_t> started(config.replicates, 0);
        parallel_for(config.replicates, config.threads, [&](std::size_t r) {
          if (config.time_budget_secs > 0.0 && Clock::now() - start >= budget) return;
          started[r] = 1;
          MeetingRow& row = rows[r];
          row.seed = derive_seed(config.seed, id, r);
          row.strategy = s;
          row.N = N;
          row.T = T;
          row.replicate = r;
          Rng rng(row.seed);
          const auto t0 = Clock::now();
          Path a = particle_filter(*model, N, rng);
          Path b = particle_filter(*model, N, rng);
          try {
            const MeetingRecord rec =
                run_until_meeting(*model, std::move(a), std::move(b), N, s, rng, config.iteration_cap);
            row.tau = rec.tau;
            row.completed = true;
          } catch (const MeetingCapExceeded& e) {
            row.tau = e.record.iterations_run;
            row.completed = false;
          }
          row.wall_nanos =
              std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count();
        });

        CostRecord cell;
        cell.strategy = s;
        cell.N = N;
        cell.T = T;
        cell.completed = true;
        double sum = 0.0;
        std::size_t done = 0;
        for (std::size_t r = 0; r < config.replicates; ++r) {
          if (!started[r]) {
            cell.completed = false;
            continue;
          }
          result.rows.push_back(rows[r]);
          if (rows[r].completed) {
            sum += static_cast<double>(rows[r].tau);
            ++done;
          } else {
            cell.completed = false;
          }
        }
        cell.mean_tau = done > 0 ? sum / static_cast<double>(done) : 0.0;
        cell.cost_factor = cost_factor(s, N, cell.mean_tau);
        result.cells.push_back(cell);
      }
    }
  }
  return result;
}

void write_meeting_csv(std::ostream& os, const BenchResult& result, bool record_timing) {
  os << "schema_version,seed,strategy,N,T,replicate,tau,wall_nanos,completed\n";
  for (const auto& r : result.rows) {
    os << kSchemaVersion << ',' << r.seed << ',' << to_string(r.strategy) << ',' << r.N << ','
       << r.T << ',' << r.replicate << ',' << r.tau << ',' << (record_timing ? r.wall_nanos : 0)
       << ',' << (r.completed ? 1 : 0) << '\n';
  }
}

void write_cost_csv(std::ostream& os, const BenchResult& result, std::uint64_t seed) {
  os << "schema_version,seed,strategy,N,T,mean_tau,cost_factor,completed\n";
  os << std::setprecision(17);
  for (const auto& c : result.cells) {
    os << kSchemaVersion << ',' << seed << ',' << to_string(c.strategy) << ',' << c.N << ','
       << c.T << ',' << c.mean_tau << ',' << c.cost_factor << ',' << (c.completed ? 1 : 0)
       << '\n';
  }
}

BinaryMatrix coupling_matrix(const FeynmanKacModel& model, std::span<const State> ref_a,
                             std::span<const State> ref_b, std::size_t num_particles,
                             CouplingStrategy strategy, std::size_t iterations, Rng& rng) {
  Path a(ref_a.begin(), ref_a.end());
  Path b(ref_b.begin(), ref_b.end());
  BinaryMatrix m;
  m.reserve(iterations);
  for (std::size_t i = 0; i < iterations; ++i) {
    CoupledOutput out = coupled_cbpf_transition(model, a, b, num_particles, strategy, rng);
    a = std::move(out.path_a);
    b = std::move(out.path_b);
    std::vector<std::uint8_t> row(a.size());
    for (std::size_t t = 0; t < a.size(); ++t) row[t] = a[t] != b[t] ? 1 : 0;
    m.push_back(std::move(row));
  }
  return m;
}

BinaryMatrix coupling_matrix(const FeynmanKacModel& model, std::size_t num_particles,
                             CouplingStrategy strategy, std::size_t iterations, Rng& rng) {
  const Path a = particle_filter(model, num_particles, rng);
  const Path b = particle_filter(model, num_particles, rng);
  return coupling_matrix(model, a, b, num_particles, strategy, iterations, rng);
}

void write_pgm(std::ostream& os, const BinaryMatrix& m) {
  const std::size_t width = m.empty() ? 0 : m.front().size();
  os << "P5\n" << width << ' ' << m.size() << "\n255\n";
  for (const auto& row : m) {
    for (std::uint8_t v : row) os.put(static_cast<char>(v ? 0 : 255));
  }
}

void write_matrix_csv(std::ostream& os, const BinaryMatrix& m) {
  for (const auto& row : m) {
    for (std::size_t t = 0; t < row.size(); ++t) os << (t ? "," : "") << int(row[t]);
    os << '\n';
  }
}

std::vector<double> reference_change_rate(const FeynmanKacModel& model, std::size_t num_particles,
                                          std::size_t iterations, std::size_t burn_in, Rng& rng) {
  if (iterations <= burn_in) throw std::invalid_argument("iterations must exceed burn_in");
  const std::size_t T = model.horizon();
  Path ref = particle_filter(model, num_particles, rng);
  std::vector<std::size_t> changes(T, 0);
  for (std::size_t i = 0; i < iterations; ++i) {
    KernelOutput out = cbpf_transition(model, ref, num_particles, rng);
    if (i >= burn_in) {
      for (std::size_t t = 0; t < T; ++t) changes[t] += out.path[t] != ref[t] ? 1 : 0;
    }
    ref = std::move(out.path);
  }
  std::vector<double> rate(T);
  const double n = static_cast<double>(iterations - burn_in);
  for (std::size_t t = 0; t < T; ++t) rate[t] = static_cast<double>(changes[t]) / n;
  return rate;
}

}  // namespace cbpf
