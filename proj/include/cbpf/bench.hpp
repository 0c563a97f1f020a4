#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "cbpf/config.hpp"
#include "cbpf/coupled.hpp"
#include "cbpf/model.hpp"

namespace cbpf {

inline constexpr int kSchemaVersion = 1;

/// Run fn(0), ..., fn(n-1) on up to `threads` workers. Work is handed out by
/// an atomic counter; the first exception thrown is rethrown after joining.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

/// Model family name ("barriers", "lg", "sv", "uniform") with its parameters.
struct ModelSpec {
  std::string family = "barriers";
  std::vector<double> params;
};

/// Build a model of horizon T. SV data are simulated from the parameters with
/// a seed derived from `data_seed` and T.
std::unique_ptr<FeynmanKacModel> make_model(const ModelSpec& spec, std::size_t horizon,
                                            std::uint64_t data_seed);

struct ExperimentConfig {
  ModelSpec model;
  std::vector<std::size_t> horizons;
  std::vector<std::size_t> particle_counts;
  std::vector<CouplingStrategy> strategies;
  std::size_t replicates = 10;
  std::uint64_t seed = 1;
  std::size_t iteration_cap = 100'000;
  double time_budget_secs = 0.0;  // per cell; 0 = unlimited
  std::string out_dir = ".";
  std::size_t threads = 1;

  /// Keys: model.family, model.params, model.T, sweep.N, sweep.strategies,
  /// replicates, seed, time_budget_secs, out_dir, iteration_cap, threads.
  static ExperimentConfig from_config(const Config& config);
};

struct MeetingRow {
  std::uint64_t seed = 0;
  CouplingStrategy strategy = CouplingStrategy::kJMC;
  std::size_t N = 0;
  std::size_t T = 0;
  std::size_t replicate = 0;
  std::size_t tau = 0;
  std::int64_t wall_nanos = 0;
  bool completed = false;
};

struct CostRecord {
  CouplingStrategy strategy = CouplingStrategy::kJMC;
  std::size_t N = 0;
  std::size_t T = 0;
  double mean_tau = 0.0;
  /// mean_tau * N for IIC/JIC, mean_tau * N^2 for JMC/IMC.
  double cost_factor = 0.0;
  bool completed = false;
};

double cost_factor(CouplingStrategy s, std::size_t N, double mean_tau);

struct BenchResult {
  std::vector<MeetingRow> rows;
  std::vector<CostRecord> cells;
  bool all_completed() const;
};

/// Iterated coupled CBPF from two independent particle-filter paths for each
/// (N, T, strategy) cell. Replicate r of a cell uses
/// derive_seed(seed, cell_id, r). Once the cell's time budget is spent no new
/// replicates are started.
BenchResult run_meeting_benchmark(const ExperimentConfig& config);

std::string cell_id(const ModelSpec& model, std::size_t N, std::size_t T, CouplingStrategy s);

void write_meeting_csv(std::ostream& os, const BenchResult& result, bool record_timing);
void write_cost_csv(std::ostream& os, const BenchResult& result, std::uint64_t seed);

using BinaryMatrix = std::vector<std::vector<std::uint8_t>>;

/// Row i: per-t indicator that the chains differ after coupled iteration i+1.
BinaryMatrix coupling_matrix(const FeynmanKacModel& model, std::span<const State> ref_a,
                             std::span<const State> ref_b, std::size_t num_particles,
                             CouplingStrategy strategy, std::size_t iterations, Rng& rng);
/// As above from two independent particle-filter paths.
BinaryMatrix coupling_matrix(const FeynmanKacModel& model, std::size_t num_particles,
                             CouplingStrategy strategy, std::size_t iterations, Rng& rng);

/// Binary PGM: differing states black (0), coupled states white (255).
void write_pgm(std::ostream& os, const BinaryMatrix& m);
void write_matrix_csv(std::ostream& os, const BinaryMatrix& m);

/// Per-time fraction of post-burn-in CBPF iterations whose output differs
/// from the previous reference.
std::vector<double> reference_change_rate(const FeynmanKacModel& model, std::size_t num_particles,
                                          std::size_t iterations, std::size_t burn_in, Rng& rng);

}  // namespace cbpf
