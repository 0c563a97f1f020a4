#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "cbpf/coupled.hpp"
#include "cbpf/model.hpp"

namespace cbpf {

/// Meeting bookkeeping for one run of coupled chains.
struct MeetingRecord {
  /// First coupled iteration n >= 1 with S_n equal to S~_n (0 if not met).
  std::size_t tau = 0;
  /// tau_t = min{n >= 1 : [S_m]_t = [S~_m]_t for all m >= n}.
  std::vector<std::size_t> tau_per_time;
  std::uint64_t seed = 0;
  std::size_t iterations_run = 0;
  std::int64_t wall_nanos = 0;
  bool met = false;
};

/// Test function h on paths; may be vector-valued (e.g. a score).
using PathFunctional = std::function<std::vector<double>(std::span<const State>)>;

/// h(x) = x_t.
PathFunctional state_at(std::size_t t);

struct UnbiasedEstimate {
  std::vector<double> value;
  std::size_t k = 0;
  std::size_t ell = 0;
  std::size_t lag = 1;
  MeetingRecord meeting;
};

/// The coupled run hit its iteration cap; the estimate is invalid.
class MeetingCapExceeded : public std::runtime_error {
 public:
  MeetingCapExceeded(const std::string& what, MeetingRecord partial)
      : std::runtime_error(what), record(std::move(partial)) {}
  MeetingRecord record;
};

struct EstimatorConfig {
  std::size_t num_particles = 16;
  std::size_t k = 0;
  std::size_t ell = 0;
  std::size_t lag = 1;
  CouplingStrategy strategy = CouplingStrategy::kIMC;
  std::size_t cap = 10'000;
  CoupledKernelOptions kernel_options{};
};

/// Lagged, offset estimator Z_k: one particle-filter initialisation, `lag`
/// single-chain CBPF advances of the leading chain, then coupled transitions
/// until the chains agree and n >= k.
UnbiasedEstimate unbiased_estimate(const FeynmanKacModel& model, const PathFunctional& h,
                                   std::size_t num_particles, std::size_t k, std::size_t lag,
                                   CouplingStrategy strategy, Rng& rng, std::size_t cap);

/// Average Z_{k:ell} of Z_k, ..., Z_ell computed from one coupled run.
UnbiasedEstimate averaged_estimate(const FeynmanKacModel& model, const PathFunctional& h,
                                   std::size_t num_particles, std::size_t k, std::size_t ell,
                                   std::size_t lag, CouplingStrategy strategy, Rng& rng,
                                   std::size_t cap);

UnbiasedEstimate averaged_estimate(const FeynmanKacModel& model, const PathFunctional& h,
                                   const EstimatorConfig& config, Rng& rng);

/// Iterate coupled transitions from (a, b) until the paths agree. The record's
/// tau counts coupled iterations.
MeetingRecord run_until_meeting(const FeynmanKacModel& model, Path a, Path b,
                                std::size_t num_particles, CouplingStrategy strategy, Rng& rng,
                                std::size_t cap, const CoupledKernelOptions& options = {});

/// Nearest-rank empirical quantile: the ceil(q n)-th order statistic.
std::size_t nearest_rank_quantile(std::vector<std::size_t> values, double q);

struct LagTuning {
  std::size_t lag = 1;
  std::size_t k = 1;
  std::size_t ell = 5;
  std::vector<std::size_t> pilot_taus;
};

/// Pilot runs of the estimator with lag 1 and k = 0; L = k = q and ell = 5q
/// where q is the `quantile` of the observed meeting times.
LagTuning tune_lag(const FeynmanKacModel& model, std::size_t num_particles,
                   CouplingStrategy strategy, Rng& rng, std::size_t pilot_runs,
                   double quantile = 0.9, std::size_t cap = 100'000);

/// Lag settings from an already collected sample of meeting times.
LagTuning lag_from_meeting_times(std::vector<std::size_t> taus, double quantile);

/// Default iteration cap: 10 (k + expected meeting time).
inline std::size_t default_iteration_cap(std::size_t k, std::size_t expected_tau) {
  return 10 * (k + expected_tau);
}

}  // namespace cbpf
