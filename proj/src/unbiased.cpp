#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>

#include "cbpf/kernels.hpp"
#include "cbpf/unbiased.hpp"

namespace cbpf {

namespace {

using Clock = std::chrono::steady_clock;

std::int64_t nanos_since(Clock::time_point start) {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - start).count();
}

// Per-time coupling bookkeeping shared by the estimator and the benchmark.
class MeetingTracker {
 public:
  MeetingTracker(std::size_t horizon, std::uint64_t seed) : last_diff_(horizon, 0) {
    record_.seed = seed;
  }

  /// Returns true when the two paths agree at iteration n.
  bool observe(std::size_t n, std::span<const State> a, std::span<const State> b) {
    bool equal = true;
    for (std::size_t t = 0; t < a.size(); ++t) {
      if (a[t] != b[t]) {
        last_diff_[t] = n;
        equal = false;
      }
    }
    if (equal && !record_.met) {
      record_.met = true;
      record_.tau = n;
    }
    record_.iterations_run = n;
    return equal;
  }

  MeetingRecord finish(std::int64_t wall_nanos) {
    record_.tau_per_time.resize(last_diff_.size());
    for (std::size_t t = 0; t < last_diff_.size(); ++t) record_.tau_per_time[t] = last_diff_[t] + 1;
    record_.wall_nanos = wall_nanos;
    return record_;
  }

 private:
  std::vector<std::size_t> last_diff_;
  MeetingRecord record_;
};

}  // namespace

PathFunctional state_at(std::size_t t) {
  return [t](std::span<const State> path) { return std::vector<double>{path[t]}; };
}

UnbiasedEstimate unbiased_estimate(const FeynmanKacModel& model, const PathFunctional& h,
                                   std::size_t num_particles, std::size_t k, std::size_t lag,
                                   CouplingStrategy strategy, Rng& rng, std::size_t cap) {
  return averaged_estimate(model, h, num_particles, k, k, lag, strategy, rng, cap);
}

UnbiasedEstimate averaged_estimate(const FeynmanKacModel& model, const PathFunctional& h,
                                   std::size_t num_particles, std::size_t k, std::size_t ell,
                                   std::size_t lag, CouplingStrategy strategy, Rng& rng,
                                   std::size_t cap) {
  EstimatorConfig config;
  config.num_particles = num_particles;
  config.k = k;
  config.ell = ell;
  config.lag = lag;
  config.strategy = strategy;
  config.cap = cap;
  return averaged_estimate(model, h, config, rng);
}

UnbiasedEstimate averaged_estimate(const FeynmanKacModel& model, const PathFunctional& h,
                                   const EstimatorConfig& config, Rng& rng) {
  const std::size_t N = config.num_particles;
  const std::size_t k = config.k, ell = config.ell, L = config.lag;
  if (N == 0) throw std::invalid_argument("number of particles must be >= 1");
  if (L == 0) throw std::invalid_argument("lag must be >= 1");
  if (ell < k) throw std::invalid_argument("ell must be >= k");
  if (config.cap < ell) throw std::invalid_argument("iteration cap must be >= ell");

  const auto start = Clock::now();
  const std::size_t T = model.horizon();

  // S~_0 = S_{-L} = s_0, then advance the leading chain L steps to S_0.
  Path lagging = particle_filter(model, N, rng);
  Path leading = lagging;
  for (std::size_t j = 0; j < L; ++j) leading = cbpf_transition(model, leading, N, rng).path;

  // h(S_n) for n >= k and the differences h(S_n) - h(S~_n) for n > k.
  std::vector<std::vector<double>> h_lead;
  std::vector<std::vector<double>> diff;
  std::size_t dim = 0;
  auto record_iteration = [&](std::size_t n, bool equal) {
    if (n < k) return;
    h_lead.push_back(h(leading));
    if (h_lead.size() == 1) dim = h_lead.front().size();
    if (h_lead.back().size() != dim) throw std::runtime_error("h changed dimension");
    if (n == k) {
      diff.emplace_back(dim, 0.0);
      return;
    }
    std::vector<double> d(dim, 0.0);
    if (!equal) {
      const std::vector<double> hl = h(lagging);
      for (std::size_t c = 0; c < dim; ++c) d[c] = h_lead.back()[c] - hl[c];
    }
    diff.push_back(std::move(d));
  };

  MeetingTracker tracker(T, rng.seed());
  record_iteration(0, leading == lagging);
  std::size_t n = 0;
  for (;;) {
    if (n >= config.cap) {
      throw MeetingCapExceeded("coupled chains did not meet within " + std::to_string(config.cap) +
                                   " iterations",
                               tracker.finish(nanos_since(start)));
    }
    ++n;
    CoupledOutput step = coupled_cbpf_transition(model, leading, lagging, N, config.strategy, rng,
                                                 config.kernel_options);
    leading = std::move(step.path_a);
    lagging = std::move(step.path_b);
    const bool equal = tracker.observe(n, leading, lagging);
    record_iteration(n, equal);
    if (equal && n >= ell) break;
  }

  // Z_m = h(S_m) + sum_{j=1}^{floor((n-m)/L)} [h(S_{m+Lj}) - h(S~_{m+Lj})],
  // with stored slot s corresponding to iteration k + s.
  UnbiasedEstimate est;
  est.k = k;
  est.ell = ell;
  est.lag = L;
  est.value.assign(dim, 0.0);
  for (std::size_t m = k; m <= ell; ++m) {
    std::vector<double> z = h_lead[m - k];
    for (std::size_t j = 1; j <= (n - m) / L; ++j) {
      const auto& d = diff[m + L * j - k];
      for (std::size_t c = 0; c < dim; ++c) z[c] += d[c];
    }
    for (std::size_t c = 0; c < dim; ++c) est.value[c] += z[c];
  }
  const double count = static_cast<double>(ell - k + 1);
  for (double& v : est.value) v /= count;
  est.meeting = tracker.finish(nanos_since(start));
  return est;
}

MeetingRecord run_until_meeting(const FeynmanKacModel& model, Path a, Path b,
                                std::size_t num_particles, CouplingStrategy strategy, Rng& rng,
                                std::size_t cap, const CoupledKernelOptions& options) {
  const auto start = Clock::now();
  MeetingTracker tracker(model.horizon(), rng.seed());
  for (std::size_t n = 1; n <= cap; ++n) {
    CoupledOutput step = coupled_cbpf_transition(model, a, b, num_particles, strategy, rng, options);
    a = std::move(step.path_a);
    b = std::move(step.path_b);
    if (tracker.observe(n, a, b)) return tracker.finish(nanos_since(start));
  }
  throw MeetingCapExceeded("coupled chains did not meet within " + std::to_string(cap) +
                               " iterations",
                           tracker.finish(nanos_since(start)));
}

std::size_t nearest_rank_quantile(std::vector<std::size_t> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
  if (!(q > 0.0 && q <= 1.0)) throw std::invalid_argument("quantile must lie in (0,1]");
  std::sort(values.begin(), values.end());
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

LagTuning lag_from_meeting_times(std::vector<std::size_t> taus, double quantile) {
  LagTuning out;
  const std::size_t q = std::max<std::size_t>(1, nearest_rank_quantile(taus, quantile));
  out.lag = q;
  out.k = q;
  out.ell = 5 * q;
  out.pilot_taus = std::move(taus);
  return out;
}

LagTuning tune_lag(const FeynmanKacModel& model, std::size_t num_particles,
                   CouplingStrategy strategy, Rng& rng, std::size_t pilot_runs, double quantile,
                   std::size_t cap) {
  if (pilot_runs < 10) throw std::invalid_argument("tune_lag needs at least 10 pilot runs");
  const PathFunctional none = [](std::span<const State>) { return std::vector<double>{}; };
  std::vector<std::size_t> taus;
  taus.reserve(pilot_runs);
  for (std::size_t r = 0; r < pilot_runs; ++r) {
    taus.push_back(
        averaged_estimate(model, none, num_particles, 0, 0, 1, strategy, rng, cap).meeting.tau);
  }
  return lag_from_meeting_times(std::move(taus), quantile);
}

}  // namespace cbpf
