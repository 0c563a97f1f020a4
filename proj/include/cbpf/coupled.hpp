#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "cbpf/coupling.hpp"
#include "cbpf/kernels.hpp"
#include "cbpf/model.hpp"

namespace cbpf {

/// Forward-pass coupling of the two particle systems.
///  - JMC: maximal coupling of the N-fold products of the predictive mixtures
///  - IMC: independent per-particle maximal couplings of the mixtures
///  - IIC: per-particle maximally coupled ancestor indices
///  - JIC: maximal coupling of the whole ancestor index vector
enum class CouplingStrategy { kJMC, kIMC, kIIC, kJIC };

std::string_view to_string(CouplingStrategy s);
/// Accepts "JMC", "IMC", "IIC", "JIC" (case-insensitive).
CouplingStrategy parse_strategy(std::string_view name);
inline constexpr CouplingStrategy kAllStrategies[] = {
    CouplingStrategy::kJMC, CouplingStrategy::kIMC, CouplingStrategy::kIIC,
    CouplingStrategy::kJIC};

/// Particles X_{t-1}^{0:N} and log-weights W_{t-1}^{0:N} (slot 0 = reference).
struct CloudRow {
  std::span<const State> states;
  std::span<const double> log_weights;
};

/// One-step predictive mixture zeta_t = sum_i v^i M_t(X_{t-1}^i, .) of a CBPF.
class PredictiveMixture {
 public:
  PredictiveMixture(const FeynmanKacModel& model, std::size_t t, CloudRow row);

  /// Two-stage draw: ancestor index, then transition.
  State sample(Rng& rng) const;
  double log_density(State y) const;
  std::size_t draw_ancestor(Rng& rng) const { return ancestors_.draw(rng); }

 private:
  const FeynmanKacModel* model_;
  std::size_t t_;
  std::span<const State> states_;
  std::vector<double> log_v_;
  std::vector<std::size_t> support_;
  Categorical ancestors_;
};

/// log zeta_t(y) for the cloud row at time t-1 (t >= 1 zero-based).
double predictive_log_density(CloudRow row, const FeynmanKacModel& model, std::size_t t,
                              State y);

struct CouplingOptions {
  /// Simulate once and copy when the two rows coincide (states and weights).
  bool coincident_shortcut = true;
  std::size_t rejection_cap = kDefaultRejectionCap;
};

/// Draw X_t^{1:N} and X~_t^{1:N} from a coupling of zeta_t^{(x)N} and
/// zeta~_t^{(x)N}. Outputs are written to `out_a` and `out_b` (size N each).
void fwd_couple(CouplingStrategy strategy, CloudRow row_a, CloudRow row_b,
                const FeynmanKacModel& model, std::size_t t, Rng& rng, std::span<State> out_a,
                std::span<State> out_b, const CouplingOptions& options = {});

std::pair<std::vector<State>, std::vector<State>> fwd_couple(
    CouplingStrategy strategy, CloudRow row_a, CloudRow row_b, const FeynmanKacModel& model,
    std::size_t t, std::size_t num_particles, Rng& rng, const CouplingOptions& options = {});

struct CoupledOutput {
  Path path_a;
  Path path_b;
  bool fully_met = false;
  std::size_t holes = 0;
  /// Per t: X_t^{1:N} equal to X~_t^{1:N} after the forward pass.
  std::vector<std::uint8_t> forward_couple_events;
};

struct CoupledKernelOptions : CouplingOptions {
  /// Experimental: marginal (pairwise-potential) weights in both chains.
  bool pairwise = false;
};

/// One coupled CBPF transition from references (ref_a, ref_b). Each output is
/// marginally a CBPF update of its reference; equal references give
/// bit-identical outputs.
CoupledOutput coupled_cbpf_transition(const FeynmanKacModel& model,
                                      std::span<const State> ref_a,
                                      std::span<const State> ref_b, std::size_t num_particles,
                                      CouplingStrategy strategy, Rng& rng,
                                      const CoupledKernelOptions& options = {});

inline constexpr std::size_t kInfiniteDistance = std::numeric_limits<std::size_t>::max();

/// Uncoupled-state diagnostics for a pair of paths: number of holes b*,
/// distance d_t to the nearest hole (kInfiniteDistance when there is none)
/// and the level sets H^d = {t : d_t = d}.
struct HoleProfile {
  std::size_t b_star = 0;
  std::vector<std::size_t> distance;
  std::map<std::size_t, std::vector<std::size_t>> levels;
};

HoleProfile hole_profile(std::span<const State> ref_a, std::span<const State> ref_b);

}  // namespace cbpf
