#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cbpf/model.hpp"

namespace cbpf {

/// Particles X_t^{0:N} and log-weights for every time step, stored row-major
/// by time. Index 0 of each row is the reference slot.
struct ParticleCloud {
  ParticleCloud() = default;
  ParticleCloud(std::size_t horizon, std::size_t num_particles, bool with_ancestors = false);

  std::size_t horizon = 0;
  std::size_t width = 0;  // N + 1
  std::vector<State> particles;
  std::vector<double> log_weights;
  /// ancestors[t * width + i] = A_t^i, the index at time t of the parent of
  /// particle i at time t + 1 (CPF only; slot 0 unused).
  std::vector<std::uint32_t> ancestors;

  std::span<State> states(std::size_t t) { return {particles.data() + t * width, width}; }
  std::span<const State> states(std::size_t t) const {
    return {particles.data() + t * width, width};
  }
  std::span<double> weights(std::size_t t) { return {log_weights.data() + t * width, width}; }
  std::span<const double> weights(std::size_t t) const {
    return {log_weights.data() + t * width, width};
  }
};

struct KernelOutput {
  Path path;
  std::vector<std::size_t> indices;        // J_t
  std::vector<std::uint8_t> reference_retained;  // J_t == 0
};

/// Bootstrap particle filter with backward sampling over particles 1..N (no
/// reference). Returns one backward-sampled path.
Path particle_filter(const FeynmanKacModel& model, std::size_t num_particles, Rng& rng);

/// Conditional backward-sampling particle filter update of `reference`.
KernelOutput cbpf_transition(const FeynmanKacModel& model, std::span<const State> reference,
                             std::size_t num_particles, Rng& rng);

/// Conditional particle filter with explicit ancestors and ancestor tracing.
KernelOutput cpf_transition(const FeynmanKacModel& model, std::span<const State> reference,
                            std::size_t num_particles, Rng& rng);

/// Conditional marginal particle filter with backward sampling for models
/// with pairwise potentials G_t(x_{t-1}, x_t). Weights at t >= 1 are ratios
/// of mixture sums; O(N^2) per time step.
KernelOutput marginal_cbpf_transition(const FeynmanKacModel& model,
                                      std::span<const State> reference,
                                      std::size_t num_particles, Rng& rng);

/// Forward pass of the CBPF (reference in slot 0). When `reference` is empty
/// the reference slot is switched off (log-weight -inf) which yields the plain
/// particle filter.
ParticleCloud cbpf_forward(const FeynmanKacModel& model, std::span<const State> reference,
                           std::size_t num_particles, Rng& rng);

/// Marginal-weight forward pass for pairwise-potential models.
ParticleCloud marginal_forward(const FeynmanKacModel& model, std::span<const State> reference,
                               std::size_t num_particles, Rng& rng);

/// Backward sampling on a completed cloud: J_T ~ Categorical(W_T), then
/// J_t ~ Categorical(W_t^i M_{t+1}(X_t^i, X_{t+1}^{J_{t+1}})). With
/// `pairwise` the backward weights also carry G_{t+1}(X_t^i, X_{t+1}^{J_{t+1}}).
KernelOutput backward_sample(const FeynmanKacModel& model, const ParticleCloud& cloud, Rng& rng,
                             bool pairwise = false);

/// Validate the reference length and particle count; throws invalid_argument.
void check_kernel_inputs(const FeynmanKacModel& model, std::span<const State> reference,
                         std::size_t num_particles);

}  // namespace cbpf
