#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "cbpf/coupling.hpp"
#include "cbpf/kernels.hpp"

namespace cbpf {

namespace {

Categorical categorical_at(std::span<const double> log_weights, std::size_t t,
                           const char* what) {
  try {
    return Categorical(log_weights);
  } catch (const DegenerateWeights& e) {
    throw DegenerateWeights(std::string(what) + " degenerate at t=" + std::to_string(t) +
                            ": " + e.what());
  }
}

double log_sum_exp(std::span<const double> v) {
  double m = kNegInf;
  for (double x : v) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

void init_first_row(const FeynmanKacModel& model, std::span<const State> reference,
                    ParticleCloud& cloud, Rng& rng) {
  auto x = cloud.states(0);
  auto lw = cloud.weights(0);
  for (std::size_t i = 1; i < cloud.width; ++i) x[i] = model.sample_initial(rng);
  for (std::size_t i = 1; i < cloud.width; ++i) lw[i] = model.log_potential(0, x[i]);
  if (reference.empty()) {
    x[0] = 0.0;
    lw[0] = kNegInf;
  } else {
    x[0] = reference[0];
    lw[0] = model.log_potential(0, x[0]);
  }
}

}  // namespace

ParticleCloud::ParticleCloud(std::size_t horizon_, std::size_t num_particles,
                             bool with_ancestors)
    : horizon(horizon_),
      width(num_particles + 1),
      particles(horizon_ * (num_particles + 1)),
      log_weights(horizon_ * (num_particles + 1)) {
  if (with_ancestors && horizon_ > 1) ancestors.assign((horizon_ - 1) * width, 0);
}

void check_kernel_inputs(const FeynmanKacModel& model, std::span<const State> reference,
                         std::size_t num_particles) {
  if (num_particles == 0) throw std::invalid_argument("number of particles must be >= 1");
  if (reference.size() != model.horizon()) {
    throw std::invalid_argument("reference length " + std::to_string(reference.size()) +
                                " does not match horizon " +
                                std::to_string(model.horizon()));
  }
}

ParticleCloud cbpf_forward(const FeynmanKacModel& model, std::span<const State> reference,
                           std::size_t num_particles, Rng& rng) {
  const std::size_t T = model.horizon();
  ParticleCloud cloud(T, num_particles);
  init_first_row(model, reference, cloud, rng);
  for (std::size_t t = 1; t < T; ++t) {
    const auto prev = cloud.states(t - 1);
    const Categorical resample = categorical_at(cloud.weights(t - 1), t - 1, "filter weights");
    auto x = cloud.states(t);
    auto lw = cloud.weights(t);
    for (std::size_t i = 1; i < cloud.width; ++i) {
      x[i] = model.sample_transition(t, prev[resample.draw(rng)], rng);
    }
    for (std::size_t i = 1; i < cloud.width; ++i) lw[i] = model.log_potential(t, x[i]);
    if (reference.empty()) {
      x[0] = 0.0;
      lw[0] = kNegInf;
    } else {
      x[0] = reference[t];
      lw[0] = model.log_potential(t, x[0]);
    }
  }
  return cloud;
}

ParticleCloud marginal_forward(const FeynmanKacModel& model, std::span<const State> reference,
                               std::size_t num_particles, Rng& rng) {
  if (!model.has_pairwise_potential()) {
    throw std::invalid_argument("marginal CBPF requires a pairwise potential");
  }
  const std::size_t T = model.horizon();
  ParticleCloud cloud(T, num_particles);
  init_first_row(model, reference, cloud, rng);
  std::vector<double> num(cloud.width), den(cloud.width);
  for (std::size_t t = 1; t < T; ++t) {
    const auto prev = cloud.states(t - 1);
    const auto prev_lw = cloud.weights(t - 1);
    const Categorical resample = categorical_at(prev_lw, t - 1, "filter weights");
    auto x = cloud.states(t);
    auto lw = cloud.weights(t);
    for (std::size_t i = 1; i < cloud.width; ++i) {
      x[i] = model.sample_transition(t, prev[resample.draw(rng)], rng);
    }
    x[0] = reference.empty() ? 0.0 : reference[t];
    for (std::size_t i = 0; i < cloud.width; ++i) {
      if (i == 0 && reference.empty()) {
        lw[0] = kNegInf;
        continue;
      }
      for (std::size_t k = 0; k < cloud.width; ++k) {
        const double lm = prev_lw[k] + model.transition_log_density(t, prev[k], x[i]);
        den[k] = lm;
        num[k] = lm == kNegInf ? kNegInf : lm + model.pairwise_log_potential(t, prev[k], x[i]);
      }
      lw[i] = log_sum_exp(num) - log_sum_exp(den);
    }
  }
  return cloud;
}

KernelOutput backward_sample(const FeynmanKacModel& model, const ParticleCloud& cloud, Rng& rng,
                             bool pairwise) {
  const std::size_t T = cloud.horizon;
  KernelOutput out;
  out.path.resize(T);
  out.indices.resize(T);
  out.reference_retained.resize(T);
  std::size_t j = categorical_at(cloud.weights(T - 1), T - 1, "final weights").draw(rng);
  out.indices[T - 1] = j;
  std::vector<double> lb(cloud.width);
  for (std::size_t t = T - 1; t-- > 0;) {
    const auto x = cloud.states(t);
    const auto lw = cloud.weights(t);
    const State next = cloud.states(t + 1)[j];
    for (std::size_t i = 0; i < cloud.width; ++i) {
      if (lw[i] == kNegInf) {
        lb[i] = kNegInf;
        continue;
      }
      lb[i] = lw[i] + model.transition_log_density(t + 1, x[i], next);
      if (pairwise && lb[i] != kNegInf) lb[i] += model.pairwise_log_potential(t + 1, x[i], next);
    }
    j = categorical_at(lb, t, "backward weights").draw(rng);
    out.indices[t] = j;
  }
  for (std::size_t t = 0; t < T; ++t) {
    out.path[t] = cloud.states(t)[out.indices[t]];
    out.reference_retained[t] = out.indices[t] == 0;
  }
  return out;
}

Path particle_filter(const FeynmanKacModel& model, std::size_t num_particles, Rng& rng) {
  if (num_particles == 0) throw std::invalid_argument("number of particles must be >= 1");
  const ParticleCloud cloud = cbpf_forward(model, {}, num_particles, rng);
  return backward_sample(model, cloud, rng).path;
}

KernelOutput cbpf_transition(const FeynmanKacModel& model, std::span<const State> reference,
                             std::size_t num_particles, Rng& rng) {
  check_kernel_inputs(model, reference, num_particles);
  const ParticleCloud cloud = cbpf_forward(model, reference, num_particles, rng);
  return backward_sample(model, cloud, rng);
}

KernelOutput marginal_cbpf_transition(const FeynmanKacModel& model,
                                      std::span<const State> reference,
                                      std::size_t num_particles, Rng& rng) {
  check_kernel_inputs(model, reference, num_particles);
  const ParticleCloud cloud = marginal_forward(model, reference, num_particles, rng);
  return backward_sample(model, cloud, rng, /*pairwise=*/true);
}

KernelOutput cpf_transition(const FeynmanKacModel& model, std::span<const State> reference,
                            std::size_t num_particles, Rng& rng) {
  check_kernel_inputs(model, reference, num_particles);
  const std::size_t T = model.horizon();
  ParticleCloud cloud(T, num_particles, /*with_ancestors=*/true);
  init_first_row(model, reference, cloud, rng);
  for (std::size_t t = 1; t < T; ++t) {
    const auto prev = cloud.states(t - 1);
    const Categorical resample = categorical_at(cloud.weights(t - 1), t - 1, "filter weights");
    auto x = cloud.states(t);
    auto lw = cloud.weights(t);
    std::uint32_t* anc = cloud.ancestors.data() + (t - 1) * cloud.width;
    for (std::size_t i = 1; i < cloud.width; ++i) {
      anc[i] = static_cast<std::uint32_t>(resample.draw(rng));
      x[i] = model.sample_transition(t, prev[anc[i]], rng);
    }
    x[0] = reference[t];
    for (std::size_t i = 0; i < cloud.width; ++i) lw[i] = model.log_potential(t, x[i]);
  }

  KernelOutput out;
  out.path.resize(T);
  out.indices.resize(T);
  out.reference_retained.resize(T);
  std::size_t j = categorical_at(cloud.weights(T - 1), T - 1, "final weights").draw(rng);
  out.indices[T - 1] = j;
  for (std::size_t t = T - 1; t-- > 0;) {
    j = j != 0 ? cloud.ancestors[t * cloud.width + j] : 0;
    out.indices[t] = j;
  }
  for (std::size_t t = 0; t < T; ++t) {
    out.path[t] = cloud.states(t)[out.indices[t]];
    out.reference_retained[t] = out.indices[t] == 0;
  }
  return out;
}

}  // namespace cbpf
