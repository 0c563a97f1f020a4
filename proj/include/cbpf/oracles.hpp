#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cbpf/model.hpp"

namespace cbpf {

struct KalmanResult {
  std::vector<double> means;
  std::vector<double> variances;
  double log_likelihood = 0.0;
};

/// Exact smoothing moments and log-likelihood of the stationary AR(1) model
/// observed with Gaussian noise (forward filter + RTS backward recursion).
KalmanResult kalman_smoother(double rho, double sigma_x, double sigma_y, std::size_t horizon);
KalmanResult kalman_smoother(double rho, double sigma_x, double sigma_y,
                             std::span<const double> observations);

double kalman_log_likelihood(double rho, double sigma_x, double sigma_y,
                             std::span<const double> observations);

/// Maximizer of the Kalman likelihood over (rho, sigma_x, sigma_y), found by
/// Nelder-Mead in the unconstrained coordinates (logit, log, log).
std::vector<double> kalman_mle(std::span<const double> observations, std::span<const double> start);

struct DiscreteSmoother {
  /// marginals[t][x] = pi(x_t = x)
  std::vector<std::vector<double>> marginals;
  double log_normalizer = 0.0;
};

/// Sum-product smoothing marginals of a finite-state model (unary or pairwise
/// potentials). At most 16 states and 12 time steps.
DiscreteSmoother discrete_forward_backward(const DiscreteModel& model);

/// Brute-force marginals by enumerating every path; horizon * states <= 20.
DiscreteSmoother discrete_enumeration(const DiscreteModel& model);

/// Total variation distance between two probability vectors.
double total_variation(std::span<const double> p, std::span<const double> q);

}  // namespace cbpf
