#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "cbpf/kernels.hpp"
#include "cbpf/model.hpp"
#include "cbpf/oracles.hpp"
#include "cbpf/score.hpp"

namespace fixtures {

using cbpf::DiscreteModel;

inline DiscreteModel::Matrix hmm_potentials(std::size_t T) {
  const DiscreteModel::Matrix cycle = {
      {0.9, 0.3, 0.5}, {0.2, 0.8, 0.4}, {0.5, 0.6, 0.9}, {0.7, 0.1, 0.3}, {0.3, 0.9, 0.6}};
  DiscreteModel::Matrix g(T);
  for (std::size_t t = 0; t < T; ++t) g[t] = cycle[t % cycle.size()];
  return g;
}

// 3-state HMM with a sticky transition matrix and time-varying potentials.
inline DiscreteModel three_state_hmm(std::size_t T) {
  return DiscreteModel({0.5, 0.3, 0.2},
                       {{0.6, 0.3, 0.1}, {0.2, 0.5, 0.3}, {0.25, 0.25, 0.5}},
                       hmm_potentials(T));
}

// Same chain with genuine pairwise potentials G_t(x_{t-1}, x_t) for t >= 1.
inline DiscreteModel pairwise_hmm(std::size_t T) {
  std::vector<DiscreteModel::Matrix> pw(T, DiscreteModel::Matrix(3, std::vector<double>(3, 1.0)));
  for (std::size_t t = 1; t < T; ++t) {
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        pw[t][i][j] = 0.15 + std::exp(-std::abs(i - j) - 0.3 * static_cast<double>((i + t) % 3));
      }
    }
  }
  return DiscreteModel({0.5, 0.3, 0.2},
                       {{0.6, 0.3, 0.1}, {0.2, 0.5, 0.3}, {0.25, 0.25, 0.5}},
                       hmm_potentials(T), pw);
}

// Pairwise table that ignores x_{t-1}: G_t(x_{t-1}, x_t) = G_t(x_t).
inline DiscreteModel unary_as_pairwise(std::size_t T) {
  const auto g = hmm_potentials(T);
  std::vector<DiscreteModel::Matrix> pw(T, DiscreteModel::Matrix(3, std::vector<double>(3, 1.0)));
  for (std::size_t t = 1; t < T; ++t) {
    for (int i = 0; i < 3; ++i) pw[t][i] = g[t];
  }
  return DiscreteModel({0.5, 0.3, 0.2},
                       {{0.6, 0.3, 0.1}, {0.2, 0.5, 0.3}, {0.25, 0.25, 0.5}}, g, pw);
}

using Kernel = std::function<cbpf::KernelOutput(const cbpf::FeynmanKacModel&,
                                                std::span<const cbpf::State>, std::size_t,
                                                cbpf::Rng&)>;

// Per-time empirical marginals of a kernel chain started at the all-zero path.
inline std::vector<std::vector<double>> chain_marginals(const DiscreteModel& model,
                                                        const Kernel& kernel, std::size_t N,
                                                        std::size_t iterations,
                                                        std::uint64_t seed) {
  const std::size_t T = model.horizon(), K = model.num_states();
  cbpf::Rng rng(seed);
  cbpf::Path path(T, 0.0);
  std::vector<std::vector<double>> freq(T, std::vector<double>(K, 0.0));
  for (std::size_t i = 0; i < iterations; ++i) {
    path = kernel(model, path, N, rng).path;
    for (std::size_t t = 0; t < T; ++t) freq[t][static_cast<std::size_t>(path[t])] += 1.0;
  }
  for (auto& row : freq) {
    for (double& v : row) v /= static_cast<double>(iterations);
  }
  return freq;
}

// Index of a discrete path in 0..K^T-1.
inline std::size_t path_code(std::span<const cbpf::State> path, std::size_t K) {
  std::size_t code = 0;
  for (auto it = path.rbegin(); it != path.rend(); ++it) {
    code = code * K + static_cast<std::size_t>(*it);
  }
  return code;
}

inline double max_tv(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  double m = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) m = std::max(m, cbpf::total_variation(a[t], b[t]));
  return m;
}

inline bool close_rel(double a, double b, double tol) {
  return std::fabs(a - b) <= tol * std::max({1.0, std::fabs(a), std::fabs(b)});
}

inline std::vector<double> fd_gradient(const cbpf::ModelFamily& fam, cbpf::TransformedParams th,
                                       const cbpf::Path& x, double h = 1e-5) {
  std::vector<double> g(th.raw.size());
  for (std::size_t i = 0; i < th.raw.size(); ++i) {
    const double r = th.raw[i];
    th.raw[i] = r + h;
    const double up = cbpf::log_joint_at(fam, th, x);
    th.raw[i] = r - h;
    const double down = cbpf::log_joint_at(fam, th, x);
    th.raw[i] = r;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline std::vector<double> simulate_lg(double rho, double sx, double sy, std::size_t T, cbpf::Rng& rng) {
  std::vector<double> y(T);
  double x = rng.normal(0.0, sx / std::sqrt(1.0 - rho * rho));
  for (std::size_t t = 0; t < T; ++t) {
    if (t > 0) x = rho * x + sx * rng.normal();
    y[t] = x + sy * rng.normal();
  }
  return y;
}

// Kalman log-likelihood gradient in raw coordinates by central differences.
inline std::vector<double> kalman_raw_gradient(const cbpf::TransformedParams& th, const std::vector<double>& y) {
  std::vector<double> g(3);
  for (int i = 0; i < 3; ++i) {
    cbpf::TransformedParams up = th, down = th;
    up.raw[i] += 1e-5;
    down.raw[i] -= 1e-5;
    const auto cu = up.constrained(), cd = down.constrained();
    g[i] = (cbpf::kalman_log_likelihood(cu[0], cu[1], cu[2], y) -
            cbpf::kalman_log_likelihood(cd[0], cd[1], cd[2], y)) / 2e-5;
  }
  return g;
}

}  // namespace fixtures
