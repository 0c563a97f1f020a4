#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cbpf/rng.hpp"

namespace cbpf {

/// Latent state. All built-in models use scalar real states; finite-state
/// models encode the state index as a double.
using State = double;

/// A latent trajectory x_{1:T}; element t holds the state at time index t
/// (zero-based throughout the library).
using Path = std::vector<State>;

/// Feynman-Kac model: initial law M_1, transitions M_t and potentials G_t.
///
/// The target is pi(x) proportional to
///   M_1(x_0) G_0(x_0) prod_{t>=1} M_t(x_{t-1}, x_t) G_t(x_t),
/// with time indices zero-based (t = 0 is the first time step). All densities
/// and potentials are returned in log space. Implementations are immutable
/// and may be shared between threads.
class FeynmanKacModel {
 public:
  virtual ~FeynmanKacModel() = default;

  virtual std::size_t horizon() const = 0;

  virtual State sample_initial(Rng& rng) const = 0;
  /// Draw from M_t(x, .), t in 1..T-1.
  virtual State sample_transition(std::size_t t, State x, Rng& rng) const = 0;

  virtual double initial_log_density(State x) const = 0;
  /// log M_t(x, y), t in 1..T-1.
  virtual double transition_log_density(std::size_t t, State x, State y) const = 0;
  /// log G_t(x), t in 0..T-1.
  virtual double log_potential(std::size_t t, State x) const = 0;

  /// Models with pairwise potentials G_t(x_{t-1}, x_t) for t >= 1 replace the
  /// unary log_potential at those times; log_potential is still used at t = 0.
  virtual bool has_pairwise_potential() const { return false; }
  virtual double pairwise_log_potential(std::size_t t, State prev, State x) const;
};

/// log of the unnormalized target density at `path` (log gamma).
double log_joint(const FeynmanKacModel& model, std::span<const State> path);

/// Metric on the unit circle [0, 1).
double torus_distance(double x, double y);

/// Mixture of uniform jumps (probability a) and a torus random walk with
/// U(-w/2, w/2) increments; potentials b on [0,1/4] u (1/2,3/4], else 1-b.
class BarriersModel final : public FeynmanKacModel {
 public:
  BarriersModel(double a, double w, double b, std::size_t horizon);

  std::size_t horizon() const override { return horizon_; }
  State sample_initial(Rng& rng) const override;
  State sample_transition(std::size_t t, State x, Rng& rng) const override;
  double initial_log_density(State x) const override;
  double transition_log_density(std::size_t t, State x, State y) const override;
  double log_potential(std::size_t t, State x) const override;

  double transition_density(State x, State y) const;
  double potential(State x) const;

  double a() const { return a_; }
  double w() const { return w_; }
  double b() const { return b_; }

 private:
  double a_, w_, b_;
  std::size_t horizon_;
  double log_near_, log_far_, log_b_, log_1mb_;
};

BarriersModel barriers_model(double a, double w, double b, std::size_t horizon);

/// Stationary AR(1) latent process X_t = rho X_{t-1} + sigma_x W_t observed
/// with Gaussian noise of scale sigma_y. Observations default to zero.
class LinearGaussianModel final : public FeynmanKacModel {
 public:
  LinearGaussianModel(double rho, double sigma_x, double sigma_y, std::size_t horizon);
  LinearGaussianModel(double rho, double sigma_x, double sigma_y,
                      std::vector<double> observations);

  std::size_t horizon() const override { return y_.size(); }
  State sample_initial(Rng& rng) const override;
  State sample_transition(std::size_t t, State x, Rng& rng) const override;
  double initial_log_density(State x) const override;
  double transition_log_density(std::size_t t, State x, State y) const override;
  double log_potential(std::size_t t, State x) const override;

  double rho() const { return rho_; }
  double sigma_x() const { return sigma_x_; }
  double sigma_y() const { return sigma_y_; }
  double initial_variance() const { return initial_var_; }
  const std::vector<double>& observations() const { return y_; }

 private:
  double rho_, sigma_x_, sigma_y_;
  std::vector<double> y_;
  double initial_var_;
};

LinearGaussianModel linear_gaussian_model(double rho, double sigma_x, double sigma_y,
                                          std::size_t horizon);

/// Stochastic volatility parameters (mean log-volatility, AR coefficient,
/// noise correlation, AR noise scale). Validated at construction.
struct SVParams {
  double mu;
  double phi;
  double rho;
  double sigma;

  SVParams(double mu, double phi, double rho, double sigma);
};

/// Variance of the initial law M_1 of the SV model. `kAsPrinted` uses
/// sigma^2 / (1 - rho^2); `kStationaryPhi` uses sigma^2 / (1 - phi^2).
enum class SvInitialVariance { kAsPrinted, kStationaryPhi };

/// Stochastic volatility model with leverage in Feynman-Kac form:
///   G_t(x)       = N(y_t; 0, e^x)
///   M_{t+1}(x,.) = N(mu + phi (x - mu) + rho sigma e^{-x/2} y_t, (1 - rho^2) sigma^2)
///   M_1          = N(mu, sigma_s^2)
class SvModel final : public FeynmanKacModel {
 public:
  SvModel(SVParams theta, std::vector<double> y,
          SvInitialVariance init = SvInitialVariance::kAsPrinted);

  std::size_t horizon() const override { return y_.size(); }
  State sample_initial(Rng& rng) const override;
  State sample_transition(std::size_t t, State x, Rng& rng) const override;
  double initial_log_density(State x) const override;
  double transition_log_density(std::size_t t, State x, State y) const override;
  double log_potential(std::size_t t, State x) const override;

  /// Conditional mean of x_t given x_{t-1} = x and y_{t-1}.
  double transition_mean(std::size_t t, State x) const;

  const SVParams& params() const { return theta_; }
  const std::vector<double>& data() const { return y_; }
  double initial_variance() const { return initial_var_; }
  SvInitialVariance initial_convention() const { return init_; }

 private:
  SVParams theta_;
  std::vector<double> y_;
  SvInitialVariance init_;
  double initial_var_, transition_sd_;
};

SvModel sv_model(SVParams theta, std::vector<double> y,
                 SvInitialVariance init = SvInitialVariance::kAsPrinted);

/// Simulate (x_{1:T}, y_{1:T}) from the SV model with the given parameters.
struct SvSimulation {
  std::vector<double> x;
  std::vector<double> y;
};
SvSimulation simulate_sv(const SVParams& theta, std::size_t horizon, Rng& rng,
                         SvInitialVariance init = SvInitialVariance::kAsPrinted);

/// Uniform transitions on [0,1] with constant unit potentials. Under this
/// model the CBPF meeting-time law is known in closed form.
class UniformModel final : public FeynmanKacModel {
 public:
  explicit UniformModel(std::size_t horizon);

  std::size_t horizon() const override { return horizon_; }
  State sample_initial(Rng& rng) const override { return rng.uniform(); }
  State sample_transition(std::size_t, State, Rng& rng) const override {
    return rng.uniform();
  }
  double initial_log_density(State) const override { return 0.0; }
  double transition_log_density(std::size_t, State, State) const override { return 0.0; }
  double log_potential(std::size_t, State) const override { return 0.0; }

 private:
  std::size_t horizon_;
};

/// Finite-state model with states encoded as 0.0, 1.0, ..., K-1. The
/// transition matrix is time-homogeneous; potentials are given per time.
/// An optional pairwise potential table (per t >= 1, K x K) turns the model
/// into a pairwise-potential model.
class DiscreteModel final : public FeynmanKacModel {
 public:
  using Matrix = std::vector<std::vector<double>>;

  DiscreteModel(std::vector<double> initial, Matrix transition, Matrix potentials);
  DiscreteModel(std::vector<double> initial, Matrix transition, Matrix potentials,
                std::vector<Matrix> pairwise);

  std::size_t horizon() const override { return potentials_.size(); }
  std::size_t num_states() const { return initial_.size(); }

  State sample_initial(Rng& rng) const override;
  State sample_transition(std::size_t t, State x, Rng& rng) const override;
  double initial_log_density(State x) const override;
  double transition_log_density(std::size_t t, State x, State y) const override;
  double log_potential(std::size_t t, State x) const override;
  bool has_pairwise_potential() const override { return !pairwise_.empty(); }
  double pairwise_log_potential(std::size_t t, State prev, State x) const override;

  const std::vector<double>& initial() const { return initial_; }
  const Matrix& transition() const { return transition_; }
  const Matrix& potentials() const { return potentials_; }
  const std::vector<Matrix>& pairwise() const { return pairwise_; }

 private:
  std::vector<double> initial_;
  Matrix transition_;
  Matrix potentials_;
  std::vector<Matrix> pairwise_;  // pairwise_[t][i][j], t >= 1; slot 0 unused
};

}  // namespace cbpf
