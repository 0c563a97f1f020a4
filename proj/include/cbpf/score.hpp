#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "cbpf/coupled.hpp"
#include "cbpf/model.hpp"

namespace cbpf {

/// Coordinate transform from unconstrained (raw) to constrained parameters.
/// kLogit11 maps R onto (-1, 1) as 2 sigmoid(x) - 1 (= tanh(x / 2)).
enum class Transform { kIdentity, kLog, kLogit11 };

double to_constrained(Transform tr, double raw);
double to_raw(Transform tr, double constrained);
/// d constrained / d raw.
double constrained_derivative(Transform tr, double raw);

struct TransformedParams {
  std::vector<double> raw;
  std::vector<Transform> transforms;

  std::vector<double> constrained() const;
  static TransformedParams from_constrained(std::span<const double> values,
                                            std::vector<Transform> transforms);
};

/// A parametrized Feynman-Kac model with a closed-form gradient of
/// log gamma^theta(x_{1:T}) in constrained coordinates.
class ModelFamily {
 public:
  virtual ~ModelFamily() = default;
  virtual std::size_t dim() const = 0;
  virtual std::vector<Transform> transforms() const = 0;
  virtual std::vector<std::string> names() const = 0;
  virtual std::unique_ptr<FeynmanKacModel> build(std::span<const double> theta) const = 0;
  /// Gradient with respect to the constrained parameters.
  virtual std::vector<double> constrained_gradient(std::span<const double> theta,
                                                   std::span<const State> path) const = 0;
};

/// theta = (mu, phi, rho, sigma); transforms (identity, logit, logit, log).
class SvFamily final : public ModelFamily {
 public:
  explicit SvFamily(std::vector<double> y,
                    SvInitialVariance init = SvInitialVariance::kAsPrinted);
  std::size_t dim() const override { return 4; }
  std::vector<Transform> transforms() const override;
  std::vector<std::string> names() const override;
  std::unique_ptr<FeynmanKacModel> build(std::span<const double> theta) const override;
  std::vector<double> constrained_gradient(std::span<const double> theta,
                                           std::span<const State> path) const override;
  const std::vector<double>& data() const { return y_; }

 private:
  std::vector<double> y_;
  SvInitialVariance init_;
};

/// theta = (rho, sigma_x, sigma_y); transforms (logit, log, log).
class LinearGaussianFamily final : public ModelFamily {
 public:
  explicit LinearGaussianFamily(std::vector<double> y);
  std::size_t dim() const override { return 3; }
  std::vector<Transform> transforms() const override;
  std::vector<std::string> names() const override;
  std::unique_ptr<FeynmanKacModel> build(std::span<const double> theta) const override;
  std::vector<double> constrained_gradient(std::span<const double> theta,
                                           std::span<const State> path) const override;
  const std::vector<double>& data() const { return y_; }

 private:
  std::vector<double> y_;
};

/// grad_raw log gamma^theta(path): the Fisher-identity integrand in raw
/// (unconstrained) coordinates.
std::vector<double> log_joint_gradient(const ModelFamily& family, const TransformedParams& theta,
                                       std::span<const State> path);

/// log gamma^theta(path) at raw parameters.
double log_joint_at(const ModelFamily& family, const TransformedParams& theta,
                    std::span<const State> path);

/// Initial SV parameters: mu = var(y) (or log var(y)), sigma = 1, rho = phi = 0.
TransformedParams sv_initial_guess(std::span<const double> y, bool log_variance_mu = false);

struct AdamState {
  std::size_t step = 0;
  std::vector<double> m;
  std::vector<double> v;
  double alpha = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamState(std::size_t dim = 0, double alpha_ = 0.01) : m(dim), v(dim), alpha(alpha_) {}
};

/// Bias-corrected Adam update; returns the ascent step alpha m^/(sqrt(v^)+eps).
std::vector<double> adam_step(AdamState& state, std::span<const double> grad);

enum class MleSchedule { kUnbiased, kMarkovian };

struct MleConfig {
  std::size_t num_particles = 16;
  CouplingStrategy strategy = CouplingStrategy::kIMC;
  MleSchedule schedule = MleSchedule::kMarkovian;
  std::size_t iterations = 1000;
  double alpha = 0.01;
  /// Unbiased schedule: pilot runs and quantile for (L, k, ell).
  std::size_t pilot_runs = 100;
  double quantile = 0.9;
  std::size_t cap = 1000;
  /// Re-run the pilot every `retune_period` iterations (0 = only at start).
  std::size_t retune_period = 0;
};

struct MleTraceRow {
  std::size_t iteration = 0;
  std::int64_t wall_nanos = 0;
  std::vector<double> raw;
  std::vector<double> constrained;
  double grad_norm = 0.0;
  std::size_t tau = 0;  // meeting time (unbiased schedule only)
};

/// Stochastic-gradient ascent on log L(theta) with Adam. Row 0 is the
/// initial point; one row follows per iteration.
std::vector<MleTraceRow> mle_fit(const ModelFamily& family, const TransformedParams& init,
                                 const MleConfig& config, Rng& rng,
                                 const std::function<void(const MleTraceRow&)>& on_row = {});

/// Componentwise mean of the constrained parameters over the last `fraction`
/// of the trace rows.
std::vector<double> tail_average(const std::vector<MleTraceRow>& trace, double fraction);

/// trace.csv: iteration,wall_nanos,raw_*,<name>...,grad_norm,tau
void write_trace_csv(std::ostream& os, const std::vector<MleTraceRow>& trace,
                     const std::vector<std::string>& names, bool record_timing);

}  // namespace cbpf
