#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <stdexcept>

#include "cbpf/kernels.hpp"
#include "cbpf/score.hpp"
#include "cbpf/unbiased.hpp"

namespace cbpf {

double to_constrained(Transform tr, double raw) {
  switch (tr) {
    case Transform::kIdentity: return raw;
    case Transform::kLog: return std::exp(raw);
    case Transform::kLogit11: return std::tanh(0.5 * raw);
  }
  return raw;
}

double to_raw(Transform tr, double c) {
  switch (tr) {
    case Transform::kIdentity: return c;
    case Transform::kLog:
      if (!(c > 0.0)) throw std::invalid_argument("log transform needs a positive value");
      return std::log(c);
    case Transform::kLogit11:
      if (!(std::fabs(c) < 1.0)) throw std::invalid_argument("logit transform needs |value| < 1");
      return 2.0 * std::atanh(c);
  }
  return c;
}

double constrained_derivative(Transform tr, double raw) {
  switch (tr) {
    case Transform::kIdentity: return 1.0;
    case Transform::kLog: return std::exp(raw);
    case Transform::kLogit11: {
      const double c = std::tanh(0.5 * raw);
      return 0.5 * (1.0 - c * c);
    }
  }
  return 1.0;
}

std::vector<double> TransformedParams::constrained() const {
  std::vector<double> c(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) c[i] = to_constrained(transforms[i], raw[i]);
  return c;
}

TransformedParams TransformedParams::from_constrained(std::span<const double> values,
                                                      std::vector<Transform> transforms) {
  if (values.size() != transforms.size()) throw std::invalid_argument("transform count mismatch");
  TransformedParams p;
  p.transforms = std::move(transforms);
  p.raw.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) p.raw[i] = to_raw(p.transforms[i], values[i]);
  return p;
}

namespace {

void check_finite(std::span<const double> g, std::size_t t) {
  for (double v : g) {
    if (!std::isfinite(v)) {
      throw std::runtime_error("non-finite gradient contribution at t=" + std::to_string(t));
    }
  }
}

void check_path(std::span<const State> path, std::size_t T) {
  if (path.size() != T) {
    throw std::invalid_argument("path length " + std::to_string(path.size()) +
                                " does not match data length " + std::to_string(T));
  }
}

}  // namespace

// ---------------------------------------------------------------------------

SvFamily::SvFamily(std::vector<double> y, SvInitialVariance init) : y_(std::move(y)), init_(init) {
  if (y_.empty()) throw std::invalid_argument("SV: empty data");
}

std::vector<Transform> SvFamily::transforms() const {
  return {Transform::kIdentity, Transform::kLogit11, Transform::kLogit11, Transform::kLog};
}

std::vector<std::string> SvFamily::names() const { return {"mu", "phi", "rho", "sigma"}; }

std::unique_ptr<FeynmanKacModel> SvFamily::build(std::span<const double> th) const {
  return std::make_unique<SvModel>(SVParams(th[0], th[1], th[2], th[3]), y_, init_);
}

std::vector<double> SvFamily::constrained_gradient(std::span<const double> th,
                                                   std::span<const State> x) const {
  check_path(x, y_.size());
  const double mu = th[0], phi = th[1], rho = th[2], sigma = th[3];
  std::vector<double> g(4, 0.0);

  // Initial law N(mu, v), v = sigma^2 / (1 - c^2) with c = rho or phi.
  {
    const double c = init_ == SvInitialVariance::kAsPrinted ? rho : phi;
    const double v = sigma * sigma / (1.0 - c * c);
    const double r = x[0] - mu;
    const double dv = -0.5 / v + 0.5 * r * r / (v * v);
    const double dv_dc = 2.0 * c * sigma * sigma / ((1.0 - c * c) * (1.0 - c * c));
    double local[4] = {r / v, 0.0, 0.0, dv * 2.0 * sigma / (1.0 - c * c)};
    (init_ == SvInitialVariance::kAsPrinted ? local[2] : local[1]) = dv * dv_dc;
    check_finite(local, 0);
    for (int i = 0; i < 4; ++i) g[i] += local[i];
  }

  const double s2 = (1.0 - rho * rho) * sigma * sigma;
  for (std::size_t t = 1; t < x.size(); ++t) {
    const double e = std::exp(-0.5 * x[t - 1]);
    const double yp = y_[t - 1];
    const double mean = mu + phi * (x[t - 1] - mu) + rho * sigma * e * yp;
    const double r = x[t] - mean;
    const double dmean = r / s2;
    const double ds2 = -0.5 / s2 + 0.5 * r * r / (s2 * s2);
    const double local[4] = {
        dmean * (1.0 - phi),
        dmean * (x[t - 1] - mu),
        dmean * sigma * e * yp + ds2 * (-2.0 * rho * sigma * sigma),
        dmean * rho * e * yp + ds2 * 2.0 * sigma * (1.0 - rho * rho),
    };
    check_finite(local, t);
    for (int i = 0; i < 4; ++i) g[i] += local[i];
  }
  return g;
}

// ---------------------------------------------------------------------------

LinearGaussianFamily::LinearGaussianFamily(std::vector<double> y) : y_(std::move(y)) {
  if (y_.empty()) throw std::invalid_argument("linear-Gaussian: empty data");
}

std::vector<Transform> LinearGaussianFamily::transforms() const {
  return {Transform::kLogit11, Transform::kLog, Transform::kLog};
}

std::vector<std::string> LinearGaussianFamily::names() const {
  return {"rho", "sigma_x", "sigma_y"};
}

std::unique_ptr<FeynmanKacModel> LinearGaussianFamily::build(std::span<const double> th) const {
  return std::make_unique<LinearGaussianModel>(th[0], th[1], th[2], y_);
}

std::vector<double> LinearGaussianFamily::constrained_gradient(std::span<const double> th,
                                                               std::span<const State> x) const {
  check_path(x, y_.size());
  const double rho = th[0], sx = th[1], sy = th[2];
  const double sx2 = sx * sx, sy2 = sy * sy;
  std::vector<double> g(3, 0.0);
  {
    const double v = sx2 / (1.0 - rho * rho);
    const double dv = -0.5 / v + 0.5 * x[0] * x[0] / (v * v);
    const double e = y_[0] - x[0];
    const double local[3] = {dv * 2.0 * rho * sx2 / ((1.0 - rho * rho) * (1.0 - rho * rho)),
                             dv * 2.0 * sx / (1.0 - rho * rho), -1.0 / sy + e * e / (sy2 * sy)};
    check_finite(local, 0);
    for (int i = 0; i < 3; ++i) g[i] += local[i];
  }
  for (std::size_t t = 1; t < x.size(); ++t) {
    const double r = x[t] - rho * x[t - 1];
    const double e = y_[t] - x[t];
    const double local[3] = {r * x[t - 1] / sx2, -1.0 / sx + r * r / (sx2 * sx),
                             -1.0 / sy + e * e / (sy2 * sy)};
    check_finite(local, t);
    for (int i = 0; i < 3; ++i) g[i] += local[i];
  }
  return g;
}

// ---------------------------------------------------------------------------

std::vector<double> log_joint_gradient(const ModelFamily& family, const TransformedParams& theta,
                                       std::span<const State> path) {
  if (theta.raw.size() != family.dim()) throw std::invalid_argument("parameter dimension");
  const std::vector<double> c = theta.constrained();
  std::vector<double> g = family.constrained_gradient(c, path);
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] *= constrained_derivative(theta.transforms[i], theta.raw[i]);
  }
  return g;
}

double log_joint_at(const ModelFamily& family, const TransformedParams& theta,
                    std::span<const State> path) {
  const auto model = family.build(theta.constrained());
  return log_joint(*model, path);
}

TransformedParams sv_initial_guess(std::span<const double> y, bool log_variance_mu) {
  const double n = static_cast<double>(y.size());
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double var = 0.0;
  for (double v : y) var += (v - mean) * (v - mean);
  var /= n > 1 ? n - 1 : 1.0;
  const double mu = log_variance_mu ? std::log(var) : var;
  const double init[4] = {mu, 0.0, 0.0, 1.0};
  return TransformedParams::from_constrained(
      init, {Transform::kIdentity, Transform::kLogit11, Transform::kLogit11, Transform::kLog});
}

std::vector<double> adam_step(AdamState& s, std::span<const double> grad) {
  if (grad.size() != s.m.size() || grad.size() != s.v.size()) {
    throw std::invalid_argument("adam_step: gradient dimension " + std::to_string(grad.size()) +
                                " does not match state dimension " + std::to_string(s.m.size()));
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  std::vector<double> delta(grad.size());
  for (std::size_t i = 0; i < grad.size(); ++i) {
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * grad[i];
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * grad[i] * grad[i];
    const double mhat = c1 > 0.0 ? s.m[i] / c1 : s.m[i];
    const double vhat = c2 > 0.0 ? s.v[i] / c2 : s.v[i];
    delta[i] = s.alpha * mhat / (std::sqrt(vhat) + s.eps);
  }
  return delta;
}

// ---------------------------------------------------------------------------

std::vector<MleTraceRow> mle_fit(const ModelFamily& family, const TransformedParams& init,
                                 const MleConfig& config, Rng& rng,
                                 const std::function<void(const MleTraceRow&)>& on_row) {
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  auto elapsed = [&] {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - start).count();
  };

  TransformedParams theta = init;
  AdamState adam(family.dim(), config.alpha);
  std::vector<MleTraceRow> trace;
  auto emit = [&](std::size_t it, double gnorm, std::size_t tau) {
    MleTraceRow row{it, elapsed(), theta.raw, theta.constrained(), gnorm, tau};
    if (on_row) on_row(row);
    trace.push_back(std::move(row));
  };
  emit(0, 0.0, 0);
  if (config.iterations == 0) return trace;

  const std::size_t N = config.num_particles;
  Path path;
  LagTuning lags;

  for (std::size_t it = 1; it <= config.iterations; ++it) {
    const auto model = family.build(theta.constrained());
    std::vector<double> grad;
    std::size_t tau = 0;

    if (config.schedule == MleSchedule::kMarkovian) {
      if (path.empty()) path = particle_filter(*model, N, rng);
      path = cbpf_transition(*model, path, N, rng).path;
      grad = log_joint_gradient(family, theta, path);
    } else {
      const bool retune = it == 1 || (config.retune_period > 0 && (it - 1) % config.retune_period == 0);
      if (retune) {
        lags = tune_lag(*model, N, config.strategy, rng, config.pilot_runs, config.quantile,
                        config.cap);
      }
      const TransformedParams snapshot = theta;
      const PathFunctional h = [&family, &snapshot](std::span<const State> x) {
        return log_joint_gradient(family, snapshot, x);
      };
      EstimatorConfig ec;
      ec.num_particles = N;
      ec.k = lags.k;
      ec.ell = lags.ell;
      ec.lag = lags.lag;
      ec.strategy = config.strategy;
      ec.cap = std::max(config.cap, ec.ell);
      UnbiasedEstimate est;
      try {
        est = averaged_estimate(*model, h, ec, rng);
      } catch (const MeetingCapExceeded&) {
        Rng retry(mix64(rng()));
        est = averaged_estimate(*model, h, ec, retry);
      }
      grad = std::move(est.value);
      tau = est.meeting.tau;
    }

    const std::vector<double> delta = adam_step(adam, grad);
    for (std::size_t i = 0; i < delta.size(); ++i) theta.raw[i] += delta[i];
    double gn = 0.0;
    for (double g : grad) gn += g * g;
    emit(it, std::sqrt(gn), tau);
  }
  return trace;
}

std::vector<double> tail_average(const std::vector<MleTraceRow>& trace, double fraction) {
  if (trace.empty()) throw std::invalid_argument("empty trace");
  const std::size_t n = trace.size();
  const std::size_t count =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(fraction * n)), 1, n);
  std::vector<double> avg(trace.back().constrained.size(), 0.0);
  for (std::size_t r = n - count; r < n; ++r) {
    for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += trace[r].constrained[i];
  }
  for (double& v : avg) v /= static_cast<double>(count);
  return avg;
}

void write_trace_csv(std::ostream& os, const std::vector<MleTraceRow>& trace,
                     const std::vector<std::string>& names, bool record_timing) {
  os << "iteration,wall_nanos";
  for (const auto& n : names) os << ",raw_" << n;
  for (const auto& n : names) os << ',' << n;
  os << ",grad_norm,tau\n";
  os << std::setprecision(17);
  for (const auto& row : trace) {
    os << row.iteration << ',' << (record_timing ? row.wall_nanos : 0);
    for (double v : row.raw) os << ',' << v;
    for (double v : row.constrained) os << ',' << v;
    os << ',' << row.grad_norm << ',' << row.tau << '\n';
  }
}

}  // namespace cbpf
