#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "cbpf/model.hpp"

namespace cbpf {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

double normal_log_density(double x, double mean, double var) {
  const double r = x - mean;
  return -kHalfLog2Pi - 0.5 * std::log(var) - 0.5 * r * r / var;
}

std::size_t state_index(State x, std::size_t k) {
  const auto i = static_cast<std::size_t>(x);
  if (x < 0.0 || i >= k || static_cast<double>(i) != x) {
    throw std::out_of_range("discrete state " + std::to_string(x) + " outside 0.." +
                            std::to_string(k - 1));
  }
  return i;
}

std::size_t draw_from(const std::vector<double>& probs, Rng& rng) {
  double total = 0.0;
  for (double p : probs) total += p;
  const double u = rng.uniform() * total;
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last = i;
    if (u < acc) return i;
  }
  return last;
}

double safe_log(double p) { return p > 0.0 ? std::log(p) : kNegInf; }

}  // namespace

double FeynmanKacModel::pairwise_log_potential(std::size_t, State, State) const {
  throw std::logic_error("model has no pairwise potential");
}

double log_joint(const FeynmanKacModel& model, std::span<const State> path) {
  if (path.size() != model.horizon()) {
    throw std::invalid_argument("path length " + std::to_string(path.size()) +
                                " does not match horizon " +
                                std::to_string(model.horizon()));
  }
  const bool pairwise = model.has_pairwise_potential();
  double lj = model.initial_log_density(path[0]) + model.log_potential(0, path[0]);
  for (std::size_t t = 1; t < path.size(); ++t) {
    lj += model.transition_log_density(t, path[t - 1], path[t]);
    lj += pairwise ? model.pairwise_log_potential(t, path[t - 1], path[t])
                   : model.log_potential(t, path[t]);
  }
  return lj;
}

double torus_distance(double x, double y) {
  const double d = std::fabs(x - y);
  return d <= 0.5 ? d : 1.0 - d;
}

// ---------------------------------------------------------------------------
// Barriers on a torus

BarriersModel::BarriersModel(double a, double w, double b, std::size_t horizon)
    : a_(a), w_(w), b_(b), horizon_(horizon) {
  if (!(a > 0.0 && a < 1.0)) throw std::invalid_argument("barriers: a must lie in (0,1)");
  if (!(w > 0.0 && w < 1.0)) throw std::invalid_argument("barriers: w must lie in (0,1)");
  if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("barriers: b must lie in (0,1)");
  if (horizon == 0) throw std::invalid_argument("barriers: horizon must be positive");
  log_near_ = std::log(a + (1.0 - a) / w);
  log_far_ = std::log(a);
  log_b_ = std::log(b);
  log_1mb_ = std::log1p(-b);
}

BarriersModel barriers_model(double a, double w, double b, std::size_t horizon) {
  return BarriersModel(a, w, b, horizon);
}

State BarriersModel::sample_initial(Rng& rng) const { return rng.uniform(); }

State BarriersModel::sample_transition(std::size_t, State x, Rng& rng) const {
  if (rng.uniform() < a_) return rng.uniform();
  double y = x + w_ * (rng.uniform() - 0.5);
  y -= std::floor(y);
  return y;
}

double BarriersModel::initial_log_density(State x) const {
  return (x >= 0.0 && x <= 1.0) ? 0.0 : kNegInf;
}

double BarriersModel::transition_density(State x, State y) const {
  return torus_distance(x, y) <= 0.5 * w_ ? a_ + (1.0 - a_) / w_ : a_;
}

double BarriersModel::transition_log_density(std::size_t, State x, State y) const {
  return torus_distance(x, y) <= 0.5 * w_ ? log_near_ : log_far_;
}

double BarriersModel::potential(State x) const {
  const bool low = (x >= 0.0 && x <= 0.25) || (x > 0.5 && x <= 0.75);
  return low ? b_ : 1.0 - b_;
}

double BarriersModel::log_potential(std::size_t, State x) const {
  const bool low = (x >= 0.0 && x <= 0.25) || (x > 0.5 && x <= 0.75);
  return low ? log_b_ : log_1mb_;
}

// ---------------------------------------------------------------------------
// Linear-Gaussian

LinearGaussianModel::LinearGaussianModel(double rho, double sigma_x, double sigma_y,
                                         std::size_t horizon)
    : LinearGaussianModel(rho, sigma_x, sigma_y, std::vector<double>(horizon, 0.0)) {}

LinearGaussianModel::LinearGaussianModel(double rho, double sigma_x, double sigma_y,
                                         std::vector<double> observations)
    : rho_(rho), sigma_x_(sigma_x), sigma_y_(sigma_y), y_(std::move(observations)) {
  if (!(std::fabs(rho) < 1.0)) throw std::invalid_argument("linear-Gaussian: |rho| must be < 1");
  if (!(sigma_x > 0.0)) throw std::invalid_argument("linear-Gaussian: sigma_x must be positive");
  if (!(sigma_y > 0.0)) throw std::invalid_argument("linear-Gaussian: sigma_y must be positive");
  if (y_.empty()) throw std::invalid_argument("linear-Gaussian: horizon must be positive");
  initial_var_ = sigma_x * sigma_x / (1.0 - rho * rho);
}

LinearGaussianModel linear_gaussian_model(double rho, double sigma_x, double sigma_y,
                                          std::size_t horizon) {
  return LinearGaussianModel(rho, sigma_x, sigma_y, horizon);
}

State LinearGaussianModel::sample_initial(Rng& rng) const {
  return rng.normal(0.0, std::sqrt(initial_var_));
}

State LinearGaussianModel::sample_transition(std::size_t, State x, Rng& rng) const {
  return rng.normal(rho_ * x, sigma_x_);
}

double LinearGaussianModel::initial_log_density(State x) const {
  return normal_log_density(x, 0.0, initial_var_);
}

double LinearGaussianModel::transition_log_density(std::size_t, State x, State y) const {
  return normal_log_density(y, rho_ * x, sigma_x_ * sigma_x_);
}

double LinearGaussianModel::log_potential(std::size_t t, State x) const {
  return normal_log_density(y_[t], x, sigma_y_ * sigma_y_);
}

// ---------------------------------------------------------------------------
// Stochastic volatility

SVParams::SVParams(double mu_, double phi_, double rho_, double sigma_)
    : mu(mu_), phi(phi_), rho(rho_), sigma(sigma_) {
  if (!std::isfinite(mu)) throw std::invalid_argument("SV: mu must be finite");
  if (!(std::fabs(phi) < 1.0)) throw std::invalid_argument("SV: phi must lie in (-1,1)");
  if (!(std::fabs(rho) < 1.0)) throw std::invalid_argument("SV: rho must lie in (-1,1)");
  if (!(sigma > 0.0)) throw std::invalid_argument("SV: sigma must be positive");
}

namespace {
double sv_initial_variance(const SVParams& th, SvInitialVariance init) {
  const double c = init == SvInitialVariance::kAsPrinted ? th.rho : th.phi;
  return th.sigma * th.sigma / (1.0 - c * c);
}
}  // namespace

SvModel::SvModel(SVParams theta, std::vector<double> y, SvInitialVariance init)
    : theta_(theta), y_(std::move(y)), init_(init) {
  if (y_.empty()) throw std::invalid_argument("SV: empty data");
  for (double v : y_) {
    if (!std::isfinite(v)) throw std::invalid_argument("SV: non-finite observation");
  }
  initial_var_ = sv_initial_variance(theta_, init_);
  transition_sd_ = theta_.sigma * std::sqrt(1.0 - theta_.rho * theta_.rho);
}

SvModel sv_model(SVParams theta, std::vector<double> y, SvInitialVariance init) {
  return SvModel(theta, std::move(y), init);
}

double SvModel::transition_mean(std::size_t t, State x) const {
  const auto& th = theta_;
  return th.mu + th.phi * (x - th.mu) + th.rho * th.sigma * std::exp(-0.5 * x) * y_[t - 1];
}

State SvModel::sample_initial(Rng& rng) const {
  return rng.normal(theta_.mu, std::sqrt(initial_var_));
}

State SvModel::sample_transition(std::size_t t, State x, Rng& rng) const {
  return rng.normal(transition_mean(t, x), transition_sd_);
}

double SvModel::initial_log_density(State x) const {
  return normal_log_density(x, theta_.mu, initial_var_);
}

double SvModel::transition_log_density(std::size_t t, State x, State y) const {
  return normal_log_density(y, transition_mean(t, x), transition_sd_ * transition_sd_);
}

double SvModel::log_potential(std::size_t t, State x) const {
  return -kHalfLog2Pi - 0.5 * x - 0.5 * y_[t] * y_[t] * std::exp(-x);
}

SvSimulation simulate_sv(const SVParams& theta, std::size_t horizon, Rng& rng,
                         SvInitialVariance init) {
  if (horizon == 0) throw std::invalid_argument("SV: horizon must be positive");
  SvSimulation sim;
  sim.x.resize(horizon);
  sim.y.resize(horizon);
  const double sd = theta.sigma * std::sqrt(1.0 - theta.rho * theta.rho);
  sim.x[0] = rng.normal(theta.mu, std::sqrt(sv_initial_variance(theta, init)));
  for (std::size_t t = 0; t < horizon; ++t) {
    sim.y[t] = std::exp(0.5 * sim.x[t]) * rng.normal();
    if (t + 1 < horizon) {
      const double mean = theta.mu + theta.phi * (sim.x[t] - theta.mu) +
                          theta.rho * theta.sigma * std::exp(-0.5 * sim.x[t]) * sim.y[t];
      sim.x[t + 1] = rng.normal(mean, sd);
    }
  }
  return sim;
}

// ---------------------------------------------------------------------------
// Uniform

UniformModel::UniformModel(std::size_t horizon) : horizon_(horizon) {
  if (horizon == 0) throw std::invalid_argument("uniform: horizon must be positive");
}

// ---------------------------------------------------------------------------
// Discrete

DiscreteModel::DiscreteModel(std::vector<double> initial, Matrix transition,
                             Matrix potentials)
    : DiscreteModel(std::move(initial), std::move(transition), std::move(potentials), {}) {}

DiscreteModel::DiscreteModel(std::vector<double> initial, Matrix transition,
                             Matrix potentials, std::vector<Matrix> pairwise)
    : initial_(std::move(initial)),
      transition_(std::move(transition)),
      potentials_(std::move(potentials)),
      pairwise_(std::move(pairwise)) {
  const std::size_t k = initial_.size();
  if (k == 0) throw std::invalid_argument("discrete: no states");
  if (potentials_.empty()) throw std::invalid_argument("discrete: horizon must be positive");
  if (transition_.size() != k) throw std::invalid_argument("discrete: transition rows");
  for (const auto& row : transition_) {
    if (row.size() != k) throw std::invalid_argument("discrete: transition columns");
  }
  for (const auto& row : potentials_) {
    if (row.size() != k) throw std::invalid_argument("discrete: potential columns");
  }
  auto normalize = [](std::vector<double>& p, const char* what) {
    double total = 0.0;
    for (double v : p) {
      if (!(v >= 0.0)) throw std::invalid_argument(std::string("discrete: negative ") + what);
      total += v;
    }
    if (!(total > 0.0)) throw std::invalid_argument(std::string("discrete: zero-mass ") + what);
    for (double& v : p) v /= total;
  };
  normalize(initial_, "initial law");
  for (auto& row : transition_) normalize(row, "transition row");
  if (!pairwise_.empty()) {
    if (pairwise_.size() != potentials_.size()) {
      throw std::invalid_argument("discrete: pairwise table must have one slot per time");
    }
    for (std::size_t t = 1; t < pairwise_.size(); ++t) {
      if (pairwise_[t].size() != k) throw std::invalid_argument("discrete: pairwise rows");
      for (const auto& row : pairwise_[t]) {
        if (row.size() != k) throw std::invalid_argument("discrete: pairwise columns");
      }
    }
  }
}

State DiscreteModel::sample_initial(Rng& rng) const {
  return static_cast<State>(draw_from(initial_, rng));
}

State DiscreteModel::sample_transition(std::size_t, State x, Rng& rng) const {
  return static_cast<State>(draw_from(transition_[state_index(x, num_states())], rng));
}

double DiscreteModel::initial_log_density(State x) const {
  return safe_log(initial_[state_index(x, num_states())]);
}

double DiscreteModel::transition_log_density(std::size_t, State x, State y) const {
  return safe_log(transition_[state_index(x, num_states())][state_index(y, num_states())]);
}

double DiscreteModel::log_potential(std::size_t t, State x) const {
  return safe_log(potentials_[t][state_index(x, num_states())]);
}

double DiscreteModel::pairwise_log_potential(std::size_t t, State prev, State x) const {
  if (pairwise_.empty()) return FeynmanKacModel::pairwise_log_potential(t, prev, x);
  return safe_log(pairwise_[t][state_index(prev, num_states())][state_index(x, num_states())]);
}

}  // namespace cbpf
