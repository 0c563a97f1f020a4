#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "cbpf/oracles.hpp"

namespace cbpf {

KalmanResult kalman_smoother(double rho, double sigma_x, double sigma_y, std::size_t horizon) {
  const std::vector<double> zeros(horizon, 0.0);
  return kalman_smoother(rho, sigma_x, sigma_y, zeros);
}

KalmanResult kalman_smoother(double rho, double sigma_x, double sigma_y,
                             std::span<const double> y) {
  if (!(std::fabs(rho) < 1.0) || !(sigma_x > 0.0) || !(sigma_y > 0.0)) {
    throw std::invalid_argument("kalman_smoother: invalid parameters");
  }
  const std::size_t T = y.size();
  const double q = sigma_x * sigma_x, r = sigma_y * sigma_y;
  std::vector<double> mp(T), pp(T), mf(T), pf(T);
  KalmanResult out;
  for (std::size_t t = 0; t < T; ++t) {
    if (t == 0) {
      mp[0] = 0.0;
      pp[0] = q / (1.0 - rho * rho);
    } else {
      mp[t] = rho * mf[t - 1];
      pp[t] = rho * rho * pf[t - 1] + q;
    }
    const double s = pp[t] + r;
    const double e = y[t] - mp[t];
    out.log_likelihood += -0.5 * (std::log(2.0 * std::numbers::pi * s) + e * e / s);
    const double gain = pp[t] / s;
    mf[t] = mp[t] + gain * e;
    pf[t] = (1.0 - gain) * pp[t];
  }
  out.means = mf;
  out.variances = pf;
  for (std::size_t t = T - 1; t-- > 0;) {
    const double c = pf[t] * rho / pp[t + 1];
    out.means[t] = mf[t] + c * (out.means[t + 1] - mp[t + 1]);
    out.variances[t] = pf[t] + c * c * (out.variances[t + 1] - pp[t + 1]);
  }
  return out;
}

double kalman_log_likelihood(double rho, double sigma_x, double sigma_y,
                             std::span<const double> y) {
  return kalman_smoother(rho, sigma_x, sigma_y, y).log_likelihood;
}

namespace {

std::array<double, 3> lg_from_raw(const std::array<double, 3>& z) {
  return {std::tanh(0.5 * z[0]), std::exp(z[1]), std::exp(z[2])};
}

}  // namespace

std::vector<double> kalman_mle(std::span<const double> y, std::span<const double> start) {
  if (start.size() != 3) throw std::invalid_argument("kalman_mle: need 3 starting values");
  using P = std::array<double, 3>;
  auto f = [&](const P& z) {
    const P th = lg_from_raw(z);
    if (!(std::fabs(th[0]) < 1.0)) return std::numeric_limits<double>::infinity();
    const double ll = kalman_log_likelihood(th[0], th[1], th[2], y);
    return std::isfinite(ll) ? -ll : std::numeric_limits<double>::infinity();
  };

  P x0 = {2.0 * std::atanh(start[0]), std::log(start[1]), std::log(start[2])};
  // Nelder-Mead with restarts.
  for (int restart = 0; restart < 4; ++restart) {
    std::array<P, 4> s;
    std::array<double, 4> fs;
    s[0] = x0;
    for (int i = 0; i < 3; ++i) {
      s[i + 1] = x0;
      s[i + 1][i] += 0.5;
    }
    for (int i = 0; i < 4; ++i) fs[i] = f(s[i]);
    for (int it = 0; it < 5000; ++it) {
      std::array<int, 4> idx = {0, 1, 2, 3};
      std::sort(idx.begin(), idx.end(), [&](int a, int b) { return fs[a] < fs[b]; });
      const int best = idx[0], worst = idx[3], second = idx[2];
      if (std::fabs(fs[worst] - fs[best]) < 1e-12 * (1.0 + std::fabs(fs[best]))) break;
      P c{};
      for (int k = 0; k < 3; ++k) {
        for (int j = 0; j < 3; ++j) c[j] += s[idx[k]][j] / 3.0;
      }
      auto along = [&](double coef) {
        P p;
        for (int j = 0; j < 3; ++j) p[j] = c[j] + coef * (s[worst][j] - c[j]);
        return p;
      };
      const P xr = along(-1.0);
      const double fr = f(xr);
      if (fr < fs[best]) {
        const P xe = along(-2.0);
        const double fe = f(xe);
        if (fe < fr) {
          s[worst] = xe;
          fs[worst] = fe;
        } else {
          s[worst] = xr;
          fs[worst] = fr;
        }
      } else if (fr < fs[second]) {
        s[worst] = xr;
        fs[worst] = fr;
      } else {
        const P xc = fr < fs[worst] ? along(-0.5) : along(0.5);
        const double fc = f(xc);
        if (fc < std::min(fr, fs[worst])) {
          s[worst] = xc;
          fs[worst] = fc;
        } else {
          for (int k = 1; k < 4; ++k) {
            for (int j = 0; j < 3; ++j) s[idx[k]][j] = s[best][j] + 0.5 * (s[idx[k]][j] - s[best][j]);
            fs[idx[k]] = f(s[idx[k]]);
          }
        }
      }
    }
    x0 = s[std::min_element(fs.begin(), fs.end()) - fs.begin()];
  }
  const P th = lg_from_raw(x0);
  return {th[0], th[1], th[2]};
}

namespace {

// exp(log G) for the step into time t from prev (pairwise) or at x (unary).
double step_factor(const DiscreteModel& m, std::size_t t, std::size_t prev, std::size_t x) {
  const double lg = m.has_pairwise_potential()
                        ? m.pairwise_log_potential(t, static_cast<State>(prev), static_cast<State>(x))
                        : m.log_potential(t, static_cast<State>(x));
  return std::exp(m.transition_log_density(t, static_cast<State>(prev), static_cast<State>(x)) + lg);
}

}  // namespace

DiscreteSmoother discrete_forward_backward(const DiscreteModel& model) {
  const std::size_t K = model.num_states(), T = model.horizon();
  if (K > 16 || T > 12) throw std::invalid_argument("discrete_forward_backward: size limit exceeded");
  std::vector<std::vector<double>> alpha(T, std::vector<double>(K, 0.0));
  std::vector<std::vector<double>> beta(T, std::vector<double>(K, 1.0));
  DiscreteSmoother out;
  for (std::size_t x = 0; x < K; ++x) {
    alpha[0][x] = std::exp(model.initial_log_density(static_cast<State>(x)) +
                           model.log_potential(0, static_cast<State>(x)));
  }
  auto normalize = [&](std::vector<double>& v) {
    double s = 0.0;
    for (double a : v) s += a;
    if (!(s > 0.0)) throw std::runtime_error("discrete_forward_backward: zero mass");
    for (double& a : v) a /= s;
    return s;
  };
  out.log_normalizer = std::log(normalize(alpha[0]));
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t x = 0; x < K; ++x) {
      double s = 0.0;
      for (std::size_t p = 0; p < K; ++p) s += alpha[t - 1][p] * step_factor(model, t, p, x);
      alpha[t][x] = s;
    }
    out.log_normalizer += std::log(normalize(alpha[t]));
  }
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t p = 0; p < K; ++p) {
      double s = 0.0;
      for (std::size_t x = 0; x < K; ++x) s += step_factor(model, t + 1, p, x) * beta[t + 1][x];
      beta[t][p] = s;
    }
    normalize(beta[t]);
  }
  out.marginals.assign(T, std::vector<double>(K));
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t x = 0; x < K; ++x) out.marginals[t][x] = alpha[t][x] * beta[t][x];
    normalize(out.marginals[t]);
  }
  return out;
}

DiscreteSmoother discrete_enumeration(const DiscreteModel& model) {
  const std::size_t K = model.num_states(), T = model.horizon();
  if (K * T > 20) throw std::invalid_argument("discrete_enumeration: size limit exceeded");
  DiscreteSmoother out;
  out.marginals.assign(T, std::vector<double>(K, 0.0));
  Path path(T, 0.0);
  std::vector<std::size_t> digits(T, 0);
  double total = 0.0;
  for (;;) {
    for (std::size_t t = 0; t < T; ++t) path[t] = static_cast<State>(digits[t]);
    const double w = std::exp(log_joint(model, path));
    total += w;
    for (std::size_t t = 0; t < T; ++t) out.marginals[t][digits[t]] += w;
    std::size_t t = 0;
    while (t < T && ++digits[t] == K) digits[t++] = 0;
    if (t == T) break;
  }
  if (!(total > 0.0)) throw std::runtime_error("discrete_enumeration: zero mass");
  for (auto& row : out.marginals) {
    for (double& v : row) v /= total;
  }
  out.log_normalizer = std::log(total);
  return out;
}

double total_variation(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("total_variation: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::fabs(p[i] - q[i]);
  return 0.5 * s;
}

}  // namespace cbpf
