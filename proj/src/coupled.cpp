#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>
#include <string>

#include "cbpf/coupled.hpp"

namespace cbpf {

std::string_view to_string(CouplingStrategy s) {
  switch (s) {
    case CouplingStrategy::kJMC: return "JMC";
    case CouplingStrategy::kIMC: return "IMC";
    case CouplingStrategy::kIIC: return "IIC";
    case CouplingStrategy::kJIC: return "JIC";
  }
  return "?";
}

CouplingStrategy parse_strategy(std::string_view name) {
  std::string up(name);
  for (char& c : up) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (auto s : kAllStrategies) {
    if (to_string(s) == up) return s;
  }
  throw std::invalid_argument("unknown coupling strategy '" + std::string(name) + "'");
}

namespace {

std::vector<double> normalized_log_weights(std::span<const double> lw) {
  const std::vector<double> v = normalized_weights(lw);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > 0.0 ? std::log(v[i]) : kNegInf;
  return out;
}

bool rows_equal(CloudRow a, CloudRow b) {
  return std::equal(a.states.begin(), a.states.end(), b.states.begin()) &&
         std::equal(a.log_weights.begin(), a.log_weights.end(), b.log_weights.begin());
}

// N-fold product of a predictive mixture, for the joint maximal coupling.
struct ProductMixture {
  const PredictiveMixture* mixture;
  std::size_t n;

  std::vector<State> sample(Rng& rng) const {
    std::vector<State> x(n);
    for (auto& xi : x) xi = mixture->sample(rng);
    return x;
  }
  double log_density(const std::vector<State>& x) const {
    double s = 0.0;
    for (State xi : x) {
      s += mixture->log_density(xi);
      if (s == kNegInf) break;
    }
    return s;
  }
};

// N-fold product of Categorical(W^{0:N}) over ancestor index vectors.
struct ProductCategorical {
  const Categorical* categorical;
  const std::vector<double>* log_v;
  std::size_t n;

  std::vector<std::uint32_t> sample(Rng& rng) const {
    std::vector<std::uint32_t> a(n);
    for (auto& ai : a) ai = static_cast<std::uint32_t>(categorical->draw(rng));
    return a;
  }
  double log_density(const std::vector<std::uint32_t>& a) const {
    double s = 0.0;
    for (auto ai : a) {
      s += (*log_v)[ai];
      if (s == kNegInf) break;
    }
    return s;
  }
};

// Step (ii) of index coupling: share the transition draw when the selected
// ancestors carry bit-identical states.
void propagate_index_pair(const FeynmanKacModel& model, std::size_t t, CloudRow row_a,
                          CloudRow row_b, std::size_t ia, std::size_t ib, Rng& rng, State& out_a,
                          State& out_b) {
  const State xa = row_a.states[ia];
  const State xb = row_b.states[ib];
  if (xa == xb) {
    out_a = out_b = model.sample_transition(t, xa, rng);
  } else {
    out_a = model.sample_transition(t, xa, rng);
    out_b = model.sample_transition(t, xb, rng);
  }
}

}  // namespace

PredictiveMixture::PredictiveMixture(const FeynmanKacModel& model, std::size_t t, CloudRow row)
    : model_(&model),
      t_(t),
      states_(row.states),
      log_v_(normalized_log_weights(row.log_weights)),
      ancestors_(row.log_weights) {
  if (row.states.size() != row.log_weights.size()) {
    throw std::invalid_argument("cloud row: states and weights differ in length");
  }
  for (std::size_t k = 0; k < log_v_.size(); ++k) {
    if (log_v_[k] != kNegInf) support_.push_back(k);
  }
}

State PredictiveMixture::sample(Rng& rng) const {
  return model_->sample_transition(t_, states_[ancestors_.draw(rng)], rng);
}

double PredictiveMixture::log_density(State y) const {
  double terms_max = kNegInf;
  // Two passes (max, then sum) keep the mixture finite when every component
  // density underflows in linear space.
  thread_local std::vector<double> terms;
  terms.resize(support_.size());
  for (std::size_t j = 0; j < support_.size(); ++j) {
    const std::size_t k = support_[j];
    terms[j] = log_v_[k] + model_->transition_log_density(t_, states_[k], y);
    terms_max = std::max(terms_max, terms[j]);
  }
  if (terms_max == kNegInf) return kNegInf;
  double s = 0.0;
  for (double v : terms) s += std::exp(v - terms_max);
  return terms_max + std::log(s);
}

double predictive_log_density(CloudRow row, const FeynmanKacModel& model, std::size_t t,
                              State y) {
  if (t == 0) throw std::invalid_argument("predictive density is defined for t >= 1");
  return PredictiveMixture(model, t, row).log_density(y);
}

void fwd_couple(CouplingStrategy strategy, CloudRow row_a, CloudRow row_b,
                const FeynmanKacModel& model, std::size_t t, Rng& rng, std::span<State> out_a,
                std::span<State> out_b, const CouplingOptions& options) {
  const std::size_t n = out_a.size();
  if (out_b.size() != n) throw std::invalid_argument("fwd_couple: output sizes differ");
  if (row_a.states.size() != row_b.states.size()) {
    throw std::invalid_argument("fwd_couple: rows differ in length");
  }

  if (options.coincident_shortcut && rows_equal(row_a, row_b)) {
    const PredictiveMixture zeta(model, t, row_a);
    for (std::size_t i = 0; i < n; ++i) out_a[i] = out_b[i] = zeta.sample(rng);
    return;
  }

  switch (strategy) {
    case CouplingStrategy::kJMC: {
      const PredictiveMixture zeta_a(model, t, row_a), zeta_b(model, t, row_b);
      const ProductMixture p{&zeta_a, n}, q{&zeta_b, n};
      auto draw = max_couple_generic<std::vector<State>>(p, q, rng, options.rejection_cap);
      std::copy(draw.first.begin(), draw.first.end(), out_a.begin());
      std::copy(draw.second.begin(), draw.second.end(), out_b.begin());
      break;
    }
    case CouplingStrategy::kIMC: {
      const PredictiveMixture zeta_a(model, t, row_a), zeta_b(model, t, row_b);
      for (std::size_t i = 0; i < n; ++i) {
        const auto draw = max_couple_generic<State>(zeta_a, zeta_b, rng, options.rejection_cap);
        out_a[i] = draw.first;
        out_b[i] = draw.second;
      }
      break;
    }
    case CouplingStrategy::kIIC: {
      const CategoricalCoupler coupler(row_a.log_weights, row_b.log_weights);
      for (std::size_t i = 0; i < n; ++i) {
        const auto [ia, ib] = coupler.draw(rng);
        propagate_index_pair(model, t, row_a, row_b, ia, ib, rng, out_a[i], out_b[i]);
      }
      break;
    }
    case CouplingStrategy::kJIC: {
      const Categorical cat_a(row_a.log_weights), cat_b(row_b.log_weights);
      const std::vector<double> lv_a = normalized_log_weights(row_a.log_weights);
      const std::vector<double> lv_b = normalized_log_weights(row_b.log_weights);
      const ProductCategorical p{&cat_a, &lv_a, n}, q{&cat_b, &lv_b, n};
      const auto draw =
          max_couple_generic<std::vector<std::uint32_t>>(p, q, rng, options.rejection_cap);
      for (std::size_t i = 0; i < n; ++i) {
        propagate_index_pair(model, t, row_a, row_b, draw.first[i], draw.second[i], rng,
                             out_a[i], out_b[i]);
      }
      break;
    }
  }
}

std::pair<std::vector<State>, std::vector<State>> fwd_couple(
    CouplingStrategy strategy, CloudRow row_a, CloudRow row_b, const FeynmanKacModel& model,
    std::size_t t, std::size_t num_particles, Rng& rng, const CouplingOptions& options) {
  std::vector<State> a(num_particles), b(num_particles);
  fwd_couple(strategy, row_a, row_b, model, t, rng, a, b, options);
  return {std::move(a), std::move(b)};
}

namespace {

double log_sum_exp(std::span<const double> v) {
  double m = kNegInf;
  for (double x : v) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// Marginal-filter weight of particle `y` given the previous row.
double marginal_log_weight(const FeynmanKacModel& model, std::size_t t, CloudRow prev, State y,
                           std::vector<double>& num, std::vector<double>& den) {
  const std::size_t w = prev.states.size();
  num.resize(w);
  den.resize(w);
  for (std::size_t k = 0; k < w; ++k) {
    const double lm =
        prev.log_weights[k] == kNegInf
            ? kNegInf
            : prev.log_weights[k] + model.transition_log_density(t, prev.states[k], y);
    den[k] = lm;
    num[k] = lm == kNegInf ? kNegInf : lm + model.pairwise_log_potential(t, prev.states[k], y);
  }
  return log_sum_exp(num) - log_sum_exp(den);
}

CategoricalCoupler coupler_at(std::span<const double> a, std::span<const double> b,
                              std::size_t t) {
  try {
    return CategoricalCoupler(a, b);
  } catch (const DegenerateWeights& e) {
    throw DegenerateWeights("coupled weights degenerate at t=" + std::to_string(t) + ": " +
                            e.what());
  }
}

}  // namespace

CoupledOutput coupled_cbpf_transition(const FeynmanKacModel& model,
                                      std::span<const State> ref_a,
                                      std::span<const State> ref_b, std::size_t num_particles,
                                      CouplingStrategy strategy, Rng& rng,
                                      const CoupledKernelOptions& options) {
  check_kernel_inputs(model, ref_a, num_particles);
  check_kernel_inputs(model, ref_b, num_particles);
  if (options.pairwise && !model.has_pairwise_potential()) {
    throw std::invalid_argument("pairwise coupling requires a pairwise potential");
  }
  const std::size_t T = model.horizon();
  const std::size_t width = num_particles + 1;
  ParticleCloud ca(T, num_particles), cb(T, num_particles);
  CoupledOutput out;
  out.forward_couple_events.assign(T, 0);
  std::vector<std::uint8_t> rows_identical(T, 0);

  // Shared initial particles.
  {
    auto xa = ca.states(0), xb = cb.states(0);
    auto la = ca.weights(0), lb = cb.weights(0);
    for (std::size_t i = 1; i < width; ++i) xa[i] = xb[i] = model.sample_initial(rng);
    for (std::size_t i = 1; i < width; ++i) la[i] = lb[i] = model.log_potential(0, xa[i]);
    xa[0] = ref_a[0];
    xb[0] = ref_b[0];
    la[0] = model.log_potential(0, xa[0]);
    lb[0] = xa[0] == xb[0] ? la[0] : model.log_potential(0, xb[0]);
    out.forward_couple_events[0] = 1;
    rows_identical[0] = xa[0] == xb[0];
  }

  std::vector<double> num, den;
  for (std::size_t t = 1; t < T; ++t) {
    const CloudRow prev_a{ca.states(t - 1), ca.weights(t - 1)};
    const CloudRow prev_b{cb.states(t - 1), cb.weights(t - 1)};
    auto xa = ca.states(t), xb = cb.states(t);
    auto la = ca.weights(t), lb = cb.weights(t);
    try {
      fwd_couple(strategy, prev_a, prev_b, model, t, rng, xa.subspan(1), xb.subspan(1),
                 options);
    } catch (const DegenerateWeights& e) {
      throw DegenerateWeights("filter weights degenerate at t=" + std::to_string(t - 1) + ": " +
                              e.what());
    }
    xa[0] = ref_a[t];
    xb[0] = ref_b[t];
    const bool particles_equal = std::equal(xa.begin() + 1, xa.end(), xb.begin() + 1);
    out.forward_couple_events[t] = particles_equal;

    if (!options.pairwise) {
      for (std::size_t i = 0; i < width; ++i) la[i] = model.log_potential(t, xa[i]);
      for (std::size_t i = 0; i < width; ++i) {
        lb[i] = xb[i] == xa[i] ? la[i] : model.log_potential(t, xb[i]);
      }
    } else {
      for (std::size_t i = 0; i < width; ++i) {
        la[i] = marginal_log_weight(model, t, prev_a, xa[i], num, den);
      }
      if (rows_identical[t - 1] && xa[0] == xb[0] && particles_equal) {
        std::copy(la.begin(), la.end(), lb.begin());
      } else {
        for (std::size_t i = 0; i < width; ++i) {
          lb[i] = marginal_log_weight(model, t, prev_b, xb[i], num, den);
        }
      }
    }
    rows_identical[t] = std::equal(xa.begin(), xa.end(), xb.begin()) &&
                        std::equal(la.begin(), la.end(), lb.begin());
  }

  // Backward pass with maximally coupled indices.
  std::vector<std::size_t> ja(T), jb(T);
  std::tie(ja[T - 1], jb[T - 1]) = coupler_at(ca.weights(T - 1), cb.weights(T - 1), T - 1).draw(rng);
  std::vector<double> bwa(width), bwb(width);
  auto backward_weights = [&](const ParticleCloud& c, std::size_t t, State next,
                              std::vector<double>& bw) {
    const auto x = c.states(t);
    const auto lw = c.weights(t);
    for (std::size_t i = 0; i < width; ++i) {
      if (lw[i] == kNegInf) {
        bw[i] = kNegInf;
        continue;
      }
      bw[i] = lw[i] + model.transition_log_density(t + 1, x[i], next);
      if (options.pairwise && bw[i] != kNegInf) {
        bw[i] += model.pairwise_log_potential(t + 1, x[i], next);
      }
    }
  };
  for (std::size_t t = T - 1; t-- > 0;) {
    const State next_a = ca.states(t + 1)[ja[t + 1]];
    const State next_b = cb.states(t + 1)[jb[t + 1]];
    backward_weights(ca, t, next_a, bwa);
    if (rows_identical[t] && next_a == next_b) {
      bwb = bwa;
    } else {
      backward_weights(cb, t, next_b, bwb);
    }
    std::tie(ja[t], jb[t]) = coupler_at(bwa, bwb, t).draw(rng);
  }

  out.path_a.resize(T);
  out.path_b.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    out.path_a[t] = ca.states(t)[ja[t]];
    out.path_b[t] = cb.states(t)[jb[t]];
    if (out.path_a[t] != out.path_b[t]) ++out.holes;
  }
  out.fully_met = out.holes == 0;
  return out;
}

HoleProfile hole_profile(std::span<const State> ref_a, std::span<const State> ref_b) {
  if (ref_a.size() != ref_b.size()) throw std::invalid_argument("hole_profile: length mismatch");
  const std::size_t T = ref_a.size();
  HoleProfile hp;
  hp.distance.assign(T, kInfiniteDistance);
  std::size_t last = kInfiniteDistance;
  for (std::size_t t = 0; t < T; ++t) {
    if (ref_a[t] != ref_b[t]) {
      ++hp.b_star;
      last = t;
    }
    if (last != kInfiniteDistance) hp.distance[t] = t - last;
  }
  last = kInfiniteDistance;
  for (std::size_t t = T; t-- > 0;) {
    if (ref_a[t] != ref_b[t]) last = t;
    if (last != kInfiniteDistance) hp.distance[t] = std::min(hp.distance[t], last - t);
  }
  for (std::size_t t = 0; t < T; ++t) {
    if (hp.distance[t] != kInfiniteDistance) hp.levels[hp.distance[t]].push_back(t);
  }
  return hp;
}

}  // namespace cbpf
