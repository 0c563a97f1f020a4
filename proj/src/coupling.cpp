#include <algorithm>
#include <cmath>

#include "cbpf/coupling.hpp"

namespace cbpf {

std::vector<double> normalized_weights(std::span<const double> log_weights) {
  if (log_weights.empty()) throw DegenerateWeights("degenerate weight vector: empty");
  double max = kNegInf;
  for (double lw : log_weights) {
    if (std::isnan(lw) || lw == std::numeric_limits<double>::infinity()) {
      throw DegenerateWeights("degenerate weight vector: NaN or +inf entry");
    }
    max = std::max(max, lw);
  }
  if (max == kNegInf) throw DegenerateWeights("degenerate weight vector: all weights zero");
  std::vector<double> w(log_weights.size());
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = std::exp(log_weights[i] - max);
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

Categorical::Categorical(std::span<const double> log_weights) {
  build(normalized_weights(log_weights));
}

Categorical Categorical::from_linear(std::vector<double> weights) {
  Categorical c;
  c.build(std::move(weights));
  return c;
}

void Categorical::build(std::vector<double> weights) {
  cumulative_ = std::move(weights);
  double acc = 0.0;
  bool any = false;
  for (std::size_t i = 0; i < cumulative_.size(); ++i) {
    const double w = cumulative_[i] > 0.0 ? cumulative_[i] : 0.0;
    if (w > 0.0) {
      last_positive_ = i;
      any = true;
    }
    acc += w;
    cumulative_[i] = acc;
  }
  if (!any) throw DegenerateWeights("degenerate weight vector: all weights zero");
}

std::size_t Categorical::draw(Rng& rng) const {
  const double u = rng.uniform() * cumulative_.back();
  // First index whose cumulative weight exceeds u; zero-weight entries never
  // exceed their predecessor and so are never selected.
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  const auto i = static_cast<std::size_t>(it - cumulative_.begin());
  return std::min(i, last_positive_);
}

double Categorical::probability(std::size_t i) const {
  const double prev = i == 0 ? 0.0 : cumulative_[i - 1];
  return (cumulative_[i] - prev) / cumulative_.back();
}

std::size_t categorical_sample(std::span<const double> log_weights, Rng& rng) {
  return Categorical(log_weights).draw(rng);
}

CategoricalCoupler::CategoricalCoupler(std::span<const double> log_weights_a,
                                       std::span<const double> log_weights_b)
    : v_a_(normalized_weights(log_weights_a)), v_b_(normalized_weights(log_weights_b)) {
  if (v_a_.size() != v_b_.size()) {
    throw std::invalid_argument("max_couple_categorical: weight vectors differ in length");
  }
  const std::size_t n = v_a_.size();
  std::vector<double> common(n), res_a(n), res_b(n);
  double mass_a = 0.0, mass_b = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    common[i] = std::min(v_a_[i], v_b_[i]);
    res_a[i] = std::max(v_a_[i] - common[i], 0.0);
    res_b[i] = std::max(v_b_[i] - common[i], 0.0);
    overlap_ += common[i];
    mass_a += res_a[i];
    mass_b += res_b[i];
  }
  has_common_ = overlap_ > 0.0;
  always_common_ = !(mass_a > 0.0) || !(mass_b > 0.0);
  if (always_common_) overlap_ = 1.0;
  parts_.reserve(3);
  if (has_common_) {
    parts_.push_back(Categorical::from_linear(std::move(common)));
  } else {
    parts_.push_back(Categorical::from_linear(std::vector<double>(n, 1.0)));  // unused
  }
  if (!always_common_) {
    parts_.push_back(Categorical::from_linear(std::move(res_a)));
    parts_.push_back(Categorical::from_linear(std::move(res_b)));
  }
}

std::pair<std::size_t, std::size_t> CategoricalCoupler::draw(Rng& rng) const {
  const double u = rng.uniform();
  if (always_common_ || (has_common_ && u <= overlap_)) {
    const std::size_t i = parts_[0].draw(rng);
    return {i, i};
  }
  const std::size_t i = parts_[1].draw(rng);
  const std::size_t j = parts_[2].draw(rng);
  return {i, j};
}

std::pair<std::size_t, std::size_t> max_couple_categorical(
    std::span<const double> log_weights_a, std::span<const double> log_weights_b, Rng& rng) {
  return CategoricalCoupler(log_weights_a, log_weights_b).draw(rng);
}

}  // namespace cbpf
