#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cbpf/rng.hpp"

namespace cbpf {

/// Thrown when a weight vector has no finite entry (or contains NaN).
class DegenerateWeights : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Probabilities proportional to exp(log_weights), computed with the maximum
/// subtracted first. Throws DegenerateWeights on an all -inf or NaN input.
std::vector<double> normalized_weights(std::span<const double> log_weights);

/// Categorical distribution over 0..N prepared for repeated inverse-CDF draws.
class Categorical {
 public:
  explicit Categorical(std::span<const double> log_weights);
  /// From nonnegative linear weights (need not be normalized).
  static Categorical from_linear(std::vector<double> weights);

  std::size_t draw(Rng& rng) const;
  std::size_t size() const { return cumulative_.size(); }
  double probability(std::size_t i) const;

 private:
  Categorical() = default;
  void build(std::vector<double> weights);

  std::vector<double> cumulative_;
  std::size_t last_positive_ = 0;
};

std::size_t categorical_sample(std::span<const double> log_weights, Rng& rng);

/// Maximal coupling of two categorical distributions on 0..N (common part
/// plus residuals, one uniform per draw). Normalization and residual tables
/// are built once so that repeated draws cost O(log N).
class CategoricalCoupler {
 public:
  CategoricalCoupler(std::span<const double> log_weights_a,
                     std::span<const double> log_weights_b);

  std::pair<std::size_t, std::size_t> draw(Rng& rng) const;

  /// Sum_i min(v^i, v~^i): the probability that a draw returns equal indices.
  double overlap() const { return overlap_; }
  const std::vector<double>& probabilities_a() const { return v_a_; }
  const std::vector<double>& probabilities_b() const { return v_b_; }

 private:
  std::vector<double> v_a_, v_b_;
  double overlap_ = 0.0;
  bool always_common_ = false;
  bool has_common_ = false;
  std::vector<Categorical> parts_;  // common, residual a, residual b
};

std::pair<std::size_t, std::size_t> max_couple_categorical(
    std::span<const double> log_weights_a, std::span<const double> log_weights_b, Rng& rng);

/// A distribution that can be sampled and whose log-density can be evaluated.
template <class D, class Point>
concept SamplerWithDensity = requires(const D& d, Rng& rng, const Point& x) {
  { d.sample(rng) } -> std::convertible_to<Point>;
  { d.log_density(x) } -> std::convertible_to<double>;
};

/// Type-erased sampler/density pair.
template <class Point>
struct DensitySampler {
  std::function<Point(Rng&)> sampler;
  std::function<double(const Point&)> density;

  Point sample(Rng& rng) const { return sampler(rng); }
  double log_density(const Point& x) const { return density(x); }
};

template <class Point>
struct CoupledDraw {
  Point first;
  Point second;
  bool met = false;
};

class RejectionCapExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kDefaultRejectionCap = 1'000'000;

namespace detail {
// min(1, exp(log_num - log_den)) with -inf/-inf never arising for points
// drawn from the denominator distribution.
inline double acceptance(double log_num, double log_den) {
  if (log_num == kNegInf) return 0.0;
  if (log_den == kNegInf) return 1.0;
  const double d = log_num - log_den;
  return d >= 0.0 ? 1.0 : std::exp(d);
}
}  // namespace detail

/// Maximal coupling of p and q by rejection. The first output is distributed
/// as p, the second as q, and they are equal with probability 1 - TV(p, q).
template <class Point, class P, class Q>
  requires SamplerWithDensity<P, Point> && SamplerWithDensity<Q, Point>
CoupledDraw<Point> max_couple_generic(const P& p, const Q& q, Rng& rng,
                                      std::size_t max_rounds = kDefaultRejectionCap) {
  Point x = p.sample(rng);
  const double lp_x = p.log_density(x);
  const double lq_x = q.log_density(x);
  if (rng.uniform() < detail::acceptance(lq_x, lp_x)) {
    Point copy = x;
    return {std::move(x), std::move(copy), true};
  }
  for (std::size_t round = 0; round < max_rounds; ++round) {
    Point y = q.sample(rng);
    const double lq_y = q.log_density(y);
    const double lp_y = p.log_density(y);
    if (rng.uniform() >= detail::acceptance(lp_y, lq_y)) {
      return {std::move(x), std::move(y), false};
    }
  }
  throw RejectionCapExceeded("maximal coupling exceeded " + std::to_string(max_rounds) +
                             " rejection rounds");
}

template <class Point>
CoupledDraw<Point> max_couple_generic(const DensitySampler<Point>& p,
                                      const DensitySampler<Point>& q, Rng& rng,
                                      std::size_t max_rounds = kDefaultRejectionCap) {
  return max_couple_generic<Point, DensitySampler<Point>, DensitySampler<Point>>(
      p, q, rng, max_rounds);
}

}  // namespace cbpf
