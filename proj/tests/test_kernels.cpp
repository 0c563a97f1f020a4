#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "cbpf/kernels.hpp"
#include "cbpf/oracles.hpp"
#include "fixtures.hpp"
#include "stats.hpp"

using namespace cbpf;
using fixtures::max_tv;

namespace {

// Model whose potential vanishes everywhere at one time step.
class DeadEnd final : public FeynmanKacModel {
 public:
  std::size_t horizon() const override { return 4; }
  State sample_initial(Rng& rng) const override { return rng.uniform(); }
  State sample_transition(std::size_t, State, Rng& rng) const override { return rng.uniform(); }
  double initial_log_density(State) const override { return 0.0; }
  double transition_log_density(std::size_t, State, State) const override { return 0.0; }
  double log_potential(std::size_t t, State) const override { return t == 2 ? kNegInf : 0.0; }
};


}  // namespace

TEST_CASE("particle filter with constant potentials samples the prior") {
  const BarriersModel m(0.5, 0.2, 0.5, 5);
  Rng rng(1);
  std::vector<std::vector<double>> xs(5);
  for (int r = 0; r < 10000; ++r) {
    const Path p = particle_filter(m, 8, rng);
    for (std::size_t t = 0; t < 5; ++t) xs[t].push_back(p[t]);
  }
  for (std::size_t t = 0; t < 5; ++t) {
    CHECK(teststats::ks_test(xs[t], [](double x) { return std::clamp(x, 0.0, 1.0); }) > 0.001);
  }
}

TEST_CASE("particle filter on the linear-Gaussian model") {
  const LinearGaussianModel m(0.9, 1.0, 1.0, 8);
  const KalmanResult k = kalman_smoother(0.9, 1.0, 1.0, 8);
  Rng rng(2);
  std::vector<double> x3;
  for (int r = 0; r < 10000; ++r) x3.push_back(particle_filter(m, 512, rng)[3]);
  const auto mom = teststats::moments(x3);
  CHECK(std::fabs(mom.mean - k.means[3]) < 3.0 * mom.se);
}

TEST_CASE("kernel outputs index the particle cloud") {
  const BarriersModel m(0.3, 0.2, 0.1, 6);
  Rng rng(3);
  Path ref(6, 0.5);
  for (int r = 0; r < 50; ++r) {
    const ParticleCloud cloud = cbpf_forward(m, ref, 4, rng);
    for (std::size_t t = 0; t < 6; ++t) REQUIRE(cloud.states(t)[0] == ref[t]);
    for (std::size_t t = 0; t < 6; ++t) {
      for (std::size_t i = 0; i < 5; ++i) {
        REQUIRE(cloud.weights(t)[i] == m.log_potential(t, cloud.states(t)[i]));
      }
    }
    const KernelOutput out = backward_sample(m, cloud, rng);
    for (std::size_t t = 0; t < 6; ++t) {
      REQUIRE(out.path[t] == cloud.states(t)[out.indices[t]]);
      REQUIRE(out.reference_retained[t] == (out.indices[t] == 0));
    }
  }
  // T = 1: a single categorical draw among the initial particles
  const BarriersModel one(0.3, 0.2, 0.1, 1);
  const ParticleCloud c1 = cbpf_forward(one, std::vector<State>{0.9}, 3, rng);
  const KernelOutput o1 = backward_sample(one, c1, rng);
  CHECK(o1.path.size() == 1);
  CHECK(o1.path[0] == c1.states(0)[o1.indices[0]]);
}

TEST_CASE("uniform model retains the reference with probability 1/(N+1)") {
  const UniformModel m(10);
  Rng rng(4);
  const std::size_t N = 4;
  const Path ref = particle_filter(m, N, rng);
  const int n = 10000;
  std::vector<double> kept(10, 0.0);
  double both = 0.0;
  for (int r = 0; r < n; ++r) {
    const KernelOutput out = cbpf_transition(m, ref, N, rng);
    for (std::size_t t = 0; t < 10; ++t) {
      kept[t] += out.path[t] == ref[t];
      REQUIRE(out.reference_retained[t] == (out.path[t] == ref[t]));
    }
    both += out.path[0] == ref[0] && out.path[1] == ref[1];
  }
  for (double k : kept) CHECK(std::fabs(k / n - 0.2) < teststats::binomial_band(0.2, n));
  CHECK(std::fabs(both / n - 0.04) < teststats::binomial_band(0.04, n));

  // N = 1 with constant potentials: retained with probability 1/2
  double half = 0.0;
  for (int r = 0; r < n; ++r) half += cbpf_transition(m, ref, 1, rng).reference_retained[5];
  CHECK(std::fabs(half / n - 0.5) < teststats::binomial_band(0.5, n));
}

TEST_CASE("CPF ancestor tracing") {
  const UniformModel m(6);
  Rng rng(5);
  const Path ref = particle_filter(m, 3, rng);
  int checked = 0;
  for (int r = 0; r < 2000; ++r) {
    const KernelOutput out = cpf_transition(m, ref, 3, rng);
    if (out.indices.back() == 0) {
      REQUIRE(out.path == ref);
      ++checked;
    }
    // once an index hits zero every earlier index is zero as well
    for (std::size_t t = 1; t < 6; ++t) {
      if (out.indices[t] == 0) REQUIRE(out.indices[t - 1] == 0);
    }
  }
  CHECK(checked > 100);

  // both chains forget the reference and settle on the uniform smoother
  std::vector<double> a, b;
  for (int r = 0; r < 2000; ++r) {
    Path pa = ref, pb = ref;
    for (int i = 0; i < 30; ++i) {
      pa = cpf_transition(m, pa, 3, rng).path;
      pb = cbpf_transition(m, pb, 3, rng).path;
    }
    a.push_back(pa[2]);
    b.push_back(pb[2]);
  }
  auto uniform = [](double x) { return std::clamp(x, 0.0, 1.0); };
  CHECK(teststats::ks_test(a, uniform) > 0.001);
  CHECK(teststats::ks_test(b, uniform) > 0.001);
  CHECK(teststats::ks_two_sample(a, b) > 0.001);
}

TEST_CASE("kernels leave the discrete smoother invariant") {
  const auto oracle_model = fixtures::three_state_hmm(5);
  const auto exact = discrete_forward_backward(oracle_model);
  CHECK(max_tv(fixtures::chain_marginals(oracle_model, cbpf_transition, 3, 100000, 11), exact.marginals) <
        0.01);
  CHECK(max_tv(fixtures::chain_marginals(oracle_model, cpf_transition, 3, 100000, 12), exact.marginals) <
        0.01);
  const auto pw = fixtures::pairwise_hmm(5);
  const auto exact_pw = discrete_forward_backward(pw);
  CHECK(max_tv(fixtures::chain_marginals(pw, marginal_cbpf_transition, 3, 100000, 13),
               exact_pw.marginals) < 0.01);

  const auto small = fixtures::three_state_hmm(4);
  CHECK(max_tv(fixtures::chain_marginals(small, cbpf_transition, 4, 100000, 14),
               discrete_forward_backward(small).marginals) < 0.01);
  const auto pw3 = fixtures::pairwise_hmm(3);
  CHECK(max_tv(fixtures::chain_marginals(pw3, marginal_cbpf_transition, 4, 100000, 15),
               discrete_forward_backward(pw3).marginals) < 0.01);
}

TEST_CASE("marginal CBPF with a unary pairwise table reduces to the CBPF") {
  const auto m = fixtures::unary_as_pairwise(4);
  const auto plain = fixtures::three_state_hmm(4);
  const Path ref = {0.0, 1.0, 2.0, 1.0};
  Rng r1(6), r2(6);
  const ParticleCloud a = marginal_forward(m, ref, 5, r1);
  const ParticleCloud b = cbpf_forward(plain, ref, 5, r2);
  CHECK(a.particles == b.particles);
  for (std::size_t k = 0; k < a.log_weights.size(); ++k) {
    CHECK(a.log_weights[k] == doctest::Approx(b.log_weights[k]).epsilon(1e-12));
  }

  Rng rng(7);
  std::vector<double> ca(81, 0.0), cb(81, 0.0);
  for (int i = 0; i < 100000; ++i) {
    ca[fixtures::path_code(marginal_cbpf_transition(m, ref, 3, rng).path, 3)] += 1;
    cb[fixtures::path_code(cbpf_transition(plain, ref, 3, rng).path, 3)] += 1;
  }
  CHECK(teststats::chi_square_two_sample(ca, cb) > 0.001);
}

TEST_CASE("marginal CBPF with one particle and one step") {
  const auto m = fixtures::pairwise_hmm(1);
  Rng rng(8);
  const Path ref = {2.0};
  std::vector<double> counts(3, 0.0), expected(3, 0.0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) counts[static_cast<std::size_t>(marginal_cbpf_transition(m, ref, 1, rng).path[0])] += 1;
  // the output is the reference (G = 0.5) or a prior draw x (G_x), weighted by G
  const std::vector<double> prior = {0.5, 0.3, 0.2}, g = {0.9, 0.3, 0.5};
  for (std::size_t x = 0; x < 3; ++x) {
    const double pick_new = g[x] / (g[x] + g[2]);
    expected[x] += n * prior[x] * pick_new;
    expected[2] += n * prior[x] * (1.0 - pick_new);
  }
  CHECK(teststats::chi_square_gof(counts, expected) > 0.001);
}

TEST_CASE("backward sampling is exchangeable in non-reference particles") {
  const BarriersModel m(0.3, 0.2, 0.1, 3);
  Rng rng(9);
  ParticleCloud cloud = cbpf_forward(m, std::vector<State>{0.1, 0.6, 0.3}, 4, rng);
  ParticleCloud permuted = cloud;
  const std::size_t last = 2;
  std::swap(permuted.states(last)[1], permuted.states(last)[4]);
  std::swap(permuted.weights(last)[1], permuted.weights(last)[4]);
  std::swap(permuted.states(last)[2], permuted.states(last)[3]);
  std::swap(permuted.weights(last)[2], permuted.weights(last)[3]);
  std::vector<double> ca(5, 0.0), cb(5, 0.0);
  auto slot = [&](State x) {
    for (std::size_t i = 0; i < 5; ++i) {
      if (cloud.states(last)[i] == x) return i;
    }
    return std::size_t{0};
  };
  for (int i = 0; i < 50000; ++i) {
    ca[slot(backward_sample(m, cloud, rng).path[last])] += 1;
    cb[slot(backward_sample(m, permuted, rng).path[last])] += 1;
  }
  CHECK(teststats::chi_square_two_sample(ca, cb) > 0.001);
}

TEST_CASE("kernels are deterministic given the seed") {
  const auto m = fixtures::pairwise_hmm(5);
  const BarriersModel bar(0.3, 0.2, 0.1, 20);
  const Path ref(20, 0.25);
  for (int rep = 0; rep < 2; ++rep) {
    Rng a(42), b(42);
    CHECK(cbpf_transition(bar, ref, 7, a).path == cbpf_transition(bar, ref, 7, b).path);
    CHECK(cpf_transition(bar, ref, 7, a).path == cpf_transition(bar, ref, 7, b).path);
    CHECK(particle_filter(bar, 7, a) == particle_filter(bar, 7, b));
    const Path dref(5, 1.0);
    CHECK(marginal_cbpf_transition(m, dref, 3, a).path == marginal_cbpf_transition(m, dref, 3, b).path);
  }
}

TEST_CASE("kernel errors") {
  const DeadEnd m;
  Rng rng(10);
  const Path ref(4, 0.5);
  CHECK_THROWS_WITH_AS(cbpf_transition(m, ref, 3, rng), doctest::Contains("t=2"), DegenerateWeights);
  CHECK_THROWS_WITH_AS(particle_filter(m, 3, rng), doctest::Contains("t=2"), DegenerateWeights);
  CHECK_THROWS_AS(cbpf_transition(m, ref, 0, rng), std::invalid_argument);
  CHECK_THROWS_AS(cbpf_transition(m, Path(3, 0.5), 3, rng), std::invalid_argument);
  CHECK_THROWS_AS(marginal_cbpf_transition(UniformModel(4), ref, 3, rng), std::invalid_argument);
}
