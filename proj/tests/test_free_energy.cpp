#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "aggfilter/errors.hpp"
#include "aggfilter/free_energy.hpp"
#include "aggfilter/model.hpp"
#include "aggfilter/rng.hpp"
#include "aggfilter/solver.hpp"
#include "support.hpp"

using namespace aggfilter;
using testing::max_abs_diff;

namespace {

const SolverConfig tight{1e-12, 20000, 1e-300};

// Consistent two-step marginals over d=2 states and K=2 symbols, drawn at random.
AggregateMarginals random_two_step_marginals(Rng& rng) {
  AggregateMarginals n;
  n.pair.push_back(Matrix(2, 2));
  const auto p = testing::random_simplex(rng, 4);
  std::copy(p.begin(), p.end(), n.pair[0].data().begin());
  n.node = Matrix(2, 2);
  for (std::size_t x = 0; x < 2; ++x)
    for (std::size_t z = 0; z < 2; ++z) {
      n.node(0, x) += n.pair[0](x, z);
      n.node(1, z) += n.pair[0](x, z);
    }
  for (std::size_t t = 0; t < 2; ++t) {
    Matrix o(2, 2);
    std::vector<double> col(2, 0.0);
    for (std::size_t x = 0; x < 2; ++x) {
      const auto q = testing::random_simplex(rng, 2);
      for (std::size_t k = 0; k < 2; ++k) col[k] += o(x, k) = n.node(t, x) * q[k];
    }
    n.obs.push_back(o);
    n.obs_node.push_back(col);
  }
  return n;
}

AggregateObservations random_histograms(Rng& rng, std::size_t T, std::size_t K) {
  std::vector<std::vector<double>> y;
  for (std::size_t t = 0; t < T; ++t) y.push_back(testing::random_simplex(rng, K));
  return AggregateObservations::histograms(y);
}

}  // namespace

TEST_CASE("point mass on a certain state has zero free energy") {
  const HmmModel m({1.0, 0.0}, Matrix(2, 2, 0.5), DiscreteEmission{Matrix(2, 1, 1.0)}, 1);
  const auto obs = AggregateObservations::histograms({{1.0}});
  AggregateMarginals n;
  n.node = Matrix(1, 2);
  n.node(0, 0) = 1.0;
  n.obs.push_back(Matrix(2, 1));
  n.obs[0](0, 0) = 1.0;
  n.obs_node.push_back({1.0});
  CHECK(free_energy::evaluate(n, m, obs) == 0.0);
}

TEST_CASE("free energy agrees with an independent term-by-term evaluation") {
  Rng rng(31);
  for (int trial = 0; trial < 25; ++trial) {
    const auto m = generate_random_discrete_model(2, 2, 2, 100 + trial);
    const auto n = random_two_step_marginals(rng);
    const auto obs = random_histograms(rng, 2, 2);
    CHECK(std::abs(free_energy::evaluate(n, m, obs) - testing::two_step_energy_by_terms(n, m)) < 1e-12);
  }
}

TEST_CASE("free energy is invariant to relabeling samples together with their columns") {
  const auto m = generate_random_model(3, 3, 1, 4);
  const auto obs = extract_observations(sample_trajectories(m, 6, 4), m);
  const auto r = co_cfb(m, obs);
  const double f = free_energy::evaluate(r.marginals, m, obs);

  Rng rng(8);
  std::vector<Matrix> pts;
  AggregateMarginals n = r.marginals;
  for (std::size_t t = 0; t < 3; ++t) {
    const auto perm = rng.permutation(6);
    Matrix s(6, 1);
    for (std::size_t i = 0; i < 6; ++i) {
      s(i, 0) = obs.samples_at(t)(perm[i], 0);
      n.obs_node[t][i] = r.marginals.obs_node[t][perm[i]];
      for (std::size_t x = 0; x < 3; ++x) n.obs[t](x, i) = r.marginals.obs[t](x, perm[i]);
    }
    pts.push_back(s);
  }
  CHECK(std::abs(free_energy::evaluate(n, m, AggregateObservations::samples(pts)) - f) < 1e-12);
}

TEST_CASE("free energy rejects negative entries") {
  Rng rng(1);
  const auto m = generate_random_discrete_model(2, 2, 2, 1);
  auto n = random_two_step_marginals(rng);
  n.pair[0](0, 1) = -0.1;
  CHECK_THROWS_AS(free_energy::evaluate(n, m, random_histograms(rng, 2, 2)), InvalidArgument);
}

TEST_CASE("solver output has lower free energy than the uniform feasible point") {
  // Uniform node and pair blocks with obs(x, o) = y(o) / d satisfy every
  // polytope and evidence constraint, so the minimizer cannot do worse.
  Rng rng(55);
  int lowered = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = generate_random_discrete_model(2, 2, 2, 3000 + trial);
    const auto obs = random_histograms(rng, 2, 2);
    AggregateMarginals start;
    start.node = Matrix(2, 2, 0.5);
    start.pair.push_back(Matrix(2, 2, 0.25));
    for (std::size_t t = 0; t < 2; ++t) {
      Matrix o(2, 2);
      for (std::size_t x = 0; x < 2; ++x)
        for (std::size_t k = 0; k < 2; ++k) o(x, k) = obs.histogram(t)[k] / 2.0;
      start.obs.push_back(o);
      start.obs_node.push_back(obs.histogram(t));
    }
    REQUIRE(free_energy::check_polytope(start, 1e-15).pass);
    const auto r = cfb_discrete(m, obs);
    if (free_energy::evaluate(r.marginals, m, obs) <= free_energy::evaluate(start, m, obs) + 1e-12) ++lowered;
  }
  CHECK(lowered >= 95);
}

TEST_CASE("polytope check on counts and perturbed counts") {
  const auto m = generate_random_discrete_model(3, 4, 3, 6);
  auto n = aggregate_counts(sample_trajectories(m, 40, 6), m);
  const auto clean = free_energy::check_polytope(n, 1e-12);
  CHECK(clean.pass);
  CHECK(clean.max() < 1e-12);
  n.pair[1](0, 2) += 0.01;
  const auto bad = free_energy::check_polytope(n, 1e-12);
  CHECK_FALSE(bad.pass);
  CHECK(bad.pair_to_node >= 0.01 - 1e-15);
}

TEST_CASE("converged continuous solve lies in the polytope") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto m = generate_random_model(4, 5, 1, seed);
    const auto obs = extract_observations(sample_trajectories(m, 100, seed), m);
    const auto r = co_cfb(m, obs, tight);
    REQUIRE(r.converged);
    const auto res = free_energy::check_polytope(r.marginals, 1e-6);
    CHECK(res.pass);
  }
}

TEST_CASE("stationarity residuals vanish at convergence") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto m = generate_random_discrete_model(3, 4, 3, seed);
    const auto obs = extract_observations(sample_trajectories(m, 30, seed), m);
    const auto r = cfb_discrete(m, obs, tight);
    REQUIRE(r.converged);
    const auto rep = free_energy::kkt_residuals(r.messages, m, obs);
    CHECK(rep.residuals.max() < 1e-6);
  }
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = 2 + rng.index(4);
    const std::size_t T = 1 + rng.index(6);
    const auto m = generate_random_model(d, T, 1, 40 + trial);
    const auto obs = extract_observations(sample_trajectories(m, 5 + rng.index(50), trial), m);
    const auto r = co_cfb(m, obs, tight);
    REQUIRE(r.converged);
    const auto rep = free_energy::kkt_residuals(r.messages, m, obs);
    CHECK(rep.residuals.max_alpha_beta() < 1e-6);
    CHECK(rep.residuals.max_beta_gamma() < 1e-6);
    CHECK(rep.residuals.max_alpha_gamma() < 1e-6);
    CHECK(rep.residuals.max_evidence_ratio() < 1e-6);
    CHECK(rep.residuals.max_recursion() < 1e-6);
  }
}

TEST_CASE("stationarity residuals flag the initial messages") {
  int flagged = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto m = generate_random_model(3, 4, 1, seed);
    const auto obs = extract_observations(sample_trajectories(m, 20, seed), m);
    CollectiveFilter f(m, obs);
    f.initialize();
    if (free_energy::kkt_residuals(f.messages(), m, obs).residuals.max_recursion() >= 1e-2) ++flagged;
  }
  CHECK(flagged >= 8);
}

TEST_CASE("single trajectory evidence ratio matches the point-mass weight") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto m = generate_random_discrete_model(3, 4, 3, seed + 10);
    const auto sym = testing::trajectory_symbols(sample_trajectories(m, 1, seed), 0);
    const auto obs = testing::point_mass_histograms(m, sym);
    const auto r = cfb_discrete(m, obs);
    CHECK(free_energy::kkt_residuals(r.messages, m, obs).residuals.max_evidence_ratio() < 1e-8);
  }
}

TEST_CASE("multipliers use a zero-mean gauge") {
  const auto m = generate_random_model(3, 3, 1, 2);
  const auto obs = extract_observations(sample_trajectories(m, 10, 2), m);
  const auto rep = free_energy::kkt_residuals(co_cfb(m, obs).messages, m, obs);
  for (std::size_t t = 0; t < 3; ++t) {
    double s = 0.0;
    for (double v : rep.multipliers.a.row(t)) s += v;
    CHECK(std::abs(s) < 1e-10);
  }
}

TEST_CASE("reference minimizer agrees with the collective filter") {
  Rng rng(90);
  for (int trial = 0; trial < 5; ++trial) {
    const auto m = generate_random_discrete_model(2, 2, 2, 700 + trial);
    const auto obs = random_histograms(rng, 2, 2);
    const auto ref = free_energy::brute_force_minimize(m, obs, 1e-10);
    const auto r = cfb_discrete(m, obs, SolverConfig{1e-12, 5000, 1e-300});
    CHECK(std::abs(free_energy::evaluate(ref, m, obs) - free_energy::evaluate(r.marginals, m, obs)) < 1e-4);
    CHECK(max_abs_diff(ref, r.marginals) < 1e-4);
    for (std::size_t t = 0; t < 2; ++t) CHECK(max_abs_diff(ref.obs_node[t], obs.histogram(t)) < 1e-8);
  }
}

TEST_CASE("reference minimizer with point-mass evidence is the Bayesian posterior") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto m = generate_random_discrete_model(2, 2, 3, seed + 5);
    const auto sym = testing::trajectory_symbols(sample_trajectories(m, 1, seed), 0);
    const auto ref = free_energy::brute_force_minimize(m, testing::point_mass_histograms(m, sym), 1e-10);
    CHECK(max_abs_diff(ref.node, forward_backward(m, sym)) < 1e-3);
  }
}

TEST_CASE("reference minimizer handles sample evidence") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto m = generate_random_model(3, 3, 1, seed + 20);
    const auto obs = extract_observations(sample_trajectories(m, 4, seed), m);
    const auto ref = free_energy::brute_force_minimize(m, obs, 1e-10);
    const auto r = co_cfb(m, obs, SolverConfig{1e-12, 5000, 1e-300});
    CHECK(max_abs_diff(ref, r.marginals) < 1e-4);
    for (std::size_t t = 0; t < 3; ++t)
      for (double v : ref.obs_node[t]) CHECK(std::abs(v - 0.25) < 1e-8);
  }
}

TEST_CASE("reference minimizer refuses large instances") {
  Rng rng(1);
  const auto big = generate_random_discrete_model(4, 2, 2, 0);
  CHECK_THROWS_AS(free_energy::brute_force_minimize(big, random_histograms(rng, 2, 2), 1e-8), InvalidArgument);
  const auto wide = generate_random_discrete_model(2, 2, 5, 0);
  CHECK_THROWS_AS(free_energy::brute_force_minimize(wide, random_histograms(rng, 2, 5), 1e-8), InvalidArgument);
  const auto longer = generate_random_discrete_model(2, 4, 2, 0);
  CHECK_THROWS_AS(free_energy::brute_force_minimize(longer, random_histograms(rng, 4, 2), 1e-8), InvalidArgument);
}

TEST_CASE("report bundles value, constraints and stationarity") {
  const auto m = generate_random_model(3, 4, 1, 9);
  const auto obs = extract_observations(sample_trajectories(m, 15, 9), m);
  const auto r = co_cfb(m, obs, tight);
  const auto rep = free_energy::make_report(r, m, obs);
  CHECK(rep.value == free_energy::evaluate(r.marginals, m, obs));
  CHECK(rep.constraints.pass);
  CHECK(rep.evidence_residual < 1e-12);
  CHECK(rep.kkt.max() < 1e-6);
}
