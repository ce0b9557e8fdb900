#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "aggfilter/matrix.hpp"
#include "aggfilter/model.hpp"
#include "aggfilter/rng.hpp"
#include "aggfilter/solver.hpp"

namespace testing {

using aggfilter::AggregateMarginals;
using aggfilter::AggregateObservations;
using aggfilter::HmmModel;
using aggfilter::Matrix;

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const AggregateMarginals& a, const AggregateMarginals& b) {
  double m = max_abs_diff(a.node, b.node);
  for (std::size_t t = 0; t < a.pair.size(); ++t) m = std::max(m, max_abs_diff(a.pair[t], b.pair[t]));
  return m;
}

// Plain density evaluation kept separate from the library.
inline double gaussian_density(const HmmModel& model, std::size_t x, const double* o) {
  const auto& g = std::get<aggfilter::GaussianEmission>(model.emission());
  double p = 1.0;
  for (std::size_t k = 0; k < g.means.cols(); ++k) {
    const double v = g.variances(x, k);
    const double z = o[k] - g.means(x, k);
    p *= std::exp(-0.5 * z * z / v) / std::sqrt(2.0 * std::numbers::pi * v);
  }
  return p;
}

inline double symbol_density(const HmmModel& model, std::size_t x, std::size_t o) {
  return std::get<aggfilter::DiscreteEmission>(model.emission()).table(x, o);
}

/// Exhaustive joint over every state path for one observation sequence,
/// given per-step emission densities lik (T x d). Returns node posteriors
/// and two-slice posteriors.
struct PathPosterior {
  Matrix node;
  std::vector<Matrix> pair;
};

inline PathPosterior enumerate_paths(const HmmModel& model, const Matrix& lik) {
  const std::size_t d = model.num_states();
  const std::size_t T = model.horizon();
  PathPosterior out{Matrix(T, d), std::vector<Matrix>(T > 0 ? T - 1 : 0, Matrix(d, d))};
  std::vector<std::size_t> path(T, 0);
  double total = 0.0;
  while (true) {
    double p = model.initial_dist()[path[0]] * lik(0, path[0]);
    for (std::size_t t = 1; t < T; ++t) p *= model.transition()(path[t - 1], path[t]) * lik(t, path[t]);
    total += p;
    for (std::size_t t = 0; t < T; ++t) out.node(t, path[t]) += p;
    for (std::size_t t = 0; t + 1 < T; ++t) out.pair[t](path[t], path[t + 1]) += p;
    std::size_t k = 0;
    while (k < T && ++path[k] == d) path[k++] = 0;
    if (k == T) break;
  }
  for (double& v : out.node.data()) v /= total;
  for (auto& m : out.pair)
    for (double& v : m.data()) v /= total;
  return out;
}

inline Matrix symbol_likelihoods(const HmmModel& model, const std::vector<std::size_t>& symbols) {
  Matrix lik(model.horizon(), model.num_states());
  for (std::size_t t = 0; t < model.horizon(); ++t)
    for (std::size_t x = 0; x < model.num_states(); ++x) lik(t, x) = symbol_density(model, x, symbols[t]);
  return lik;
}

inline Matrix point_likelihoods(const HmmModel& model, const Matrix& points) {
  Matrix lik(model.horizon(), model.num_states());
  for (std::size_t t = 0; t < model.horizon(); ++t)
    for (std::size_t x = 0; x < model.num_states(); ++x)
      lik(t, x) = gaussian_density(model, x, points.row(t).data());
  return lik;
}

/// Point-mass histograms for a single symbol sequence.
inline AggregateObservations point_mass_histograms(const HmmModel& model,
                                                   const std::vector<std::size_t>& symbols) {
  std::vector<std::vector<double>> y(symbols.size(), std::vector<double>(model.num_symbols(), 0.0));
  for (std::size_t t = 0; t < symbols.size(); ++t) y[t][symbols[t]] = 1.0;
  return AggregateObservations::histograms(y);
}

/// One point per step as a population of one.
inline AggregateObservations single_samples(const Matrix& points) {
  std::vector<Matrix> s;
  for (std::size_t t = 0; t < points.rows(); ++t) {
    Matrix m(1, points.cols());
    for (std::size_t k = 0; k < points.cols(); ++k) m(0, k) = points(t, k);
    s.push_back(m);
  }
  return AggregateObservations::samples(s);
}

inline Matrix trajectory_points(const aggfilter::TrajectoryBatch& batch, std::size_t m) {
  Matrix p(batch.horizon(), batch.obs_dim());
  for (std::size_t t = 0; t < batch.horizon(); ++t) {
    auto o = batch.point(m, t);
    std::copy(o.begin(), o.end(), p.row(t).begin());
  }
  return p;
}

inline std::vector<std::size_t> trajectory_symbols(const aggfilter::TrajectoryBatch& batch, std::size_t m) {
  std::vector<std::size_t> s(batch.horizon());
  for (std::size_t t = 0; t < batch.horizon(); ++t) s[t] = batch.symbol(m, t);
  return s;
}

/// Closed-form mixture posterior written out term by term:
/// n(x) = pi(x) * sum_o p(o|x) / sum_x' pi(x') p(o|x'), then normalized.
inline std::vector<double> mixture_posterior_by_formula(const HmmModel& model, const Matrix& samples) {
  const std::size_t d = model.num_states();
  std::vector<double> n(d, 0.0);
  for (std::size_t x = 0; x < d; ++x) {
    double acc = 0.0;
    for (std::size_t s = 0; s < samples.rows(); ++s) {
      double denom = 0.0;
      for (std::size_t z = 0; z < d; ++z) denom += model.initial_dist()[z] * gaussian_density(model, z, samples.row(s).data());
      acc += gaussian_density(model, x, samples.row(s).data()) / denom;
    }
    n[x] = model.initial_dist()[x] * acc;
  }
  double total = 0.0;
  for (double v : n) total += v;
  for (double& v : n) v /= total;
  return n;
}

inline double xlogx(double v) { return v > 1e-300 ? v * std::log(v) : 0.0; }
inline double xlogy(double v, double p) { return v > 1e-300 ? v * std::log(p) : 0.0; }

/// Free energy of a two-step discrete chain spelled out term by term:
///   - sum obs log p(o|x) - sum pair log P - sum n_1 log pi
///   + sum obs log obs + sum pair log pair - sum n_1 log n_1 - sum n_2 log n_2
inline double two_step_energy_by_terms(const AggregateMarginals& n, const HmmModel& model) {
  const std::size_t d = model.num_states();
  const std::size_t K = model.num_symbols();
  double f = 0.0;
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t x = 0; x < d; ++x)
      for (std::size_t o = 0; o < K; ++o) {
        f -= xlogy(n.obs[t](x, o), symbol_density(model, x, o));
        f += xlogx(n.obs[t](x, o));
      }
  for (std::size_t x = 0; x < d; ++x)
    for (std::size_t z = 0; z < d; ++z) {
      f -= xlogy(n.pair[0](x, z), model.transition()(x, z));
      f += xlogx(n.pair[0](x, z));
    }
  for (std::size_t x = 0; x < d; ++x) {
    f -= xlogy(n.node(0, x), model.initial_dist()[x]);
    f -= xlogx(n.node(0, x));
    f -= xlogx(n.node(1, x));
  }
  return f;
}

/// Random probability vector from normalized exponentials.
inline std::vector<double> random_simplex(aggfilter::Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  double s = 0.0;
  for (double& x : v) s += (x = rng.exponential());
  for (double& x : v) x /= s;
  return v;
}

}  // namespace testing
