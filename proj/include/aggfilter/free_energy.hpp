#pragma once

#include <cstddef>
#include <vector>

#include "aggfilter/matrix.hpp"
#include "aggfilter/model.hpp"
#include "aggfilter/solver.hpp"

namespace aggfilter::free_energy {

/// Bethe free energy of a marginal set. Sample evidence is treated as a
/// discrete support of M atoms. Entries below 1e-300 count as zero
/// (0 log 0 = 0). Throws InvalidArgument on negative entries.
double evaluate(const AggregateMarginals& marginals, const HmmModel& model,
                const AggregateObservations& obs);

/// Largest absolute violation of each local-polytope family.
struct PolytopeResiduals {
  double simplex = 0.0;          // node, pair, obs and obs-node blocks sum to 1
  double pair_to_node = 0.0;     // pair rows -> n_t, pair columns -> n_{t+1}
  double obs_to_node = 0.0;      // sum_o obs(x, o) = n_t(x)
  double obs_to_obs_node = 0.0;  // sum_x obs(x, o) = obs_node(o)
  bool pass = false;

  double max() const;
};

PolytopeResiduals check_polytope(const AggregateMarginals& marginals, double tol);

/// Lagrange multipliers recovered from the messages (zero-mean gauge per t
/// over finite entries; +infinity where the matching product vanishes).
struct KktMultipliers {
  Matrix a;                        // exp(-a_t) ~ alpha_t beta_t
  std::vector<std::vector<double>> b;  // exp(-b_t) ~ w_t / xi_t
  Matrix c;                        // exp(-c_t) ~ beta_t gamma_t
  Matrix d;                        // exp(-d_t) ~ alpha_t gamma_t
};

/// Per-t deviations, each measured between sum-normalized vectors.
struct KktResiduals {
  std::vector<double> alpha_beta;      // exp(-a) vs alpha beta
  std::vector<double> beta_gamma;      // exp(-c) vs beta gamma
  std::vector<double> alpha_gamma;     // exp(-d) vs alpha gamma
  std::vector<double> evidence_ratio;  // exp(-b) vs w / xi
  std::vector<double> recursion;       // alpha, beta, xi, gamma rebuilt from the multipliers

  double max_alpha_beta() const;
  double max_beta_gamma() const;
  double max_alpha_gamma() const;
  double max_evidence_ratio() const;
  double max_recursion() const;
  double max() const;
};

struct KktReport {
  KktMultipliers multipliers;
  KktResiduals residuals;
};

KktReport kkt_residuals(const MessageSet& messages, const HmmModel& model,
                        const AggregateObservations& obs);

struct FreeEnergyReport {
  double value = 0.0;
  PolytopeResiduals constraints;
  KktResiduals kkt;
  double evidence_residual = 0.0;  // max_t ||obs_node_t - y_t||_1
};

FreeEnergyReport make_report(const SolveResult& result, const HmmModel& model,
                             const AggregateObservations& obs, double polytope_tol = 1e-6);

/// Size limits of brute_force_minimize.
inline constexpr std::size_t kOracleMaxStates = 3;
inline constexpr std::size_t kOracleMaxHorizon = 3;
inline constexpr std::size_t kOracleMaxSupport = 4;

/// Desk-scale reference minimizer of the free energy over the local
/// polytope with the evidence constraint, computed without message passing.
/// On a chain the Bethe energy of locally consistent marginals equals the
/// KL divergence of the corresponding Markov joint from the model, so the
/// minimizer is the I-projection of the model onto the evidence set. That
/// projection is found by Newton ascent on its concave dual
///   max_lambda  sum_t <w_t, lambda_t> - log Z(lambda)
/// with Z evaluated by enumerating all d^T state paths, from several
/// starting points, until the dual gradient (the evidence violation) has
/// infinity norm below tol. Refuses instances beyond the size limits.
AggregateMarginals brute_force_minimize(const HmmModel& model, const AggregateObservations& obs,
                                        double tol);

}  // namespace aggfilter::free_energy
