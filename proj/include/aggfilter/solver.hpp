#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "aggfilter/matrix.hpp"
#include "aggfilter/model.hpp"

namespace aggfilter {

struct SolverConfig {
  double tol = 1e-5;
  std::size_t max_sweeps = 500;
  /// Lower clamp on xi before it is used as a divisor.
  double density_floor = 1e-300;

  void validate() const;
};

/// Messages of the collective forward-backward fixed point. Every stored
/// row is rescaled so that its largest entry is 1.
///
/// xi is kept per support point relative to that point's largest emission
/// density: log xi_t(s) = log(xi[t][s]) + xi_log_scale[t][s] up to one
/// constant per t.
struct MessageSet {
  Matrix alpha;  // T x d
  Matrix beta;   // T x d
  Matrix gamma;  // T x d
  std::vector<std::vector<double>> xi;            // T x S
  std::vector<std::vector<double>> xi_log_scale;  // T x S
};

struct SolveResult {
  AggregateMarginals marginals;
  MessageSet messages;
  std::size_t sweeps = 0;
  bool converged = false;
  double final_delta = 0.0;
  std::vector<double> per_sweep_delta;
  std::size_t floor_hits = 0;
};

/// Emission densities of every support point, evaluated once per solve.
/// Column s at time t holds p(o_s | x) / max_x p(o_s | x); the dropped
/// factor is kept in log_scale. Rescaling a column leaves every collective
/// update unchanged because xi_t(s) carries the same factor.
class EvidenceTable {
 public:
  EvidenceTable(const HmmModel& model, const AggregateObservations& obs);

  std::size_t horizon() const { return likelihood_.size(); }
  std::size_t num_states() const { return num_states_; }
  std::size_t support_size() const { return support_; }

  const Matrix& likelihood(std::size_t t) const { return likelihood_[t]; }
  const std::vector<double>& log_scale(std::size_t t) const { return log_scale_[t]; }
  const std::vector<double>& weights(std::size_t t) const { return weights_[t]; }
  /// Fixed summation order over the support (lexicographic for samples).
  const std::vector<std::size_t>& order(std::size_t t) const { return order_[t]; }

  /// log p(o_s | x), -infinity where the density is zero.
  double log_likelihood(std::size_t t, std::size_t x, std::size_t s) const;

 private:
  std::size_t num_states_;
  std::size_t support_;
  std::vector<Matrix> likelihood_;
  std::vector<std::vector<double>> log_scale_;
  std::vector<std::vector<double>> weights_;
  std::vector<std::vector<std::size_t>> order_;
};

using SweepObserver = std::function<void(std::size_t sweep, const Matrix& node)>;

/// Fixed-point iteration for the collective forward-backward messages. One
/// sweep is a forward pass (gamma_{t-1}, then alpha_t and xi_t for t=2..T)
/// followed by a backward pass (gamma_{t+1}, then beta_t and xi_t for
/// t=T-1..1). With T=1 a sweep is the single gamma_1 update.
class CollectiveFilter {
 public:
  CollectiveFilter(const HmmModel& model, const AggregateObservations& obs, SolverConfig config = {});

  /// gamma = beta = 1, alpha_1 = pi, alpha_t from one plain forward pass.
  void initialize();
  /// Resume from previously computed messages.
  void load(MessageSet messages);

  /// Runs one sweep and returns max_t ||n_t - n_t^prev||_1.
  double sweep();

  /// Iterates from the current messages (initializing first if needed).
  SolveResult run(const SweepObserver& observer = {});

  const MessageSet& messages() const { return msgs_; }
  Matrix node_marginals() const;
  std::size_t floor_hits() const { return floor_hits_; }
  const EvidenceTable& evidence() const { return evidence_; }

 private:
  void update_alpha(std::size_t t);
  void update_beta(std::size_t t);
  void update_gamma(std::size_t t);
  void update_xi(std::size_t t);

  HmmModel model_;
  EvidenceTable evidence_;
  SolverConfig config_;
  MessageSet msgs_;
  Matrix last_node_;
  bool ready_ = false;
  std::size_t floor_hits_ = 0;
};

/// Smoothed posteriors p(X_t | o_{1:T}) from per-step log-likelihoods
/// (T x d). Throws InfeasibleEvidence if a step has zero likelihood.
Matrix forward_backward_loglik(const HmmModel& model, const Matrix& log_likelihood);
Matrix forward_backward(const HmmModel& model, std::span<const std::size_t> symbols);
/// points is T x obs_dim.
Matrix forward_backward(const HmmModel& model, const Matrix& points);
/// Posterior for trajectory m of a batch.
Matrix forward_backward(const HmmModel& model, const TrajectoryBatch& batch, std::size_t m);

SolveResult cfb_discrete(const HmmModel& model, const AggregateObservations& obs,
                         const SolverConfig& config = {}, const SweepObserver& observer = {});
SolveResult co_cfb(const HmmModel& model, const AggregateObservations& obs,
                   const SolverConfig& config = {}, const SweepObserver& observer = {});

/// Aggregate GMM posterior for T = 1:
/// n(x) proportional to pi(x) sum_o p(o|x) / sum_x' p(o|x') pi(x').
std::vector<double> gmm_posterior(const HmmModel& model, const Matrix& samples);

/// Node, pair and observation marginals implied by a message set.
AggregateMarginals compute_marginals(const MessageSet& messages, const HmmModel& model,
                                     const AggregateObservations& obs);
AggregateMarginals compute_marginals(const MessageSet& messages, const HmmModel& model,
                                     const EvidenceTable& evidence, double density_floor = 1e-300);

/// sum_t ||n_t - n*_t||_1 over node marginals.
double l1_error(const AggregateMarginals& est, const AggregateMarginals& truth);
double l1_error(const Matrix& est_node, const Matrix& truth_node);

/// Recasts sample evidence as a discrete problem over the observed points:
/// one symbol per (t, sample) plus a trailing slack symbol, with emission
/// entries proportional to the densities and uniform histograms on each
/// timestep's own samples.
std::pair<HmmModel, AggregateObservations> sample_support_restriction(
    const HmmModel& model, const AggregateObservations& samples);

}  // namespace aggfilter
