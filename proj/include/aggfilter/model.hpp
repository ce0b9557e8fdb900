#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "aggfilter/matrix.hpp"

namespace aggfilter {

/// Emission over K symbols; row x is p(. | x).
struct DiscreteEmission {
  Matrix table;  // d x K
};

/// Per-state Gaussian with diagonal covariance.
struct GaussianEmission {
  Matrix means;      // d x obs_dim
  Matrix variances;  // d x obs_dim, strictly positive
};

using EmissionModel = std::variant<DiscreteEmission, GaussianEmission>;

/// Time-homogeneous HMM over d states and horizon T. Validated on
/// construction and immutable afterwards.
class HmmModel {
 public:
  HmmModel(std::vector<double> initial_dist, Matrix transition, EmissionModel emission,
           std::size_t horizon);

  std::size_t num_states() const { return initial_.size(); }
  std::size_t horizon() const { return horizon_; }
  const std::vector<double>& initial_dist() const { return initial_; }
  const Matrix& transition() const { return transition_; }
  const EmissionModel& emission() const { return emission_; }

  bool is_discrete() const { return std::holds_alternative<DiscreteEmission>(emission_); }
  /// K for discrete emissions, 0 otherwise.
  std::size_t num_symbols() const;
  /// Observation dimension for Gaussian emissions, 0 for discrete.
  std::size_t obs_dim() const;

  HmmModel with_horizon(std::size_t horizon) const;

 private:
  std::vector<double> initial_;
  Matrix transition_;
  EmissionModel emission_;
  std::size_t horizon_;
};

/// M sampled trajectories. Observations are symbols (discrete) or points
/// (continuous); only the matching storage is populated.
class TrajectoryBatch {
 public:
  TrajectoryBatch(std::size_t population, std::size_t horizon, std::vector<std::size_t> states,
                  std::vector<std::size_t> symbols);
  TrajectoryBatch(std::size_t population, std::size_t horizon, std::size_t obs_dim,
                  std::vector<std::size_t> states, std::vector<double> points);

  std::size_t population() const { return population_; }
  std::size_t horizon() const { return horizon_; }
  bool is_discrete() const { return obs_dim_ == 0; }
  std::size_t obs_dim() const { return obs_dim_; }

  std::size_t state(std::size_t m, std::size_t t) const { return states_[m * horizon_ + t]; }
  std::size_t symbol(std::size_t m, std::size_t t) const { return symbols_[m * horizon_ + t]; }
  std::span<const double> point(std::size_t m, std::size_t t) const {
    return {points_.data() + (m * horizon_ + t) * obs_dim_, obs_dim_};
  }

  const std::vector<std::size_t>& states() const { return states_; }
  const std::vector<std::size_t>& symbols() const { return symbols_; }
  const std::vector<double>& points() const { return points_; }

  /// Checks index ranges and shapes against a model.
  void check_against(const HmmModel& model) const;

  /// Reorders trajectories; order[i] names the source trajectory of row i.
  TrajectoryBatch permuted(std::span<const std::size_t> order) const;

 private:
  std::size_t population_;
  std::size_t horizon_;
  std::size_t obs_dim_;
  std::vector<std::size_t> states_;
  std::vector<std::size_t> symbols_;
  std::vector<double> points_;
};

enum class ObservationKind { Histogram, Samples };

/// Population-level evidence per timestep: a normalized histogram over
/// symbols, or an unordered list of M points.
class AggregateObservations {
 public:
  static AggregateObservations histograms(std::vector<std::vector<double>> y);
  static AggregateObservations samples(std::vector<Matrix> points);

  ObservationKind kind() const { return kind_; }
  std::size_t horizon() const { return kind_ == ObservationKind::Histogram ? y_.size() : points_.size(); }
  /// K for histograms, M for samples.
  std::size_t support_size() const;

  const std::vector<double>& histogram(std::size_t t) const { return y_[t]; }
  /// M x obs_dim points at timestep t.
  const Matrix& samples_at(std::size_t t) const { return points_[t]; }

  /// Weight of support point s at t: y_t(s), or 1/M per sample.
  double weight(std::size_t t, std::size_t s) const;

  void check_against(const HmmModel& model) const;

 private:
  ObservationKind kind_ = ObservationKind::Histogram;
  std::vector<std::vector<double>> y_;
  std::vector<Matrix> points_;
};

/// Population statistics normalized by M, over the local polytope.
struct AggregateMarginals {
  Matrix node;                                // T x d
  std::vector<Matrix> pair;                   // T-1 blocks, d x d
  std::vector<Matrix> obs;                    // T blocks, d x S
  std::vector<std::vector<double>> obs_node;  // T x S
};

/// Random Gaussian-emission model: simplex-uniform initial distribution,
/// permuted perturbed-identity transition, means ~ U[-5d, 5d], variances ~ U[1, 5].
HmmModel generate_random_model(std::size_t d, std::size_t horizon, std::size_t obs_dim,
                               std::uint64_t seed);

/// Same initial/transition recipe with a d x K emission table whose rows are
/// simplex-uniform.
HmmModel generate_random_discrete_model(std::size_t d, std::size_t horizon, std::size_t num_symbols,
                                        std::uint64_t seed);

TrajectoryBatch sample_trajectories(const HmmModel& model, std::size_t population,
                                    std::uint64_t seed);

/// Empirical node/pair/observation statistics of the batch divided by M.
/// For continuous batches the observation support at t is the sample list
/// produced by extract_observations (same canonical order).
AggregateMarginals aggregate_counts(const TrajectoryBatch& batch, const HmmModel& model);

/// Drops trajectory identities: histograms for symbols, canonically sorted
/// sample lists for points.
AggregateObservations extract_observations(const TrajectoryBatch& batch, const HmmModel& model);

/// log p(o | x). A zero table entry yields -infinity.
double log_emission(const HmmModel& model, std::size_t state, std::size_t symbol);
double log_emission(const HmmModel& model, std::size_t state, std::span<const double> point);

/// Sorting permutation that puts the sample rows of `points` in lexicographic
/// order. Used wherever a canonical summation order over samples is needed.
std::vector<std::size_t> canonical_sample_order(const Matrix& points);

}  // namespace aggfilter
