#include "aggfilter/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "aggfilter/errors.hpp"
#include "aggfilter/rng.hpp"

namespace aggfilter {

using detail::require;

namespace {

constexpr double kStochasticTol = 1e-12;

void check_distribution(std::span<const double> p, const std::string& what) {
  for (double v : p) require(std::isfinite(v) && v >= 0.0, what + " has a negative or non-finite entry");
  require(std::abs(sum(p) - 1.0) <= kStochasticTol, what + " does not sum to 1");
}

std::vector<double> simplex_uniform(std::size_t n, Rng& rng) {
  std::vector<double> p(n);
  for (double& v : p) v = rng.exponential();
  normalize_sum(p);
  return p;
}

// Rows of I + 0.05 sqrt(d) exp(U), U ~ U[-1,1] entrywise, permuted by one
// random permutation and then row-normalized.
Matrix perturbed_identity_transition(std::size_t d, Rng& rng) {
  Matrix w(d, d);
  const double scale = 0.05 * std::sqrt(static_cast<double>(d));
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      w(i, j) = (i == j ? 1.0 : 0.0) + scale * std::exp(rng.uniform(-1.0, 1.0));
  const auto perm = rng.permutation(d);
  Matrix p(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    auto src = w.row(perm[i]);
    std::copy(src.begin(), src.end(), p.row(i).begin());
    normalize_sum(p.row(i));
  }
  return p;
}

Matrix points_at(const TrajectoryBatch& batch, std::size_t t) {
  Matrix pts(batch.population(), batch.obs_dim());
  for (std::size_t m = 0; m < batch.population(); ++m) {
    auto p = batch.point(m, t);
    std::copy(p.begin(), p.end(), pts.row(m).begin());
  }
  return pts;
}

}  // namespace

HmmModel::HmmModel(std::vector<double> initial_dist, Matrix transition, EmissionModel emission,
                   std::size_t horizon)
    : initial_(std::move(initial_dist)),
      transition_(std::move(transition)),
      emission_(std::move(emission)),
      horizon_(horizon) {
  const std::size_t d = initial_.size();
  require(d >= 1, "model needs at least one state");
  require(horizon_ >= 1, "horizon must be at least 1");
  check_distribution(initial_, "initial distribution");
  require(transition_.rows() == d && transition_.cols() == d, "transition must be d x d");
  for (std::size_t i = 0; i < d; ++i)
    check_distribution(transition_.row(i), "transition row " + std::to_string(i));

  if (const auto* disc = std::get_if<DiscreteEmission>(&emission_)) {
    require(disc->table.rows() == d && disc->table.cols() >= 1, "emission table must be d x K");
    for (std::size_t i = 0; i < d; ++i)
      check_distribution(disc->table.row(i), "emission row " + std::to_string(i));
  } else {
    const auto& g = std::get<GaussianEmission>(emission_);
    require(g.means.rows() == d && g.means.cols() >= 1, "means must be d x obs_dim");
    require(g.variances.rows() == d && g.variances.cols() == g.means.cols(),
            "variances must match means");
    for (double v : g.means.data()) require(std::isfinite(v), "non-finite mean");
    for (double v : g.variances.data())
      require(std::isfinite(v) && v > 0.0, "variances must be strictly positive");
  }
}

std::size_t HmmModel::num_symbols() const {
  if (const auto* disc = std::get_if<DiscreteEmission>(&emission_)) return disc->table.cols();
  return 0;
}

std::size_t HmmModel::obs_dim() const {
  if (const auto* g = std::get_if<GaussianEmission>(&emission_)) return g->means.cols();
  return 0;
}

HmmModel HmmModel::with_horizon(std::size_t horizon) const {
  return HmmModel(initial_, transition_, emission_, horizon);
}

TrajectoryBatch::TrajectoryBatch(std::size_t population, std::size_t horizon,
                                 std::vector<std::size_t> states, std::vector<std::size_t> symbols)
    : population_(population),
      horizon_(horizon),
      obs_dim_(0),
      states_(std::move(states)),
      symbols_(std::move(symbols)) {
  require(population_ >= 1 && horizon_ >= 1, "batch must be non-empty");
  require(states_.size() == population_ * horizon_, "states must be M x T");
  require(symbols_.size() == population_ * horizon_, "symbols must be M x T");
}

TrajectoryBatch::TrajectoryBatch(std::size_t population, std::size_t horizon, std::size_t obs_dim,
                                 std::vector<std::size_t> states, std::vector<double> points)
    : population_(population),
      horizon_(horizon),
      obs_dim_(obs_dim),
      states_(std::move(states)),
      points_(std::move(points)) {
  require(population_ >= 1 && horizon_ >= 1, "batch must be non-empty");
  require(obs_dim_ >= 1, "continuous batch needs obs_dim >= 1");
  require(states_.size() == population_ * horizon_, "states must be M x T");
  require(points_.size() == population_ * horizon_ * obs_dim_, "points must be M x T x obs_dim");
}

void TrajectoryBatch::check_against(const HmmModel& model) const {
  require(horizon_ == model.horizon(), "batch horizon does not match model");
  require(is_discrete() == model.is_discrete(), "batch and model emission kinds differ");
  for (auto s : states_) require(s < model.num_states(), "state index out of range");
  if (is_discrete()) {
    for (auto o : symbols_) require(o < model.num_symbols(), "observation symbol out of range");
  } else {
    require(obs_dim_ == model.obs_dim(), "batch obs_dim does not match model");
  }
}

TrajectoryBatch TrajectoryBatch::permuted(std::span<const std::size_t> order) const {
  require(order.size() == population_, "permutation length must equal M");
  std::vector<std::size_t> states(states_.size());
  for (std::size_t i = 0; i < population_; ++i)
    std::copy_n(states_.begin() + order[i] * horizon_, horizon_, states.begin() + i * horizon_);
  if (is_discrete()) {
    std::vector<std::size_t> symbols(symbols_.size());
    for (std::size_t i = 0; i < population_; ++i)
      std::copy_n(symbols_.begin() + order[i] * horizon_, horizon_, symbols.begin() + i * horizon_);
    return TrajectoryBatch(population_, horizon_, std::move(states), std::move(symbols));
  }
  const std::size_t stride = horizon_ * obs_dim_;
  std::vector<double> points(points_.size());
  for (std::size_t i = 0; i < population_; ++i)
    std::copy_n(points_.begin() + order[i] * stride, stride, points.begin() + i * stride);
  return TrajectoryBatch(population_, horizon_, obs_dim_, std::move(states), std::move(points));
}

AggregateObservations AggregateObservations::histograms(std::vector<std::vector<double>> y) {
  require(!y.empty(), "observations need T >= 1");
  const std::size_t k = y.front().size();
  require(k >= 1, "histogram needs at least one symbol");
  for (const auto& row : y) {
    require(row.size() == k, "histograms must share one symbol count");
    check_distribution(row, "histogram");
  }
  AggregateObservations obs;
  obs.kind_ = ObservationKind::Histogram;
  obs.y_ = std::move(y);
  return obs;
}

AggregateObservations AggregateObservations::samples(std::vector<Matrix> points) {
  require(!points.empty(), "observations need T >= 1");
  const std::size_t m = points.front().rows();
  const std::size_t dim = points.front().cols();
  require(m >= 1 && dim >= 1, "sample lists must be non-empty");
  for (const auto& p : points) {
    require(p.rows() == m, "all sample lists must have the same length M");
    require(p.cols() == dim, "all samples must share one dimension");
    for (double v : p.data()) require(std::isfinite(v), "non-finite sample");
  }
  AggregateObservations obs;
  obs.kind_ = ObservationKind::Samples;
  obs.points_ = std::move(points);
  return obs;
}

std::size_t AggregateObservations::support_size() const {
  return kind_ == ObservationKind::Histogram ? y_.front().size() : points_.front().rows();
}

double AggregateObservations::weight(std::size_t t, std::size_t s) const {
  if (kind_ == ObservationKind::Histogram) return y_[t][s];
  return 1.0 / static_cast<double>(points_[t].rows());
}

void AggregateObservations::check_against(const HmmModel& model) const {
  require(horizon() == model.horizon(), "observation horizon does not match model");
  if (kind_ == ObservationKind::Histogram) {
    require(model.is_discrete(), "histogram evidence needs a discrete emission model");
    require(support_size() == model.num_symbols(), "histogram length must equal K");
  } else {
    require(!model.is_discrete(), "sample evidence needs a continuous emission model");
    require(points_.front().cols() == model.obs_dim(), "sample dimension must equal obs_dim");
  }
}

HmmModel generate_random_model(std::size_t d, std::size_t horizon, std::size_t obs_dim,
                               std::uint64_t seed) {
  require(d >= 2, "random models need d >= 2");
  require(horizon >= 1, "horizon must be positive");
  require(obs_dim >= 1, "obs_dim must be positive");
  Rng rng(seed);
  auto initial = simplex_uniform(d, rng);
  auto transition = perturbed_identity_transition(d, rng);
  const double half_width = 5.0 * static_cast<double>(d);
  GaussianEmission g{Matrix(d, obs_dim), Matrix(d, obs_dim)};
  for (double& v : g.means.data()) v = rng.uniform(-half_width, half_width);
  for (double& v : g.variances.data()) v = rng.uniform(1.0, 5.0);
  return HmmModel(std::move(initial), std::move(transition), std::move(g), horizon);
}

HmmModel generate_random_discrete_model(std::size_t d, std::size_t horizon, std::size_t num_symbols,
                                        std::uint64_t seed) {
  require(d >= 2, "random models need d >= 2");
  require(horizon >= 1, "horizon must be positive");
  require(num_symbols >= 1, "need at least one symbol");
  Rng rng(seed);
  auto initial = simplex_uniform(d, rng);
  auto transition = perturbed_identity_transition(d, rng);
  DiscreteEmission e{Matrix(d, num_symbols)};
  for (std::size_t x = 0; x < d; ++x) {
    auto row = simplex_uniform(num_symbols, rng);
    std::copy(row.begin(), row.end(), e.table.row(x).begin());
  }
  return HmmModel(std::move(initial), std::move(transition), std::move(e), horizon);
}

TrajectoryBatch sample_trajectories(const HmmModel& model, std::size_t population,
                                    std::uint64_t seed) {
  require(population >= 1, "population must be positive");
  Rng rng(seed);
  const std::size_t horizon = model.horizon();
  std::vector<std::size_t> states(population * horizon);
  const auto* disc = std::get_if<DiscreteEmission>(&model.emission());
  const auto* gauss = std::get_if<GaussianEmission>(&model.emission());
  const std::size_t dim = model.obs_dim();
  std::vector<std::size_t> symbols(disc ? population * horizon : 0);
  std::vector<double> points(gauss ? population * horizon * dim : 0);

  for (std::size_t m = 0; m < population; ++m) {
    std::size_t x = rng.categorical(model.initial_dist());
    for (std::size_t t = 0; t < horizon; ++t) {
      if (t > 0) x = rng.categorical(model.transition().row(x));
      const std::size_t idx = m * horizon + t;
      states[idx] = x;
      if (disc) {
        symbols[idx] = rng.categorical(disc->table.row(x));
      } else {
        for (std::size_t k = 0; k < dim; ++k)
          points[idx * dim + k] =
              gauss->means(x, k) + std::sqrt(gauss->variances(x, k)) * rng.normal();
      }
    }
  }
  if (disc) return TrajectoryBatch(population, horizon, std::move(states), std::move(symbols));
  return TrajectoryBatch(population, horizon, dim, std::move(states), std::move(points));
}

std::vector<std::size_t> canonical_sample_order(const Matrix& points) {
  std::vector<std::size_t> order(points.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    auto ra = points.row(a);
    auto rb = points.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  });
  return order;
}

AggregateMarginals aggregate_counts(const TrajectoryBatch& batch, const HmmModel& model) {
  batch.check_against(model);
  const std::size_t d = model.num_states();
  const std::size_t horizon = batch.horizon();
  const std::size_t pop = batch.population();
  const double unit = 1.0 / static_cast<double>(pop);
  const std::size_t support = batch.is_discrete() ? model.num_symbols() : pop;

  AggregateMarginals n;
  n.node = Matrix(horizon, d);
  n.pair.assign(horizon - 1, Matrix(d, d));
  n.obs.assign(horizon, Matrix(d, support));
  n.obs_node.assign(horizon, std::vector<double>(support, 0.0));

  for (std::size_t t = 0; t < horizon; ++t) {
    for (std::size_t m = 0; m < pop; ++m) {
      const std::size_t x = batch.state(m, t);
      n.node(t, x) += unit;
      if (t + 1 < horizon) n.pair[t](x, batch.state(m, t + 1)) += unit;
    }
    if (batch.is_discrete()) {
      for (std::size_t m = 0; m < pop; ++m) {
        const std::size_t o = batch.symbol(m, t);
        n.obs[t](batch.state(m, t), o) += unit;
        n.obs_node[t][o] += unit;
      }
    } else {
      const auto order = canonical_sample_order(points_at(batch, t));
      for (std::size_t j = 0; j < pop; ++j) {
        n.obs[t](batch.state(order[j], t), j) = unit;
        n.obs_node[t][j] = unit;
      }
    }
  }
  return n;
}

AggregateObservations extract_observations(const TrajectoryBatch& batch, const HmmModel& model) {
  batch.check_against(model);
  const std::size_t horizon = batch.horizon();
  const std::size_t pop = batch.population();
  if (batch.is_discrete()) {
    std::vector<std::vector<double>> y(horizon, std::vector<double>(model.num_symbols(), 0.0));
    for (std::size_t t = 0; t < horizon; ++t) {
      std::vector<std::size_t> counts(model.num_symbols(), 0);
      for (std::size_t m = 0; m < pop; ++m) ++counts[batch.symbol(m, t)];
      for (std::size_t k = 0; k < counts.size(); ++k)
        y[t][k] = static_cast<double>(counts[k]) / static_cast<double>(pop);
    }
    return AggregateObservations::histograms(std::move(y));
  }
  std::vector<Matrix> lists;
  lists.reserve(horizon);
  for (std::size_t t = 0; t < horizon; ++t) {
    const Matrix raw = points_at(batch, t);
    const auto order = canonical_sample_order(raw);
    Matrix sorted(pop, batch.obs_dim());
    for (std::size_t j = 0; j < pop; ++j) {
      auto src = raw.row(order[j]);
      std::copy(src.begin(), src.end(), sorted.row(j).begin());
    }
    lists.push_back(std::move(sorted));
  }
  return AggregateObservations::samples(std::move(lists));
}

double log_emission(const HmmModel& model, std::size_t state, std::size_t symbol) {
  const auto* disc = std::get_if<DiscreteEmission>(&model.emission());
  require(disc != nullptr, "symbol observation needs a discrete emission model");
  require(state < model.num_states() && symbol < model.num_symbols(), "index out of range");
  const double p = disc->table(state, symbol);
  return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
}

double log_emission(const HmmModel& model, std::size_t state, std::span<const double> point) {
  const auto* g = std::get_if<GaussianEmission>(&model.emission());
  require(g != nullptr, "point observation needs a Gaussian emission model");
  require(state < model.num_states(), "state out of range");
  require(point.size() == g->means.cols(), "observation dimension mismatch");
  constexpr double kLog2Pi = 1.8378770664093454835606594728112;
  double acc = 0.0;
  for (std::size_t k = 0; k < point.size(); ++k) {
    const double var = g->variances(state, k);
    const double diff = point[k] - g->means(state, k);
    acc -= 0.5 * (kLog2Pi + std::log(var) + diff * diff / var);
  }
  return acc;
}

}  // namespace aggfilter
