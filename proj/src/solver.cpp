#include "aggfilter/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "aggfilter/errors.hpp"

namespace aggfilter {

using detail::require;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void infeasible(const char* what, std::size_t t) {
  throw InfeasibleEvidence(std::string(what) + " vanishes at t=" + std::to_string(t + 1));
}

// xi(s) = sum_x lik(x, s) alpha(x) beta(x), rescaled to max 1.
void xi_update(const Matrix& lik, std::span<const double> alpha, std::span<const double> beta,
               std::span<double> out, std::size_t t) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t x = 0; x < lik.rows(); ++x) {
    const double c = alpha[x] * beta[x];
    if (c == 0.0) continue;
    auto row = lik.row(x);
    for (std::size_t s = 0; s < out.size(); ++s) out[s] += c * row[s];
  }
  if (normalize_max(out) == 0.0) infeasible("xi", t);
}

// gamma(x) = sum_s lik(x, s) w(s) / max(xi(s), floor), summed in `order`.
std::size_t gamma_update(const Matrix& lik, const std::vector<double>& weights,
                         const std::vector<std::size_t>& order, std::span<const double> xi,
                         double floor, std::span<double> out, std::size_t t) {
  std::size_t hits = 0;
  std::vector<double> coef(weights.size(), 0.0);
  for (std::size_t s = 0; s < weights.size(); ++s) {
    if (weights[s] == 0.0) continue;
    double denom = xi[s];
    if (denom < floor) {
      denom = floor;
      ++hits;
    }
    coef[s] = weights[s] / denom;
  }
  for (std::size_t x = 0; x < lik.rows(); ++x) {
    auto row = lik.row(x);
    double acc = 0.0;
    for (std::size_t s : order) acc += row[s] * coef[s];
    out[x] = acc;
  }
  if (normalize_max(out) == 0.0) infeasible("gamma", t);
  return hits;
}

void node_row(std::span<const double> alpha, std::span<const double> beta,
              std::span<const double> gamma, std::span<double> out, std::size_t t) {
  for (std::size_t x = 0; x < out.size(); ++x) out[x] = alpha[x] * beta[x] * gamma[x];
  if (normalize_sum(out) == 0.0) infeasible("node marginal", t);
}

void check_message_shapes(const MessageSet& m, std::size_t horizon, std::size_t d, std::size_t support) {
  auto ok = [&](const Matrix& a) { return a.rows() == horizon && a.cols() == d; };
  require(ok(m.alpha) && ok(m.beta) && ok(m.gamma), "message matrices must be T x d");
  require(m.xi.size() == horizon && m.xi_log_scale.size() == horizon, "xi must have T rows");
  for (std::size_t t = 0; t < horizon; ++t)
    require(m.xi[t].size() == support && m.xi_log_scale[t].size() == support,
            "xi rows must match the observation support");
}

}  // namespace

void SolverConfig::validate() const {
  require(tol > 0.0, "tol must be positive");
  require(max_sweeps >= 1, "max_sweeps must be at least 1");
  require(density_floor >= 0.0, "density_floor must be nonnegative");
}

EvidenceTable::EvidenceTable(const HmmModel& model, const AggregateObservations& obs)
    : num_states_(model.num_states()), support_(obs.support_size()) {
  obs.check_against(model);
  const std::size_t horizon = model.horizon();
  const std::size_t d = num_states_;
  const bool histogram = obs.kind() == ObservationKind::Histogram;
  likelihood_.reserve(horizon);
  log_scale_.assign(horizon, std::vector<double>(support_, 0.0));
  weights_.assign(horizon, std::vector<double>(support_, 1.0));
  order_.reserve(horizon);

  Matrix loglik(d, support_);
  for (std::size_t t = 0; t < horizon; ++t) {
    for (std::size_t x = 0; x < d; ++x)
      for (std::size_t s = 0; s < support_; ++s)
        loglik(x, s) = histogram ? log_emission(model, x, s)
                                 : log_emission(model, x, obs.samples_at(t).row(s));
    // Samples are equally weighted; the common 1/M is absorbed by rescaling.
    if (histogram) weights_[t] = obs.histogram(t);

    Matrix lik(d, support_);
    for (std::size_t s = 0; s < support_; ++s) {
      double peak = kNegInf;
      for (std::size_t x = 0; x < d; ++x) peak = std::max(peak, loglik(x, s));
      if (peak == kNegInf) {
        if (weights_[t][s] > 0.0)
          throw InfeasibleEvidence("observation " + std::to_string(s) +
                                   " has zero likelihood under every state at t=" +
                                   std::to_string(t + 1));
        continue;
      }
      log_scale_[t][s] = peak;
      for (std::size_t x = 0; x < d; ++x) lik(x, s) = std::exp(loglik(x, s) - peak);
    }
    likelihood_.push_back(std::move(lik));

    if (histogram) {
      std::vector<std::size_t> idx(support_);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      order_.push_back(std::move(idx));
    } else {
      order_.push_back(canonical_sample_order(obs.samples_at(t)));
    }
  }
}

double EvidenceTable::log_likelihood(std::size_t t, std::size_t x, std::size_t s) const {
  const double v = likelihood_[t](x, s);
  return v > 0.0 ? std::log(v) + log_scale_[t][s] : kNegInf;
}

CollectiveFilter::CollectiveFilter(const HmmModel& model, const AggregateObservations& obs,
                                   SolverConfig config)
    : model_(model), evidence_(model, obs), config_(config) {
  config_.validate();
}

void CollectiveFilter::initialize() {
  const std::size_t horizon = model_.horizon();
  const std::size_t d = model_.num_states();
  msgs_.alpha = Matrix(horizon, d);
  msgs_.beta = Matrix(horizon, d, 1.0);
  msgs_.gamma = Matrix(horizon, d, 1.0);
  msgs_.xi.assign(horizon, std::vector<double>(evidence_.support_size(), 0.0));
  msgs_.xi_log_scale.resize(horizon);
  for (std::size_t t = 0; t < horizon; ++t) msgs_.xi_log_scale[t] = evidence_.log_scale(t);

  auto first = msgs_.alpha.row(0);
  std::copy(model_.initial_dist().begin(), model_.initial_dist().end(), first.begin());
  normalize_max(first);
  for (std::size_t t = 1; t < horizon; ++t) update_alpha(t);
  for (std::size_t t = 0; t < horizon; ++t) update_xi(t);

  floor_hits_ = 0;
  last_node_ = node_marginals();
  ready_ = true;
}

void CollectiveFilter::load(MessageSet messages) {
  check_message_shapes(messages, model_.horizon(), model_.num_states(), evidence_.support_size());
  msgs_ = std::move(messages);
  last_node_ = node_marginals();
  ready_ = true;
}

void CollectiveFilter::update_alpha(std::size_t t) {
  const Matrix& p = model_.transition();
  auto out = msgs_.alpha.row(t);
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t x = 0; x < p.rows(); ++x) {
    const double c = msgs_.alpha(t - 1, x) * msgs_.gamma(t - 1, x);
    if (c == 0.0) continue;
    auto prow = p.row(x);
    for (std::size_t y = 0; y < out.size(); ++y) out[y] += c * prow[y];
  }
  if (normalize_max(out) == 0.0) infeasible("alpha", t);
}

void CollectiveFilter::update_beta(std::size_t t) {
  const Matrix& p = model_.transition();
  auto out = msgs_.beta.row(t);
  for (std::size_t x = 0; x < p.rows(); ++x) {
    auto prow = p.row(x);
    double acc = 0.0;
    for (std::size_t y = 0; y < prow.size(); ++y)
      acc += prow[y] * msgs_.beta(t + 1, y) * msgs_.gamma(t + 1, y);
    out[x] = acc;
  }
  if (normalize_max(out) == 0.0) infeasible("beta", t);
}

void CollectiveFilter::update_gamma(std::size_t t) {
  floor_hits_ += gamma_update(evidence_.likelihood(t), evidence_.weights(t), evidence_.order(t),
                              msgs_.xi[t], config_.density_floor, msgs_.gamma.row(t), t);
}

void CollectiveFilter::update_xi(std::size_t t) {
  xi_update(evidence_.likelihood(t), msgs_.alpha.row(t), msgs_.beta.row(t), msgs_.xi[t], t);
}

double CollectiveFilter::sweep() {
  if (!ready_) initialize();
  const std::size_t horizon = model_.horizon();
  if (horizon == 1) {
    update_gamma(0);
  } else {
    for (std::size_t t = 1; t < horizon; ++t) {
      update_gamma(t - 1);
      update_alpha(t);
      update_xi(t);
    }
    for (std::size_t t = horizon - 1; t-- > 0;) {
      update_gamma(t + 1);
      update_beta(t);
      update_xi(t);
    }
  }
  Matrix node = node_marginals();
  double delta = 0.0;
  for (std::size_t t = 0; t < horizon; ++t) {
    double l1 = 0.0;
    for (std::size_t x = 0; x < node.cols(); ++x) l1 += std::abs(node(t, x) - last_node_(t, x));
    delta = std::max(delta, l1);
  }
  last_node_ = std::move(node);
  return delta;
}

Matrix CollectiveFilter::node_marginals() const {
  Matrix node(model_.horizon(), model_.num_states());
  for (std::size_t t = 0; t < node.rows(); ++t)
    node_row(msgs_.alpha.row(t), msgs_.beta.row(t), msgs_.gamma.row(t), node.row(t), t);
  return node;
}

SolveResult CollectiveFilter::run(const SweepObserver& observer) {
  if (!ready_) initialize();
  SolveResult result;
  for (std::size_t k = 1; k <= config_.max_sweeps; ++k) {
    const double delta = sweep();
    result.per_sweep_delta.push_back(delta);
    result.sweeps = k;
    result.final_delta = delta;
    if (observer) observer(k, last_node_);
    if (delta < config_.tol) {
      result.converged = true;
      break;
    }
  }
  result.messages = msgs_;
  result.marginals = compute_marginals(msgs_, model_, evidence_, config_.density_floor);
  result.floor_hits = floor_hits_;
  return result;
}

Matrix forward_backward_loglik(const HmmModel& model, const Matrix& log_likelihood) {
  const std::size_t horizon = model.horizon();
  const std::size_t d = model.num_states();
  require(log_likelihood.rows() == horizon && log_likelihood.cols() == d,
          "log-likelihood must be T x d");
  const Matrix& p = model.transition();

  Matrix lik(horizon, d);
  for (std::size_t t = 0; t < horizon; ++t) {
    auto row = log_likelihood.row(t);
    const double peak = *std::max_element(row.begin(), row.end());
    if (peak == kNegInf) infeasible("observation likelihood", t);
    for (std::size_t x = 0; x < d; ++x) lik(t, x) = std::exp(row[x] - peak);
  }

  Matrix alpha(horizon, d);
  std::copy(model.initial_dist().begin(), model.initial_dist().end(), alpha.row(0).begin());
  for (std::size_t t = 1; t < horizon; ++t) {
    for (std::size_t x = 0; x < d; ++x) {
      const double c = alpha(t - 1, x) * lik(t - 1, x);
      for (std::size_t y = 0; y < d; ++y) alpha(t, y) += c * p(x, y);
    }
    if (normalize_sum(alpha.row(t)) == 0.0) infeasible("forward message", t);
  }

  Matrix beta(horizon, d, 1.0);
  for (std::size_t t = horizon - 1; t-- > 0;) {
    for (std::size_t x = 0; x < d; ++x) {
      double acc = 0.0;
      for (std::size_t y = 0; y < d; ++y) acc += p(x, y) * beta(t + 1, y) * lik(t + 1, y);
      beta(t, x) = acc;
    }
    if (normalize_sum(beta.row(t)) == 0.0) infeasible("backward message", t);
  }

  Matrix post(horizon, d);
  for (std::size_t t = 0; t < horizon; ++t) {
    for (std::size_t x = 0; x < d; ++x) post(t, x) = alpha(t, x) * beta(t, x) * lik(t, x);
    if (normalize_sum(post.row(t)) == 0.0) infeasible("posterior", t);
  }
  return post;
}

Matrix forward_backward(const HmmModel& model, std::span<const std::size_t> symbols) {
  require(symbols.size() == model.horizon(), "sequence length must equal T");
  Matrix ll(model.horizon(), model.num_states());
  for (std::size_t t = 0; t < ll.rows(); ++t)
    for (std::size_t x = 0; x < ll.cols(); ++x) ll(t, x) = log_emission(model, x, symbols[t]);
  return forward_backward_loglik(model, ll);
}

Matrix forward_backward(const HmmModel& model, const Matrix& points) {
  require(points.rows() == model.horizon(), "sequence length must equal T");
  Matrix ll(model.horizon(), model.num_states());
  for (std::size_t t = 0; t < ll.rows(); ++t)
    for (std::size_t x = 0; x < ll.cols(); ++x) ll(t, x) = log_emission(model, x, points.row(t));
  return forward_backward_loglik(model, ll);
}

Matrix forward_backward(const HmmModel& model, const TrajectoryBatch& batch, std::size_t m) {
  batch.check_against(model);
  require(m < batch.population(), "trajectory index out of range");
  Matrix ll(model.horizon(), model.num_states());
  for (std::size_t t = 0; t < ll.rows(); ++t)
    for (std::size_t x = 0; x < ll.cols(); ++x)
      ll(t, x) = batch.is_discrete() ? log_emission(model, x, batch.symbol(m, t))
                                     : log_emission(model, x, batch.point(m, t));
  return forward_backward_loglik(model, ll);
}

SolveResult cfb_discrete(const HmmModel& model, const AggregateObservations& obs,
                         const SolverConfig& config, const SweepObserver& observer) {
  require(obs.kind() == ObservationKind::Histogram, "cfb_discrete needs histogram evidence");
  return CollectiveFilter(model, obs, config).run(observer);
}

SolveResult co_cfb(const HmmModel& model, const AggregateObservations& obs,
                   const SolverConfig& config, const SweepObserver& observer) {
  require(obs.kind() == ObservationKind::Samples, "co_cfb needs sample evidence");
  return CollectiveFilter(model, obs, config).run(observer);
}

std::vector<double> gmm_posterior(const HmmModel& model, const Matrix& samples) {
  require(model.horizon() == 1, "gmm_posterior needs a model with T = 1");
  require(samples.rows() >= 1, "gmm_posterior needs at least one sample");
  const EvidenceTable ev(model, AggregateObservations::samples({samples}));
  const std::size_t d = model.num_states();

  std::vector<double> prior = model.initial_dist();
  normalize_max(prior);
  const std::vector<double> flat(d, 1.0);
  std::vector<double> xi(ev.support_size());
  xi_update(ev.likelihood(0), prior, flat, xi, 0);
  std::vector<double> gamma(d);
  gamma_update(ev.likelihood(0), ev.weights(0), ev.order(0), xi, 0.0, gamma, 0);
  std::vector<double> n(d);
  node_row(prior, flat, gamma, n, 0);
  return n;
}

AggregateMarginals compute_marginals(const MessageSet& messages, const HmmModel& model,
                                     const AggregateObservations& obs) {
  return compute_marginals(messages, model, EvidenceTable(model, obs));
}

AggregateMarginals compute_marginals(const MessageSet& m, const HmmModel& model,
                                     const EvidenceTable& ev, double density_floor) {
  const std::size_t horizon = model.horizon();
  const std::size_t d = model.num_states();
  const std::size_t support = ev.support_size();
  check_message_shapes(m, horizon, d, support);
  const Matrix& p = model.transition();

  AggregateMarginals n;
  n.node = Matrix(horizon, d);
  for (std::size_t t = 0; t < horizon; ++t)
    node_row(m.alpha.row(t), m.beta.row(t), m.gamma.row(t), n.node.row(t), t);

  n.pair.reserve(horizon - 1);
  for (std::size_t t = 0; t + 1 < horizon; ++t) {
    Matrix block(d, d);
    for (std::size_t x = 0; x < d; ++x) {
      const double left = m.alpha(t, x) * m.gamma(t, x);
      for (std::size_t y = 0; y < d; ++y)
        block(x, y) = p(x, y) * left * m.beta(t + 1, y) * m.gamma(t + 1, y);
    }
    normalize_sum(block.data());
    n.pair.push_back(std::move(block));
  }

  n.obs.reserve(horizon);
  n.obs_node.assign(horizon, std::vector<double>(support, 0.0));
  for (std::size_t t = 0; t < horizon; ++t) {
    const Matrix& lik = ev.likelihood(t);
    const auto& w = ev.weights(t);
    std::vector<double> coef(support, 0.0);
    for (std::size_t s = 0; s < support; ++s)
      if (w[s] > 0.0) coef[s] = w[s] / std::max(m.xi[t][s], density_floor);
    Matrix block(d, support);
    for (std::size_t x = 0; x < d; ++x) {
      const double ab = m.alpha(t, x) * m.beta(t, x);
      for (std::size_t s = 0; s < support; ++s) block(x, s) = lik(x, s) * ab * coef[s];
    }
    normalize_sum(block.data());
    for (std::size_t x = 0; x < d; ++x)
      for (std::size_t s = 0; s < support; ++s) n.obs_node[t][s] += block(x, s);
    n.obs.push_back(std::move(block));
  }
  return n;
}

double l1_error(const Matrix& est, const Matrix& truth) {
  require(est.rows() == truth.rows() && est.cols() == truth.cols(),
          "l1_error needs node marginals of equal shape");
  double err = 0.0;
  for (std::size_t i = 0; i < est.data().size(); ++i) err += std::abs(est.data()[i] - truth.data()[i]);
  return err;
}

double l1_error(const AggregateMarginals& est, const AggregateMarginals& truth) {
  return l1_error(est.node, truth.node);
}

std::pair<HmmModel, AggregateObservations> sample_support_restriction(
    const HmmModel& model, const AggregateObservations& samples) {
  require(samples.kind() == ObservationKind::Samples, "restriction needs sample evidence");
  samples.check_against(model);
  const std::size_t horizon = model.horizon();
  const std::size_t d = model.num_states();
  const std::size_t pop = samples.support_size();
  const std::size_t k = horizon * pop + 1;

  Matrix loglik(d, k - 1);
  for (std::size_t t = 0; t < horizon; ++t)
    for (std::size_t j = 0; j < pop; ++j)
      for (std::size_t x = 0; x < d; ++x)
        loglik(x, t * pop + j) = log_emission(model, x, samples.samples_at(t).row(j));

  // One global factor keeps every row's mass on the samples at most 1/2.
  double worst = kNegInf;
  for (std::size_t x = 0; x < d; ++x) {
    auto row = loglik.row(x);
    const double peak = *std::max_element(row.begin(), row.end());
    double acc = 0.0;
    for (double v : row) acc += std::exp(v - peak);
    worst = std::max(worst, peak + std::log(acc));
  }
  const double shift = -worst - std::log(2.0);

  DiscreteEmission e{Matrix(d, k)};
  for (std::size_t x = 0; x < d; ++x) {
    double mass = 0.0;
    for (std::size_t s = 0; s + 1 < k; ++s) {
      e.table(x, s) = std::exp(loglik(x, s) + shift);
      mass += e.table(x, s);
    }
    e.table(x, k - 1) = 1.0 - mass;
  }

  std::vector<std::vector<double>> y(horizon, std::vector<double>(k, 0.0));
  for (std::size_t t = 0; t < horizon; ++t)
    for (std::size_t j = 0; j < pop; ++j) y[t][t * pop + j] = 1.0 / static_cast<double>(pop);

  return {HmmModel(model.initial_dist(), model.transition(), std::move(e), horizon),
          AggregateObservations::histograms(std::move(y))};
}

}  // namespace aggfilter
