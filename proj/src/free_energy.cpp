#include "aggfilter/free_energy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "aggfilter/errors.hpp"
#include "aggfilter/rng.hpp"

namespace aggfilter::free_energy {

using detail::require;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kTiny = 1e-300;

double xlogx(double v) { return v < kTiny ? 0.0 : v * std::log(v); }

double observation_loglik(const HmmModel& model, const AggregateObservations& obs, std::size_t t,
                          std::size_t x, std::size_t s) {
  if (obs.kind() == ObservationKind::Histogram) return log_emission(model, x, s);
  return log_emission(model, x, obs.samples_at(t).row(s));
}

double log_sum_exp(std::span<const double> v) {
  double peak = -kInf;
  for (double x : v) peak = std::max(peak, x);
  if (peak == -kInf) return -kInf;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - peak);
  return peak + std::log(acc);
}

// exp(v) / sum exp(v), robust to -inf entries.
std::vector<double> softmax(std::span<const double> logv) {
  std::vector<double> out(logv.size(), 0.0);
  const double lse = log_sum_exp(logv);
  if (lse == -kInf) return out;
  for (std::size_t i = 0; i < logv.size(); ++i) out[i] = std::exp(logv[i] - lse);
  return out;
}

std::vector<double> normalized(std::span<const double> v) {
  std::vector<double> out(v.begin(), v.end());
  normalize_sum(out);
  return out;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Zero-mean gauge over the finite entries of a multiplier vector.
void fix_gauge(std::span<double> m) {
  double acc = 0.0;
  std::size_t n = 0;
  for (double v : m)
    if (std::isfinite(v)) {
      acc += v;
      ++n;
    }
  if (n == 0) return;
  const double mean = acc / static_cast<double>(n);
  for (double& v : m)
    if (std::isfinite(v)) v -= mean;
}

// -log of a nonnegative product, +inf where it vanishes.
double neg_log(double v) { return v > 0.0 ? -std::log(v) : kInf; }

std::vector<double> negated(std::span<const double> m) {
  std::vector<double> out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = -m[i];
  return out;
}

double max_of(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, x);
  return m;
}

void check_shapes(const AggregateMarginals& n, const HmmModel& model, std::size_t support) {
  const std::size_t horizon = model.horizon();
  const std::size_t d = model.num_states();
  require(n.node.rows() == horizon && n.node.cols() == d, "node marginals must be T x d");
  require(n.pair.size() + 1 == horizon, "need T-1 pair blocks");
  for (const auto& p : n.pair) require(p.rows() == d && p.cols() == d, "pair blocks must be d x d");
  require(n.obs.size() == horizon, "need T observation blocks");
  for (const auto& o : n.obs)
    require(o.rows() == d && o.cols() == support, "observation blocks must be d x S");
}

}  // namespace

double evaluate(const AggregateMarginals& n, const HmmModel& model, const AggregateObservations& obs) {
  obs.check_against(model);
  const std::size_t horizon = model.horizon();
  const std::size_t d = model.num_states();
  const std::size_t support = obs.support_size();
  check_shapes(n, model, support);
  auto nonneg = [](std::span<const double> v) {
    for (double x : v) require(x >= 0.0, "marginals must be nonnegative");
  };
  nonneg(n.node.data());
  for (const auto& p : n.pair) nonneg(p.data());
  for (const auto& o : n.obs) nonneg(o.data());

  double energy = 0.0;
  double entropy = 0.0;
  for (std::size_t t = 0; t < horizon; ++t) {
    for (std::size_t x = 0; x < d; ++x)
      for (std::size_t s = 0; s < support; ++s) {
        const double v = n.obs[t](x, s);
        if (v < kTiny) continue;
        energy -= v * observation_loglik(model, obs, t, x, s);
        entropy += xlogx(v);
      }
  }
  const Matrix& p = model.transition();
  for (std::size_t t = 0; t + 1 < horizon; ++t)
    for (std::size_t x = 0; x < d; ++x)
      for (std::size_t y = 0; y < d; ++y) {
        const double v = n.pair[t](x, y);
        if (v < kTiny) continue;
        energy -= v * (p(x, y) > 0.0 ? std::log(p(x, y)) : -kInf);
        entropy += xlogx(v);
      }
  for (std::size_t x = 0; x < d; ++x) {
    const double v = n.node(0, x);
    if (v < kTiny) continue;
    const double pi = model.initial_dist()[x];
    energy -= v * (pi > 0.0 ? std::log(pi) : -kInf);
  }
  // Node entropies enter with (1 - degree): -1 at both ends of the chain,
  // -2 inside. A lone node (T = 1) touches only its observation factor.
  if (horizon >= 2) {
    for (std::size_t t = 0; t < horizon; ++t) {
      const double coeff = (t == 0 || t + 1 == horizon) ? -1.0 : -2.0;
      for (std::size_t x = 0; x < d; ++x) entropy += coeff * xlogx(n.node(t, x));
    }
  }
  return energy + entropy;
}

double PolytopeResiduals::max() const {
  return std::max({simplex, pair_to_node, obs_to_node, obs_to_obs_node});
}

PolytopeResiduals check_polytope(const AggregateMarginals& n, double tol) {
  PolytopeResiduals r;
  const std::size_t horizon = n.node.rows();
  const std::size_t d = n.node.cols();
  for (std::size_t t = 0; t < horizon; ++t) r.simplex = std::max(r.simplex, std::abs(sum(n.node.row(t)) - 1.0));
  for (std::size_t t = 0; t < n.pair.size() && t + 1 < horizon; ++t) {
    const Matrix& p = n.pair[t];
    r.simplex = std::max(r.simplex, std::abs(sum(p.data()) - 1.0));
    for (std::size_t x = 0; x < d; ++x) {
      double row = 0.0;
      double col = 0.0;
      for (std::size_t y = 0; y < d; ++y) {
        row += p(x, y);
        col += p(y, x);
      }
      r.pair_to_node = std::max(r.pair_to_node, std::abs(row - n.node(t, x)));
      r.pair_to_node = std::max(r.pair_to_node, std::abs(col - n.node(t + 1, x)));
    }
  }
  for (std::size_t t = 0; t < n.obs.size() && t < horizon; ++t) {
    const Matrix& o = n.obs[t];
    r.simplex = std::max(r.simplex, std::abs(sum(o.data()) - 1.0));
    for (std::size_t x = 0; x < d; ++x)
      r.obs_to_node = std::max(r.obs_to_node, std::abs(sum(o.row(x)) - n.node(t, x)));
    if (t < n.obs_node.size()) {
      r.simplex = std::max(r.simplex, std::abs(sum(n.obs_node[t]) - 1.0));
      for (std::size_t s = 0; s < o.cols(); ++s) {
        double col = 0.0;
        for (std::size_t x = 0; x < d; ++x) col += o(x, s);
        r.obs_to_obs_node = std::max(r.obs_to_obs_node, std::abs(col - n.obs_node[t][s]));
      }
    }
  }
  r.pass = r.max() < tol;
  return r;
}

double KktResiduals::max_alpha_beta() const { return max_of(alpha_beta); }
double KktResiduals::max_beta_gamma() const { return max_of(beta_gamma); }
double KktResiduals::max_alpha_gamma() const { return max_of(alpha_gamma); }
double KktResiduals::max_evidence_ratio() const { return max_of(evidence_ratio); }
double KktResiduals::max_recursion() const { return max_of(recursion); }
double KktResiduals::max() const {
  return std::max({max_alpha_beta(), max_beta_gamma(), max_alpha_gamma(), max_evidence_ratio(),
                   max_recursion()});
}

KktReport kkt_residuals(const MessageSet& m, const HmmModel& model, const AggregateObservations& obs) {
  const EvidenceTable ev(model, obs);
  const std::size_t horizon = model.horizon();
  const std::size_t d = model.num_states();
  const std::size_t support = ev.support_size();
  require(m.alpha.rows() == horizon && m.alpha.cols() == d && m.xi.size() == horizon,
          "messages do not match the model");
  const Matrix& p = model.transition();

  KktReport rep;
  KktMultipliers& mu = rep.multipliers;
  mu.a = Matrix(horizon, d);
  mu.c = Matrix(horizon, d);
  mu.d = Matrix(horizon, d);
  mu.b.assign(horizon, std::vector<double>(support, kInf));

  // log xi_t(s) relative to one constant per t.
  std::vector<std::vector<double>> log_xi(horizon, std::vector<double>(support));
  std::vector<std::vector<double>> log_ratio(horizon, std::vector<double>(support, -kInf));
  for (std::size_t t = 0; t < horizon; ++t) {
    for (std::size_t x = 0; x < d; ++x) {
      mu.a(t, x) = neg_log(m.alpha(t, x) * m.beta(t, x));
      mu.c(t, x) = neg_log(m.beta(t, x) * m.gamma(t, x));
      mu.d(t, x) = neg_log(m.alpha(t, x) * m.gamma(t, x));
    }
    fix_gauge(mu.a.row(t));
    fix_gauge(mu.c.row(t));
    fix_gauge(mu.d.row(t));
    for (std::size_t s = 0; s < support; ++s) {
      log_xi[t][s] = std::log(std::max(m.xi[t][s], kTiny)) + m.xi_log_scale[t][s];
      const double w = obs.weight(t, s);
      if (w > 0.0) {
        log_ratio[t][s] = std::log(w) - log_xi[t][s];
        mu.b[t][s] = -log_ratio[t][s];
      }
    }
    fix_gauge(mu.b[t]);
  }

  auto product = [&](const Matrix& u, const Matrix& v, std::size_t t) {
    std::vector<double> out(d);
    for (std::size_t x = 0; x < d; ++x) out[x] = u(t, x) * v(t, x);
    return normalized(out);
  };

  KktResiduals& r = rep.residuals;
  r.alpha_beta.resize(horizon);
  r.beta_gamma.resize(horizon);
  r.alpha_gamma.resize(horizon);
  r.evidence_ratio.resize(horizon);
  r.recursion.resize(horizon);
  for (std::size_t t = 0; t < horizon; ++t) {
    r.alpha_beta[t] = max_abs_diff(softmax(negated(mu.a.row(t))), product(m.alpha, m.beta, t));
    r.beta_gamma[t] = max_abs_diff(softmax(negated(mu.c.row(t))), product(m.beta, m.gamma, t));
    r.alpha_gamma[t] = max_abs_diff(softmax(negated(mu.d.row(t))), product(m.alpha, m.gamma, t));
    r.evidence_ratio[t] = max_abs_diff(softmax(negated(mu.b[t])), softmax(log_ratio[t]));

    // Definitional recursions evaluated from the multipliers alone.
    double rec = 0.0;
    std::vector<double> rebuilt(d, 0.0);
    if (t == 0) {
      rebuilt = model.initial_dist();
    } else {
      const auto w = softmax(negated(mu.d.row(t - 1)));
      for (std::size_t x = 0; x < d; ++x)
        for (std::size_t y = 0; y < d; ++y) rebuilt[y] += p(x, y) * w[x];
    }
    rec = std::max(rec, max_abs_diff(normalized(rebuilt), normalized(m.alpha.row(t))));

    std::fill(rebuilt.begin(), rebuilt.end(), t + 1 == horizon ? 1.0 : 0.0);
    if (t + 1 < horizon) {
      const auto w = softmax(negated(mu.c.row(t + 1)));
      for (std::size_t x = 0; x < d; ++x)
        for (std::size_t y = 0; y < d; ++y) rebuilt[x] += p(x, y) * w[y];
    }
    rec = std::max(rec, max_abs_diff(normalized(rebuilt), normalized(m.beta.row(t))));

    std::vector<double> terms(d);
    std::vector<double> log_xi_hat(support);
    for (std::size_t s = 0; s < support; ++s) {
      for (std::size_t x = 0; x < d; ++x) terms[x] = ev.log_likelihood(t, x, s) - mu.a(t, x);
      log_xi_hat[s] = log_sum_exp(terms);
    }
    rec = std::max(rec, max_abs_diff(softmax(log_xi_hat), softmax(log_xi[t])));

    std::vector<double> log_gamma_hat(d);
    std::vector<double> sterms(support);
    for (std::size_t x = 0; x < d; ++x) {
      for (std::size_t s = 0; s < support; ++s)
        sterms[s] = mu.b[t][s] == kInf ? -kInf : ev.log_likelihood(t, x, s) - mu.b[t][s];
      log_gamma_hat[x] = log_sum_exp(sterms);
    }
    rec = std::max(rec, max_abs_diff(softmax(log_gamma_hat), normalized(m.gamma.row(t))));
    r.recursion[t] = rec;
  }
  return rep;
}

FreeEnergyReport make_report(const SolveResult& result, const HmmModel& model,
                             const AggregateObservations& obs, double polytope_tol) {
  FreeEnergyReport rep;
  rep.value = evaluate(result.marginals, model, obs);
  rep.constraints = check_polytope(result.marginals, polytope_tol);
  rep.kkt = kkt_residuals(result.messages, model, obs).residuals;
  for (std::size_t t = 0; t < model.horizon(); ++t) {
    double l1 = 0.0;
    for (std::size_t s = 0; s < obs.support_size(); ++s)
      l1 += std::abs(result.marginals.obs_node[t][s] - obs.weight(t, s));
    rep.evidence_residual = std::max(rep.evidence_residual, l1);
  }
  return rep;
}

namespace {

// Dual of the evidence-constrained I-projection, evaluated by enumerating
// state paths. Variables lambda_t(s) exist only for support points with
// positive evidence weight.
class PathDual {
 public:
  PathDual(const HmmModel& model, const AggregateObservations& obs)
      : d_(model.num_states()), horizon_(model.horizon()), support_(obs.support_size()) {
    for (std::size_t t = 0; t < horizon_; ++t) {
      double total = 0.0;
      for (std::size_t s = 0; s < support_; ++s) total += obs.weight(t, s);
      for (std::size_t s = 0; s < support_; ++s) {
        const double w = obs.weight(t, s);
        if (w <= 0.0) continue;
        vars_.push_back({t, s, w / total});
      }
    }
    loglik_.assign(horizon_, Matrix(d_, support_));
    for (std::size_t t = 0; t < horizon_; ++t)
      for (std::size_t x = 0; x < d_; ++x)
        for (std::size_t s = 0; s < support_; ++s)
          loglik_[t](x, s) = observation_loglik(model, obs, t, x, s);

    std::size_t count = 1;
    for (std::size_t t = 0; t < horizon_; ++t) count *= d_;
    const Matrix& p = model.transition();
    std::vector<std::size_t> path(horizon_, 0);
    for (std::size_t code = 0; code < count; ++code) {
      std::size_t rest = code;
      for (std::size_t t = 0; t < horizon_; ++t) {
        path[t] = rest % d_;
        rest /= d_;
      }
      double lp = std::log(model.initial_dist()[path[0]]);
      for (std::size_t t = 0; t + 1 < horizon_; ++t) lp += std::log(p(path[t], path[t + 1]));
      if (lp == -kInf) continue;
      paths_.push_back(path);
      log_prior_.push_back(lp);
    }
    if (paths_.empty()) throw InfeasibleEvidence("model assigns zero mass to every state path");
  }

  std::size_t size() const { return vars_.size(); }

  struct Eval {
    double value = -kInf;
    std::vector<double> grad;
    Matrix cov;
    std::vector<double> q;      // path probabilities
    std::vector<Matrix> resp;   // resp[t](x, s) = p(o_t = s | x_t = x) under the tilt
  };

  Eval evaluate(const std::vector<double>& lambda, bool second_order) const {
    Eval e;
    std::vector<Matrix> tilt(horizon_, Matrix(d_, support_));
    for (auto& m : tilt) m.fill(-kInf);
    for (std::size_t i = 0; i < vars_.size(); ++i)
      for (std::size_t x = 0; x < d_; ++x)
        tilt[vars_[i].t](x, vars_[i].s) = loglik_[vars_[i].t](x, vars_[i].s) + lambda[i];
    Matrix logg(horizon_, d_);
    e.resp.assign(horizon_, Matrix(d_, support_));
    for (std::size_t t = 0; t < horizon_; ++t)
      for (std::size_t x = 0; x < d_; ++x) {
        logg(t, x) = log_sum_exp(tilt[t].row(x));
        if (logg(t, x) == -kInf) continue;
        for (std::size_t s = 0; s < support_; ++s)
          e.resp[t](x, s) = std::exp(tilt[t](x, s) - logg(t, x));
      }

    std::vector<double> lw(paths_.size());
    for (std::size_t k = 0; k < paths_.size(); ++k) {
      double v = log_prior_[k];
      for (std::size_t t = 0; t < horizon_; ++t) v += logg(t, paths_[k][t]);
      lw[k] = v;
    }
    const double log_z = log_sum_exp(lw);
    if (log_z == -kInf) return e;
    e.q.resize(paths_.size());
    for (std::size_t k = 0; k < paths_.size(); ++k) e.q[k] = std::exp(lw[k] - log_z);

    e.value = -log_z;
    for (std::size_t i = 0; i < vars_.size(); ++i) e.value += vars_[i].w * lambda[i];

    const std::size_t n = vars_.size();
    std::vector<double> mean(n, 0.0);
    for (std::size_t k = 0; k < paths_.size(); ++k)
      for (std::size_t i = 0; i < n; ++i)
        mean[i] += e.q[k] * e.resp[vars_[i].t](paths_[k][vars_[i].t], vars_[i].s);
    e.grad.resize(n);
    for (std::size_t i = 0; i < n; ++i) e.grad[i] = vars_[i].w - mean[i];

    if (second_order) {
      e.cov = Matrix(n, n);
      for (std::size_t k = 0; k < paths_.size(); ++k)
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            if (vars_[i].t == vars_[j].t) continue;
            e.cov(i, j) += e.q[k] * e.resp[vars_[i].t](paths_[k][vars_[i].t], vars_[i].s) *
                           e.resp[vars_[j].t](paths_[k][vars_[j].t], vars_[j].s);
          }
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          if (vars_[i].t == vars_[j].t) e.cov(i, j) = (i == j ? mean[i] : 0.0);
          e.cov(i, j) -= mean[i] * mean[j];
        }
    }
    return e;
  }

  AggregateMarginals marginals(const Eval& e) const {
    AggregateMarginals n;
    n.node = Matrix(horizon_, d_);
    n.pair.assign(horizon_ - 1, Matrix(d_, d_));
    n.obs.assign(horizon_, Matrix(d_, support_));
    n.obs_node.assign(horizon_, std::vector<double>(support_, 0.0));
    for (std::size_t k = 0; k < paths_.size(); ++k) {
      const auto& path = paths_[k];
      const double q = e.q[k];
      for (std::size_t t = 0; t < horizon_; ++t) {
        n.node(t, path[t]) += q;
        if (t + 1 < horizon_) n.pair[t](path[t], path[t + 1]) += q;
        for (std::size_t s = 0; s < support_; ++s) n.obs[t](path[t], s) += q * e.resp[t](path[t], s);
      }
    }
    for (std::size_t t = 0; t < horizon_; ++t)
      for (std::size_t x = 0; x < d_; ++x)
        for (std::size_t s = 0; s < support_; ++s) n.obs_node[t][s] += n.obs[t](x, s);
    return n;
  }

 private:
  struct Var {
    std::size_t t;
    std::size_t s;
    double w;
  };
  std::size_t d_;
  std::size_t horizon_;
  std::size_t support_;
  std::vector<Var> vars_;
  std::vector<Matrix> loglik_;
  std::vector<std::vector<std::size_t>> paths_;
  std::vector<double> log_prior_;
};

// Solves a small dense system by Gaussian elimination with partial pivoting.
std::vector<double> solve_dense(Matrix a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
    if (piv != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a(col, c), a(piv, c));
      std::swap(b[col], b[piv]);
    }
    const double diag = a(col, col);
    if (diag == 0.0) continue;
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a(r, col) / diag;
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) a(r, c) -= f * a(col, c);
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double acc = b[i];
    for (std::size_t c = i + 1; c < n; ++c) acc -= a(i, c) * x[c];
    x[i] = a(i, i) != 0.0 ? acc / a(i, i) : 0.0;
  }
  return x;
}

double inf_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

AggregateMarginals brute_force_minimize(const HmmModel& model, const AggregateObservations& obs,
                                        double tol) {
  require(tol > 0.0, "oracle tolerance must be positive");
  obs.check_against(model);
  require(model.num_states() <= kOracleMaxStates && model.horizon() <= kOracleMaxHorizon &&
              obs.support_size() <= kOracleMaxSupport,
          "instance exceeds the brute-force oracle limits (d <= 3, T <= 3, support <= 4)");

  const PathDual dual(model, obs);
  const std::size_t n = dual.size();
  constexpr std::size_t kRestarts = 3;
  constexpr std::size_t kMaxIter = 500;
  Rng rng(0x0bacc1e);

  bool found = false;
  PathDual::Eval best;
  for (std::size_t restart = 0; restart < kRestarts; ++restart) {
    std::vector<double> lambda(n, 0.0);
    if (restart > 0)
      for (double& v : lambda) v = rng.normal();
    auto cur = dual.evaluate(lambda, true);
    for (std::size_t it = 0; it < kMaxIter && inf_norm(cur.grad) >= tol; ++it) {
      Matrix h = cur.cov;
      double scale = 0.0;
      for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, h(i, i));
      for (std::size_t i = 0; i < n; ++i) h(i, i) += 1e-12 + 1e-10 * scale;
      const auto step = solve_dense(h, cur.grad);
      double slope = 0.0;
      for (std::size_t i = 0; i < n; ++i) slope += cur.grad[i] * step[i];
      double eta = 1.0;
      bool moved = false;
      for (int halving = 0; halving < 60; ++halving, eta *= 0.5) {
        std::vector<double> trial(lambda);
        for (std::size_t i = 0; i < n; ++i) trial[i] += eta * step[i];
        auto next = dual.evaluate(trial, true);
        if (next.value >= cur.value + 1e-4 * eta * slope) {
          lambda = std::move(trial);
          cur = std::move(next);
          moved = true;
          break;
        }
      }
      if (!moved) break;
    }
    if (inf_norm(cur.grad) < tol && (!found || cur.value > best.value)) {
      best = std::move(cur);
      found = true;
    }
  }
  if (!found) throw std::runtime_error("brute-force oracle did not reach the requested tolerance");
  return dual.marginals(best);
}

}  // namespace aggfilter::free_energy
