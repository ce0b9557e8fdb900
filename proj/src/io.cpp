#include "aggfilter/io.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>

#include "aggfilter/errors.hpp"

namespace aggfilter::io {

using detail::require;

namespace {

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

Matrix matrix_from_json(const json& j, const char* what) {
  require(j.is_array(), std::string(what) + " must be an array of rows");
  const std::size_t rows = j.size();
  const std::size_t cols = rows == 0 ? 0 : j.at(0).size();
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    require(j[r].is_array() && j[r].size() == cols, std::string(what) + " rows must have equal length");
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

Matrix square_from_json(const json& j, std::size_t d, const char* what) {
  require(j.is_array(), std::string(what) + " must be an array");
  if (!j.empty() && j.at(0).is_number()) {
    require(j.size() == d * d, std::string(what) + " flat form needs d*d entries");
    Matrix m(d, d);
    for (std::size_t i = 0; i < d * d; ++i) m.data()[i] = j[i].get<double>();
    return m;
  }
  Matrix m = matrix_from_json(j, what);
  require(m.rows() == d && m.cols() == d, std::string(what) + " must be d x d");
  return m;
}

std::vector<double> point_from_json(const json& j) {
  if (j.is_number()) return {j.get<double>()};
  require(j.is_array(), "a sample point must be a number or an array");
  return j.get<std::vector<double>>();
}

// JSON has no infinities; they are written as null.
json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_or_neg_inf(const json& j) {
  return j.is_null() ? -std::numeric_limits<double>::infinity() : j.get<double>();
}

}  // namespace

json model_to_json(const HmmModel& model) {
  json j;
  j["d"] = model.num_states();
  j["T"] = model.horizon();
  j["obs_dim"] = model.obs_dim();
  j["initial_dist"] = model.initial_dist();
  j["transition"] = matrix_to_json(model.transition());
  if (const auto* disc = std::get_if<DiscreteEmission>(&model.emission())) {
    j["emission"] = {{"kind", "discrete"}, {"table", matrix_to_json(disc->table)}};
  } else {
    const auto& g = std::get<GaussianEmission>(model.emission());
    j["emission"] = {{"kind", "gaussian"},
                     {"means", matrix_to_json(g.means)},
                     {"variances", matrix_to_json(g.variances)}};
  }
  return j;
}

HmmModel model_from_json(const json& j) {
  const auto d = j.at("d").get<std::size_t>();
  const auto horizon = j.at("T").get<std::size_t>();
  auto initial = j.at("initial_dist").get<std::vector<double>>();
  require(initial.size() == d, "initial_dist must have d entries");
  Matrix transition = square_from_json(j.at("transition"), d, "transition");
  const json& e = j.at("emission");
  const auto kind = e.at("kind").get<std::string>();
  if (kind == "discrete")
    return HmmModel(std::move(initial), std::move(transition),
                    DiscreteEmission{matrix_from_json(e.at("table"), "table")}, horizon);
  require(kind == "gaussian", "emission kind must be 'discrete' or 'gaussian'");
  GaussianEmission g{matrix_from_json(e.at("means"), "means"),
                     matrix_from_json(e.at("variances"), "variances")};
  if (j.contains("obs_dim"))
    require(j["obs_dim"].get<std::size_t>() == g.means.cols(), "obs_dim does not match means");
  return HmmModel(std::move(initial), std::move(transition), std::move(g), horizon);
}

json observations_to_json(const AggregateObservations& obs) {
  json j;
  j["T"] = obs.horizon();
  json data = json::array();
  if (obs.kind() == ObservationKind::Histogram) {
    j["kind"] = "histogram";
    for (std::size_t t = 0; t < obs.horizon(); ++t) data.push_back(obs.histogram(t));
  } else {
    j["kind"] = "samples";
    for (std::size_t t = 0; t < obs.horizon(); ++t) data.push_back(matrix_to_json(obs.samples_at(t)));
  }
  j["data"] = std::move(data);
  return j;
}

AggregateObservations observations_from_json(const json& j) {
  const auto kind = j.at("kind").get<std::string>();
  const json& data = j.at("data");
  require(data.is_array(), "observation data must be an array");
  if (j.contains("T")) require(j["T"].get<std::size_t>() == data.size(), "T does not match data length");
  if (kind == "histogram") {
    std::vector<std::vector<double>> y;
    for (const auto& row : data) y.push_back(row.get<std::vector<double>>());
    return AggregateObservations::histograms(std::move(y));
  }
  require(kind == "samples", "observation kind must be 'histogram' or 'samples'");
  std::vector<Matrix> lists;
  for (const auto& list : data) {
    require(list.is_array() && !list.empty(), "each sample list must be a non-empty array");
    const std::size_t dim = point_from_json(list.at(0)).size();
    Matrix pts(list.size(), dim);
    for (std::size_t m = 0; m < list.size(); ++m) {
      const auto p = point_from_json(list[m]);
      require(p.size() == dim, "sample points must share one dimension");
      std::copy(p.begin(), p.end(), pts.row(m).begin());
    }
    lists.push_back(std::move(pts));
  }
  return AggregateObservations::samples(std::move(lists));
}

json batch_to_json(const TrajectoryBatch& batch) {
  json j;
  j["M"] = batch.population();
  j["T"] = batch.horizon();
  j["obs_dim"] = batch.obs_dim();
  json states = json::array();
  json observations = json::array();
  for (std::size_t m = 0; m < batch.population(); ++m) {
    json srow = json::array();
    json orow = json::array();
    for (std::size_t t = 0; t < batch.horizon(); ++t) {
      srow.push_back(batch.state(m, t));
      if (batch.is_discrete()) {
        orow.push_back(batch.symbol(m, t));
      } else {
        auto p = batch.point(m, t);
        orow.push_back(std::vector<double>(p.begin(), p.end()));
      }
    }
    states.push_back(std::move(srow));
    observations.push_back(std::move(orow));
  }
  j["states"] = std::move(states);
  j["observations"] = std::move(observations);
  return j;
}

TrajectoryBatch batch_from_json(const json& j) {
  const auto pop = j.at("M").get<std::size_t>();
  const auto horizon = j.at("T").get<std::size_t>();
  const json& states_j = j.at("states");
  const json& obs_j = j.at("observations");
  require(states_j.size() == pop && obs_j.size() == pop, "states and observations need M rows");
  std::vector<std::size_t> states;
  states.reserve(pop * horizon);
  for (const auto& row : states_j) {
    require(row.size() == horizon, "state rows need T entries");
    for (const auto& v : row) states.push_back(v.get<std::size_t>());
  }
  const bool discrete = obs_j.at(0).at(0).is_number_integer();
  if (discrete) {
    std::vector<std::size_t> symbols;
    symbols.reserve(pop * horizon);
    for (const auto& row : obs_j) {
      require(row.size() == horizon, "observation rows need T entries");
      for (const auto& v : row) symbols.push_back(v.get<std::size_t>());
    }
    return TrajectoryBatch(pop, horizon, std::move(states), std::move(symbols));
  }
  const std::size_t dim = point_from_json(obs_j.at(0).at(0)).size();
  std::vector<double> points;
  points.reserve(pop * horizon * dim);
  for (const auto& row : obs_j) {
    require(row.size() == horizon, "observation rows need T entries");
    for (const auto& v : row) {
      const auto p = point_from_json(v);
      require(p.size() == dim, "observation points must share one dimension");
      points.insert(points.end(), p.begin(), p.end());
    }
  }
  return TrajectoryBatch(pop, horizon, dim, std::move(states), std::move(points));
}

json marginals_to_json(const AggregateMarginals& n) {
  json j;
  j["node"] = matrix_to_json(n.node);
  j["pair"] = json::array();
  for (const auto& p : n.pair) j["pair"].push_back(matrix_to_json(p));
  j["obs"] = json::array();
  for (const auto& o : n.obs) j["obs"].push_back(matrix_to_json(o));
  j["obs_node"] = n.obs_node;
  return j;
}

AggregateMarginals marginals_from_json(const json& j) {
  AggregateMarginals n;
  n.node = matrix_from_json(j.at("node"), "node");
  for (const auto& p : j.at("pair")) n.pair.push_back(matrix_from_json(p, "pair"));
  if (j.contains("obs"))
    for (const auto& o : j["obs"]) n.obs.push_back(matrix_from_json(o, "obs"));
  if (j.contains("obs_node")) n.obs_node = j["obs_node"].get<std::vector<std::vector<double>>>();
  return n;
}

json messages_to_json(const MessageSet& m) {
  json j;
  j["alpha"] = matrix_to_json(m.alpha);
  j["beta"] = matrix_to_json(m.beta);
  j["gamma"] = matrix_to_json(m.gamma);
  j["xi"] = m.xi;
  json scale = json::array();
  for (const auto& row : m.xi_log_scale) {
    json r = json::array();
    for (double v : row) r.push_back(finite_or_null(v));
    scale.push_back(std::move(r));
  }
  j["xi_log_scale"] = std::move(scale);
  return j;
}

MessageSet messages_from_json(const json& j) {
  MessageSet m;
  m.alpha = matrix_from_json(j.at("alpha"), "alpha");
  m.beta = matrix_from_json(j.at("beta"), "beta");
  m.gamma = matrix_from_json(j.at("gamma"), "gamma");
  m.xi = j.at("xi").get<std::vector<std::vector<double>>>();
  for (const auto& row : j.at("xi_log_scale")) {
    std::vector<double> r;
    for (const auto& v : row) r.push_back(number_or_neg_inf(v));
    m.xi_log_scale.push_back(std::move(r));
  }
  return m;
}

json result_to_json(const SolveResult& r) {
  json j;
  j["converged"] = r.converged;
  j["sweeps"] = r.sweeps;
  j["final_delta"] = r.final_delta;
  j["per_sweep_delta"] = r.per_sweep_delta;
  j["marginals"] = marginals_to_json(r.marginals);
  j["floor_hits"] = r.floor_hits;
  j["messages"] = messages_to_json(r.messages);
  return j;
}

SolveResult result_from_json(const json& j) {
  SolveResult r;
  r.converged = j.at("converged").get<bool>();
  r.sweeps = j.at("sweeps").get<std::size_t>();
  r.final_delta = j.at("final_delta").get<double>();
  r.per_sweep_delta = j.at("per_sweep_delta").get<std::vector<double>>();
  r.marginals = marginals_from_json(j.at("marginals"));
  r.floor_hits = j.value("floor_hits", std::size_t{0});
  require(j.contains("messages"), "result file has no messages");
  r.messages = messages_from_json(j["messages"]);
  return r;
}

json report_to_json(const free_energy::FreeEnergyReport& r) {
  json j;
  j["value"] = finite_or_null(r.value);
  j["evidence_residual"] = r.evidence_residual;
  j["constraint_residuals"] = {{"simplex", r.constraints.simplex},
                               {"pair_to_node", r.constraints.pair_to_node},
                               {"obs_to_node", r.constraints.obs_to_node},
                               {"obs_to_obs_node", r.constraints.obs_to_obs_node},
                               {"pass", r.constraints.pass}};
  j["kkt_residuals"] = {{"alpha_beta", r.kkt.alpha_beta},
                        {"beta_gamma", r.kkt.beta_gamma},
                        {"alpha_gamma", r.kkt.alpha_gamma},
                        {"evidence_ratio", r.kkt.evidence_ratio},
                        {"recursion", r.kkt.recursion}};
  return j;
}

void write_marginals_csv(std::ostream& out, const AggregateMarginals& n) {
  out << "t,x,value\n" << std::setprecision(17);
  for (std::size_t t = 0; t < n.node.rows(); ++t)
    for (std::size_t x = 0; x < n.node.cols(); ++x) out << t << ',' << x << ',' << n.node(t, x) << '\n';
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InvalidArgument("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

}  // namespace aggfilter::io
