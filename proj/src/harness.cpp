#include "aggfilter/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <thread>

#include "aggfilter/errors.hpp"
#include "aggfilter/free_energy.hpp"
#include "aggfilter/model.hpp"

namespace aggfilter::harness {

using detail::require;
using nlohmann::json;

namespace {

std::vector<std::uint64_t> seed_range(std::uint64_t n) {
  std::vector<std::uint64_t> s(n);
  for (std::uint64_t i = 0; i < n; ++i) s[i] = i;
  return s;
}

std::vector<std::size_t> size_list(const json& j, const char* name) {
  if (j.is_array()) return j.get<std::vector<std::size_t>>();
  require(j.is_number_unsigned() || j.is_number_integer(), std::string(name) + " must be an integer or a list");
  return {j.get<std::size_t>()};
}

std::size_t swept_value(const ExperimentConfig& c, const RunRow& r) {
  const auto p = c.swept_parameter();
  if (p == "d") return r.d;
  if (p == "T") return r.T;
  return r.M;
}

const std::vector<std::size_t>& swept_values(const ExperimentConfig& c) {
  const auto p = c.swept_parameter();
  if (p == "d") return c.d;
  if (p == "T") return c.T;
  return c.M;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Unbiased sample variance; 0 for fewer than two values.
double variance_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

ExperimentRecord run_grid(const ExperimentConfig& config, bool verify) {
  config.validate();
  struct Job {
    std::size_t d, T, M;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t d : config.d)
    for (std::size_t t : config.T)
      for (std::size_t m : config.M)
        for (std::uint64_t seed : config.seeds) jobs.push_back({d, t, m, seed});

  ExperimentRecord record;
  record.config = config;
  record.rows.resize(jobs.size());
  auto work = [&](std::size_t i) {
    const Job& j = jobs[i];
    record.rows[i] = run_instance(j.d, j.T, j.M, config.obs_dim, j.seed, config.solver, verify);
  };

  const std::size_t workers = std::min(thread_budget(), jobs.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) work(i);
      });
  }

  std::stable_sort(record.rows.begin(), record.rows.end(), [&](const RunRow& a, const RunRow& b) {
    const auto va = swept_value(config, a);
    const auto vb = swept_value(config, b);
    return va != vb ? va < vb : a.seed < b.seed;
  });

  std::vector<std::size_t> values = swept_values(config);
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  for (std::size_t v : values) {
    SummaryRow s;
    s.value = v;
    std::vector<double> sweeps;
    std::vector<double> times;
    for (const auto& r : record.rows) {
      if (swept_value(config, r) != v) continue;
      ++s.runs;
      sweeps.push_back(static_cast<double>(r.sweeps));
      if (r.converged) {
        ++s.converged;
        times.push_back(r.wall_time_s);
      }
    }
    s.mean_sweeps = mean_of(sweeps);
    s.var_sweeps = variance_of(sweeps);
    s.mean_time_s = mean_of(times);
    s.var_time_s = variance_of(times);
    record.summary.push_back(s);
  }
  return record;
}

}  // namespace

// splitmix64 finalizer, so model and trajectory streams never share a seed.
std::uint64_t trajectory_seed(std::uint64_t model_seed) {
  std::uint64_t z = model_seed + 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::ErrorConvergence: return "error_convergence";
    case ExperimentKind::ScaleT: return "scale_T";
    case ExperimentKind::ScaleD: return "scale_d";
    case ExperimentKind::ScaleM: return "scale_M";
    case ExperimentKind::Verify: return "verify";
  }
  return "unknown";
}

ExperimentKind kind_from_string(const std::string& name) {
  for (auto k : {ExperimentKind::ErrorConvergence, ExperimentKind::ScaleT, ExperimentKind::ScaleD,
                 ExperimentKind::ScaleM, ExperimentKind::Verify})
    if (to_string(k) == name) return k;
  throw InvalidArgument("unknown experiment kind '" + name + "'");
}

ExperimentConfig ExperimentConfig::defaults(ExperimentKind kind) {
  ExperimentConfig c;
  c.kind = kind;
  c.d = {20};
  c.T = {20};
  c.M = {200};
  c.seeds = seed_range(10);
  switch (kind) {
    case ExperimentKind::ErrorConvergence: c.M = {200, 500}; break;
    case ExperimentKind::ScaleT: c.T = {5, 10, 20, 40, 80}; break;
    // Capped at 64 states to keep desk runs short.
    case ExperimentKind::ScaleD: c.d = {4, 8, 16, 32, 64}; break;
    case ExperimentKind::ScaleM: c.M = {100, 200, 400, 800, 1600}; break;
    case ExperimentKind::Verify:
      c.d = {4};
      c.T = {5};
      c.M = {100};
      c.solver.tol = 1e-10;
      c.solver.max_sweeps = 5000;
      break;
  }
  c.output_dir = "results/" + to_string(kind);
  return c;
}

std::string ExperimentConfig::swept_parameter() const {
  switch (kind) {
    case ExperimentKind::ScaleT: return "T";
    case ExperimentKind::ScaleD: return "d";
    default: return "M";
  }
}

void ExperimentConfig::validate() const {
  require(!seeds.empty(), "seeds must be non-empty");
  require(!d.empty() && !T.empty() && !M.empty(), "d, T and M need at least one value");
  const auto swept = swept_parameter();
  require(swept == "d" || d.size() == 1, "only " + swept + " may list several values for " + to_string(kind));
  require(swept == "T" || T.size() == 1, "only " + swept + " may list several values for " + to_string(kind));
  require(swept == "M" || M.size() == 1, "only " + swept + " may list several values for " + to_string(kind));
  for (auto v : d) require(v >= 2, "d must be at least 2");
  for (auto v : T) require(v >= 1, "T must be positive");
  for (auto v : M) require(v >= 1, "M must be positive");
  require(obs_dim >= 1, "obs_dim must be positive");
  solver.validate();
}

ExperimentConfig config_from_json(const json& j) {
  auto c = ExperimentConfig::defaults(kind_from_string(j.at("kind").get<std::string>()));
  if (j.contains("d")) c.d = size_list(j["d"], "d");
  if (j.contains("T")) c.T = size_list(j["T"], "T");
  if (j.contains("M")) c.M = size_list(j["M"], "M");
  if (j.contains("obs_dim")) c.obs_dim = j["obs_dim"].get<std::size_t>();
  if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  if (j.contains("solver")) {
    const json& s = j["solver"];
    c.solver.tol = s.value("tol", c.solver.tol);
    c.solver.max_sweeps = s.value("max_sweeps", c.solver.max_sweeps);
    c.solver.density_floor = s.value("density_floor", c.solver.density_floor);
  }
  if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
  c.validate();
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  return {{"kind", to_string(c.kind)},
          {"d", c.d},
          {"T", c.T},
          {"M", c.M},
          {"obs_dim", c.obs_dim},
          {"seeds", c.seeds},
          {"solver", {{"tol", c.solver.tol},
                      {"max_sweeps", c.solver.max_sweeps},
                      {"density_floor", c.solver.density_floor}}},
          {"output_dir", c.output_dir}};
}

RunRow run_instance(std::size_t d, std::size_t T, std::size_t M, std::size_t obs_dim,
                    std::uint64_t seed, const SolverConfig& solver, bool verify) {
  RunRow row;
  row.seed = seed;
  row.d = d;
  row.T = T;
  row.M = M;
  try {
    const HmmModel model = generate_random_model(d, T, obs_dim, seed);
    const TrajectoryBatch batch = sample_trajectories(model, M, trajectory_seed(seed));
    const AggregateMarginals truth = aggregate_counts(batch, model);
    const AggregateObservations obs = extract_observations(batch, model);

    auto track = [&](std::size_t, const Matrix& node) {
      row.per_sweep_error.push_back(l1_error(node, truth.node));
    };
    const auto start = std::chrono::steady_clock::now();
    CollectiveFilter filter(model, obs, solver);
    filter.initialize();
    row.initial_error = l1_error(filter.node_marginals(), truth.node);
    const SolveResult result = filter.run(track);
    const auto stop = std::chrono::steady_clock::now();

    row.wall_time_s = std::chrono::duration<double>(stop - start).count();
    row.sweeps = result.sweeps;
    row.converged = result.converged;
    row.final_error = l1_error(result.marginals, truth);
    row.polytope_residual = free_energy::check_polytope(result.marginals, 0.0).max();
    row.counts_residual = free_energy::check_polytope(truth, 0.0).max();
    if (verify) row.kkt_residual = free_energy::kkt_residuals(result.messages, model, obs).residuals.max();
  } catch (const std::exception& e) {
    row.converged = false;
    row.failure = e.what();
  }
  return row;
}

ExperimentRecord run_error_convergence(const ExperimentConfig& config) {
  require(config.kind == ExperimentKind::ErrorConvergence, "expected an error_convergence config");
  return run_grid(config, false);
}

ExperimentRecord run_scaling(const ExperimentConfig& config) {
  require(config.kind == ExperimentKind::ScaleT || config.kind == ExperimentKind::ScaleD ||
              config.kind == ExperimentKind::ScaleM,
          "expected a scale_T, scale_d or scale_M config");
  return run_grid(config, false);
}

ExperimentRecord run_verify(const ExperimentConfig& config) {
  require(config.kind == ExperimentKind::Verify, "expected a verify config");
  return run_grid(config, true);
}

ExperimentRecord run_experiment(const ExperimentConfig& config) {
  switch (config.kind) {
    case ExperimentKind::ErrorConvergence: return run_error_convergence(config);
    case ExperimentKind::Verify: return run_verify(config);
    default: return run_scaling(config);
  }
}

std::size_t thread_budget() {
  const char* env = std::getenv("AGGFILTER_THREADS");
  if (env == nullptr || *env == '\0') return 0;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || v < 0) return 0;
  return static_cast<std::size_t>(v);
}

json record_to_json(const ExperimentRecord& record) {
  json rows = json::array();
  for (const auto& r : record.rows) {
    json j = {{"seed", r.seed},
              {"d", r.d},
              {"T", r.T},
              {"M", r.M},
              {"sweeps", r.sweeps},
              {"converged", r.converged},
              {"final_error", r.final_error},
              {"initial_error", r.initial_error},
              {"wall_time_s", r.wall_time_s},
              {"per_sweep_error", r.per_sweep_error},
              {"polytope_residual", r.polytope_residual}};
    if (record.config.kind == ExperimentKind::Verify) j["kkt_residual"] = r.kkt_residual;
    if (!r.failure.empty()) j["failure"] = r.failure;
    rows.push_back(std::move(j));
  }
  json summary = json::array();
  for (const auto& s : record.summary)
    summary.push_back({{"parameter", record.config.swept_parameter()},
                       {"value", s.value},
                       {"runs", s.runs},
                       {"converged", s.converged},
                       {"mean_sweeps", s.mean_sweeps},
                       {"var_sweeps", s.var_sweeps},
                       {"mean_time_s", s.mean_time_s},
                       {"var_time_s", s.var_time_s}});
  return {{"config", config_to_json(record.config)}, {"rows", rows}, {"summary", summary}};
}

void write_runs_csv(std::ostream& out, const ExperimentRecord& record) {
  const auto kind = to_string(record.config.kind);
  out << "kind,seed,d,T,M,sweeps,converged,final_error,wall_time_s\n" << std::setprecision(17);
  for (const auto& r : record.rows)
    out << kind << ',' << r.seed << ',' << r.d << ',' << r.T << ',' << r.M << ',' << r.sweeps << ','
        << (r.converged ? 1 : 0) << ',' << r.final_error << ',' << r.wall_time_s << '\n';
}

void write_curves_csv(std::ostream& out, const ExperimentRecord& record, std::size_t value) {
  out << "seed,sweep,error\n" << std::setprecision(17);
  for (const auto& r : record.rows) {
    if (swept_value(record.config, r) != value) continue;
    out << r.seed << ",0," << r.initial_error << '\n';
    for (std::size_t k = 0; k < r.per_sweep_error.size(); ++k)
      out << r.seed << ',' << (k + 1) << ',' << r.per_sweep_error[k] << '\n';
  }
}

void write_summary_csv(std::ostream& out, const ExperimentRecord& record) {
  out << "parameter,value,runs,converged,mean_sweeps,var_sweeps,mean_time_s,var_time_s\n"
      << std::setprecision(17);
  for (const auto& s : record.summary)
    out << record.config.swept_parameter() << ',' << s.value << ',' << s.runs << ',' << s.converged
        << ',' << s.mean_sweeps << ',' << s.var_sweeps << ',' << s.mean_time_s << ','
        << s.var_time_s << '\n';
}

std::vector<std::filesystem::path> write_record(const ExperimentRecord& record,
                                                const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto kind = to_string(record.config.kind);
  std::vector<std::filesystem::path> written;
  auto open = [&](const std::string& name) {
    written.push_back(dir / name);
    std::ofstream f(written.back());
    if (!f) throw std::runtime_error("cannot write " + written.back().string());
    return f;
  };
  {
    auto f = open(kind + ".csv");
    write_runs_csv(f, record);
  }
  {
    auto f = open(kind + "_summary.csv");
    write_summary_csv(f, record);
  }
  for (const auto& s : record.summary) {
    auto f = open(kind + "_curves_" + record.config.swept_parameter() + std::to_string(s.value) + ".csv");
    write_curves_csv(f, record, s.value);
  }
  {
    auto f = open(kind + ".json");
    f << record_to_json(record).dump(1) << '\n';
  }
  return written;
}

}  // namespace aggfilter::harness
