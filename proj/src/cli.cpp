#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "CLI11.hpp"

#include "aggfilter/errors.hpp"
#include "aggfilter/free_energy.hpp"
#include "aggfilter/harness.hpp"
#include "aggfilter/io.hpp"
#include "aggfilter/model.hpp"

namespace aggfilter::harness {

namespace {

struct SimulateArgs {
  std::size_t d = 3;
  std::size_t T = 4;
  std::size_t M = 10;
  std::uint64_t seed = 0;
  std::size_t obs_dim = 1;
  std::size_t symbols = 0;
  std::string out = ".";
};

struct FilterArgs {
  std::string model;
  std::string obs;
  std::string out;
  std::string csv;
  SolverConfig solver;
};

struct VerifyArgs {
  std::string result;
  std::string model;
  std::string obs;
  double tol = 1e-6;
  bool json = false;
};

int simulate(const SimulateArgs& a, std::ostream& out) {
  const HmmModel model = a.symbols > 0 ? generate_random_discrete_model(a.d, a.T, a.symbols, a.seed)
                                       : generate_random_model(a.d, a.T, a.obs_dim, a.seed);
  const TrajectoryBatch batch = sample_trajectories(model, a.M, a.seed + 1);
  const std::filesystem::path dir(a.out);
  std::filesystem::create_directories(dir);
  io::write_json_file(dir / "model.json", io::model_to_json(model));
  io::write_json_file(dir / "batch.json", io::batch_to_json(batch));
  io::write_json_file(dir / "obs.json", io::observations_to_json(extract_observations(batch, model)));
  io::write_json_file(dir / "truth.json", io::marginals_to_json(aggregate_counts(batch, model)));
  out << "wrote model.json, batch.json, obs.json, truth.json to " << dir.string() << '\n';
  return 0;
}

int filter(const FilterArgs& a, std::ostream& out) {
  const HmmModel model = io::model_from_json(io::read_json_file(a.model));
  const AggregateObservations obs = io::observations_from_json(io::read_json_file(a.obs));
  a.solver.validate();
  const SolveResult r = obs.kind() == ObservationKind::Histogram ? cfb_discrete(model, obs, a.solver)
                                                                  : co_cfb(model, obs, a.solver);
  const auto j = io::result_to_json(r);
  if (a.out.empty()) {
    out << j.dump(1) << '\n';
  } else {
    io::write_json_file(a.out, j);
    out << "converged=" << (r.converged ? "true" : "false") << " sweeps=" << r.sweeps
        << " delta=" << r.final_delta << '\n';
  }
  if (!a.csv.empty()) {
    std::ofstream f(a.csv);
    if (!f) throw InvalidArgument("cannot write " + a.csv);
    io::write_marginals_csv(f, r.marginals);
  }
  return 0;
}

int experiment(const std::string& config_path, const std::string& out_dir, std::ostream& out) {
  ExperimentConfig config = config_from_json(io::read_json_file(config_path));
  if (!out_dir.empty()) config.output_dir = out_dir;
  const ExperimentRecord record = run_experiment(config);
  for (const auto& p : write_record(record, config.output_dir)) out << p.string() << '\n';
  std::size_t failed = 0;
  for (const auto& r : record.rows) failed += r.failure.empty() ? 0 : 1;
  return failed == 0 ? 0 : 1;
}

void print_row(std::ostream& out, const std::string& name, double value, double tol) {
  out << std::left << std::setw(24) << name << std::right << std::setw(14) << std::scientific
      << std::setprecision(3) << value << "  " << (value < tol ? "ok" : "FAIL") << '\n';
}

int verify(const VerifyArgs& a, std::ostream& out) {
  const HmmModel model = io::model_from_json(io::read_json_file(a.model));
  const AggregateObservations obs = io::observations_from_json(io::read_json_file(a.obs));
  const SolveResult r = io::result_from_json(io::read_json_file(a.result));
  const auto rep = free_energy::make_report(r, model, obs, a.tol);
  if (a.json) {
    out << io::report_to_json(rep).dump(1) << '\n';
    return 0;
  }
  out << "free energy  " << std::setprecision(12) << rep.value << '\n';
  out << std::left << std::setw(24) << "check" << std::right << std::setw(14) << "residual"
      << "  status\n";
  print_row(out, "simplex", rep.constraints.simplex, a.tol);
  print_row(out, "pair_to_node", rep.constraints.pair_to_node, a.tol);
  print_row(out, "obs_to_node", rep.constraints.obs_to_node, a.tol);
  print_row(out, "obs_to_obs_node", rep.constraints.obs_to_obs_node, a.tol);
  print_row(out, "evidence", rep.evidence_residual, a.tol);
  print_row(out, "kkt_alpha_beta", rep.kkt.max_alpha_beta(), a.tol);
  print_row(out, "kkt_beta_gamma", rep.kkt.max_beta_gamma(), a.tol);
  print_row(out, "kkt_alpha_gamma", rep.kkt.max_alpha_gamma(), a.tol);
  print_row(out, "kkt_evidence_ratio", rep.kkt.max_evidence_ratio(), a.tol);
  print_row(out, "kkt_recursion", rep.kkt.max_recursion(), a.tol);
  return 0;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Aggregate filtering for hidden Markov models", "aggfilter"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Draw a random model and a trajectory batch");
  sim_cmd->add_option("--d", sim.d, "Number of hidden states")->required();
  sim_cmd->add_option("--T", sim.T, "Horizon")->required();
  sim_cmd->add_option("--M", sim.M, "Population size")->required();
  sim_cmd->add_option("--seed", sim.seed, "Random seed");
  sim_cmd->add_option("--obs-dim", sim.obs_dim, "Dimension of Gaussian observations");
  sim_cmd->add_option("--symbols", sim.symbols, "Use a discrete emission table with this many symbols");
  sim_cmd->add_option("--out", sim.out, "Output directory");

  FilterArgs flt;
  auto* flt_cmd = app.add_subcommand("filter", "Estimate aggregate marginals from observations");
  flt_cmd->add_option("--model", flt.model, "Model JSON")->required();
  flt_cmd->add_option("--obs", flt.obs, "Observations JSON")->required();
  flt_cmd->add_option("--out", flt.out, "Result JSON (default: stdout)");
  flt_cmd->add_option("--csv", flt.csv, "Node marginals CSV");
  flt_cmd->add_option("--tol", flt.solver.tol, "Convergence tolerance");
  flt_cmd->add_option("--max-sweeps", flt.solver.max_sweeps, "Sweep limit");
  flt_cmd->add_option("--density-floor", flt.solver.density_floor, "Lower clamp for evidence densities");

  std::string config_path;
  std::string out_dir;
  auto* exp_cmd = app.add_subcommand("experiment", "Run an experiment grid from a config file");
  exp_cmd->add_option("--config", config_path, "Experiment config JSON")->required();
  exp_cmd->add_option("--out", out_dir, "Output directory (overrides output_dir)");

  VerifyArgs ver;
  auto* ver_cmd = app.add_subcommand("verify", "Check constraints and stationarity of a result");
  ver_cmd->add_option("--result", ver.result, "Result JSON")->required();
  ver_cmd->add_option("--model", ver.model, "Model JSON")->required();
  ver_cmd->add_option("--obs", ver.obs, "Observations JSON")->required();
  ver_cmd->add_option("--tol", ver.tol, "Pass threshold for each residual");
  ver_cmd->add_flag("--json", ver.json, "Print the report as JSON");

  std::vector<std::string> storage;
  storage.reserve(args.size() + 1);
  storage.emplace_back("aggfilter");
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : storage) argv.push_back(s.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*sim_cmd) return simulate(sim, out);
    if (*flt_cmd) return filter(flt, out);
    if (*exp_cmd) return experiment(config_path, out_dir, out);
    return verify(ver, out);
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const nlohmann::json::exception& e) {
    err << "error: malformed input: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace aggfilter::harness
