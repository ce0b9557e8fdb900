#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

#include "aggfilter/solver.hpp"

namespace aggfilter::harness {

enum class ExperimentKind { ErrorConvergence, ScaleT, ScaleD, ScaleM, Verify };

std::string to_string(ExperimentKind kind);
ExperimentKind kind_from_string(const std::string& name);

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::ErrorConvergence;
  std::vector<std::size_t> d;
  std::vector<std::size_t> T;
  std::vector<std::size_t> M;
  std::size_t obs_dim = 1;
  std::vector<std::uint64_t> seeds;
  SolverConfig solver;
  std::string output_dir = "results";

  /// Default grid for a kind: d=T=20 with M in {200, 500} for error curves,
  /// T, d or M sweeps around d=T=20, M=200, ten seeds 0..9.
  static ExperimentConfig defaults(ExperimentKind kind);

  /// Name ("d", "T" or "M") of the swept parameter.
  std::string swept_parameter() const;
  void validate() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& c);

struct RunRow {
  std::uint64_t seed = 0;
  std::size_t d = 0;
  std::size_t T = 0;
  std::size_t M = 0;
  std::size_t sweeps = 0;
  bool converged = false;
  double final_error = 0.0;
  /// Error of the initial messages, before the first sweep.
  double initial_error = 0.0;
  double wall_time_s = 0.0;
  std::vector<double> per_sweep_error;
  /// Largest local-polytope violation of the solver output and of the
  /// ground-truth counts.
  double polytope_residual = 0.0;
  double counts_residual = 0.0;
  /// Filled for verify runs only.
  double kkt_residual = 0.0;
  /// Solver failure message, empty on success.
  std::string failure;
};

/// Mean and variance over the runs sharing one parameter value. Wall time
/// statistics use converged runs only.
struct SummaryRow {
  std::size_t value = 0;
  std::size_t runs = 0;
  std::size_t converged = 0;
  double mean_sweeps = 0.0;
  double var_sweeps = 0.0;
  double mean_time_s = 0.0;
  double var_time_s = 0.0;
};

struct ExperimentRecord {
  ExperimentConfig config;
  std::vector<RunRow> rows;  // sorted by (swept value, seed)
  std::vector<SummaryRow> summary;
};

/// Seed of the trajectory draw for a given model seed.
std::uint64_t trajectory_seed(std::uint64_t model_seed);

/// One instance: random model from `seed`, M trajectories, ground-truth
/// counts, CO-CFB solve with per-sweep L1 error against the counts.
RunRow run_instance(std::size_t d, std::size_t T, std::size_t M, std::size_t obs_dim,
                    std::uint64_t seed, const SolverConfig& solver, bool verify = false);

ExperimentRecord run_error_convergence(const ExperimentConfig& config);
ExperimentRecord run_scaling(const ExperimentConfig& config);
ExperimentRecord run_verify(const ExperimentConfig& config);
ExperimentRecord run_experiment(const ExperimentConfig& config);

/// Worker count from AGGFILTER_THREADS (unset or 0 = serial).
std::size_t thread_budget();

nlohmann::json record_to_json(const ExperimentRecord& record);
/// Main CSV: kind,seed,d,T,M,sweeps,converged,final_error,wall_time_s
void write_runs_csv(std::ostream& out, const ExperimentRecord& record);
/// Long-format curves, seed,sweep,error, for one swept value. Sweep 0 is
/// the initial error.
void write_curves_csv(std::ostream& out, const ExperimentRecord& record, std::size_t value);
void write_summary_csv(std::ostream& out, const ExperimentRecord& record);
/// Writes <kind>.csv, <kind>.json, <kind>_summary.csv and one
/// <kind>_curves_<param><value>.csv per swept value into dir.
std::vector<std::filesystem::path> write_record(const ExperimentRecord& record,
                                                const std::filesystem::path& dir);

/// simulate | filter | experiment | verify. Returns the process exit code.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace aggfilter::harness
