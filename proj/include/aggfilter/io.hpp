#pragma once

#include <filesystem>
#include <iosfwd>

#include "json.hpp"

#include "aggfilter/free_energy.hpp"
#include "aggfilter/model.hpp"
#include "aggfilter/solver.hpp"

namespace aggfilter::io {

using json = nlohmann::json;

// Model file: {d, T, obs_dim, initial_dist, transition, emission}. The
// transition is written as nested rows; a flat row-major array of d*d
// numbers is also accepted. emission is {kind: "discrete", table} or
// {kind: "gaussian", means, variances}.
json model_to_json(const HmmModel& model);
HmmModel model_from_json(const json& j);

// Observations file: {T, kind: "histogram" | "samples", data}. Histogram
// data is T arrays of K probabilities; sample data is T arrays of M points,
// each point an array of obs_dim numbers (a bare number is read as a 1-d point).
json observations_to_json(const AggregateObservations& obs);
AggregateObservations observations_from_json(const json& j);

// Batch file: {M, T, obs_dim, states: M x T, observations: M x T}.
json batch_to_json(const TrajectoryBatch& batch);
TrajectoryBatch batch_from_json(const json& j);

json marginals_to_json(const AggregateMarginals& n);
AggregateMarginals marginals_from_json(const json& j);

json messages_to_json(const MessageSet& m);
MessageSet messages_from_json(const json& j);

// {converged, sweeps, final_delta, per_sweep_delta, marginals, floor_hits, messages}
json result_to_json(const SolveResult& r);
SolveResult result_from_json(const json& j);

json report_to_json(const free_energy::FreeEnergyReport& r);

/// One row per (t, x): "t,x,value", t and x 0-indexed.
void write_marginals_csv(std::ostream& out, const AggregateMarginals& n);

json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const json& j);

}  // namespace aggfilter::io
