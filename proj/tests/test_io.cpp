#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "aggfilter/errors.hpp"
#include "aggfilter/io.hpp"
#include "aggfilter/model.hpp"
#include "aggfilter/solver.hpp"

using namespace aggfilter;
using io::json;

namespace {

void check_same_model(const HmmModel& a, const HmmModel& b) {
  CHECK(a.initial_dist() == b.initial_dist());
  CHECK(a.transition() == b.transition());
  CHECK(a.horizon() == b.horizon());
  CHECK(a.is_discrete() == b.is_discrete());
  if (a.is_discrete()) {
    CHECK(std::get<DiscreteEmission>(a.emission()).table == std::get<DiscreteEmission>(b.emission()).table);
  } else {
    CHECK(std::get<GaussianEmission>(a.emission()).means == std::get<GaussianEmission>(b.emission()).means);
    CHECK(std::get<GaussianEmission>(a.emission()).variances ==
          std::get<GaussianEmission>(b.emission()).variances);
  }
}

}  // namespace

TEST_CASE("models round-trip exactly through text") {
  const auto g = generate_random_model(4, 6, 2, 3);
  check_same_model(g, io::model_from_json(json::parse(io::model_to_json(g).dump())));
  const auto d = generate_random_discrete_model(3, 5, 4, 3);
  check_same_model(d, io::model_from_json(json::parse(io::model_to_json(d).dump())));
  const auto j = io::model_to_json(g);
  CHECK(j.at("d") == 4);
  CHECK(j.at("T") == 6);
  CHECK(j.at("obs_dim") == 2);
  CHECK(j.at("emission").at("kind") == "gaussian");
  CHECK(io::model_to_json(d).at("emission").at("kind") == "discrete");
}

TEST_CASE("flat row-major transitions are accepted") {
  const auto g = generate_random_model(3, 2, 1, 1);
  auto j = io::model_to_json(g);
  json flat = json::array();
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c) flat.push_back(g.transition()(r, c));
  j["transition"] = flat;
  check_same_model(g, io::model_from_json(j));
}

TEST_CASE("malformed model files are rejected") {
  const auto g = generate_random_model(3, 2, 1, 1);
  auto j = io::model_to_json(g);
  j["transition"] = json::array({1.0, 0.0});
  CHECK_THROWS_AS(io::model_from_json(j), InvalidArgument);
  j = io::model_to_json(g);
  j["emission"]["kind"] = "poisson";
  CHECK_THROWS_AS(io::model_from_json(j), InvalidArgument);
  j = io::model_to_json(g);
  j["initial_dist"] = json::array({0.5, 0.5, 0.5});
  CHECK_THROWS_AS(io::model_from_json(j), InvalidArgument);
  j = io::model_to_json(g);
  j.erase("emission");
  CHECK_THROWS_AS(io::model_from_json(j), json::exception);
}

TEST_CASE("observations round-trip") {
  const auto g = generate_random_model(3, 4, 2, 2);
  const auto obs = extract_observations(sample_trajectories(g, 7, 2), g);
  const auto back = io::observations_from_json(json::parse(io::observations_to_json(obs).dump()));
  REQUIRE(back.kind() == ObservationKind::Samples);
  for (std::size_t t = 0; t < 4; ++t) CHECK(back.samples_at(t) == obs.samples_at(t));

  const auto d = generate_random_discrete_model(3, 4, 3, 2);
  const auto hist = extract_observations(sample_trajectories(d, 9, 2), d);
  const auto hback = io::observations_from_json(json::parse(io::observations_to_json(hist).dump()));
  REQUIRE(hback.kind() == ObservationKind::Histogram);
  for (std::size_t t = 0; t < 4; ++t) CHECK(hback.histogram(t) == hist.histogram(t));

  const json scalar = {{"T", 1}, {"kind", "samples"}, {"data", {{0.5, -1.0}}}};
  const auto s = io::observations_from_json(scalar);
  CHECK(s.samples_at(0).rows() == 2);
  CHECK(s.samples_at(0).cols() == 1);
  CHECK_THROWS_AS(io::observations_from_json(json{{"T", 2}, {"kind", "samples"}, {"data", {{0.5}}}}),
                  InvalidArgument);
  CHECK_THROWS_AS(io::observations_from_json(json{{"T", 1}, {"kind", "counts"}, {"data", {{1.0}}}}),
                  InvalidArgument);
}

TEST_CASE("batches round-trip") {
  const auto g = generate_random_model(3, 4, 2, 5);
  const auto b = sample_trajectories(g, 6, 5);
  const auto gb = io::batch_from_json(json::parse(io::batch_to_json(b).dump()));
  CHECK(gb.states() == b.states());
  CHECK(gb.points() == b.points());
  CHECK(gb.obs_dim() == 2);

  const auto d = generate_random_discrete_model(3, 4, 3, 5);
  const auto db = sample_trajectories(d, 6, 5);
  const auto back = io::batch_from_json(json::parse(io::batch_to_json(db).dump()));
  CHECK(back.is_discrete());
  CHECK(back.symbols() == db.symbols());
  CHECK(back.states() == db.states());
}

TEST_CASE("solve results round-trip including messages") {
  const auto g = generate_random_model(3, 4, 1, 8);
  const auto obs = extract_observations(sample_trajectories(g, 10, 8), g);
  const auto r = co_cfb(g, obs);
  const auto j = io::result_to_json(r);
  for (const char* key : {"converged", "sweeps", "final_delta", "per_sweep_delta", "marginals", "floor_hits"})
    CHECK(j.contains(key));
  const auto back = io::result_from_json(json::parse(j.dump()));
  CHECK(back.converged == r.converged);
  CHECK(back.sweeps == r.sweeps);
  CHECK(back.per_sweep_delta == r.per_sweep_delta);
  CHECK(back.marginals.node == r.marginals.node);
  CHECK(back.messages.alpha == r.messages.alpha);
  CHECK(back.messages.xi == r.messages.xi);
  CHECK(back.messages.xi_log_scale == r.messages.xi_log_scale);
}

TEST_CASE("marginals CSV has one row per step and state") {
  const auto g = generate_random_model(3, 4, 1, 8);
  const auto n = aggregate_counts(sample_trajectories(g, 10, 8), g);
  std::ostringstream out;
  io::write_marginals_csv(out, n);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "t,x,value");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 12);
}

TEST_CASE("file helpers") {
  const auto dir = std::filesystem::temp_directory_path() / "aggfilter_io_test";
  std::filesystem::create_directories(dir);
  io::write_json_file(dir / "x.json", json{{"a", 1}});
  CHECK(io::read_json_file(dir / "x.json").at("a") == 1);
  CHECK_THROWS_AS(io::read_json_file(dir / "missing.json"), InvalidArgument);
  std::ofstream(dir / "bad.json") << "{not json";
  CHECK_THROWS_AS(io::read_json_file(dir / "bad.json"), InvalidArgument);
  std::filesystem::remove_all(dir);
}
