#include <doctest.h>

#include <fstream>

#include <nlohmann/json.hpp>

#include "bidsim/network.hpp"
#include "case_factory.hpp"

using namespace bidsim;
using nlohmann::json;

TEST_SUITE_BEGIN("network");

TEST_CASE("single-line incidence column is (+1, -1)") {
  NetworkCase cse = testcases::two_bus(0.0, 1.0, 2.0, {{0.1, 1.0}}, {});
  ConstraintMatrices m = build_matrices(cse);
  REQUIRE(m.j1.rows() == 2);
  REQUIRE(m.j1.cols() == 1);
  CHECK(m.j1(0, 0) == 1.0);
  CHECK(m.j1(1, 0) == -1.0);
}

TEST_CASE("preset assignment matrix maps generator pairs to buses 1, 2, 3") {
  NetworkCase cse = NetworkCase::preset("ieee9-modified");
  ConstraintMatrices m = build_matrices(cse);
  REQUIRE(m.j2.rows() == 9);
  REQUIRE(m.j2.cols() == 6);
  const int expected_bus[6] = {1, 1, 2, 2, 3, 3};
  for (int n = 0; n < 6; ++n) {
    CHECK(m.j2(expected_bus[n] - 1, n) == 1.0);
    CHECK(m.j2.col(n).sum() == 1.0);
  }
}

TEST_CASE("stacked limit rows encode the flow box in both directions") {
  NetworkCase cse = NetworkCase::preset("ieee9-modified");
  ConstraintMatrices m = build_matrices(cse);
  const int ne = cse.n_lines();
  REQUIRE(m.j3.rows() == 2 * ne);
  REQUIRE(m.zbar_c.size() == 2 * ne);
  for (int e = 0; e < ne; ++e) {
    CHECK(m.zbar_c[e] == cse.lines[e].limit);
    CHECK(m.zbar_c[ne + e] == cse.lines[e].limit);
  }

  SubStream stream(99, "flowbox");
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd z(ne);
    for (int e = 0; e < ne; ++e) z[e] = stream.uniform(-5.0, 5.0);
    bool in_box = true;
    for (int e = 0; e < ne; ++e)
      if (std::abs(z[e]) > cse.lines[e].limit) in_box = false;
    bool stacked_ok = ((m.j3 * z).array() <= m.zbar_c.array()).all();
    CHECK(in_box == stacked_ok);
  }
}

TEST_CASE("validation confirms the preset's paired-generator hypothesis") {
  ValidationReport rep = validate_case(NetworkCase::preset("ieee9-modified"));
  CHECK(rep.structurally_sound);
  CHECK(rep.generator_hypothesis);
  CHECK(rep.errors.empty());
  CHECK(rep.warnings.empty());
  CHECK(rep.total_load == doctest::Approx(7.0));
}

TEST_CASE("a lone generator at a bus is flagged as a hypothesis warning") {
  NetworkCase cse = testcases::two_bus(0.0, 1.0, 2.0, {{0.1, 1.0}}, {{0.1, 1.0}, {0.2, 2.0}});
  ValidationReport rep = validate_case(cse);
  CHECK(rep.structurally_sound);
  CHECK_FALSE(rep.generator_hypothesis);
  REQUIRE_FALSE(rep.warnings.empty());
  CHECK(rep.warnings.front().find("bus 1") != std::string::npos);
}

TEST_CASE("total load sums the bus demands") {
  NetworkCase variant = NetworkCase::preset("ieee9-modified");
  variant.buses[8].load = 1.0; // loads (2, 3, 1) at buses 5, 7, 9
  CHECK(total_load(variant) == doctest::Approx(6.0));

  NetworkCase empty = testcases::single_bus(0.0, {{1.0, 0.0}});
  CHECK(total_load(empty) == 0.0);

  NetworkCase uniform;
  for (int i = 1; i <= 5; ++i) uniform.buses.push_back({i, 0.75});
  CHECK(total_load(uniform) == doctest::Approx(5 * 0.75));
}

TEST_CASE("constraint assembly is deterministic and respects declaration order") {
  NetworkCase a = NetworkCase::preset("ieee9-modified");
  NetworkCase b = NetworkCase::preset("ieee9-modified");
  ConstraintMatrices ma = build_matrices(a), mb = build_matrices(b);
  CHECK(ma.j1 == mb.j1);
  CHECK(ma.j2 == mb.j2);
  CHECK(ma.j3 == mb.j3);
  CHECK(ma.zbar_c == mb.zbar_c);
}

TEST_CASE("random small cases have unit-sum incidence/assignment columns") {
  SubStream stream(4242, "colsums");
  for (int trial = 0; trial < 25; ++trial) {
    NetworkCase cse = testcases::random_market_case(stream);
    ConstraintMatrices m = build_matrices(cse);
    for (int e = 0; e < m.j1.cols(); ++e) {
      CHECK(m.j1.col(e).sum() == doctest::Approx(0.0));
      CHECK(m.j1.col(e).cwiseAbs().sum() == doctest::Approx(2.0));
    }
    for (int n = 0; n < m.j2.cols(); ++n) CHECK(m.j2.col(n).sum() == doctest::Approx(1.0));
  }
}

TEST_CASE("structural rejection names the offending entity") {
  NetworkCase dangling = testcases::single_bus(1.0, {{0.1, 1.0}});
  dangling.generators[0].bus = 7;
  ValidationReport rep = validate_case(dangling);
  CHECK_FALSE(rep.structurally_sound);
  REQUIRE_FALSE(rep.errors.empty());
  CHECK(rep.errors.front().find("generator 1") != std::string::npos);
  CHECK_THROWS_AS(build_matrices(dangling), StructuralError);

  NetworkCase self_loop = testcases::two_bus(0.0, 1.0, 2.0, {{0.1, 1.0}, {0.1, 1.0}}, {});
  self_loop.lines[0].to = 1;
  CHECK_FALSE(validate_case(self_loop).structurally_sound);

  NetworkCase parallel = testcases::two_bus(0.0, 1.0, 2.0, {{0.1, 1.0}, {0.1, 1.0}}, {});
  parallel.lines.push_back({1, 2, 1.0});
  CHECK_FALSE(validate_case(parallel).structurally_sound);

  NetworkCase bad_limit = testcases::two_bus(0.0, 1.0, 0.0, {{0.1, 1.0}, {0.1, 1.0}}, {});
  CHECK_FALSE(validate_case(bad_limit).structurally_sound);

  NetworkCase bad_a = testcases::single_bus(1.0, {{0.0, 1.0}, {0.1, 1.0}});
  CHECK_FALSE(validate_case(bad_a).structurally_sound);

  NetworkCase bad_c = testcases::single_bus(1.0, {{0.1, -0.5}, {0.1, 1.0}});
  CHECK_FALSE(validate_case(bad_c).structurally_sound);

  NetworkCase bad_load = testcases::single_bus(-1.0, {{0.1, 1.0}, {0.1, 1.0}});
  CHECK_FALSE(validate_case(bad_load).structurally_sound);

  NetworkCase dup_id = testcases::single_bus(1.0, {{0.1, 1.0}, {0.1, 1.0}});
  dup_id.generators[1].id = 1;
  CHECK_FALSE(validate_case(dup_id).structurally_sound);
}

TEST_CASE("case JSON round-trips and rejects unknown keys") {
  NetworkCase preset = NetworkCase::preset("ieee9-modified");
  NetworkCase back = NetworkCase::from_json(preset.to_json());
  REQUIRE(back.n_buses() == preset.n_buses());
  REQUIRE(back.n_lines() == preset.n_lines());
  REQUIRE(back.n_generators() == preset.n_generators());
  for (int i = 0; i < preset.n_buses(); ++i) {
    CHECK(back.buses[i].id == preset.buses[i].id);
    CHECK(back.buses[i].load == preset.buses[i].load);
  }
  for (int e = 0; e < preset.n_lines(); ++e) {
    CHECK(back.lines[e].from == preset.lines[e].from);
    CHECK(back.lines[e].to == preset.lines[e].to);
    CHECK(back.lines[e].limit == preset.lines[e].limit);
  }
  for (int n = 0; n < preset.n_generators(); ++n) {
    CHECK(back.generators[n].id == preset.generators[n].id);
    CHECK(back.generators[n].bus == preset.generators[n].bus);
    CHECK(back.generators[n].a == preset.generators[n].a);
    CHECK(back.generators[n].c == preset.generators[n].c);
  }

  json bad = preset.to_json();
  bad["buses"][0]["voltage"] = 1.0;
  CHECK_THROWS_WITH_AS(NetworkCase::from_json(bad),
                       "case.buses[0]: unknown key 'voltage'", SchemaError);

  json missing = preset.to_json();
  missing["generators"][2].erase("a");
  CHECK_THROWS_WITH_AS(NetworkCase::from_json(missing),
                       "case.generators[2]: missing key 'a'", SchemaError);
}

TEST_CASE("shipped case file equals the built-in preset") {
  std::ifstream in(std::string(TEST_SOURCE_DIR) + "/../cases/ieee9_modified.json");
  REQUIRE(in.good());
  NetworkCase from_file = NetworkCase::from_json(json::parse(in));
  NetworkCase preset = NetworkCase::preset("ieee9-modified");
  CHECK(from_file.to_json() == preset.to_json());
}

TEST_CASE("unknown preset names are rejected") {
  CHECK_THROWS_AS(NetworkCase::preset("ieee14"), StructuralError);
}

TEST_SUITE_END();
