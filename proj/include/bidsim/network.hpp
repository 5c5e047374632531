#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "bidsim/common.hpp"

namespace bidsim {

struct Bus {
  int id = 0;        // 1-based, unique
  double load = 0.0; // >= 0
};

struct Line {
  int from = 0;
  int to = 0;
  double limit = 0.0; // symmetric flow bound, > 0
};

struct Generator {
  int id = 0;  // 1-based, unique
  int bus = 0; // bus id it injects at
  double a = 0.0; // quadratic cost coefficient, > 0
  double c = 0.0; // linear cost coefficient, >= 0
};

// Immutable network description.  Indexing everywhere follows declaration
// order: generator n is generators[n], bus i is buses[i], line e is lines[e].
struct NetworkCase {
  std::vector<Bus> buses;
  std::vector<Line> lines;
  std::vector<Generator> generators;

  int n_buses() const { return static_cast<int>(buses.size()); }
  int n_lines() const { return static_cast<int>(lines.size()); }
  int n_generators() const { return static_cast<int>(generators.size()); }

  // Declaration index for an id; StructuralError when absent.
  int bus_index(int bus_id) const;
  int generator_index(int gen_id) const;

  Eigen::VectorXd loads() const;  // per bus
  Eigen::VectorXd cost_a() const; // per generator
  Eigen::VectorXd cost_c() const;

  // Named built-in cases; currently "ieee9-modified".
  static NetworkCase preset(const std::string& name);
  static NetworkCase from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// Constraint data for both market programs over decision (x, z):
//   j1 z - j2 x + y = 0,  j3 z <= zbar_c,  x >= 0
// with j3 = [I; -I] and zbar_c = (limits, limits).
struct ConstraintMatrices {
  Eigen::MatrixXd j1; // buses x lines incidence: +1 at from-bus, -1 at to-bus
  Eigen::MatrixXd j2; // buses x generators membership
  Eigen::MatrixXd j3;
  Eigen::VectorXd zbar_c;
};

struct ValidationReport {
  bool structurally_sound = false;
  // Every bus hosts either no generator or at least two (the market
  // hypothesis under which equilibrium bids are well defined).
  bool generator_hypothesis = false;
  double total_load = 0.0;
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
};

// Structural soundness: ids unique and contiguous from 1, line endpoints
// exist, no self-loops or parallel lines, loads >= 0, limits > 0, a > 0,
// c >= 0.  Never throws; problems land in the report.
ValidationReport validate_case(const NetworkCase& cse);

// Requires a structurally sound case; StructuralError naming the offending
// entity otherwise.
ConstraintMatrices build_matrices(const NetworkCase& cse);

double total_load(const NetworkCase& cse);

}  // namespace bidsim
