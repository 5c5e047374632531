#include "bidsim/network.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <unordered_map>

#include <nlohmann/json.hpp>

namespace bidsim {

std::string fmt_sig10(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

int NetworkCase::bus_index(int bus_id) const {
  for (int i = 0; i < n_buses(); ++i)
    if (buses[i].id == bus_id) return i;
  throw StructuralError("unknown bus id " + std::to_string(bus_id));
}

int NetworkCase::generator_index(int gen_id) const {
  for (int n = 0; n < n_generators(); ++n)
    if (generators[n].id == gen_id) return n;
  throw StructuralError("unknown generator id " + std::to_string(gen_id));
}

Eigen::VectorXd NetworkCase::loads() const {
  Eigen::VectorXd y(n_buses());
  for (int i = 0; i < n_buses(); ++i) y[i] = buses[i].load;
  return y;
}

Eigen::VectorXd NetworkCase::cost_a() const {
  Eigen::VectorXd a(n_generators());
  for (int n = 0; n < n_generators(); ++n) a[n] = generators[n].a;
  return a;
}

Eigen::VectorXd NetworkCase::cost_c() const {
  Eigen::VectorXd c(n_generators());
  for (int n = 0; n < n_generators(); ++n) c[n] = generators[n].c;
  return c;
}

NetworkCase NetworkCase::preset(const std::string& name) {
  if (name != "ieee9-modified")
    throw StructuralError("unknown preset '" + name + "' (available: ieee9-modified)");
  NetworkCase cse;
  cse.buses = {{1, 0.0}, {2, 0.0}, {3, 0.0}, {4, 0.0}, {5, 2.0},
               {6, 0.0}, {7, 3.0}, {8, 0.0}, {9, 2.0}};
  cse.lines = {{1, 4, 2.5}, {4, 5, 2.5}, {5, 6, 1.5}, {3, 6, 3.0}, {6, 7, 1.5},
               {7, 8, 2.5}, {8, 2, 2.5}, {8, 9, 2.5}, {9, 4, 2.5}};
  cse.generators = {{1, 1, 0.1100, 3.5}, {2, 1, 0.0950, 3.8}, {3, 2, 0.0850, 1.2},
                    {4, 2, 0.1000, 0.8}, {5, 3, 0.1225, 1.0}, {6, 3, 0.0750, 1.3}};
  return cse;
}

namespace {

void require_keys(const nlohmann::json& j, const std::string& where,
                  const std::set<std::string>& allowed) {
  if (!j.is_object()) throw SchemaError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw SchemaError(where + ": unknown key '" + it.key() + "'");
}

double get_number(const nlohmann::json& j, const std::string& where, const char* key) {
  if (!j.contains(key)) throw SchemaError(where + ": missing key '" + key + "'");
  if (!j.at(key).is_number()) throw SchemaError(where + "." + key + ": expected a number");
  return j.at(key).get<double>();
}

int get_int(const nlohmann::json& j, const std::string& where, const char* key) {
  if (!j.contains(key)) throw SchemaError(where + ": missing key '" + key + "'");
  if (!j.at(key).is_number_integer()) throw SchemaError(where + "." + key + ": expected an integer");
  return j.at(key).get<int>();
}

}  // namespace

NetworkCase NetworkCase::from_json(const nlohmann::json& j) {
  require_keys(j, "case", {"buses", "lines", "generators"});
  for (const char* key : {"buses", "lines", "generators"})
    if (!j.contains(key) || !j.at(key).is_array())
      throw SchemaError(std::string("case: missing or non-array key '") + key + "'");

  NetworkCase cse;
  int pos = 0;
  for (const auto& bj : j.at("buses")) {
    std::string where = "case.buses[" + std::to_string(pos++) + "]";
    require_keys(bj, where, {"id", "load"});
    cse.buses.push_back({get_int(bj, where, "id"), get_number(bj, where, "load")});
  }
  pos = 0;
  for (const auto& lj : j.at("lines")) {
    std::string where = "case.lines[" + std::to_string(pos++) + "]";
    require_keys(lj, where, {"from", "to", "limit"});
    cse.lines.push_back({get_int(lj, where, "from"), get_int(lj, where, "to"),
                         get_number(lj, where, "limit")});
  }
  pos = 0;
  for (const auto& gj : j.at("generators")) {
    std::string where = "case.generators[" + std::to_string(pos++) + "]";
    require_keys(gj, where, {"id", "bus", "a", "c"});
    cse.generators.push_back({get_int(gj, where, "id"), get_int(gj, where, "bus"),
                              get_number(gj, where, "a"), get_number(gj, where, "c")});
  }
  return cse;
}

nlohmann::json NetworkCase::to_json() const {
  nlohmann::json j;
  j["buses"] = nlohmann::json::array();
  for (const auto& b : buses) j["buses"].push_back({{"id", b.id}, {"load", b.load}});
  j["lines"] = nlohmann::json::array();
  for (const auto& l : lines)
    j["lines"].push_back({{"from", l.from}, {"to", l.to}, {"limit", l.limit}});
  j["generators"] = nlohmann::json::array();
  for (const auto& g : generators)
    j["generators"].push_back({{"id", g.id}, {"bus", g.bus}, {"a", g.a}, {"c", g.c}});
  return j;
}

ValidationReport validate_case(const NetworkCase& cse) {
  ValidationReport rep;
  auto err = [&rep](const std::string& msg) { rep.errors.push_back(msg); };

  const int nb = cse.n_buses();
  std::set<int> bus_ids;
  for (const auto& b : cse.buses) {
    if (b.id < 1 || b.id > nb)
      err("bus id " + std::to_string(b.id) + " outside 1.." + std::to_string(nb));
    if (!bus_ids.insert(b.id).second) err("duplicate bus id " + std::to_string(b.id));
    if (b.load < 0.0) err("bus " + std::to_string(b.id) + " has negative load");
  }
  if (nb == 0) err("case has no buses");

  std::set<std::pair<int, int>> endpoints;
  for (std::size_t e = 0; e < cse.lines.size(); ++e) {
    const Line& l = cse.lines[e];
    std::string name = "line (" + std::to_string(l.from) + "," + std::to_string(l.to) + ")";
    if (!bus_ids.count(l.from)) err(name + " references unknown bus " + std::to_string(l.from));
    if (!bus_ids.count(l.to)) err(name + " references unknown bus " + std::to_string(l.to));
    if (l.from == l.to) err(name + " is a self-loop");
    auto key = std::minmax(l.from, l.to);
    if (!endpoints.insert(key).second) err(name + " duplicates an existing line");
    if (!(l.limit > 0.0)) err(name + " has non-positive limit");
  }

  const int ng = cse.n_generators();
  std::set<int> gen_ids;
  std::unordered_map<int, int> gens_at_bus;
  for (const auto& g : cse.generators) {
    std::string name = "generator " + std::to_string(g.id);
    if (g.id < 1 || g.id > ng)
      err("generator id " + std::to_string(g.id) + " outside 1.." + std::to_string(ng));
    if (!gen_ids.insert(g.id).second) err("duplicate generator id " + std::to_string(g.id));
    if (!bus_ids.count(g.bus)) err(name + " references unknown bus " + std::to_string(g.bus));
    if (!(g.a > 0.0)) err(name + " has non-positive quadratic cost coefficient");
    if (g.c < 0.0) err(name + " has negative linear cost coefficient");
    gens_at_bus[g.bus] += 1;
  }
  if (ng == 0) err("case has no generators");

  rep.structurally_sound = rep.errors.empty();

  rep.generator_hypothesis = true;
  for (const auto& [bus_id, count] : gens_at_bus) {
    if (count == 1) {
      rep.generator_hypothesis = false;
      rep.warnings.push_back("bus " + std::to_string(bus_id) +
                             " hosts a single generator; equilibrium bids need none or two+");
    }
  }

  rep.total_load = 0.0;
  for (const auto& b : cse.buses) rep.total_load += b.load;
  return rep;
}

ConstraintMatrices build_matrices(const NetworkCase& cse) {
  ValidationReport rep = validate_case(cse);
  if (!rep.structurally_sound)
    throw StructuralError("case is not structurally sound: " + rep.errors.front());

  const int nb = cse.n_buses();
  const int ne = cse.n_lines();
  const int ng = cse.n_generators();

  ConstraintMatrices m;
  m.j1 = Eigen::MatrixXd::Zero(nb, ne);
  for (int e = 0; e < ne; ++e) {
    m.j1(cse.bus_index(cse.lines[e].from), e) = 1.0;
    m.j1(cse.bus_index(cse.lines[e].to), e) = -1.0;
  }
  m.j2 = Eigen::MatrixXd::Zero(nb, ng);
  for (int n = 0; n < ng; ++n) m.j2(cse.bus_index(cse.generators[n].bus), n) = 1.0;

  m.j3 = Eigen::MatrixXd::Zero(2 * ne, ne);
  m.j3.topRows(ne) = Eigen::MatrixXd::Identity(ne, ne);
  m.j3.bottomRows(ne) = -Eigen::MatrixXd::Identity(ne, ne);
  m.zbar_c = Eigen::VectorXd(2 * ne);
  for (int e = 0; e < ne; ++e) m.zbar_c[e] = m.zbar_c[ne + e] = cse.lines[e].limit;
  return m;
}

double total_load(const NetworkCase& cse) {
  double y = 0.0;
  for (const auto& b : cse.buses) y += b.load;
  return y;
}

}  // namespace bidsim
