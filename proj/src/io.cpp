#include "platoon/io.hpp"

#include <fmt/format.h>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace platoon {

using nlohmann::json;

namespace {

std::vector<double> to_std(const Vec& v) { return {v.data(), v.data() + v.size()}; }

Vec from_std(const std::vector<double>& v) { return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())); }

template <typename T>
T field(const json& j, const char* key) {
  if (!j.contains(key)) throw Error(ErrorKind::io, fmt::format("missing field '{}'", key));
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::io, fmt::format("field '{}': {}", key, e.what()));
  }
}

}  // namespace

json config_to_json(const PlatoonConfig& c) {
  json j;
  j["n"] = c.n;
  j["tau"] = c.tau;
  j["v_min"] = c.v_min;
  j["v_max"] = c.v_max;
  j["delta"] = c.delta;
  j["g"] = c.g;
  json veh = json::array();
  for (const auto& v : c.vehicles) {
    veh.push_back({{"L", v.L}, {"r", v.r}, {"a_min", v.a_min}, {"a_max", v.a_max}, {"c2", v.c2}, {"c3", v.c3}});
  }
  j["vehicles"] = veh;
  json edges = json::array();
  for (auto [a, b] : c.edges) edges.push_back({a, b});
  j["edges"] = edges;
  return j;
}

PlatoonConfig config_from_json(const json& j) {
  PlatoonConfig c;
  c.n = field<int>(j, "n");
  c.tau = field<double>(j, "tau");
  c.v_min = field<double>(j, "v_min");
  c.v_max = field<double>(j, "v_max");
  c.delta = field<double>(j, "delta");
  if (j.contains("g")) c.g = field<double>(j, "g");
  for (const auto& v : field<json>(j, "vehicles")) {
    VehicleParams p;
    p.L = field<double>(v, "L");
    p.r = field<double>(v, "r");
    p.a_min = field<double>(v, "a_min");
    p.a_max = field<double>(v, "a_max");
    p.c2 = field<double>(v, "c2");
    p.c3 = field<double>(v, "c3");
    c.vehicles.push_back(p);
  }
  if (j.contains("edges")) {
    for (const auto& e : j.at("edges")) {
      if (!e.is_array() || e.size() != 2) throw Error(ErrorKind::io, "edges must be pairs");
      c.edges.emplace_back(e[0].get<int>(), e[1].get<int>());
    }
  } else {
    for (int i = 1; i < c.n; ++i) c.edges.emplace_back(i, i + 1);
  }
  return c;
}

json weights_to_json(const WeightSchedule& w) {
  json j;
  j["p"] = w.p;
  json a = json::array(), b = json::array(), z = json::array();
  for (int s = 0; s < w.p; ++s) {
    a.push_back(to_std(w.alpha[static_cast<std::size_t>(s)]));
    b.push_back(to_std(w.beta[static_cast<std::size_t>(s)]));
    z.push_back(to_std(w.zeta[static_cast<std::size_t>(s)]));
  }
  j["alpha"] = a;
  j["beta"] = b;
  j["zeta"] = z;
  return j;
}

WeightSchedule weights_from_json(const json& j) {
  WeightSchedule w;
  w.p = field<int>(j, "p");
  for (const auto& v : field<std::vector<std::vector<double>>>(j, "alpha")) w.alpha.push_back(from_std(v));
  for (const auto& v : field<std::vector<std::vector<double>>>(j, "beta")) w.beta.push_back(from_std(v));
  for (const auto& v : field<std::vector<std::vector<double>>>(j, "zeta")) w.zeta.push_back(from_std(v));
  return w;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, fmt::format("cannot open '{}'", path));
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::io, fmt::format("'{}': {}", path, e.what()));
  }
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, fmt::format("cannot write '{}'", path));
  out << j.dump(2) << '\n';
}

LeaderTrace load_leader_csv(const std::string& path) {
  std::filesystem::path sidecar(path);
  sidecar.replace_extension(".json");
  LeaderTrace tr;
  tr.tau = field<double>(read_json_file(sidecar.string()), "tau");
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, fmt::format("cannot open '{}'", path));
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::io, fmt::format("'{}' is empty", path));
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string a, b, c;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c, ',')) {
      throw Error(ErrorKind::io, fmt::format("{}:{}: expected k,x0,v0", path, lineno));
    }
    try {
      tr.k.push_back(std::stoi(a));
      tr.x0.push_back(std::stod(b));
      tr.v0.push_back(std::stod(c));
    } catch (const std::exception&) {
      throw Error(ErrorKind::io, fmt::format("{}:{}: malformed number", path, lineno));
    }
  }
  return tr;
}

void write_trajectory_csv(const std::string& path, const PlatoonConfig& config, const TrajectoryRecord& rec) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, fmt::format("cannot write '{}'", path));
  out << "k,t,v_0,u_0";
  for (int i = 1; i <= config.n; ++i) out << fmt::format(",S_{}_{},v_{},u_{}", i - 1, i, i, i);
  out << '\n';
  for (std::size_t k = 0; k < rec.states.size(); ++k) {
    const auto& s = rec.states[k];
    out << fmt::format("{},{},{},{}", k, static_cast<double>(k) * config.tau, s.v(0), s.u0);
    for (int i = 1; i <= config.n; ++i) {
      out << fmt::format(",{},{},", s.x(i - 1) - s.x(i), s.v(i));
      if (k < rec.controls.size()) out << fmt::format("{}", rec.controls[k](i - 1));
    }
    out << '\n';
  }
}

}  // namespace platoon
