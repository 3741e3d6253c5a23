#include "platoon/presets.hpp"

#include <array>
#include <cmath>

namespace platoon {

namespace {

constexpr std::array<double, 10> kAlphaBase{38.85, 40.2, 41.55, 42.90, 44.25, 45.60, 46.95, 48.30, 49.65, 51.00};
constexpr std::array<double, 10> kBetaBase{130.61, 136.21, 141.82, 147.42, 153.03,
                                           158.64, 164.24, 169.85, 175.46, 181.06};
constexpr std::array<double, 10> kZetaBase{62, 74, 90, 92, 106, 194, 298, 402, 454, 480};

Vec to_vec(const std::array<double, 10>& a) { return Eigen::Map<const Vec>(a.data(), 10); }

void add_chain(PlatoonConfig& c) {
  c.edges.clear();
  for (int i = 1; i < c.n; ++i) c.edges.emplace_back(i, i + 1);
}

}  // namespace

std::vector<std::string> platoon_preset_names() { return {"small", "medium", "large"}; }

PlatoonConfig chain_config(int n, const VehicleParams& follower, double tau, double v_min, double v_max,
                           double delta) {
  PlatoonConfig c;
  c.n = n;
  c.tau = tau;
  c.v_min = v_min;
  c.v_max = v_max;
  c.delta = delta;
  VehicleParams lead = follower;
  lead.c2 = 0;
  lead.c3 = 0;
  c.vehicles.push_back(lead);
  for (int i = 0; i < n; ++i) c.vehicles.push_back(follower);
  add_chain(c);
  return c;
}

PlatoonConfig platoon_preset(const std::string& name) {
  if (name == "small") {
    return chain_config(10, VehicleParams{5.0, 1.0, -8.0, 1.4, 2.5e-4, 0.006}, 1.0, 10.0, 27.78, 50.0);
  }
  if (name == "large") {
    return chain_config(10, VehicleParams{10.0, 1.25, -6.8, 1.4, 4.5e-4, 0.015}, 1.0, 10.0, 27.78, 65.0);
  }
  if (name == "medium") {
    constexpr std::array<double, 10> r{1.21, 1.155, 0.99, 1.045, 1.21, 1.155, 0.99, 1.045, 1.155, 1.045};
    constexpr std::array<double, 10> a_min{-8.14, -7.77, -6.66, -7.03, -8.14, -7.77, -6.66, -7.03, -7.77, -7.03};
    constexpr std::array<double, 10> c2{3.85, 3.675, 3.15, 3.325, 3.85, 3.675, 3.15, 3.325, 3.675, 3.325};
    constexpr std::array<double, 10> c3{1.155, 1.103, 0.945, 0.998, 1.155, 1.103, 0.945, 0.998, 1.103, 0.998};
    PlatoonConfig c = chain_config(10, VehicleParams{7.0, r[0], a_min[0], 1.4, 0, 0}, 1.0, 10.0, 27.78, 60.0);
    for (int i = 1; i <= 10; ++i) {
      auto& v = c.vehicles[static_cast<std::size_t>(i)];
      v.r = r[static_cast<std::size_t>(i - 1)];
      v.a_min = a_min[static_cast<std::size_t>(i - 1)];
      v.c2 = c2[static_cast<std::size_t>(i - 1)] * 1e-4;
      v.c3 = c3[static_cast<std::size_t>(i - 1)] * 1e-2;
    }
    return c;
  }
  throw Error(ErrorKind::invalid_config, "unknown platoon preset '" + name + "'");
}

WeightSchedule weight_preset(const std::string& name, int p) {
  if (name != "small" && name != "medium" && name != "large") {
    throw Error(ErrorKind::invalid_config, "unknown weight preset '" + name + "'");
  }
  if (p < 1 || p > 5) throw Error(ErrorKind::invalid_config, "weight presets cover p = 1..5");
  const Vec at = to_vec(kAlphaBase), bt = to_vec(kBetaBase), zt = to_vec(kZetaBase);
  const Vec ones = Vec::Ones(10);
  WeightSchedule w;
  w.p = p;
  if (p == 1) {
    w.alpha.push_back(6.0 * at);
    w.beta.push_back(bt);
    w.zeta.push_back(0.5 * zt);
    return w;
  }
  const bool large = (name == "large");
  w.alpha.push_back((large ? 6.0 : 9.0) * (at - ones));
  w.beta.push_back(bt - ones);
  w.zeta.push_back(0.5 * (zt - ones));
  for (int s = 2; s <= p; ++s) {
    const double decay = std::pow(static_cast<double>(s - 1), 4);
    const double ca = (s <= 3) ? (large ? 0.0684 : 0.1368) : 0.0228;
    const double cz = (s <= 3) ? 0.0013 : 0.0026;
    w.alpha.push_back(ca / decay * at);
    w.beta.push_back(0.044 / decay * bt);
    w.zeta.push_back(cz / decay * zt);
  }
  return w;
}

PlatoonConfig with_max_accel(PlatoonConfig config, double a_max) {
  for (auto& v : config.vehicles) v.a_max = a_max;
  return config;
}

}  // namespace platoon
