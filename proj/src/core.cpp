#include "platoon/core.hpp"

#include <fmt/format.h>

#include <limits>
#include <random>
#include <set>

namespace platoon {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_config: return "invalid-config";
    case ErrorKind::dimension_mismatch: return "dimension-mismatch";
    case ErrorKind::infeasible_input: return "infeasible-input";
    case ErrorKind::no_margin: return "no-margin";
    case ErrorKind::psd_repair_failed: return "psd-repair-failed";
    case ErrorKind::infeasible_subproblem: return "infeasible-subproblem";
    case ErrorKind::max_iterations: return "max-iterations";
    case ErrorKind::restricted_problem_infeasible: return "restricted-problem-infeasible";
    case ErrorKind::solver_failure: return "solver-failure";
    case ErrorKind::constraint_violation: return "constraint-violation";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

std::vector<std::string> validate_config(const PlatoonConfig& config, ReactionTimePolicy policy) {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::invalid_config, msg); };
  std::vector<std::string> warnings;
  if (config.n < 1) fail("n must be positive");
  if (config.vehicles.size() != static_cast<std::size_t>(config.n + 1)) {
    fail(fmt::format("expected {} vehicle entries (leader + n), got {}", config.n + 1, config.vehicles.size()));
  }
  if (!(config.tau > 0)) fail("tau must be positive");
  if (!(config.v_min >= 0 && config.v_min < config.v_max)) fail("need 0 <= v_min < v_max");
  if (!(config.delta > 0)) fail("delta must be positive");
  for (int i = 0; i <= config.n; ++i) {
    const auto& veh = config.vehicle(i);
    if (!(veh.a_min < 0 && veh.a_max > 0)) fail(fmt::format("vehicle {}: need a_min < 0 < a_max", i));
    if (!(veh.L > 0 && veh.r > 0)) fail(fmt::format("vehicle {}: L and r must be positive", i));
    if (veh.c2 < 0 || veh.c3 < 0) fail(fmt::format("vehicle {}: c2, c3 must be nonnegative", i));
    if (i == 0) {
      if (veh.c2 != 0 || veh.c3 != 0) fail("leader must carry c2 = c3 = 0");
      continue;
    }
    if (!(veh.c2 * config.v_max * config.v_max + veh.c3 * config.g < veh.a_max)) {
      fail(fmt::format("vehicle {}: drag at v_max exceeds a_max", i));
    }
    if (veh.r < config.tau) {
      auto msg = fmt::format("vehicle {}: reaction time {} below sample time {}", i, veh.r, config.tau);
      if (policy == ReactionTimePolicy::reject) fail(msg);
      warnings.push_back(msg);
    }
  }
  std::set<std::pair<int, int>> edge_set;
  for (auto [a, b] : config.edges) {
    if (a < 1 || b < 1 || a > config.n || b > config.n || a == b) {
      fail(fmt::format("edge ({}, {}) out of range", a, b));
    }
    edge_set.insert({std::min(a, b), std::max(a, b)});
  }
  for (int i = 1; i < config.n; ++i) {
    if (!edge_set.count({i, i + 1})) fail(fmt::format("graph lacks chain edge ({}, {})", i, i + 1));
  }
  return warnings;
}

std::vector<std::vector<int>> neighbor_lists(const PlatoonConfig& config) {
  std::vector<std::set<int>> sets(static_cast<std::size_t>(config.n + 1));
  for (auto [a, b] : config.edges) {
    sets[a].insert(b);
    sets[b].insert(a);
  }
  std::vector<std::vector<int>> out(sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i) out[i].assign(sets[i].begin(), sets[i].end());
  return out;
}

FeasibilityReport is_feasible_state(const PlatoonConfig& config, const PlatoonState& state, double tol) {
  FeasibilityReport rep;
  const auto& lead = config.vehicle(0);
  rep.record(state.u0 >= lead.a_min - tol, lead.a_min - state.u0, "leader control below a_min");
  rep.record(state.u0 <= lead.a_max + tol, state.u0 - lead.a_max, "leader control above a_max");
  for (int i = 0; i <= config.n; ++i) {
    rep.record(state.v(i) >= config.v_min - tol, config.v_min - state.v(i), fmt::format("v_{} below v_min", i));
    rep.record(state.v(i) <= config.v_max + tol, state.v(i) - config.v_max, fmt::format("v_{} above v_max", i));
  }
  const double v0n = state.v(0) + config.tau * state.u0;
  rep.record(v0n >= config.v_min - tol, config.v_min - v0n, "leader next speed below v_min");
  rep.record(v0n <= config.v_max + tol, v0n - config.v_max, "leader next speed above v_max");
  for (int i = 1; i <= config.n; ++i) {
    const double p = safety_gap_p(config, state, i);
    rep.record(p <= tol, p, fmt::format("safety gap p_{} positive", i));
  }
  return rep;
}

FeasibilityReport check_one_step(const PlatoonConfig& config, const PlatoonState& state, const Vec& u,
                                 double tol) {
  FeasibilityReport rep;
  const Vec h = h_one_step(config, state, u);
  for (int i = 1; i <= config.n; ++i) {
    const auto& veh = config.vehicle(i);
    const double ui = u(i - 1);
    rep.record(ui >= veh.a_min - tol, veh.a_min - ui, fmt::format("u_{} below a_min", i));
    rep.record(ui <= veh.a_max + tol, ui - veh.a_max, fmt::format("u_{} above a_max", i));
    const double vn = state.v(i) + config.tau * effective_accel(veh, state.v(i), ui, config.g);
    rep.record(vn >= config.v_min - tol, config.v_min - vn, fmt::format("next v_{} below v_min", i));
    rep.record(vn <= config.v_max + tol, vn - config.v_max, fmt::format("next v_{} above v_max", i));
    rep.record(h(i - 1) <= tol, h(i - 1), fmt::format("h_{} positive", i));
  }
  return rep;
}

namespace {

// Smallest slack of vehicle i's one-step constraints given the full control vector.
double vehicle_slack(const PlatoonConfig& config, const PlatoonState& state, const Vec& u, int i) {
  const auto& veh = config.vehicle(i);
  const double ui = u(i - 1);
  const double vn = state.v(i) + config.tau * effective_accel(veh, state.v(i), ui, config.g);
  const double h = h_one_step(config, state, u)(i - 1);
  return std::min({ui - veh.a_min, veh.a_max - ui, vn - config.v_min, config.v_max - vn, -h});
}

}  // namespace

double one_step_min_slack(const PlatoonConfig& config, const PlatoonState& state, const Vec& u) {
  double s = std::numeric_limits<double>::infinity();
  for (int i = 1; i <= config.n; ++i) s = std::min(s, vehicle_slack(config, state, u, i));
  return s;
}

Vec feasible_control(const PlatoonConfig& config, const PlatoonState& state) {
  const auto rep = is_feasible_state(config, state);
  if (!rep.feasible) throw Error(ErrorKind::infeasible_input, "state is not feasible: " + rep.violations.front());
  Vec u(config.n);
  for (int i = 1; i <= config.n; ++i) {
    const auto& veh = config.vehicle(i);
    const double v = state.v(i);
    const double drag = veh.c2 * v * v + veh.c3 * config.g;
    if (v + config.tau * veh.a_min >= config.v_min) {
      u(i - 1) = veh.a_min + drag;
    } else {
      u(i - 1) = (config.v_min - v) / config.tau + drag;
    }
  }
  return u;
}

Vec interior_control(const PlatoonConfig& config, const PlatoonState& state, double eps_max, double margin) {
  Vec u = feasible_control(config, state);
  if (eps_max <= 0) return u;
  if (!(state.v(0) > config.v_min) || !(state.v(0) + config.tau * state.u0 > config.v_min)) {
    throw Error(ErrorKind::infeasible_input, "interior construction needs leader strictly above v_min");
  }
  // Raise each control in turn; raising u_{i-1} only helps h_i, so vehicles are handled in order.
  for (int i = 1; i <= config.n; ++i) {
    double eps = eps_max;
    bool found = false;
    while (eps >= 1e-12) {
      Vec trial = u;
      trial(i - 1) += eps;
      if (vehicle_slack(config, state, trial, i) >= margin) {
        u = trial;
        found = true;
        break;
      }
      eps *= 0.5;
    }
    if (!found) throw Error(ErrorKind::no_margin, fmt::format("no interior step for vehicle {}", i));
  }
  return u;
}

PlatoonState random_feasible_state(const PlatoonConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> speed(config.v_min + 0.5, config.v_max - 0.5);
  std::uniform_real_distribution<double> extra(0.5, 20.0);
  PlatoonState s;
  s.x = Vec::Zero(config.n + 1);
  s.v = Vec::Zero(config.n + 1);
  for (int i = 0; i <= config.n; ++i) s.v(i) = speed(rng);
  for (int i = 1; i <= config.n; ++i) {
    const auto& veh = config.vehicle(i);
    const double dv = s.v(i) - config.v_min;
    const double bound = veh.L + veh.r * s.v(i) - dv * dv / (2 * veh.a_min);
    s.x(i) = s.x(i - 1) - bound - extra(rng);
  }
  const auto& lead = config.vehicle(0);
  std::uniform_real_distribution<double> lead_u(lead.a_min, lead.a_max);
  for (int tries = 0; tries < 10000; ++tries) {
    const double u0 = lead_u(rng);
    const double vn = s.v(0) + config.tau * u0;
    if (vn > config.v_min && vn <= config.v_max) {
      s.u0 = u0;
      return s;
    }
  }
  s.u0 = 0.0;
  return s;
}

PlatoonState cruise_state(const PlatoonConfig& config, double v, double spacing_offset) {
  PlatoonState s;
  s.x = Vec::Zero(config.n + 1);
  s.v = Vec::Constant(config.n + 1, v);
  for (int i = 1; i <= config.n; ++i) s.x(i) = s.x(i - 1) - config.delta - spacing_offset;
  s.u0 = 0.0;
  return s;
}

}  // namespace platoon
