#pragma once

#include "platoon/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace platoon {

template <typename Scalar>
struct VehicleParamsT {
  Scalar L{5};
  Scalar r{1};
  Scalar a_min{-8};
  Scalar a_max{1.4};
  Scalar c2{0};
  Scalar c3{0};
};

// Vehicle 0 is the leader; vehicles[1..n] are the controlled followers.
template <typename Scalar>
struct PlatoonConfigT {
  int n{0};
  Scalar tau{1};
  Scalar v_min{10};
  Scalar v_max{27.78};
  Scalar delta{50};
  Scalar g{kGravity};
  std::vector<VehicleParamsT<Scalar>> vehicles;
  std::vector<std::pair<int, int>> edges;

  const VehicleParamsT<Scalar>& vehicle(int i) const { return vehicles[static_cast<std::size_t>(i)]; }
};

template <typename Scalar>
struct PlatoonStateT {
  VectorX<Scalar> x;  // length n+1
  VectorX<Scalar> v;  // length n+1
  Scalar u0{0};
};

using VehicleParams = VehicleParamsT<double>;
using PlatoonConfig = PlatoonConfigT<double>;
using PlatoonState = PlatoonStateT<double>;

inline constexpr double kFeasibilityTol = 1e-9;
inline constexpr double kStrictMargin = 1e-6;

enum class ReactionTimePolicy { reject, warn };

// Throws invalid_config on hard violations. Returns warnings for soft ones.
std::vector<std::string> validate_config(const PlatoonConfig& config,
                                         ReactionTimePolicy policy = ReactionTimePolicy::reject);

std::vector<std::vector<int>> neighbor_lists(const PlatoonConfig& config);

template <typename Scalar>
Scalar effective_accel(const VehicleParamsT<Scalar>& params, const Scalar& v, const Scalar& u,
                       double g = kGravity) {
  return u - params.c2 * v * v - params.c3 * Scalar(g);
}

template <typename Scalar>
PlatoonStateT<Scalar> nonlinear_step(const PlatoonConfigT<Scalar>& config, const PlatoonStateT<Scalar>& state,
                                     const VectorX<Scalar>& u) {
  if (u.size() != config.n || state.x.size() != config.n + 1 || state.v.size() != config.n + 1) {
    throw Error(ErrorKind::dimension_mismatch, "nonlinear_step");
  }
  PlatoonStateT<Scalar> next = state;
  const Scalar tau = config.tau;
  for (int i = 0; i <= config.n; ++i) {
    Scalar a = (i == 0) ? state.u0 : effective_accel(config.vehicle(i), state.v(i), u(i - 1), config.g);
    next.x(i) = state.x(i) + tau * state.v(i) + tau * tau / Scalar(2) * a;
    next.v(i) = state.v(i) + tau * a;
  }
  return next;
}

template <typename Scalar>
PlatoonStateT<Scalar> linear_step(const PlatoonConfigT<Scalar>& config, const PlatoonStateT<Scalar>& state,
                                  const VectorX<Scalar>& u) {
  PlatoonConfigT<Scalar> lin = config;
  for (auto& veh : lin.vehicles) {
    veh.c2 = Scalar(0);
    veh.c3 = Scalar(0);
  }
  return nonlinear_step(lin, state, u);
}

// Safety bound of vehicle i with respect to i-1: nonpositive means safe.
template <typename Scalar>
Scalar safety_gap_p(const PlatoonConfigT<Scalar>& config, const PlatoonStateT<Scalar>& state, int i) {
  const auto& veh = config.vehicle(i);
  const Scalar dv = state.v(i) - config.v_min;
  return veh.L + veh.r * state.v(i) - dv * dv / (Scalar(2) * veh.a_min) + (state.x(i) - state.x(i - 1));
}

template <typename Scalar>
VectorX<Scalar> h_one_step(const PlatoonConfigT<Scalar>& config, const PlatoonStateT<Scalar>& state,
                           const VectorX<Scalar>& u) {
  if (u.size() != config.n) throw Error(ErrorKind::dimension_mismatch, "h_one_step");
  const Scalar tau = config.tau;
  VectorX<Scalar> h(config.n);
  Scalar a_prev = state.u0;
  for (int i = 1; i <= config.n; ++i) {
    const auto& veh = config.vehicle(i);
    const Scalar a = effective_accel(veh, state.v(i), u(i - 1), config.g);
    const Scalar v_next = state.v(i) + tau * a;
    const Scalar dv = v_next - config.v_min;
    h(i - 1) = veh.L + veh.r * v_next - dv * dv / (Scalar(2) * veh.a_min) + (state.x(i) - state.x(i - 1)) +
               tau * (state.v(i) - state.v(i - 1)) + tau * tau / Scalar(2) * (a - a_prev);
    a_prev = a;
  }
  return h;
}

template <typename Scalar>
Scalar q_reaction(const PlatoonConfigT<Scalar>& config, const PlatoonStateT<Scalar>& state, int i,
                  const Scalar& w) {
  const auto& veh = config.vehicle(i);
  const Scalar tau = config.tau;
  return state.v(i) + (tau / Scalar(2) + veh.r) * w - (state.v(i) - config.v_min) * w / veh.a_min -
         tau * w * w / (Scalar(2) * veh.a_min);
}

struct FeasibilityReport {
  bool feasible{true};
  double max_violation{0.0};
  std::vector<std::string> violations;

  void record(bool ok, double amount, const std::string& what) {
    if (!ok) {
      feasible = false;
      violations.push_back(what);
    }
    max_violation = std::max(max_violation, amount);
  }
};

FeasibilityReport is_feasible_state(const PlatoonConfig& config, const PlatoonState& state,
                                    double tol = kFeasibilityTol);

// Membership of u in the one-step constraint set: control, next speed, next safety gap.
FeasibilityReport check_one_step(const PlatoonConfig& config, const PlatoonState& state, const Vec& u,
                                 double tol = kFeasibilityTol);

// Smallest slack over all one-step constraints (positive means strictly feasible).
double one_step_min_slack(const PlatoonConfig& config, const PlatoonState& state, const Vec& u);

Vec feasible_control(const PlatoonConfig& config, const PlatoonState& state);

// eps_max = 0 returns feasible_control unchanged.
Vec interior_control(const PlatoonConfig& config, const PlatoonState& state, double eps_max = 1e-2,
                     double margin = kStrictMargin);

PlatoonState random_feasible_state(const PlatoonConfig& config, std::uint64_t seed);

// Spacing errors z_i = x_{i-1} - x_i - delta and relative speeds z'_i = v_{i-1} - v_i.
template <typename Scalar>
std::pair<VectorX<Scalar>, VectorX<Scalar>> tracking_state(const PlatoonConfigT<Scalar>& config,
                                                            const PlatoonStateT<Scalar>& state) {
  VectorX<Scalar> z(config.n), zp(config.n);
  for (int i = 1; i <= config.n; ++i) {
    z(i - 1) = state.x(i - 1) - state.x(i) - config.delta;
    zp(i - 1) = state.v(i - 1) - state.v(i);
  }
  return {z, zp};
}

PlatoonState cruise_state(const PlatoonConfig& config, double v, double spacing_offset = 0.0);

}  // namespace platoon
