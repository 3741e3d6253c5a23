#pragma once

#include "platoon/assembly.hpp"
#include "platoon/core.hpp"
#include "platoon/distributed.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace platoon {

// Linear closed loop of the unconstrained zero-drag MPC. Horizon-major ordering: w = (w(k), ..., w(k+p-1)).
struct ClosedLoopMatrices {
  int n{0};
  int p{0};
  double tau{1};
  Mat A, B;  // double integrator in (z, z')
  Mat H, G;
  Vec g;
  Mat K;
  Vec d;
  Mat A_c;  // A + B K
  // p = 1 only.
  Mat W_hat, B_breve, A_c_p1;
};

ClosedLoopMatrices build_closed_loop(const PlatoonConfig& config, const WeightSchedule& weights);

struct SchurResult {
  double radius{0};
  bool stable{false};
};

SchurResult schur_check(const Mat& A_c);

// w_e,i = (c2_{i-1} - c2_i) v0^2 + (c3_{i-1} - c3_i) g with the leader's coefficients taken as zero.
Vec equilibrium_we(const PlatoonConfig& config, double v0);

// D(phi_d): h(z', v0) = v0 D z' + h~(z').
Mat matrix_D(const PlatoonConfig& config);
Vec h_tilde(const PlatoonConfig& config, const Vec& zp);
// Componentwise definition of h.
Vec h_function(const PlatoonConfig& config, const Vec& zp, double v0);
// B_breve [0 D(phi_d)] for p = 1.
Mat delta_A_bar(const ClosedLoopMatrices& cl, const PlatoonConfig& config);

struct Scenario {
  std::string name;
  double v0{25.0};
  std::vector<double> u0;                  // leader input per step
  std::vector<std::pair<int, int>> events;  // first and last step of each leader manoeuvre

  int steps() const { return static_cast<int>(u0.size()); }
};

Scenario cruise_scenario(int steps, double v0 = 25.0);
// Brakes at -2 for decel_steps from k = 51, holds, then +1 from k = 100 until back to v0.
Scenario scenario_one(int steps, int decel_steps = 4, double v0 = 25.0);
// +1 / -1 in two-step halves from k = 51 for twelve full periods.
Scenario scenario_two(int steps, double v0 = 25.0);

struct LeaderTrace {
  double tau{1};
  std::vector<int> k;
  std::vector<double> x0, v0;
};

// u0(k) = (v0(k+1) - v0(k)) / tau clipped to [a_lo, a_hi]; the number of clipped samples is returned in clipped.
Scenario scenario_three(const LeaderTrace& trace, double a_lo, double a_hi, int* clipped = nullptr);

struct SteadyState {
  Vec z_ss;
  bool closed_form{true};
};

// p = 1: z_ss = -2 Q_z^{-1} Q_w w_e. p > 1: fixed point of a 200-step cruise simulation (last 20 averaged).
SteadyState steady_state_error(const PlatoonConfig& config, const WeightSchedule& weights, double v0_inf,
                               const SolverConfig* solver = nullptr);

struct SimulationOptions {
  bool centralized{false};        // relative error against a centralized solve (p = 1)
  double feasibility_tol{1e-6};   // visited states must satisfy the constraints to this level
  bool keep_diagnostics{true};
  std::optional<PlatoonState> initial;  // defaults to cruise at the scenario speed with zero spacing error
};

struct TrajectoryRecord {
  std::vector<PlatoonState> states;  // steps + 1
  std::vector<Vec> controls;         // steps
  std::vector<SolveDiagnostics> diagnostics;
  std::vector<double> solve_seconds;
  std::vector<double> relative_error;  // only steps with a nonzero centralized solution
  double tracking_error{0};            // propagated vs recomputed (z, z')
  double max_state_violation{0};
};

TrajectoryRecord simulate(const PlatoonConfig& config, const WeightSchedule& weights, const SolverConfig& solver,
                          const Scenario& scenario, const SimulationOptions& options = {});

// z(k+1) = A_c z(k) + B u0(k) d from z(0) = 0; returns steps + 1 stacked (z, z').
std::vector<Vec> simulate_linear_reference(const PlatoonConfig& config, const WeightSchedule& weights,
                                           const Scenario& scenario);

// Spacing S_{i-1,i}(k) = x_{i-1} - x_i.
std::vector<double> spacing_series(const TrajectoryRecord& rec, int i);

// Steps after each event's end until every |z_i - z_ss,i(v0)| stays within band up to the next event.
// Entries are -1 if the band is never held.
std::vector<int> settling_steps(const TrajectoryRecord& rec, const PlatoonConfig& config, const WeightSchedule& weights,
                                const Scenario& scenario, double band);

}  // namespace platoon
