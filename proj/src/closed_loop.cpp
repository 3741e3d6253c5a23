#include "platoon/closed_loop.hpp"

#include <fmt/format.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>

namespace platoon {

ClosedLoopMatrices build_closed_loop(const PlatoonConfig& config, const WeightSchedule& weights) {
  const int n = config.n, p = weights.p;
  validate_weights(weights, n);
  const double tau = config.tau;
  ClosedLoopMatrices cl;
  cl.n = n;
  cl.p = p;
  cl.tau = tau;
  const Mat I = Mat::Identity(n, n);
  cl.A = Mat::Zero(2 * n, 2 * n);
  cl.A.topLeftCorner(n, n) = I;
  cl.A.topRightCorner(n, n) = tau * I;
  cl.A.bottomRightCorner(n, n) = I;
  cl.B = Mat::Zero(2 * n, n);
  cl.B.topRows(n) = 0.5 * tau * tau * I;
  cl.B.bottomRows(n) = tau * I;

  auto Qz = [&](int s) { return weights.alpha[static_cast<std::size_t>(s - 1)]; };
  auto Qzp = [&](int s) { return weights.beta[static_cast<std::size_t>(s - 1)]; };
  auto Qw = [&](int s) { return weights.zeta[static_cast<std::size_t>(s - 1)]; };

  cl.H = Mat::Zero(n * p, n * p);
  for (int i = 1; i <= p; ++i) {
    for (int j = 1; j <= p; ++j) {
      Vec diag = Vec::Zero(n);
      for (int s = std::max(i, j); s <= p; ++s) {
        diag += std::pow(tau, 4) / 4.0 * (2.0 * (s - i) + 1.0) * (2.0 * (s - j) + 1.0) * Qz(s) + tau * tau * Qzp(s);
      }
      if (i == j) diag += tau * tau * Qw(i);
      cl.H.block((i - 1) * n, (j - 1) * n, n, n) = diag.asDiagonal();
    }
  }
  cl.G = Mat::Zero(n * p, 2 * n);
  cl.g = Vec::Zero(n * p);
  for (int i = 1; i <= p; ++i) {
    Vec g1 = Vec::Zero(n), g2 = Vec::Zero(n);
    for (int s = i; s <= p; ++s) {
      const double c = (2.0 * (s - i) + 1.0) / 2.0;
      g1 += tau * tau * c * Qz(s);
      g2 += std::pow(tau, 3) * s * c * Qz(s) + tau * Qzp(s);
    }
    cl.G.block((i - 1) * n, 0, n, n) = g1.asDiagonal();
    cl.G.block((i - 1) * n, n, n, n) = g2.asDiagonal();
    cl.g((i - 1) * n) = tau * tau * Qw(i)(0);
  }
  Eigen::LLT<Mat> llt(cl.H);
  if (llt.info() != Eigen::Success) throw Error(ErrorKind::solver_failure, "closed-loop H is not positive definite");
  cl.K = -llt.solve(cl.G).topRows(n);
  cl.d = llt.solve(cl.g).head(n);
  cl.A_c = cl.A + cl.B * cl.K;

  if (p == 1) {
    const Vec qz = Qz(1), qzp = Qzp(1), qw = Qw(1);
    const Vec what = (tau * tau / 4.0 * qz + qzp + qw).cwiseInverse();
    cl.W_hat = what.asDiagonal();
    cl.A_c_p1 = Mat::Zero(2 * n, 2 * n);
    cl.A_c_p1.topLeftCorner(n, n) = I - tau * tau / 4.0 * cl.W_hat * qz.asDiagonal();
    cl.A_c_p1.topRightCorner(n, n) =
        tau * I - cl.W_hat * Mat((std::pow(tau, 3) / 4.0 * qz + tau / 2.0 * qzp).asDiagonal());
    cl.A_c_p1.bottomLeftCorner(n, n) = -tau / 2.0 * cl.W_hat * qz.asDiagonal();
    cl.A_c_p1.bottomRightCorner(n, n) = I - cl.W_hat * Mat((tau * tau / 2.0 * qz + qzp).asDiagonal());
    cl.B_breve = cl.B * (I - cl.W_hat * Mat((tau * tau / 4.0 * qz + qzp).asDiagonal()));
  }
  return cl;
}

SchurResult schur_check(const Mat& A_c) {
  if (A_c.rows() != A_c.cols() || A_c.rows() == 0) throw Error(ErrorKind::dimension_mismatch, "schur_check needs a square matrix");
  Eigen::EigenSolver<Mat> es(A_c, false);
  SchurResult r;
  r.radius = es.eigenvalues().cwiseAbs().maxCoeff();
  r.stable = r.radius < 1.0 - 1e-9;
  return r;
}

Vec equilibrium_we(const PlatoonConfig& config, double v0) {
  Vec we(config.n);
  for (int i = 1; i <= config.n; ++i) {
    const double c2p = (i == 1) ? 0.0 : config.vehicle(i - 1).c2;
    const double c3p = (i == 1) ? 0.0 : config.vehicle(i - 1).c3;
    we(i - 1) = (c2p - config.vehicle(i).c2) * v0 * v0 + (c3p - config.vehicle(i).c3) * config.g;
  }
  return we;
}

Mat matrix_D(const PlatoonConfig& config) {
  // Linear part of h: 2 v0 (c2_{i-1} s_{i-1} - c2_i s_i) with s = S_n z', i.e. D = -2 M S_n where M is the
  // bidiagonal matrix of h~.
  const int n = config.n;
  Mat M = Mat::Zero(n, n);
  for (int i = 1; i <= n; ++i) {
    M(i - 1, i - 1) = config.vehicle(i).c2;
    if (i > 1) M(i - 1, i - 2) = -config.vehicle(i - 1).c2;
  }
  return -2.0 * M * lower_ones<double>(n);
}

Vec h_tilde(const PlatoonConfig& config, const Vec& zp) {
  const int n = config.n;
  const Vec s = lower_ones<double>(n) * zp;
  Vec out(n);
  for (int i = 1; i <= n; ++i) {
    out(i - 1) = config.vehicle(i).c2 * s(i - 1) * s(i - 1);
    if (i > 1) out(i - 1) -= config.vehicle(i - 1).c2 * s(i - 2) * s(i - 2);
  }
  return out;
}

Vec h_function(const PlatoonConfig& config, const Vec& zp, double v0) {
  const int n = config.n;
  Vec s(n);
  double acc = 0;
  for (int i = 0; i < n; ++i) s(i) = (acc += zp(i));
  Vec h(n);
  h(0) = config.vehicle(1).c2 * s(0) * (s(0) - 2.0 * v0);
  for (int i = 2; i <= n; ++i) {
    h(i - 1) = config.vehicle(i - 1).c2 * s(i - 2) * (2.0 * v0 - s(i - 2)) -
               config.vehicle(i).c2 * s(i - 1) * (2.0 * v0 - s(i - 1));
  }
  return h;
}

Mat delta_A_bar(const ClosedLoopMatrices& cl, const PlatoonConfig& config) {
  if (cl.p != 1) throw Error(ErrorKind::invalid_config, "delta_A_bar is defined for p = 1");
  Mat Z = Mat::Zero(cl.n, 2 * cl.n);
  Z.rightCols(cl.n) = matrix_D(config);
  return cl.B_breve * Z;
}

// ---- scenarios ---------------------------------------------------------------------------------

Scenario cruise_scenario(int steps, double v0) {
  Scenario s;
  s.name = "cruise";
  s.v0 = v0;
  s.u0.assign(static_cast<std::size_t>(steps), 0.0);
  return s;
}

Scenario scenario_one(int steps, int decel_steps, double v0) {
  if (decel_steps < 1) throw Error(ErrorKind::invalid_config, "scenario 1 needs at least one braking step");
  Scenario s = cruise_scenario(steps, v0);
  s.name = "scenario1";
  auto set = [&](int k, double u) {
    if (k < steps) s.u0[static_cast<std::size_t>(k)] = u;
  };
  for (int k = 51; k < 51 + decel_steps; ++k) set(k, -2.0);
  s.events.emplace_back(51, 51 + decel_steps - 1);
  const int up = 2 * decel_steps;  // back to v0 at +1 m/s^2
  for (int k = 100; k < 100 + up; ++k) set(k, 1.0);
  s.events.emplace_back(100, 100 + up - 1);
  return s;
}

Scenario scenario_two(int steps, double v0) {
  Scenario s = cruise_scenario(steps, v0);
  s.name = "scenario2";
  constexpr int first = 51, periods = 12;
  for (int k = first; k < first + 4 * periods && k < steps; ++k) s.u0[static_cast<std::size_t>(k)] = ((k - first) % 4 < 2) ? 1.0 : -1.0;
  s.events.emplace_back(first, first + 4 * periods - 1);
  return s;
}

Scenario scenario_three(const LeaderTrace& trace, double a_lo, double a_hi, int* clipped) {
  if (trace.v0.size() < 2) throw Error(ErrorKind::io, "leader trace needs at least two samples");
  if (!(trace.tau > 0)) throw Error(ErrorKind::invalid_config, "leader trace tau must be positive");
  Scenario s;
  s.name = "scenario3";
  s.v0 = trace.v0.front();
  int nclip = 0;
  for (std::size_t k = 0; k + 1 < trace.v0.size(); ++k) {
    const double u = (trace.v0[k + 1] - trace.v0[k]) / trace.tau;
    const double c = std::clamp(u, a_lo, a_hi);
    if (c != u) ++nclip;
    s.u0.push_back(c);
  }
  if (clipped) *clipped = nclip;
  s.events.emplace_back(0, s.steps() - 1);
  return s;
}

// ---- simulation --------------------------------------------------------------------------------

TrajectoryRecord simulate(const PlatoonConfig& config, const WeightSchedule& weights, const SolverConfig& solver,
                          const Scenario& scenario, const SimulationOptions& options) {
  using Clock = std::chrono::steady_clock;
  DistributedMpc mpc(config, weights, solver);
  TrajectoryRecord rec;
  PlatoonState state = options.initial ? *options.initial : cruise_state(config, scenario.v0, 0.0);
  const int n = config.n;
  for (int k = 0; k < scenario.steps(); ++k) {
    state.u0 = scenario.u0[static_cast<std::size_t>(k)];
    const auto rep = is_feasible_state(config, state, options.feasibility_tol);
    rec.max_state_violation = std::max(rec.max_state_violation, rep.max_violation);
    if (!rep.feasible) {
      throw Error(ErrorKind::constraint_violation, fmt::format("step {}: {}", k, rep.violations.front()));
    }
    rec.states.push_back(state);
    const auto t0 = Clock::now();
    MpcSolution sol;
    try {
      sol = mpc.solve(state);
    } catch (const Error& e) {
      throw Error(e.kind(), fmt::format("step {}: {}", k, e.what()));
    }
    rec.solve_seconds.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
    if (options.centralized && weights.p == 1) {
      const LocalFormulation form = formulate_local(config, weights, state);
      const Vec ref = centralized_solve(form, false);
      if (ref.norm() > 1e-9) rec.relative_error.push_back((sol.control - ref).norm() / ref.norm());
    }
    const PlatoonState next = nonlinear_step(config, state, sol.control);

    // Propagate (z, z') with the tracking recursion and compare with the recomputed values.
    const auto [z, zp] = tracking_state(config, state);
    const auto [z1, zp1] = tracking_state(config, next);
    for (int i = 1; i <= n; ++i) {
      const double up = (i == 1) ? state.u0 : sol.control(i - 2);
      const double w = up - sol.control(i - 1);
      const double c2p = (i == 1) ? 0.0 : config.vehicle(i - 1).c2;
      const double c3p = (i == 1) ? 0.0 : config.vehicle(i - 1).c3;
      const auto& me = config.vehicle(i);
      const double r = w - (c2p * state.v(i - 1) * state.v(i - 1) - me.c2 * state.v(i) * state.v(i)) - (c3p - me.c3) * config.g;
      const double zn = z(i - 1) + config.tau * zp(i - 1) + 0.5 * config.tau * config.tau * r;
      const double zpn = zp(i - 1) + config.tau * r;
      rec.tracking_error = std::max({rec.tracking_error, std::abs(zn - z1(i - 1)), std::abs(zpn - zp1(i - 1))});
    }
    rec.controls.push_back(sol.control);
    if (options.keep_diagnostics) rec.diagnostics.push_back(std::move(sol.diagnostics));
    state = next;
  }
  state.u0 = 0.0;
  const auto rep = is_feasible_state(config, state, options.feasibility_tol);
  rec.max_state_violation = std::max(rec.max_state_violation, rep.max_violation);
  if (!rep.feasible) {
    throw Error(ErrorKind::constraint_violation, fmt::format("step {}: {}", scenario.steps(), rep.violations.front()));
  }
  rec.states.push_back(state);
  return rec;
}

std::vector<Vec> simulate_linear_reference(const PlatoonConfig& config, const WeightSchedule& weights,
                                           const Scenario& scenario) {
  const ClosedLoopMatrices cl = build_closed_loop(config, weights);
  std::vector<Vec> out;
  Vec z = Vec::Zero(2 * config.n);
  out.push_back(z);
  for (double u0 : scenario.u0) {
    z = cl.A_c * z + cl.B * (u0 * cl.d);
    out.push_back(z);
  }
  return out;
}

SteadyState steady_state_error(const PlatoonConfig& config, const WeightSchedule& weights, double v0_inf,
                               const SolverConfig* solver) {
  validate_weights(weights, config.n);
  SteadyState ss;
  if (weights.p == 1) {
    const Vec we = equilibrium_we(config, v0_inf);
    ss.z_ss = -2.0 * weights.zeta[0].cwiseQuotient(weights.alpha[0]).cwiseProduct(we);
    ss.closed_form = true;
    return ss;
  }
  const SolverConfig cfg = solver ? *solver : SolverConfig::defaults(weights.p);
  SimulationOptions opt;
  opt.keep_diagnostics = false;
  const TrajectoryRecord rec = simulate(config, weights, cfg, cruise_scenario(200, v0_inf), opt);
  ss.z_ss = Vec::Zero(config.n);
  const int last = static_cast<int>(rec.states.size());
  for (int k = last - 20; k < last; ++k) ss.z_ss += tracking_state(config, rec.states[static_cast<std::size_t>(k)]).first;
  ss.z_ss /= 20.0;
  ss.closed_form = false;
  return ss;
}

std::vector<double> spacing_series(const TrajectoryRecord& rec, int i) {
  std::vector<double> s;
  s.reserve(rec.states.size());
  for (const auto& st : rec.states) s.push_back(st.x(i - 1) - st.x(i));
  return s;
}

std::vector<int> settling_steps(const TrajectoryRecord& rec, const PlatoonConfig& config, const WeightSchedule& weights,
                                const Scenario& scenario, double band) {
  if (weights.p != 1) throw Error(ErrorKind::invalid_config, "settling_steps uses the p = 1 steady state");
  const int last = static_cast<int>(rec.states.size()) - 1;
  std::vector<int> out;
  for (std::size_t e = 0; e < scenario.events.size(); ++e) {
    const int start = scenario.events[e].second + 1;
    const int stop = (e + 1 < scenario.events.size()) ? scenario.events[e + 1].first : last + 1;
    int settled = -1;
    for (int k = stop - 1; k >= start; --k) {
      const auto& st = rec.states[static_cast<std::size_t>(k)];
      const Vec zss = steady_state_error(config, weights, st.v(0)).z_ss;
      const Vec z = tracking_state(config, st).first;
      if ((z - zss).lpNorm<Eigen::Infinity>() > band) break;
      settled = k - start;
    }
    out.push_back(settled);
  }
  return out;
}

}  // namespace platoon
