#pragma once

#include "platoon/assembly.hpp"
#include "platoon/core.hpp"
#include "platoon/qcqp.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace platoon {

enum class StopMode { absolute, min_abs_rel };

// residual: stop when |w^{t+1} - w^t|_inf <= tol.
// estimated_error: stop when the distance to the limit, estimated from the observed contraction r over the
// last five rounds as residual * r / (1 - r), is <= tol.
enum class DrStopRule { residual, estimated_error };

struct SolverConfig {
  int p{1};
  double alpha{0.9};
  double rho{0.1};
  double tol_outer{2.5e-3};
  double tol_inner{4.0e-3};
  int max_outer{50};
  int max_inner{500};
  int max_convex_rounds{5000};  // p = 1 and the linear stage
  double nu_p{0.8};
  double lg_scale{0.9};
  StopMode stop_mode{StopMode::min_abs_rel};
  DrStopRule dr_stop{DrStopRule::estimated_error};
  DrStopRule outer_stop{DrStopRule::residual};  // applied to the SCP step sizes
  double warmup_tol{1e-7};
  int max_warmup{5000};
  double feasibility_target{1e-6};
  int threads{1};
  QcqpOptions qcqp{};

  // Per-horizon defaults; threads follow PLATOON_MPC_THREADS.
  static SolverConfig defaults(int p);
};

void validate_solver_config(const SolverConfig& cfg);
int threads_from_env();

// Per-round neighbour mailboxes. Each directed edge owns one slot per tag, so agents can post
// concurrently; a read from a non-neighbour is counted and rejected.
class MessageBus {
 public:
  explicit MessageBus(const AugmentedLayout& layout);

  void post(int src, int dst, int tag, const Vec& payload);
  const Vec& read(int dst, int src, int tag);
  int illegal_reads() const { return illegal_reads_.load(); }
  long messages() const { return messages_.load(); }

 private:
  std::size_t slot(int src, int dst, int tag) const;

  const AugmentedLayout* layout_;
  std::vector<std::size_t> base_;
  std::vector<Vec> slots_;
  std::atomic<int> illegal_reads_{0};
  std::atomic<long> messages_{0};
};

// Runs one callable per agent, either inline or on a bounded worker pool.
class AgentExecutor {
 public:
  explicit AgentExecutor(int threads);
  ~AgentExecutor();
  AgentExecutor(const AgentExecutor&) = delete;
  AgentExecutor& operator=(const AgentExecutor&) = delete;

  void for_each(int n, const std::function<void(int)>& fn);
  int threads() const { return threads_; }

 private:
  struct Impl;
  int threads_;
  std::unique_ptr<Impl> impl_;
};

// Prox of rho (f_i + indicator of C_i) with the factorisation of the smooth part cached.
class ProxOperator {
 public:
  ProxOperator() = default;
  ProxOperator(ConvexQcqp problem, double rho, QcqpOptions options);
  static ProxOperator fixed(const Vec& point);

  Vec apply(const Vec& anchor);
  int barrier_calls() const { return barrier_calls_; }
  const ConvexQcqp& problem() const { return problem_; }

 private:
  ConvexQcqp problem_;
  double rho_{1};
  QcqpOptions options_;
  bool diagonal_{false};
  Eigen::LLT<Mat> llt_;
  std::optional<Vec> fixed_;
  Vec last_;
  int barrier_calls_{0};
};

struct AgentState {
  int i{0};
  std::vector<int> neighbors;
  Vec u_hat;  // current linearisation point, own block then copies
  Vec z, w;   // DR iterates
  Vec x;      // last prox output
  double L_J{0};
  std::vector<double> L_g;
  std::vector<double> lg_boost;  // safeguard multipliers on L_g
  int zero_steps{0};
  bool frozen{false};
  double seconds{0};
};

// Agents whose local vectors (and DR state z) are the broadcast of grouped controls u.
std::vector<AgentState> init_agents(const AugmentedLayout& layout, const Vec& u);

// Problem data shared by all agents for one MPC step.
struct LocalFormulation {
  PlatoonConfig config;
  PlatoonConfig config_zero;  // drag and friction removed
  PlatoonState state;
  int p{1};
  QuadraticModel model;
  DecomposedModel decomposed;
  AugmentedLayout layout;
  std::vector<RestrictedSet> restricted;

  enum class Kind { speed_lower, speed_upper, safety };
  struct Constraint {
    Kind kind;
    int j;
    ScalarFn fn;  // in agent-local coordinates
  };

  Vec box_lo(int i) const;
  Vec box_hi(int i) const;
  // Approximate J_i over agent i's local vector (zero_drag evaluates J_i^0).
  ScalarFn objective(int i, const Vec& y, bool zero_drag = false) const;
  std::vector<Constraint> constraints(int i, const Vec& y) const;
  // Convex agent problem: J_i (or J_i^0) over X_i and the inner approximations of Y_i, Z_i.
  ConvexQcqp convex_problem(int i, bool zero_drag_objective) const;
  // Same problem over the owners' blocks (n p variables), used as a centralized reference.
  ConvexQcqp centralized_problem(bool zero_drag_objective) const;
  // Largest violation of box and approximate speed and safety constraints at grouped controls u.
  double approx_violation(const Vec& u) const;
  double objective_value(const Vec& u) const;
};

LocalFormulation formulate_local(const PlatoonConfig& config, const WeightSchedule& weights, const PlatoonState& state);

struct DrStats {
  int rounds{0};
  double residual{0};
  double estimated_error{0};
  bool converged{false};
  std::vector<double> trace;
};

// One synchronous round of the generalised Douglas-Rachford scheme. Returns the max over agents of
// max(|w_i^{t+1} - w_i^t|_inf, |x_i - w_i^{t+1}|_inf) with x_i the prox output.
double dr_round(const AugmentedLayout& layout, std::vector<ProxOperator>& prox, std::vector<AgentState>& agents,
                const SolverConfig& cfg, MessageBus& bus, AgentExecutor& exec);

DrStats run_dr(const AugmentedLayout& layout, std::vector<ProxOperator>& prox, std::vector<AgentState>& agents,
               const SolverConfig& cfg, MessageBus& bus, AgentExecutor& exec, double tol, int max_rounds);

// Box-only warm-up of the inner loop: f_i over X_i, closed-form prox, tolerance cfg.warmup_tol.
DrStats warm_start_inner(const AugmentedLayout& layout, const std::vector<ConvexQcqp>& inner,
                         std::vector<AgentState>& agents, const SolverConfig& cfg, MessageBus& bus,
                         AgentExecutor& exec);

// Updates L_J and L_g for every agent at its current u_hat.
void lipschitz_estimates(const LocalFormulation& form, std::vector<AgentState>& agents, const SolverConfig& cfg);

// Convex SCP subproblem of agent i at its linearisation point.
ConvexQcqp scp_step(const LocalFormulation& form, const AgentState& agent);

struct SolveDiagnostics {
  int p{1};
  int outer_iterations{0};
  int linear_rounds{0};
  std::vector<int> warmup_rounds;
  std::vector<int> inner_rounds;
  std::vector<double> outer_residuals;
  std::vector<double> inner_residuals;
  double max_violation{0};
  double consensus_gap{0};
  int barrier_calls{0};
  int majorant_bumps{0};
  int backtracks{0};
  int illegal_reads{0};
  long messages{0};
  bool converged{false};
  double wall_seconds{0};
  std::vector<double> agent_seconds;
  std::vector<std::string> notes;
};

nlohmann::json to_json(const SolveDiagnostics& d);

struct MpcSolution {
  Vec plan;     // grouped by vehicle, n p entries
  Vec control;  // first step, length n
  SolveDiagnostics diagnostics;
};

class DistributedMpc {
 public:
  DistributedMpc(PlatoonConfig config, WeightSchedule weights, SolverConfig solver);

  // Solves one MPC step; reuses the previous plan as the initial iterate.
  MpcSolution solve(const PlatoonState& state);
  void reset() {
    previous_.reset();
    z_convex_.reset();
  }
  const SolverConfig& solver_config() const { return solver_; }

 private:
  MpcSolution solve_convex(const LocalFormulation& form, const Vec& u_init);
  MpcSolution solve_scp(const LocalFormulation& form, const Vec& u_init);
  Vec run_convex_stage(const LocalFormulation& form, bool zero_drag, const Vec& u_init, double tol,
                       SolveDiagnostics& diag);

  PlatoonConfig config_;
  WeightSchedule weights_;
  SolverConfig solver_;
  AugmentedLayout layout_;
  AgentExecutor exec_;
  std::optional<Vec> previous_;
  std::optional<Vec> z_convex_;  // DR state of the convex stage, carried across steps
};

// High-accuracy centralized solve of the convex p = 1 problem (or of the restricted warm-start problem).
Vec centralized_solve(const LocalFormulation& form, bool zero_drag_objective);

}  // namespace platoon
