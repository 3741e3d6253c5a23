#include "platoon/distributed.hpp"

#include <fmt/format.h>
#include <tbb/parallel_for.h>
#include <tbb/task_arena.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <limits>

namespace platoon {

namespace {

constexpr int kTagCopy = 0;
constexpr int kTagAverage = 1;
constexpr double kInf = std::numeric_limits<double>::infinity();

double spectral_norm(const Mat& H) {
  if (H.size() == 0) return 0;
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (H + H.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

Vec prefix(int p, int j) {
  Vec r = Vec::Zero(p);
  r.head(j).setOnes();
  return r;
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Embeds a gradient/Hessian given over blocks `vehicles` into agent i's local coordinates.
void embed(const AugmentedLayout& layout, int i, const std::vector<int>& vehicles, const ScalarFn& src, ScalarFn& dst) {
  const int p = layout.p;
  const int d = layout.agent_dim(i);
  dst.value = src.value;
  dst.grad = Vec::Zero(d);
  dst.hess = Mat::Zero(d, d);
  for (std::size_t a = 0; a < vehicles.size(); ++a) {
    const int oa = layout.local_offset(i, vehicles[a]);
    if (oa < 0) continue;
    dst.grad.segment(oa, p) += src.grad.segment(static_cast<int>(a) * p, p);
    for (std::size_t b = 0; b < vehicles.size(); ++b) {
      const int ob = layout.local_offset(i, vehicles[b]);
      if (ob < 0) continue;
      dst.hess.block(oa, ob, p, p) += src.hess.block(static_cast<int>(a) * p, static_cast<int>(b) * p, p, p);
    }
  }
}

QuadConstraint make_constraint(const Mat& A, const Vec& b, double c) {
  QuadConstraint qc;
  if (A.size() > 0 && A.cwiseAbs().maxCoeff() > 0) qc.A = A;
  qc.b = b;
  qc.c = c;
  return qc;
}

}  // namespace

SolverConfig SolverConfig::defaults(int p) {
  if (p < 1 || p > 5) throw Error(ErrorKind::invalid_config, "solver defaults cover p = 1..5");
  static constexpr double outer[] = {2.5e-3, 6.5e-3, 7.5e-3, 1.0e-2, 1.25e-2};
  static constexpr double inner[] = {2.5e-3, 4.0e-3, 5.0e-3, 7.5e-3, 1.0e-2};
  SolverConfig c;
  c.p = p;
  c.tol_outer = outer[p - 1];
  c.tol_inner = inner[p - 1];
  c.nu_p = (p <= 3) ? 0.8 : 0.9;
  c.stop_mode = (p == 2 || p == 3) ? StopMode::min_abs_rel : StopMode::absolute;
  c.dr_stop = (p == 1) ? DrStopRule::estimated_error : DrStopRule::residual;
  c.threads = threads_from_env();
  return c;
}

void validate_solver_config(const SolverConfig& c) {
  auto bad = [](const std::string& what) { throw Error(ErrorKind::invalid_config, what); };
  if (c.p < 1) bad("horizon must be >= 1");
  if (!(c.alpha > 0 && c.alpha < 1)) bad("alpha must lie in (0, 1)");
  if (!(c.rho > 0)) bad("rho must be positive");
  if (!(c.tol_outer > 0) || !(c.tol_inner > 0) || !(c.warmup_tol > 0)) bad("tolerances must be positive");
  if (c.max_outer < 1 || c.max_inner < 1 || c.max_convex_rounds < 1 || c.max_warmup < 1) bad("iteration caps must be >= 1");
  if (!(c.nu_p > 0) || !(c.lg_scale > 0)) bad("Lipschitz scalings must be positive");
  if (c.threads < 1) bad("threads must be >= 1");
}

int threads_from_env() {
  const char* s = std::getenv("PLATOON_MPC_THREADS");
  if (s == nullptr || *s == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(s, &end, 10);
  if (end == s || *end != '\0' || v < 1) {
    throw Error(ErrorKind::invalid_config, fmt::format("PLATOON_MPC_THREADS must be a positive integer, got '{}'", s));
  }
  return static_cast<int>(std::min<long>(v, 256));
}

// ---- message bus -------------------------------------------------------------------------------

MessageBus::MessageBus(const AugmentedLayout& layout) : layout_(&layout) {
  base_.assign(static_cast<std::size_t>(layout.n + 2), 0);
  for (int i = 1; i <= layout.n; ++i) {
    base_[static_cast<std::size_t>(i + 1)] =
        base_[static_cast<std::size_t>(i)] + 2 * layout.neighbors[static_cast<std::size_t>(i)].size();
  }
  slots_.resize(base_.back());
}

std::size_t MessageBus::slot(int src, int dst, int tag) const {
  const auto& nb = layout_->neighbors[static_cast<std::size_t>(src)];
  const auto it = std::find(nb.begin(), nb.end(), dst);
  return base_[static_cast<std::size_t>(src)] + 2 * static_cast<std::size_t>(it - nb.begin()) +
         static_cast<std::size_t>(tag);
}

void MessageBus::post(int src, int dst, int tag, const Vec& payload) {
  if (layout_->local_offset(src, dst) <= 0) {
    throw Error(ErrorKind::solver_failure, fmt::format("agent {} posted to non-neighbour {}", src, dst));
  }
  slots_[slot(src, dst, tag)] = payload;
  messages_.fetch_add(1, std::memory_order_relaxed);
}

const Vec& MessageBus::read(int dst, int src, int tag) {
  if (layout_->local_offset(dst, src) <= 0) {
    illegal_reads_.fetch_add(1);
    throw Error(ErrorKind::solver_failure, fmt::format("agent {} read from non-neighbour {}", dst, src));
  }
  return slots_[slot(src, dst, tag)];
}

// ---- executor ----------------------------------------------------------------------------------

struct AgentExecutor::Impl {
  tbb::task_arena arena;
  explicit Impl(int t) : arena(t) {}
};

AgentExecutor::AgentExecutor(int threads) : threads_(std::max(1, threads)) {
  if (threads_ > 1) impl_ = std::make_unique<Impl>(threads_);
}

AgentExecutor::~AgentExecutor() = default;

void AgentExecutor::for_each(int n, const std::function<void(int)>& fn) {
  if (!impl_) {
    for (int i = 1; i <= n; ++i) fn(i);
    return;
  }
  impl_->arena.execute([&] { tbb::parallel_for(1, n + 1, [&](int i) { fn(i); }); });
}

// ---- prox --------------------------------------------------------------------------------------

ProxOperator::ProxOperator(ConvexQcqp problem, double rho, QcqpOptions options)
    : problem_(std::move(problem)), rho_(rho), options_(options) {
  if (!(rho > 0)) throw Error(ErrorKind::invalid_config, "prox parameter must be positive");
  Mat Pr = problem_.P;
  Pr.diagonal().array() += 1.0 / rho_;
  diagonal_ = (Pr - Mat(Pr.diagonal().asDiagonal())).cwiseAbs().maxCoeff() == 0.0;
  llt_.compute(Pr);
  if (llt_.info() != Eigen::Success) throw Error(ErrorKind::solver_failure, "prox Hessian is not positive definite");
}

ProxOperator ProxOperator::fixed(const Vec& point) {
  ProxOperator op;
  op.fixed_ = point;
  return op;
}

Vec ProxOperator::apply(const Vec& anchor) {
  if (fixed_) return *fixed_;
  const ConvexQcqp& pr = problem_;
  const Vec q = pr.q - anchor / rho_;
  auto cons_ok = [&](const Vec& y) {
    for (const auto& c : pr.cons)
      if (c.eval(y) > 0) return false;
    return true;
  };
  Vec y;
  bool box_ok = false;
  if (diagonal_) {
    y.resize(q.size());
    for (int k = 0; k < q.size(); ++k) {
      y(k) = std::clamp(-q(k) / (pr.P(k, k) + 1.0 / rho_), pr.lo(k), pr.hi(k));
    }
    box_ok = true;
  } else {
    Mat Pr = pr.P;
    Pr.diagonal().array() += 1.0 / rho_;
    box_ok = box_qp(Pr, q, pr.lo, pr.hi, llt_, y);
  }
  if (box_ok && cons_ok(y)) {
    last_ = y;
    return y;
  }
  ++barrier_calls_;
  QcqpResult res = qcqp_prox(pr, anchor, rho_, options_, last_.size() == q.size() ? &last_ : nullptr);
  if (res.kkt_residual > 1e3 * options_.kkt_tol) res = qcqp_prox(pr, anchor, rho_, options_);
  last_ = res.y;
  return res.y;
}

// ---- formulation -------------------------------------------------------------------------------

std::vector<AgentState> init_agents(const AugmentedLayout& layout, const Vec& u) {
  if (u.size() != layout.n * layout.p) throw Error(ErrorKind::dimension_mismatch, "init_agents control size");
  const Vec full = layout.broadcast(u);
  std::vector<AgentState> agents(static_cast<std::size_t>(layout.n + 1));
  for (int i = 1; i <= layout.n; ++i) {
    auto& a = agents[static_cast<std::size_t>(i)];
    a.i = i;
    a.neighbors = layout.neighbors[static_cast<std::size_t>(i)];
    a.u_hat = layout.agent_slice(full, i);
    a.z = a.u_hat;
    a.x = a.u_hat;
  }
  return agents;
}

LocalFormulation formulate_local(const PlatoonConfig& config, const WeightSchedule& weights, const PlatoonState& state) {
  LocalFormulation f;
  f.config = config;
  f.config_zero = zero_drag(config);
  f.state = state;
  f.p = weights.p;
  f.model = assemble_quadratic_model(config, weights, state);
  f.decomposed = decompose_model(f.model);
  f.layout = AugmentedLayout::build(config.n, weights.p, neighbor_lists(config));
  for (int i = 1; i <= config.n; ++i) {
    if (config.n > 1 && i < config.n && f.layout.local_offset(i, i + 1) < 0) {
      throw Error(ErrorKind::invalid_config, fmt::format("vehicles {} and {} must be neighbours", i, i + 1));
    }
  }
  f.restricted = restricted_convex_sets(config, state, weights.p);
  return f;
}

Vec LocalFormulation::box_lo(int i) const {
  Vec lo(layout.agent_dim(i));
  lo.head(p).setConstant(config.vehicle(i).a_min);
  const auto& nb = layout.neighbors[static_cast<std::size_t>(i)];
  for (std::size_t k = 0; k < nb.size(); ++k) lo.segment(p * static_cast<int>(k + 1), p).setConstant(config.vehicle(nb[k]).a_min);
  return lo;
}

Vec LocalFormulation::box_hi(int i) const {
  Vec hi(layout.agent_dim(i));
  hi.head(p).setConstant(config.vehicle(i).a_max);
  const auto& nb = layout.neighbors[static_cast<std::size_t>(i)];
  for (std::size_t k = 0; k < nb.size(); ++k) hi.segment(p * static_cast<int>(k + 1), p).setConstant(config.vehicle(nb[k]).a_max);
  return hi;
}

ScalarFn LocalFormulation::objective(int i, const Vec& y, bool zero_drag_obj) const {
  const auto& support = decomposed.blocks[static_cast<std::size_t>(i - 1)].support;
  Vec us(static_cast<int>(support.size()) * p);
  for (std::size_t b = 0; b < support.size(); ++b) {
    us.segment(static_cast<int>(b) * p, p) = y.segment(layout.local_offset(i, support[b]), p);
  }
  const ScalarFn f = local_objective(decomposed, zero_drag_obj ? config_zero : config, state, i, us, true);
  ScalarFn out;
  embed(layout, i, support, f, out);
  return out;
}

std::vector<LocalFormulation::Constraint> LocalFormulation::constraints(int i, const Vec& y) const {
  const Vec ui = y.head(p);
  const int op = (i > 1) ? layout.local_offset(i, i - 1) : -1;
  const Vec uprev = (i > 1) ? Vec(y.segment(op, p)) : Vec::Constant(p, state.u0);
  const auto& veh = config.vehicle(i);
  std::vector<Constraint> out;
  out.reserve(static_cast<std::size_t>(3 * p));
  const std::vector<int> own{i};
  for (int j = 1; j <= p; ++j) {
    ScalarFn q = speed_constraint_fn(veh, state.v(i), ui, j, config.tau, config.g);
    ScalarFn lo{config.v_min - q.value, -q.grad, -q.hess};
    Constraint c{Kind::speed_lower, j, {}};
    embed(layout, i, own, lo, c.fn);
    out.push_back(std::move(c));
  }
  for (int j = 1; j <= p; ++j) {
    ScalarFn q = speed_constraint_fn(veh, state.v(i), ui, j, config.tau, config.g);
    q.value -= config.v_max;
    Constraint c{Kind::speed_upper, j, {}};
    embed(layout, i, own, q, c.fn);
    out.push_back(std::move(c));
  }
  const std::vector<int> pair{i - 1, i};
  for (int j = 1; j <= p; ++j) {
    const ScalarFn h = safety_constraint_fn(config, state, i, uprev, ui, j, false);
    Constraint c{Kind::safety, j, {}};
    embed(layout, i, pair, h, c.fn);
    out.push_back(std::move(c));
  }
  return out;
}

ConvexQcqp LocalFormulation::convex_problem(int i, bool zero_drag_obj) const {
  if (p > 1 && !zero_drag_obj) {
    throw Error(ErrorKind::invalid_config, "the drag objective is convex quadratic only for p = 1");
  }
  const int d = layout.agent_dim(i);
  const ScalarFn f = objective(i, Vec::Zero(d), zero_drag_obj);
  ConvexQcqp pr;
  pr.P = f.hess;
  pr.q = f.grad;
  pr.r = f.value;
  pr.lo = box_lo(i);
  pr.hi = box_hi(i);
  const auto& rs = restricted[static_cast<std::size_t>(i - 1)];
  for (int j = 1; j <= p; ++j) {
    Vec b = Vec::Zero(d);
    b.head(p) = prefix(p, j);
    pr.cons.push_back(make_constraint(Mat(), -b, rs.partial_lo(j - 1)));
    pr.cons.push_back(make_constraint(Mat(), b, -rs.partial_hi(j - 1)));
  }
  const int op = (i > 1) ? layout.local_offset(i, i - 1) : -1;
  for (int j = 1; j <= p; ++j) {
    const auto& qf = rs.safety[static_cast<std::size_t>(j - 1)];
    Mat A = Mat::Zero(d, d);
    Vec b = Vec::Zero(d);
    A.topLeftCorner(p, p) = qf.Q.bottomRightCorner(p, p);
    b.head(p) = qf.b.tail(p);
    if (op >= 0) {
      A.block(op, op, p, p) = qf.Q.topLeftCorner(p, p);
      A.block(op, 0, p, p) = qf.Q.topRightCorner(p, p);
      A.block(0, op, p, p) = qf.Q.bottomLeftCorner(p, p);
      b.segment(op, p) = qf.b.head(p);
    }
    pr.cons.push_back(make_constraint(A, b, qf.c));
  }
  return pr;
}

ConvexQcqp LocalFormulation::centralized_problem(bool zero_drag_obj) const {
  if (p > 1 && !zero_drag_obj) {
    throw Error(ErrorKind::invalid_config, "the drag objective is convex quadratic only for p = 1");
  }
  const int n = config.n, N = n * p;
  // J(u) with a = u - d, d the constant drag of the first step (zero without drag).
  Vec dvec = Vec::Zero(N);
  if (!zero_drag_obj) {
    for (int i = 1; i <= n; ++i) {
      const auto& veh = config.vehicle(i);
      dvec(i - 1) = veh.c2 * state.v(i) * state.v(i) + veh.c3 * config.g;
    }
  }
  ConvexQcqp pr;
  pr.P = model.W;
  pr.q = model.c - model.V * dvec;
  pr.r = 0.5 * dvec.dot(model.V * dvec) - model.c.dot(dvec) + model.gamma;
  pr.lo.resize(N);
  pr.hi.resize(N);
  for (int i = 1; i <= n; ++i) {
    pr.lo.segment((i - 1) * p, p).setConstant(config.vehicle(i).a_min);
    pr.hi.segment((i - 1) * p, p).setConstant(config.vehicle(i).a_max);
  }
  for (int i = 1; i <= n; ++i) {
    const auto& rs = restricted[static_cast<std::size_t>(i - 1)];
    const int oi = (i - 1) * p;
    for (int j = 1; j <= p; ++j) {
      Vec b = Vec::Zero(N);
      b.segment(oi, p) = prefix(p, j);
      pr.cons.push_back(make_constraint(Mat(), -b, rs.partial_lo(j - 1)));
      pr.cons.push_back(make_constraint(Mat(), b, -rs.partial_hi(j - 1)));
    }
    for (int j = 1; j <= p; ++j) {
      const auto& qf = rs.safety[static_cast<std::size_t>(j - 1)];
      Mat A = Mat::Zero(N, N);
      Vec b = Vec::Zero(N);
      A.block(oi, oi, p, p) = qf.Q.bottomRightCorner(p, p);
      b.segment(oi, p) = qf.b.tail(p);
      if (i > 1) {
        const int op = (i - 2) * p;
        A.block(op, op, p, p) = qf.Q.topLeftCorner(p, p);
        A.block(op, oi, p, p) = qf.Q.topRightCorner(p, p);
        A.block(oi, op, p, p) = qf.Q.bottomLeftCorner(p, p);
        b.segment(op, p) = qf.b.head(p);
      }
      pr.cons.push_back(make_constraint(A, b, qf.c));
    }
  }
  return pr;
}

double LocalFormulation::approx_violation(const Vec& u) const {
  const int n = config.n;
  if (u.size() != n * p) throw Error(ErrorKind::dimension_mismatch, "approx_violation control size");
  double v = 0;
  for (int i = 1; i <= n; ++i) {
    const auto& veh = config.vehicle(i);
    const Vec ui = u.segment((i - 1) * p, p);
    const Vec uprev = (i > 1) ? Vec(u.segment((i - 2) * p, p)) : Vec::Constant(p, state.u0);
    v = std::max({v, veh.a_min - ui.minCoeff(), ui.maxCoeff() - veh.a_max});
    for (int j = 1; j <= p; ++j) {
      const double q = speed_constraint_value<double>(veh, state.v(i), ui, j, config.tau, config.g);
      v = std::max({v, config.v_min - q, q - config.v_max});
      v = std::max(v, safety_constraint_value<double>(config, state, i, uprev, ui, j, false));
    }
  }
  return v;
}

double LocalFormulation::objective_value(const Vec& u) const {
  Vec a(u.size());
  for (int i = 1; i <= config.n; ++i) {
    a.segment((i - 1) * p, p) = approx_accel_map<double>(config.vehicle(i), state.v(i), Vec(u.segment((i - 1) * p, p)),
                                                         config.tau, config.g);
  }
  return model.evaluate(a, u);
}

// ---- Douglas-Rachford --------------------------------------------------------------------------

double dr_round(const AugmentedLayout& layout, std::vector<ProxOperator>& prox, std::vector<AgentState>& agents,
                const SolverConfig& cfg, MessageBus& bus, AgentExecutor& exec) {
  const int n = layout.n, p = layout.p;
  std::vector<Vec> w_next(static_cast<std::size_t>(n + 1));
  std::vector<double> res(static_cast<std::size_t>(n + 1), 0.0);

  // Send each copy block to its owner.
  exec.for_each(n, [&](int k) {
    const auto& a = agents[static_cast<std::size_t>(k)];
    for (int j : layout.neighbors[static_cast<std::size_t>(k)]) bus.post(k, j, kTagCopy, a.z.segment(layout.local_offset(k, j), p));
  });
  // Owners average their block with the received copies and return the result.
  exec.for_each(n, [&](int j) {
    const auto& a = agents[static_cast<std::size_t>(j)];
    const auto& nb = layout.neighbors[static_cast<std::size_t>(j)];
    Vec avg = a.z.head(p);
    for (int k : nb) avg += bus.read(j, k, kTagCopy);
    avg /= 1.0 + static_cast<double>(nb.size());
    Vec w(layout.agent_dim(j));
    w.head(p) = avg;
    w_next[static_cast<std::size_t>(j)] = std::move(w);
    for (int k : nb) bus.post(j, k, kTagAverage, avg);
  });
  // Assemble w, prox at the reflected point, update z.
  exec.for_each(n, [&](int i) {
    const auto t0 = Clock::now();
    auto& a = agents[static_cast<std::size_t>(i)];
    Vec& w = w_next[static_cast<std::size_t>(i)];
    for (int j : layout.neighbors[static_cast<std::size_t>(i)]) w.segment(layout.local_offset(i, j), p) = bus.read(i, j, kTagAverage);
    res[static_cast<std::size_t>(i)] = (a.w.size() == w.size()) ? (w - a.w).lpNorm<Eigen::Infinity>() : kInf;
    try {
      a.x = prox[static_cast<std::size_t>(i)].apply(2.0 * w - a.z);
    } catch (const Error& e) {
      throw Error(e.kind(), fmt::format("agent {}: {}", i, e.what()));
    }
    // |x - w| also catches prox outputs that disagree across agents while w barely moves.
    res[static_cast<std::size_t>(i)] = std::max(res[static_cast<std::size_t>(i)], (a.x - w).lpNorm<Eigen::Infinity>());
    a.z += 2.0 * cfg.alpha * (a.x - w);
    a.w = std::move(w);
    a.seconds += seconds_since(t0);
  });
  return *std::max_element(res.begin() + 1, res.end());
}

DrStats run_dr(const AugmentedLayout& layout, std::vector<ProxOperator>& prox, std::vector<AgentState>& agents,
               const SolverConfig& cfg, MessageBus& bus, AgentExecutor& exec, double tol, int max_rounds) {
  if (static_cast<int>(prox.size()) != layout.n + 1 || static_cast<int>(agents.size()) != layout.n + 1) {
    throw Error(ErrorKind::dimension_mismatch, "run_dr expects n + 1 slots (index 0 unused)");
  }
  DrStats st;
  for (int t = 0; t < max_rounds; ++t) {
    st.residual = dr_round(layout, prox, agents, cfg, bus, exec);
    st.trace.push_back(st.residual);
    ++st.rounds;
    st.estimated_error = st.residual;
    if (cfg.dr_stop == DrStopRule::estimated_error && st.residual > 0) {
      constexpr int window = 5;
      if (st.rounds <= window + 1) continue;
      const double prev = st.trace[st.trace.size() - 1 - window];
      const double r = (prev > 0) ? std::pow(st.residual / prev, 1.0 / window) : 1.0;
      st.estimated_error = (r < 1.0) ? st.residual * r / (1.0 - r) : kInf;
    }
    if (st.estimated_error <= tol) {
      st.converged = true;
      break;
    }
  }
  return st;
}

DrStats warm_start_inner(const AugmentedLayout& layout, const std::vector<ConvexQcqp>& inner,
                         std::vector<AgentState>& agents, const SolverConfig& cfg, MessageBus& bus,
                         AgentExecutor& exec) {
  std::vector<ProxOperator> box(static_cast<std::size_t>(layout.n + 1));
  for (int i = 1; i <= layout.n; ++i) {
    const auto& a = agents[static_cast<std::size_t>(i)];
    if (a.frozen) {
      box[static_cast<std::size_t>(i)] = ProxOperator::fixed(a.u_hat);
      continue;
    }
    ConvexQcqp pr = inner[static_cast<std::size_t>(i)];
    pr.cons.clear();
    box[static_cast<std::size_t>(i)] = ProxOperator(std::move(pr), cfg.rho, cfg.qcqp);
  }
  for (int i = 1; i <= layout.n; ++i) agents[static_cast<std::size_t>(i)].w.resize(0);
  return run_dr(layout, box, agents, cfg, bus, exec, cfg.warmup_tol, cfg.max_warmup);
}

// ---- SCP pieces --------------------------------------------------------------------------------

void lipschitz_estimates(const LocalFormulation& form, std::vector<AgentState>& agents, const SolverConfig& cfg) {
  for (int i = 1; i <= form.layout.n; ++i) {
    auto& a = agents[static_cast<std::size_t>(i)];
    a.L_J = cfg.nu_p * spectral_norm(form.objective(i, a.u_hat).hess);
    const auto cons = form.constraints(i, a.u_hat);
    a.L_g.assign(cons.size(), 0.0);
    if (a.lg_boost.size() != cons.size()) a.lg_boost.assign(cons.size(), 1.0);
    for (std::size_t m = 0; m < cons.size(); ++m) {
      // The upper speed bound has a convex part only, which is linearised exactly.
      if (cons[m].kind == LocalFormulation::Kind::speed_upper) continue;
      a.L_g[m] = cfg.lg_scale * spectral_norm(cons[m].fn.hess) * a.lg_boost[m];
    }
  }
}

ConvexQcqp scp_step(const LocalFormulation& form, const AgentState& agent) {
  const int i = agent.i;
  const Vec& u = agent.u_hat;
  const int d = static_cast<int>(u.size());
  const double uu = u.squaredNorm();
  const ScalarFn f = form.objective(i, u);
  ConvexQcqp pr;
  pr.P = agent.L_J * Mat::Identity(d, d);
  pr.q = f.grad - agent.L_J * u;
  pr.r = f.value - f.grad.dot(u) + 0.5 * agent.L_J * uu;
  pr.lo = form.box_lo(i);
  pr.hi = form.box_hi(i);
  const auto cons = form.constraints(i, u);
  if (agent.L_g.size() != cons.size()) throw Error(ErrorKind::dimension_mismatch, "scp_step needs Lipschitz estimates");
  for (std::size_t m = 0; m < cons.size(); ++m) {
    const auto& g = cons[m].fn;
    const double L = agent.L_g[m];
    const Mat A = (L > 0) ? Mat(L * Mat::Identity(d, d)) : Mat();
    pr.cons.push_back(make_constraint(A, g.grad - L * u, g.value - g.grad.dot(u) + 0.5 * L * uu));
  }
  return pr;
}

// ---- diagnostics -------------------------------------------------------------------------------

nlohmann::json to_json(const SolveDiagnostics& d) {
  nlohmann::json j;
  j["p"] = d.p;
  j["outer_iterations"] = d.outer_iterations;
  j["linear_rounds"] = d.linear_rounds;
  j["warmup_rounds"] = d.warmup_rounds;
  j["inner_rounds"] = d.inner_rounds;
  j["outer_residuals"] = d.outer_residuals;
  j["inner_residuals"] = d.inner_residuals;
  j["max_violation"] = d.max_violation;
  j["consensus_gap"] = d.consensus_gap;
  j["barrier_calls"] = d.barrier_calls;
  j["majorant_bumps"] = d.majorant_bumps;
  j["backtracks"] = d.backtracks;
  j["illegal_reads"] = d.illegal_reads;
  j["messages"] = d.messages;
  j["converged"] = d.converged;
  j["wall_seconds"] = d.wall_seconds;
  j["agent_seconds"] = d.agent_seconds;
  j["notes"] = d.notes;
  return j;
}

// ---- driver ------------------------------------------------------------------------------------

namespace {

Vec owned_prox_blocks(const AugmentedLayout& layout, const std::vector<AgentState>& agents) {
  Vec u(layout.n * layout.p);
  for (int i = 1; i <= layout.n; ++i) u.segment((i - 1) * layout.p, layout.p) = agents[static_cast<std::size_t>(i)].x.head(layout.p);
  return u;
}

double consensus_gap(const AugmentedLayout& layout, const std::vector<AgentState>& agents) {
  double gap = 0;
  for (int i = 1; i <= layout.n; ++i) {
    for (int j : layout.neighbors[static_cast<std::size_t>(i)]) {
      const Vec& xi = agents[static_cast<std::size_t>(i)].x;
      const Vec& xj = agents[static_cast<std::size_t>(j)].x;
      gap = std::max(gap, (xi.segment(layout.local_offset(i, j), layout.p) - xj.head(layout.p)).lpNorm<Eigen::Infinity>());
    }
  }
  return gap;
}

void collect(const std::vector<ProxOperator>& prox, SolveDiagnostics& diag) {
  for (const auto& op : prox) diag.barrier_calls += op.barrier_calls();
}

Vec shifted_plan(const Vec& plan, int n, int p) {
  Vec out = plan;
  for (int i = 0; i < n; ++i) {
    for (int s = 0; s + 1 < p; ++s) out(i * p + s) = plan(i * p + s + 1);
  }
  return out;
}

}  // namespace

DistributedMpc::DistributedMpc(PlatoonConfig config, WeightSchedule weights, SolverConfig solver)
    : config_(std::move(config)), weights_(std::move(weights)), solver_(std::move(solver)), exec_(solver_.threads) {
  validate_config(config_, ReactionTimePolicy::warn);
  validate_weights(weights_, config_.n);
  validate_solver_config(solver_);
  if (solver_.p != weights_.p) throw Error(ErrorKind::invalid_config, "solver and weight horizons differ");
  layout_ = AugmentedLayout::build(config_.n, weights_.p, neighbor_lists(config_));
}

MpcSolution DistributedMpc::solve(const PlatoonState& state) {
  const auto t0 = Clock::now();
  const LocalFormulation form = formulate_local(config_, weights_, state);
  const int n = config_.n, p = weights_.p;
  const Vec u_init = previous_ ? shifted_plan(*previous_, n, p) : Vec(Vec::Zero(n * p));
  MpcSolution sol = (p == 1) ? solve_convex(form, u_init) : solve_scp(form, u_init);
  sol.control.resize(n);
  for (int i = 0; i < n; ++i) sol.control(i) = sol.plan(i * p);
  sol.diagnostics.p = p;
  sol.diagnostics.wall_seconds = seconds_since(t0);
  previous_ = sol.plan;
  return sol;
}

Vec DistributedMpc::run_convex_stage(const LocalFormulation& form, bool zero_drag_obj, const Vec& u_init, double tol,
                                     SolveDiagnostics& diag) {
  const int n = layout_.n;
  std::vector<ProxOperator> prox(static_cast<std::size_t>(n + 1));
  for (int i = 1; i <= n; ++i) prox[static_cast<std::size_t>(i)] = ProxOperator(form.convex_problem(i, zero_drag_obj), solver_.rho, solver_.qcqp);
  std::vector<AgentState> agents = init_agents(layout_, u_init);
  if (z_convex_ && z_convex_->size() == layout_.total_dim()) {
    for (int i = 1; i <= n; ++i) agents[static_cast<std::size_t>(i)].z = layout_.agent_slice(*z_convex_, i);
  }
  MessageBus bus(layout_);
  DrStats st = run_dr(layout_, prox, agents, solver_, bus, exec_, tol, solver_.max_convex_rounds);
  diag.linear_rounds += st.rounds;
  diag.inner_residuals.push_back(st.residual);
  Vec u = owned_prox_blocks(layout_, agents);
  // Tighten the tolerance while the owners' blocks still violate the constraints.
  double t = tol;
  for (int rep = 0; rep < 4 && form.approx_violation(u) > solver_.feasibility_target; ++rep) {
    t /= 10;
    st = run_dr(layout_, prox, agents, solver_, bus, exec_, t, solver_.max_convex_rounds);
    diag.linear_rounds += st.rounds;
    u = owned_prox_blocks(layout_, agents);
  }
  if (!st.converged) diag.notes.push_back(fmt::format("convex stage hit {} rounds", solver_.max_convex_rounds));
  Vec z(layout_.total_dim());
  for (int i = 1; i <= n; ++i) z.segment(layout_.agent_offset[static_cast<std::size_t>(i)], layout_.agent_dim(i)) = agents[static_cast<std::size_t>(i)].z;
  z_convex_ = z;
  collect(prox, diag);
  diag.illegal_reads += bus.illegal_reads();
  diag.messages += bus.messages();
  diag.consensus_gap = consensus_gap(layout_, agents);
  diag.agent_seconds.assign(static_cast<std::size_t>(n), 0.0);
  for (int i = 1; i <= n; ++i) diag.agent_seconds[static_cast<std::size_t>(i - 1)] += agents[static_cast<std::size_t>(i)].seconds;
  return u;
}

MpcSolution DistributedMpc::solve_convex(const LocalFormulation& form, const Vec& u_init) {
  MpcSolution sol;
  sol.plan = run_convex_stage(form, false, u_init, solver_.tol_outer, sol.diagnostics);
  sol.diagnostics.max_violation = form.approx_violation(sol.plan);
  sol.diagnostics.converged = sol.diagnostics.max_violation <= solver_.feasibility_target;
  return sol;
}

MpcSolution DistributedMpc::solve_scp(const LocalFormulation& form, const Vec& u_init) {
  const int n = layout_.n;
  MpcSolution sol;
  SolveDiagnostics& diag = sol.diagnostics;
  const double target = solver_.feasibility_target;

  // Convex warm start: zero-drag objective over the inner approximations of the constraint sets.
  Vec u = run_convex_stage(form, true, u_init, solver_.tol_inner, diag);
  double viol = form.approx_violation(u);
  if (viol > target) diag.notes.push_back(fmt::format("warm start violates constraints by {:.3e}", viol));

  std::vector<AgentState> agents = init_agents(layout_, u);
  MessageBus bus(layout_);
  std::vector<double> agent_seconds(static_cast<std::size_t>(n), 0.0);
  for (int k = 0; k < solver_.max_outer; ++k) {
    lipschitz_estimates(form, agents, solver_);
    Vec cand;
    double cviol = kInf;
    double tol = solver_.tol_inner;
    for (int attempt = 0; attempt < 8; ++attempt) {
      std::vector<ConvexQcqp> inner(static_cast<std::size_t>(n + 1));
      std::vector<ProxOperator> prox(static_cast<std::size_t>(n + 1));
      for (int i = 1; i <= n; ++i) {
        auto& a = agents[static_cast<std::size_t>(i)];
        inner[static_cast<std::size_t>(i)] = scp_step(form, a);
        prox[static_cast<std::size_t>(i)] = a.frozen ? ProxOperator::fixed(a.u_hat)
                                                     : ProxOperator(inner[static_cast<std::size_t>(i)], solver_.rho, solver_.qcqp);
        a.z = a.u_hat;
      }
      const DrStats warm = warm_start_inner(layout_, inner, agents, solver_, bus, exec_);
      diag.warmup_rounds.push_back(warm.rounds);
      for (int i = 1; i <= n; ++i) agents[static_cast<std::size_t>(i)].w.resize(0);
      const DrStats st = run_dr(layout_, prox, agents, solver_, bus, exec_, tol, solver_.max_inner);
      diag.inner_rounds.push_back(st.rounds);
      diag.inner_residuals.push_back(st.residual);
      collect(prox, diag);
      cand = owned_prox_blocks(layout_, agents);
      cviol = form.approx_violation(cand);
      if (cviol <= target) break;

      // Raise L_g where the model holds but the true constraint does not.
      const Vec full = layout_.broadcast(cand);
      bool bumped = false;
      for (int i = 1; i <= n; ++i) {
        auto& a = agents[static_cast<std::size_t>(i)];
        const Vec y = layout_.agent_slice(full, i);
        const auto truth = form.constraints(i, y);
        const auto& model = inner[static_cast<std::size_t>(i)].cons;
        for (std::size_t m = 0; m < truth.size(); ++m) {
          if (truth[m].fn.value > target && model[m].eval(y) <= target && truth[m].kind != LocalFormulation::Kind::speed_upper) {
            a.lg_boost[m] *= 2.0;
            a.L_g[m] = std::max(2.0 * a.L_g[m], 1e-8);
            bumped = true;
            ++diag.majorant_bumps;
          }
        }
      }
      if (!bumped) tol /= 10;
    }
    if (cviol > target) {
      // Backtrack toward the feasible linearisation point.
      const Vec base = u;
      double theta = 0.5;
      for (; theta > 1e-9; theta *= 0.5) {
        const Vec trial = base + theta * (cand - base);
        if (form.approx_violation(trial) <= target) {
          cand = trial;
          break;
        }
      }
      if (theta <= 1e-9) cand = base;
      ++diag.backtracks;
    }

    const double step = (cand - u).lpNorm<Eigen::Infinity>();
    const double rel = step / std::max(u.lpNorm<Eigen::Infinity>(), 1e-12);
    diag.outer_residuals.push_back(step);
    ++diag.outer_iterations;
    const Vec full = layout_.broadcast(cand);
    for (int i = 1; i <= n; ++i) {
      auto& a = agents[static_cast<std::size_t>(i)];
      const Vec next = layout_.agent_slice(full, i);
      const bool still = (next - a.u_hat).lpNorm<Eigen::Infinity>() <= 1e-12;
      a.zero_steps = still ? a.zero_steps + 1 : 0;
      if (a.zero_steps >= 2) a.frozen = true;
      a.u_hat = next;
    }
    u = cand;
    double measure = (solver_.stop_mode == StopMode::absolute) ? step : std::min(step, rel);
    if (solver_.outer_stop == DrStopRule::estimated_error) {
      const auto& hist = diag.outer_residuals;
      if (hist.size() < 3) {
        measure = kInf;
      } else {
        const double prev = hist[hist.size() - 3];
        const double r = (prev > 0) ? std::sqrt(step / prev) : 0.0;
        measure = (r < 1.0) ? measure * r / (1.0 - r) : kInf;
      }
    }
    if (measure <= solver_.tol_outer) {
      diag.converged = true;
      break;
    }
  }
  if (!diag.converged) diag.notes.push_back(fmt::format("outer loop hit {} iterations", solver_.max_outer));
  for (int i = 1; i <= n; ++i) agent_seconds[static_cast<std::size_t>(i - 1)] = agents[static_cast<std::size_t>(i)].seconds;
  for (std::size_t i = 0; i < agent_seconds.size() && i < diag.agent_seconds.size(); ++i) diag.agent_seconds[i] += agent_seconds[i];
  diag.illegal_reads += bus.illegal_reads();
  diag.messages += bus.messages();
  diag.consensus_gap = consensus_gap(layout_, agents);
  sol.plan = u;
  diag.max_violation = form.approx_violation(u);
  return sol;
}

Vec centralized_solve(const LocalFormulation& form, bool zero_drag_obj) {
  QcqpOptions opt;
  opt.kkt_tol = 1e-11;
  opt.feas_tol = 1e-12;
  const ConvexQcqp pr = form.centralized_problem(zero_drag_obj);
  return qcqp_solve(pr, opt).y;
}

}  // namespace platoon
