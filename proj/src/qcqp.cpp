#include "platoon/qcqp.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace platoon {

double ConvexQcqp::max_violation(const Vec& y) const {
  double v = 0;
  for (int k = 0; k < dim(); ++k) v = std::max({v, lo(k) - y(k), y(k) - hi(k)});
  for (const auto& c : cons) v = std::max(v, c.eval(y));
  return v;
}

double box_prox(double a, double b, double lo, double hi) { return std::clamp(-b / (2.0 * a), lo, hi); }

bool box_qp(const Mat& P, const Vec& q, const Vec& lo, const Vec& hi, const Eigen::LLT<Mat>& full, Vec& y) {
  const int d = static_cast<int>(q.size());
  y = full.solve(-q);
  Vec lam = Vec::Zero(d);
  std::vector<int> state(static_cast<std::size_t>(d), 0), prev;
  for (int it = 0; it < 10 * d + 10; ++it) {
    for (int k = 0; k < d; ++k) {
      const double t = y(k) - lam(k);
      state[static_cast<std::size_t>(k)] = (t < lo(k)) ? -1 : (t > hi(k)) ? 1 : 0;
    }
    if (state == prev) break;
    prev = state;
    std::vector<int> free;
    Vec yb = Vec::Zero(d);
    for (int k = 0; k < d; ++k) {
      const int s = state[static_cast<std::size_t>(k)];
      if (s == 0) free.push_back(k);
      yb(k) = (s < 0) ? lo(k) : (s > 0) ? hi(k) : 0.0;
    }
    const int f = static_cast<int>(free.size());
    if (f > 0) {
      Mat Pff(f, f);
      Vec rhs(f);
      for (int a = 0; a < f; ++a) {
        rhs(a) = -q(free[static_cast<std::size_t>(a)]) - P.row(free[static_cast<std::size_t>(a)]).dot(yb);
        for (int b = 0; b < f; ++b) Pff(a, b) = P(free[static_cast<std::size_t>(a)], free[static_cast<std::size_t>(b)]);
      }
      const Vec yf = Pff.llt().solve(rhs);
      for (int a = 0; a < f; ++a) yb(free[static_cast<std::size_t>(a)]) = yf(a);
    }
    y = yb;
    lam = P * y + q;
    for (int k : free) lam(k) = 0;
  }
  constexpr double tol = 1e-12;
  for (int k = 0; k < d; ++k) {
    const double scale = 1.0 + std::abs(lam(k));
    if (y(k) < lo(k) - tol || y(k) > hi(k) + tol) return false;
    if (y(k) > lo(k) + tol && y(k) < hi(k) - tol && std::abs(lam(k)) > 1e-10 * scale) return false;
    if (y(k) <= lo(k) + tol && lam(k) < -1e-10 * scale) return false;
    if (y(k) >= hi(k) - tol && lam(k) > 1e-10 * scale) return false;
  }
  y = y.cwiseMax(lo).cwiseMin(hi);
  return true;
}

double kkt_residual(const ConvexQcqp& pr, const Vec& y, const Vec& lambda, const Vec& mu_lo, const Vec& mu_hi) {
  Vec g0 = pr.P * y + pr.q;
  Vec stat = g0 - mu_lo + mu_hi;
  double comp = 0;
  for (std::size_t j = 0; j < pr.cons.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    stat += lambda(jj) * pr.cons[j].grad(y);
    comp = std::max(comp, std::abs(lambda(jj) * pr.cons[j].eval(y)));
  }
  for (int k = 0; k < pr.dim(); ++k) {
    comp = std::max(comp, std::abs(mu_lo(k) * (y(k) - pr.lo(k))));
    comp = std::max(comp, std::abs(mu_hi(k) * (pr.hi(k) - y(k))));
  }
  const double scale = std::max(1.0, g0.lpNorm<Eigen::Infinity>());
  return std::max({stat.lpNorm<Eigen::Infinity>() / scale, comp, pr.max_violation(y)});
}

namespace {

bool is_diagonal(const Mat& P) { return (P - Mat(P.diagonal().asDiagonal())).cwiseAbs().maxCoeff() == 0.0; }

// Barrier objective t f0 - sum log(-f_j) - sum log(box slack), divided by t to keep scales sane.
struct Barrier {
  const Mat& P;
  const Vec& q;
  const Vec& lo;
  const Vec& hi;
  const std::vector<QuadConstraint>& cons;

  bool strictly_inside(const Vec& y) const {
    for (int k = 0; k < y.size(); ++k)
      if (!(y(k) > lo(k) && y(k) < hi(k))) return false;
    for (const auto& c : cons)
      if (!(c.eval(y) < 0)) return false;
    return true;
  }

  double value(const Vec& y, double t) const {
    double v = 0.5 * y.dot(P * y) + q.dot(y);
    double b = 0;
    for (int k = 0; k < y.size(); ++k) b -= std::log(y(k) - lo(k)) + std::log(hi(k) - y(k));
    for (const auto& c : cons) b -= std::log(-c.eval(y));
    return v + b / t;
  }

  void derivatives(const Vec& y, double t, Vec& g, Mat& H) const {
    g = P * y + q;
    H = P;
    for (int k = 0; k < y.size(); ++k) {
      const double sl = y(k) - lo(k), sh = hi(k) - y(k);
      g(k) += (-1.0 / sl + 1.0 / sh) / t;
      H(k, k) += (1.0 / (sl * sl) + 1.0 / (sh * sh)) / t;
    }
    for (const auto& c : cons) {
      const double f = c.eval(y);
      const Vec gc = c.grad(y);
      g += gc / (-f * t);
      H += gc * gc.transpose() / (f * f * t);
      if (!c.linear()) H += c.A / (-f * t);
    }
  }
};

// Centering by damped Newton at fixed t. Returns Newton steps taken.
int center(const Barrier& bar, Vec& y, double t, const QcqpOptions& opt, int budget) {
  Vec g;
  Mat H;
  int it = 0;
  for (; it < budget; ++it) {
    bar.derivatives(y, t, g, H);
    H.diagonal().array() += opt.regularization;
    Eigen::LDLT<Mat> ldlt(H);
    Vec dy = -ldlt.solve(g);
    if (!dy.allFinite()) dy = -H.completeOrthogonalDecomposition().solve(g);
    const double dec = -g.dot(dy);
    const double f0 = bar.value(y, t);
    // t * dec / 2 is the decrement of the self-concordant t f + phi; the second test is the roundoff floor of f0.
    if (dec <= 0 || t * dec / 2.0 <= 1e-10 || dec / 2.0 <= 1e-15 * (1.0 + std::abs(f0))) break;
    double s = 1.0;
    while (s > 1e-14 && !bar.strictly_inside(y + s * dy)) s *= 0.5;
    while (s > 1e-14 && bar.value(y + s * dy, t) > f0 - 0.25 * s * dec) s *= 0.5;
    if (s <= 1e-14) break;
    y += s * dy;
  }
  return it + 1;
}

Vec interior_start(const Vec& lo, const Vec& hi, const Vec* hint) {
  Vec y = 0.5 * (lo + hi);
  if (hint && hint->size() == lo.size()) {
    const Vec pad = 1e-3 * (hi - lo);
    y = hint->cwiseMax(lo + pad).cwiseMin(hi - pad);
  }
  return y;
}

// Phase I: minimise s subject to f_j(y) <= s inside the box. Points whose slack is only just negative make the
// barrier start on the boundary, so keep going until the slack reaches a margin (or the best one found).
Vec find_slater(const ConvexQcqp& pr, const Vec& y0, const QcqpOptions& opt, int& iters) {
  const int d = pr.dim();
  auto worst_at = [&](const Vec& y) {
    double w = -std::numeric_limits<double>::infinity();
    for (const auto& c : pr.cons) w = std::max(w, c.eval(y));
    return w;
  };
  const double fmax = worst_at(y0);
  const double margin = 1e-3 * std::max(1.0, std::abs(fmax));
  if (fmax < -margin) return y0;

  // Augmented variable (y, s) with the constraints f_j(y) - s <= 0.
  Mat P = Mat::Zero(d + 1, d + 1);
  Vec q = Vec::Zero(d + 1);
  q(d) = 1.0;
  Vec lo(d + 1), hi(d + 1);
  lo.head(d) = pr.lo;
  hi.head(d) = pr.hi;
  const double span = std::max(1.0, std::abs(fmax));
  lo(d) = -10.0 * span;
  hi(d) = fmax + 10.0 * span;
  std::vector<QuadConstraint> cons;
  for (const auto& c : pr.cons) {
    QuadConstraint a;
    if (!c.linear()) {
      a.A = Mat::Zero(d + 1, d + 1);
      a.A.topLeftCorner(d, d) = c.A;
    }
    a.b = Vec::Zero(d + 1);
    a.b.head(d) = c.b;
    a.b(d) = -1.0;
    a.c = c.c;
    cons.push_back(std::move(a));
  }
  Barrier bar{P, q, lo, hi, cons};
  Vec x(d + 1);
  x.head(d) = y0.cwiseMax(pr.lo + 1e-3 * (pr.hi - pr.lo)).cwiseMin(pr.hi - 1e-3 * (pr.hi - pr.lo));
  x(d) = std::max(fmax, worst_at(x.head(d))) + span;
  Vec best = y0;
  double best_worst = fmax;
  for (double t = 1.0; t < 1e14; t *= opt.mu) {
    iters += center(bar, x, t, opt, opt.max_newton);
    const Vec y = x.head(d);
    const double w = worst_at(y);
    if (w < best_worst) {
      best = y;
      best_worst = w;
    }
    if (best_worst < -margin) return best;
  }
  if (best_worst < 0) return best;
  throw Error(ErrorKind::infeasible_subproblem, fmt::format("no strictly feasible point (phase I value {:.3e})", x(d)));
}

QcqpResult finish(const ConvexQcqp& pr, Vec y, const Vec& lambda, const Vec& mlo, const Vec& mhi, int iters,
                  bool fast) {
  QcqpResult r;
  r.y = std::move(y);
  r.lambda = lambda;
  r.mu_lo = mlo;
  r.mu_hi = mhi;
  r.newton_iterations = iters;
  r.fast_path = fast;
  r.kkt_residual = kkt_residual(pr, r.y, lambda, mlo, mhi);
  r.max_violation = pr.max_violation(r.y);
  return r;
}

// Newton on the KKT system restricted to the constraints and bounds the barrier point leaves active
// (multiplier larger than slack). Returns false if the active set guess is wrong.
bool polish(const ConvexQcqp& pr, const QcqpOptions& opt, Vec& y, Vec& lambda, Vec& mlo, Vec& mhi) {
  const int d = pr.dim();
  const int m = static_cast<int>(pr.cons.size());
  std::vector<int> act, freev;
  for (int j = 0; j < m; ++j)
    if (lambda(j) > -pr.cons[static_cast<std::size_t>(j)].eval(y)) act.push_back(j);
  Vec x = y;
  std::vector<int> bound(static_cast<std::size_t>(d), 0);
  for (int k = 0; k < d; ++k) {
    if (mlo(k) > y(k) - pr.lo(k)) {
      bound[static_cast<std::size_t>(k)] = -1;
      x(k) = pr.lo(k);
    } else if (mhi(k) > pr.hi(k) - y(k)) {
      bound[static_cast<std::size_t>(k)] = 1;
      x(k) = pr.hi(k);
    } else {
      freev.push_back(k);
    }
  }
  const int nf = static_cast<int>(freev.size()), na = static_cast<int>(act.size());
  Vec la(na);
  for (int a = 0; a < na; ++a) la(a) = lambda(act[static_cast<std::size_t>(a)]);
  auto grad_lag = [&](const Vec& v, const Vec& l) {
    Vec g = pr.P * v + pr.q;
    for (int a = 0; a < na; ++a) g += l(a) * pr.cons[static_cast<std::size_t>(act[static_cast<std::size_t>(a)])].grad(v);
    return g;
  };
  bool done = false;
  for (int it = 0; it < 30 && !done; ++it) {
    const Vec g = grad_lag(x, la);
    Vec r(nf + na);
    for (int a = 0; a < nf; ++a) r(a) = g(freev[static_cast<std::size_t>(a)]);
    for (int a = 0; a < na; ++a) r(nf + a) = pr.cons[static_cast<std::size_t>(act[static_cast<std::size_t>(a)])].eval(x);
    const double scale = 1.0 + (pr.P * x + pr.q).lpNorm<Eigen::Infinity>();
    if (r.lpNorm<Eigen::Infinity>() <= 1e-13 * scale) {
      done = true;
      break;
    }
    Mat Hl = pr.P;
    for (int a = 0; a < na; ++a) {
      const auto& c = pr.cons[static_cast<std::size_t>(act[static_cast<std::size_t>(a)])];
      if (!c.linear()) Hl += la(a) * c.A;
    }
    Mat K = Mat::Zero(nf + na, nf + na);
    for (int a = 0; a < nf; ++a)
      for (int b = 0; b < nf; ++b) K(a, b) = Hl(freev[static_cast<std::size_t>(a)], freev[static_cast<std::size_t>(b)]);
    for (int a = 0; a < na; ++a) {
      const Vec gc = pr.cons[static_cast<std::size_t>(act[static_cast<std::size_t>(a)])].grad(x);
      for (int b = 0; b < nf; ++b) K(nf + a, b) = K(b, nf + a) = gc(freev[static_cast<std::size_t>(b)]);
    }
    const Vec step = K.fullPivLu().solve(-r);
    if (!step.allFinite()) return false;
    for (int a = 0; a < nf; ++a) x(freev[static_cast<std::size_t>(a)]) += step(a);
    la += step.tail(na);
  }
  if (!done) return false;
  const double tiny = 1e-12;
  if (na > 0 && la.minCoeff() < -tiny) return false;
  for (int k : freev)
    if (x(k) < pr.lo(k) || x(k) > pr.hi(k)) return false;
  for (int j = 0; j < m; ++j)
    if (pr.cons[static_cast<std::size_t>(j)].eval(x) > opt.feas_tol) return false;
  const Vec g = grad_lag(x, la);
  Vec nlo = Vec::Zero(d), nhi = Vec::Zero(d);
  for (int k = 0; k < d; ++k) {
    const int b = bound[static_cast<std::size_t>(k)];
    if (b < 0) nlo(k) = g(k);
    if (b > 0) nhi(k) = -g(k);
  }
  if ((nlo.array() < -tiny).any() || (nhi.array() < -tiny).any()) return false;
  y = x;
  lambda.setZero();
  for (int a = 0; a < na; ++a) lambda(act[static_cast<std::size_t>(a)]) = std::max(0.0, la(a));
  mlo = nlo.cwiseMax(0.0);
  mhi = nhi.cwiseMax(0.0);
  return true;
}

}  // namespace

QcqpResult qcqp_solve(const ConvexQcqp& pr, const QcqpOptions& opt, const Vec* hint) {
  const int d = pr.dim();
  if (pr.P.rows() != d || pr.P.cols() != d || pr.lo.size() != d || pr.hi.size() != d) {
    throw Error(ErrorKind::dimension_mismatch, "qcqp dimensions");
  }
  if ((pr.lo.array() > pr.hi.array()).any()) throw Error(ErrorKind::infeasible_subproblem, "empty box");
  const int m = static_cast<int>(pr.cons.size());
  const Vec zm = Vec::Zero(m), zd = Vec::Zero(d);

  auto cons_ok = [&](const Vec& y) {
    for (const auto& c : pr.cons)
      if (c.eval(y) > 0) return false;
    return true;
  };
  auto box_multipliers = [&](const Vec& y, Vec& mlo, Vec& mhi) {
    const Vec g0 = pr.P * y + pr.q;
    mlo = Vec::Zero(d);
    mhi = Vec::Zero(d);
    for (int k = 0; k < d; ++k) {
      if (y(k) <= pr.lo(k)) mlo(k) = std::max(0.0, g0(k));
      if (y(k) >= pr.hi(k)) mhi(k) = std::max(0.0, -g0(k));
    }
  };

  // Closed forms when the quadratic constraints are slack at the box-only optimum.
  if (is_diagonal(pr.P) && (pr.P.diagonal().array() > 0).all()) {
    Vec y(d);
    for (int k = 0; k < d; ++k) y(k) = box_prox(0.5 * pr.P(k, k), pr.q(k), pr.lo(k), pr.hi(k));
    if (cons_ok(y)) {
      Vec mlo, mhi;
      box_multipliers(y, mlo, mhi);
      return finish(pr, y, zm, mlo, mhi, 0, true);
    }
  } else {
    Eigen::LLT<Mat> llt(pr.P);
    Vec y;
    if (llt.info() == Eigen::Success && box_qp(pr.P, pr.q, pr.lo, pr.hi, llt, y) && cons_ok(y)) {
      Vec mlo, mhi;
      box_multipliers(y, mlo, mhi);
      return finish(pr, y, zm, mlo, mhi, 0, true);
    }
  }

  int iters = 0;
  Vec y = interior_start(pr.lo, pr.hi, hint);
  if (m > 0) y = find_slater(pr, y, opt, iters);

  Barrier bar{pr.P, pr.q, pr.lo, pr.hi, pr.cons};
  const double n_barrier = 2.0 * d + m;
  const double t_final = n_barrier / (0.1 * opt.kkt_tol);
  double t = opt.t_init;
  {
    // Start where the barrier gradient roughly balances the objective gradient.
    const double g0 = (pr.P * y + pr.q).norm();
    if (g0 > 0) t = std::max(opt.t_init, n_barrier / (g0 * (pr.hi - pr.lo).norm() + 1e-12));
  }
  for (;; t = std::min(t * opt.mu, t_final)) {
    iters += center(bar, y, t, opt, opt.max_newton);
    if (iters > 40 * opt.max_newton) throw Error(ErrorKind::max_iterations, "barrier Newton budget exhausted");
    if (t >= t_final) break;
  }
  Vec lambda(m), mlo(d), mhi(d);
  for (int j = 0; j < m; ++j) lambda(j) = 1.0 / (-pr.cons[static_cast<std::size_t>(j)].eval(y) * t);
  for (int k = 0; k < d; ++k) {
    mlo(k) = 1.0 / ((y(k) - pr.lo(k)) * t);
    mhi(k) = 1.0 / ((pr.hi(k) - y(k)) * t);
  }
  QcqpResult res = finish(pr, y, lambda, mlo, mhi, iters, false);
  if (polish(pr, opt, y, lambda, mlo, mhi)) {
    QcqpResult pol = finish(pr, y, lambda, mlo, mhi, iters, false);
    if (pol.kkt_residual < res.kkt_residual) return pol;
  }
  return res;
}

QcqpResult qcqp_prox(const ConvexQcqp& problem, const Vec& anchor, double rho, const QcqpOptions& options,
                     const Vec* hint) {
  if (!(rho > 0)) throw Error(ErrorKind::invalid_config, "prox parameter must be positive");
  ConvexQcqp pr = problem;
  pr.P.diagonal().array() += 1.0 / rho;
  pr.q -= anchor / rho;
  pr.r += anchor.squaredNorm() / (2.0 * rho);
  return qcqp_solve(pr, options, hint);
}

AugmentedLayout AugmentedLayout::build(int n, int p, const std::vector<std::vector<int>>& neighbors) {
  AugmentedLayout l;
  l.n = n;
  l.p = p;
  l.neighbors = neighbors;
  l.neighbors.resize(static_cast<std::size_t>(n + 1));
  l.agent_offset.assign(static_cast<std::size_t>(n + 2), 0);
  for (int i = 1; i <= n; ++i) {
    auto& nb = l.neighbors[static_cast<std::size_t>(i)];
    std::sort(nb.begin(), nb.end());
    l.agent_offset[static_cast<std::size_t>(i + 1)] = l.agent_offset[static_cast<std::size_t>(i)] + l.agent_dim(i);
  }
  l.agent_offset[0] = 0;
  return l;
}

int AugmentedLayout::local_offset(int i, int j) const {
  if (i == j) return 0;
  const auto& nb = neighbors[static_cast<std::size_t>(i)];
  auto it = std::find(nb.begin(), nb.end(), j);
  if (it == nb.end()) return -1;
  return p * (1 + static_cast<int>(it - nb.begin()));
}

Vec AugmentedLayout::broadcast(const Vec& u) const {
  Vec out(total_dim());
  for (int i = 1; i <= n; ++i) {
    const int base = agent_offset[static_cast<std::size_t>(i)];
    out.segment(base, p) = u.segment((i - 1) * p, p);
    const auto& nb = neighbors[static_cast<std::size_t>(i)];
    for (std::size_t k = 0; k < nb.size(); ++k)
      out.segment(base + p * static_cast<int>(k + 1), p) = u.segment((nb[k] - 1) * p, p);
  }
  return out;
}

Vec AugmentedLayout::owned(const Vec& full) const {
  Vec u(n * p);
  for (int i = 1; i <= n; ++i) u.segment((i - 1) * p, p) = full.segment(agent_offset[static_cast<std::size_t>(i)], p);
  return u;
}

Vec project_consensus(const AugmentedLayout& layout, const Vec& u_hat) {
  const int n = layout.n, p = layout.p;
  Vec avg(n * p);
  for (int j = 1; j <= n; ++j) {
    Vec acc = u_hat.segment(layout.agent_offset[static_cast<std::size_t>(j)], p);
    const auto& nb = layout.neighbors[static_cast<std::size_t>(j)];
    for (int k : nb) acc += u_hat.segment(layout.agent_offset[static_cast<std::size_t>(k)] + layout.local_offset(k, j), p);
    avg.segment((j - 1) * p, p) = acc / (1.0 + static_cast<double>(nb.size()));
  }
  return layout.broadcast(avg);
}

}  // namespace platoon
