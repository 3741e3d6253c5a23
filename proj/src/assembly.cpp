#include "platoon/assembly.hpp"

#include <fmt/format.h>

#include <Eigen/Eigenvalues>

namespace platoon {

void validate_weights(const WeightSchedule& weights, int n) {
  const auto p = static_cast<std::size_t>(weights.p);
  if (weights.p < 1 || weights.alpha.size() != p || weights.beta.size() != p || weights.zeta.size() != p) {
    throw Error(ErrorKind::invalid_config, "weight schedule must hold p entries for alpha, beta and zeta");
  }
  for (std::size_t s = 0; s < p; ++s) {
    if (weights.alpha[s].size() != n || weights.beta[s].size() != n || weights.zeta[s].size() != n) {
      throw Error(ErrorKind::dimension_mismatch, fmt::format("weight step {} does not have length {}", s + 1, n));
    }
    if ((weights.alpha[s].array() < 0).any() || (weights.beta[s].array() < 0).any()) {
      throw Error(ErrorKind::invalid_config, "alpha and beta must be nonnegative");
    }
    if ((weights.zeta[s].array() <= 0).any()) throw Error(ErrorKind::invalid_config, "zeta must be positive");
  }
}

QuadraticModel assemble_quadratic_model(const PlatoonConfig& config, const WeightSchedule& weights,
                                        const PlatoonState& state, const Vec& z, const Vec& zp) {
  const int n = config.n;
  const int p = weights.p;
  validate_weights(weights, n);
  if (z.size() != n || zp.size() != n) throw Error(ErrorKind::dimension_mismatch, "z, z' must have length n");
  const double tau = config.tau;
  const double u0 = state.u0;
  const int np = n * p;

  // Rows (i, j) hold z_i(k+j) and z'_i(k+j) as affine functions of the stacked accelerations.
  Mat Mz = Mat::Zero(np, np), Mzp = Mat::Zero(np, np);
  Vec mz(np), mzp(np), wz(np), wzp(np);
  for (int i = 1; i <= n; ++i) {
    for (int j = 1; j <= p; ++j) {
      const int row = (i - 1) * p + (j - 1);
      mz(row) = z(i - 1) + j * tau * zp(i - 1);
      mzp(row) = zp(i - 1);
      wz(row) = weights.alpha[j - 1](i - 1);
      wzp(row) = weights.beta[j - 1](i - 1);
      for (int s = 0; s < j; ++s) {
        const double cz = tau * tau * (2.0 * (j - s) - 1.0) / 2.0;
        const int own = (i - 1) * p + s;
        Mz(row, own) -= cz;
        Mzp(row, own) -= tau;
        if (i == 1) {
          mz(row) += cz * u0;
          mzp(row) += tau * u0;
        } else {
          const int pred = (i - 2) * p + s;
          Mz(row, pred) += cz;
          Mzp(row, pred) += tau;
        }
      }
    }
  }

  QuadraticModel m;
  m.n = n;
  m.p = p;
  m.tau = tau;
  m.V = Mz.transpose() * wz.asDiagonal() * Mz + Mzp.transpose() * wzp.asDiagonal() * Mzp;
  m.c = Mz.transpose() * wz.cwiseProduct(mz) + Mzp.transpose() * wzp.cwiseProduct(mzp);
  m.gamma = 0.5 * (mz.dot(wz.cwiseProduct(mz)) + mzp.dot(wzp.cwiseProduct(mzp)));

  const auto sm = build_structural<double>(n, p);
  Mat theta = Mat::Zero(np, np);
  for (int k = 0; k < p; ++k) {
    theta.block(k * n, k * n, n, n) =
        sm.S_n_inv.transpose() * weights.zeta[k].asDiagonal() * sm.S_n_inv;
  }
  m.Psi = sm.E.transpose() * theta * sm.E;
  m.Psi = 0.5 * (m.Psi + m.Psi.transpose());
  m.V = 0.5 * (m.V + m.V.transpose());
  m.W = m.V + tau * tau * m.Psi;
  return m;
}

QuadraticModel assemble_quadratic_model(const PlatoonConfig& config, const WeightSchedule& weights,
                                        const PlatoonState& state) {
  auto [z, zp] = tracking_state(config, state);
  return assemble_quadratic_model(config, weights, state, z, zp);
}

Mat DecomposedModel::embed(int s, bool psi) const {
  const auto& blk = blocks[static_cast<std::size_t>(s - 1)];
  const Mat& local = psi ? blk.Psi_hat : blk.W_hat;
  Mat out = Mat::Zero(n * p, n * p);
  for (std::size_t a = 0; a < blk.support.size(); ++a)
    for (std::size_t b = 0; b < blk.support.size(); ++b)
      out.block((blk.support[a] - 1) * p, (blk.support[b] - 1) * p, p, p) =
          local.block(static_cast<Eigen::Index>(a) * p, static_cast<Eigen::Index>(b) * p, p, p);
  return out;
}

namespace {

// Block LDL' of a block-tridiagonal PSD matrix: M = sum_i G_i D_i G_i' with G_i = [I; L_i] over
// vehicles (i, i+1). Each term is PSD and touches only two neighbouring vehicle blocks.
std::vector<Mat> tridiagonal_split(const Mat& M, int n, int p, const char* name) {
  auto blk = [&](int i, int j) { return M.block((i - 1) * p, (j - 1) * p, p, p); };
  const double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
  for (int i = 1; i <= n; ++i)
    for (int j = i + 2; j <= n; ++j)
      if (blk(i, j).cwiseAbs().maxCoeff() > 1e-12 * scale) {
        throw Error(ErrorKind::psd_repair_failed, fmt::format("{} is not block tridiagonal", name));
      }
  std::vector<Mat> terms;
  Mat D = blk(1, 1);
  for (int i = 1; i <= n; ++i) {
    D = 0.5 * (D + D.transpose());
    if (i == n) {
      terms.push_back(D);
      break;
    }
    Eigen::SelfAdjointEigenSolver<Mat> es(D);
    const Vec ev = es.eigenvalues();
    if (ev.minCoeff() < -1e-10 * scale) {
      throw Error(ErrorKind::psd_repair_failed, fmt::format("{} pivot block {} is indefinite", name, i));
    }
    // Pseudo-inverse keeps the split well defined for singular pivots.
    Vec inv = Vec::Zero(p);
    for (int k = 0; k < p; ++k)
      if (ev(k) > 1e-14 * scale) inv(k) = 1.0 / ev(k);
    const Mat Dpinv = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
    const Mat C = blk(i + 1, i);
    const Mat schur = C * Dpinv * C.transpose();
    Mat term(2 * p, 2 * p);
    term << D, C.transpose(), C, 0.5 * (schur + schur.transpose());
    terms.push_back(term);
    D = blk(i + 1, i + 1) - term.bottomRightCorner(p, p);
  }
  return terms;
}

double min_eig(const Mat& A) {
  if (A.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Mat> es(A, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace

DecomposedModel decompose_model(const QuadraticModel& model) {
  const int n = model.n, p = model.p;
  DecomposedModel d;
  d.n = n;
  d.p = p;
  d.tau = model.tau;
  d.gamma = model.gamma;
  const auto wt = tridiagonal_split(model.W, n, p, "W");
  const auto pt = tridiagonal_split(model.Psi, n, p, "Psi");
  for (int s = 1; s <= n; ++s) {
    LocalBlock blk;
    if (s < n) {
      blk.support = {s, s + 1};
    } else {
      blk.support = {n};
    }
    blk.W_hat = wt[static_cast<std::size_t>(s - 1)];
    blk.Psi_hat = pt[static_cast<std::size_t>(s - 1)];
    if (min_eig(blk.W_hat) < -1e-10 || min_eig(blk.Psi_hat) < -1e-10) {
      throw Error(ErrorKind::psd_repair_failed, fmt::format("local block {} is not PSD", s));
    }
    d.blocks.push_back(std::move(blk));
    d.c_slices.push_back(model.c.segment((s - 1) * p, p));
  }
  return d;
}

PlatoonConfig zero_drag(const PlatoonConfig& config) {
  PlatoonConfig out = config;
  for (auto& veh : out.vehicles) {
    veh.c2 = 0;
    veh.c3 = 0;
  }
  return out;
}

namespace {

Vec ones_prefix(int p, int s) {
  Vec r = Vec::Zero(p);
  r.head(s).setOnes();
  return r;
}

}  // namespace

ScalarFn speed_constraint_fn(const VehicleParams& params, double v, const Vec& u, int j, double tau, double g) {
  const int p = static_cast<int>(u.size());
  ScalarFn f;
  f.value = speed_constraint_value<double>(params, v, u, j, tau, g);
  f.grad = tau * ones_prefix(p, j);
  f.hess = Mat::Zero(p, p);
  double partial = 0;
  for (int s = 1; s < j; ++s) {
    partial += u(s - 1);
    const double x = v + tau * partial;
    const Vec S = ones_prefix(p, s);
    f.grad -= 2.0 * tau * tau * params.c2 * x * S;
    f.hess -= 2.0 * tau * tau * tau * params.c2 * S * S.transpose();
  }
  return f;
}

ScalarFn safety_constraint_fn(const PlatoonConfig& config, const PlatoonState& state, int i, const Vec& u_prev,
                              const Vec& u_i, int j, bool restricted) {
  const int p = static_cast<int>(u_i.size());
  const auto& me = config.vehicle(i);
  const auto& pred = config.vehicle(i - 1);
  const double tau = config.tau;

  ScalarFn f;
  f.value = safety_constraint_value<double>(config, state, i, u_prev, u_i, j, restricted);

  Vec dq = tau * ones_prefix(p, j);
  Mat hq = Mat::Zero(p, p);
  Vec g_own = Vec::Zero(p), g_pred = Vec::Zero(p);
  Mat h_own = Mat::Zero(p, p), h_pred = Mat::Zero(p, p);
  double own_partial = 0, pred_partial = 0, own_sq = 0;
  for (int s = 0; s < j; ++s) {
    const double coef = (2.0 * (j - s) - 1.0) / 2.0;
    const Vec S = ones_prefix(p, s);
    const double xi = state.v(i) + tau * own_partial;
    const double xp = state.v(i - 1) + tau * pred_partial;
    const double grave = (s == 0) ? state.v(i) : config.v_min + tau * s * me.c3 * config.g;
    own_sq += restricted ? grave * grave : xi * xi;
    Vec da_own = Vec::Unit(p, s);
    Vec da_pred = Vec::Unit(p, s);
    if (!restricted) {
      da_own -= 2.0 * me.c2 * tau * xi * S;
      h_own -= tau * tau * coef * 2.0 * me.c2 * tau * tau * S * S.transpose();
      if (s >= 1) {
        dq -= 2.0 * tau * tau * me.c2 * xi * S;
        hq -= 2.0 * tau * tau * tau * me.c2 * S * S.transpose();
      }
    }
    da_pred -= 2.0 * pred.c2 * tau * xp * S;
    h_pred += tau * tau * coef * 2.0 * pred.c2 * tau * tau * S * S.transpose();
    g_own += tau * tau * coef * da_own;
    g_pred -= tau * tau * coef * da_pred;
    own_partial += u_i(s);
    pred_partial += u_prev(s);
  }
  const double q = state.v(i) + tau * (own_partial - j * me.c3 * config.g - me.c2 * own_sq);
  const double outer = me.r - (q - config.v_min) / me.a_min;
  g_own += outer * dq;
  h_own += outer * hq - (1.0 / me.a_min) * dq * dq.transpose();

  f.grad = Vec::Zero(2 * p);
  f.hess = Mat::Zero(2 * p, 2 * p);
  if (i > 1) {
    f.grad.head(p) = g_pred;
    f.hess.topLeftCorner(p, p) = h_pred;
  }
  f.grad.tail(p) = g_own;
  f.hess.bottomRightCorner(p, p) = h_own;
  return f;
}

ScalarFn local_objective(const DecomposedModel& model, const PlatoonConfig& config, const PlatoonState& state, int i,
                         const Vec& u_support, bool want_hessian) {
  const auto& blk = model.blocks[static_cast<std::size_t>(i - 1)];
  const int p = model.p;
  const int k = static_cast<int>(blk.support.size());
  if (u_support.size() != k * p) throw Error(ErrorKind::dimension_mismatch, "local_objective input size");
  const double tau = model.tau;
  const Mat Vhat = blk.W_hat - tau * tau * blk.Psi_hat;

  Vec a(k * p), chat = Vec::Zero(k * p);
  Mat Ja = Mat::Zero(k * p, k * p);
  for (int b = 0; b < k; ++b) {
    const int veh = blk.support[static_cast<std::size_t>(b)];
    const Vec ub = u_support.segment(b * p, p);
    a.segment(b * p, p) = approx_accel_map<double>(config.vehicle(veh), state.v(veh), ub, tau, config.g);
    Ja.block(b * p, b * p, p, p) = approx_accel_jacobian<double>(config.vehicle(veh), state.v(veh), ub, tau);
    if (veh == i) chat.segment(b * p, p) = model.c_slices[static_cast<std::size_t>(i - 1)];
  }
  const Vec Va = Vhat * a;
  const Vec Pu = blk.Psi_hat * u_support;
  ScalarFn f;
  f.value = 0.5 * a.dot(Va) + chat.dot(a) + 0.5 * tau * tau * u_support.dot(Pu);
  const Vec lam = Va + chat;
  f.grad = Ja.transpose() * lam + tau * tau * Pu;
  if (want_hessian) {
    f.hess = Ja.transpose() * Vhat * Ja + tau * tau * blk.Psi_hat;
    const Mat St = shifted_lower_ones<double>(p);
    for (int b = 0; b < k; ++b) {
      const double c2 = config.vehicle(blk.support[static_cast<std::size_t>(b)]).c2;
      if (c2 == 0) continue;
      for (int m = 1; m < p; ++m) {
        const Vec row = St.row(m).transpose();
        f.hess.block(b * p, b * p, p, p) -= lam(b * p + m) * 2.0 * c2 * tau * tau * row * row.transpose();
      }
    }
    f.hess = 0.5 * (f.hess + f.hess.transpose());
  }
  return f;
}

std::vector<RestrictedSet> restricted_convex_sets(const PlatoonConfig& config, const PlatoonState& state, int p) {
  std::vector<RestrictedSet> out;
  const double tau = config.tau, g = config.g;
  for (int i = 1; i <= config.n; ++i) {
    const auto& veh = config.vehicle(i);
    const double v = state.v(i);
    RestrictedSet rs;
    rs.partial_lo.resize(p);
    rs.partial_hi.resize(p);
    rs.breve.resize(p);
    rs.grave.resize(p);
    double breve_sq = 0, grave_sq = 0;
    double breve_prev = v;
    for (int j = 1; j <= p; ++j) {
      const int s = j - 1;
      const double grave = (s == 0) ? v : config.v_min + tau * s * veh.c3 * g;
      rs.breve(s) = breve_prev;
      rs.grave(s) = grave;
      breve_sq += breve_prev * breve_prev;
      grave_sq += grave * grave;
      rs.partial_lo(s) = (config.v_min - v) / tau + j * veh.c3 * g + veh.c2 * breve_sq;
      rs.partial_hi(s) = (config.v_max - v) / tau + j * veh.c3 * g + veh.c2 * grave_sq;
      breve_prev = config.v_max + tau * (j * veh.c3 * g + veh.c2 * breve_sq);
    }
    const Vec zero = Vec::Zero(p);
    const Vec lead = Vec::Constant(p, state.u0);
    for (int j = 1; j <= p; ++j) {
      // Exactly quadratic, so the expansion at the origin is the function itself.
      const Vec& prev0 = (i == 1) ? lead : zero;
      ScalarFn f = safety_constraint_fn(config, state, i, prev0, zero, j, true);
      QuadraticForm qf;
      qf.Q = f.hess;
      qf.b = f.grad;
      qf.c = f.value;
      if (i == 1) {
        // Leader path is fixed; fold it into the constant.
        qf.Q.topLeftCorner(p, p).setZero();
        qf.b.head(p).setZero();
      }
      rs.safety.push_back(std::move(qf));
    }
    out.push_back(std::move(rs));
  }
  return out;
}

}  // namespace platoon
