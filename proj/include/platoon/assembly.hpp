#pragma once

#include "platoon/common.hpp"
#include "platoon/core.hpp"

#include <vector>

namespace platoon {

// Diagonal weights per prediction step s = 1..p (stored at s-1), each of length n.
struct WeightSchedule {
  int p{1};
  std::vector<Vec> alpha;  // spacing error
  std::vector<Vec> beta;   // relative speed
  std::vector<Vec> zeta;   // ride comfort

  int n() const { return alpha.empty() ? 0 : static_cast<int>(alpha.front().size()); }
};

void validate_weights(const WeightSchedule& weights, int n);

template <typename Scalar>
struct StructuralMatricesT {
  MatrixX<Scalar> S_n, S_n_inv, S_p, S_p_tilde, E, R_p;
  VectorX<Scalar> p_vec;
};
using StructuralMatrices = StructuralMatricesT<double>;

template <typename Scalar>
MatrixX<Scalar> lower_ones(int m) {
  MatrixX<Scalar> S = MatrixX<Scalar>::Zero(m, m);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c <= r; ++c) S(r, c) = Scalar(1);
  return S;
}

// [0 0; I 0] * S_p: row s holds the first s-1 ones, so (S_p_tilde u)_s = (S_p u)_{s-1}.
template <typename Scalar>
MatrixX<Scalar> shifted_lower_ones(int p) {
  MatrixX<Scalar> S = MatrixX<Scalar>::Zero(p, p);
  for (int r = 1; r < p; ++r)
    for (int c = 0; c < r; ++c) S(r, c) = Scalar(1);
  return S;
}

template <typename Scalar>
StructuralMatricesT<Scalar> build_structural(int n, int p) {
  if (n < 1 || p < 1) throw Error(ErrorKind::dimension_mismatch, "build_structural needs n, p >= 1");
  StructuralMatricesT<Scalar> m;
  m.S_n = lower_ones<Scalar>(n);
  m.S_n_inv = MatrixX<Scalar>::Identity(n, n);
  for (int r = 1; r < n; ++r) m.S_n_inv(r, r - 1) = Scalar(-1);
  m.S_p = lower_ones<Scalar>(p);
  m.S_p_tilde = shifted_lower_ones<Scalar>(p);
  m.E = MatrixX<Scalar>::Zero(n * p, n * p);
  for (int k = 0; k < p; ++k)
    for (int s = 1; s <= n; ++s) m.E(n * k + s - 1, p * (s - 1) + k) = Scalar(1);
  m.R_p = MatrixX<Scalar>::Zero(p, p);
  for (int j = 0; j < p; ++j)
    for (int s = 0; s <= j; ++s) m.R_p(j, s) = Scalar(2 * (j - s) + 1);
  m.p_vec = VectorX<Scalar>::LinSpaced(p, Scalar(1), Scalar(p));
  return m;
}

// Objective J(a, u) = 1/2 a'Va + c'a + gamma + tau^2/2 u'Psi u with V = W - tau^2 Psi.
// Vectors are grouped by vehicle: block i (1-based) occupies entries (i-1)p .. ip-1.
struct QuadraticModel {
  int n{0};
  int p{0};
  double tau{1};
  Mat W, Psi, V;
  Vec c;
  double gamma{0};

  double evaluate(const Vec& a, const Vec& u) const {
    return 0.5 * a.dot(V * a) + c.dot(a) + gamma + 0.5 * tau * tau * u.dot(Psi * u);
  }
};

QuadraticModel assemble_quadratic_model(const PlatoonConfig& config, const WeightSchedule& weights,
                                        const PlatoonState& state, const Vec& z, const Vec& zp);
QuadraticModel assemble_quadratic_model(const PlatoonConfig& config, const WeightSchedule& weights,
                                        const PlatoonState& state);

// Local piece s covers the vehicles listed in support (ascending, 1-based).
struct LocalBlock {
  std::vector<int> support;
  Mat W_hat, Psi_hat;
};

struct DecomposedModel {
  int n{0};
  int p{0};
  double tau{1};
  std::vector<LocalBlock> blocks;  // blocks[s-1] for s = 1..n
  std::vector<Vec> c_slices;       // c_slices[i-1] = c restricted to vehicle i
  double gamma{0};

  Mat embed(int s, bool psi) const;
};

DecomposedModel decompose_model(const QuadraticModel& model);

// Copy of the config with all drag and friction coefficients zeroed.
PlatoonConfig zero_drag(const PlatoonConfig& config);

template <typename Scalar>
VectorX<Scalar> approx_accel_map(const VehicleParamsT<Scalar>& params, const Scalar& v, const VectorX<Scalar>& u,
                                 const Scalar& tau, double g = kGravity) {
  const int p = static_cast<int>(u.size());
  const VectorX<Scalar> su = shifted_lower_ones<Scalar>(p) * u;
  VectorX<Scalar> a(p);
  for (int m = 0; m < p; ++m) {
    const Scalar x = v + tau * su(m);
    a(m) = u(m) - params.c2 * x * x - params.c3 * Scalar(g);
  }
  return a;
}

template <typename Scalar>
MatrixX<Scalar> approx_accel_jacobian(const VehicleParamsT<Scalar>& params, const Scalar& v, const VectorX<Scalar>& u,
                                      const Scalar& tau) {
  const int p = static_cast<int>(u.size());
  const MatrixX<Scalar> St = shifted_lower_ones<Scalar>(p);
  const VectorX<Scalar> su = St * u;
  MatrixX<Scalar> J = MatrixX<Scalar>::Identity(p, p) - Scalar(2) * params.c2 * tau * v * St;
  J -= Scalar(2) * params.c2 * tau * tau * su.asDiagonal() * St;
  return J;
}

// Approximate speed of vehicle i at step k+j (j = 1..p) from its current speed v and controls u.
template <typename Scalar>
Scalar speed_constraint_value(const VehicleParamsT<Scalar>& params, const Scalar& v, const VectorX<Scalar>& u, int j,
                              const Scalar& tau, double g = kGravity) {
  Scalar partial(0), drag(0);
  for (int s = 0; s < j; ++s) {
    const Scalar x = v + tau * partial;
    drag += x * x;
    partial += u(s);
  }
  return v + tau * (partial - Scalar(j) * params.c3 * Scalar(g) - params.c2 * drag);
}

// Value, gradient and Hessian of a scalar function of one or two control blocks.
struct ScalarFn {
  double value{0};
  Vec grad;   // over the block(s) it depends on, concatenated
  Mat hess;
};

ScalarFn speed_constraint_fn(const VehicleParams& params, double v, const Vec& u, int j, double tau,
                             double g = kGravity);

// Approximate safety function (H_i)_j over (u_prev, u_i); for i = 1 u_prev is the leader's constant path.
// When restricted is set, the own-vehicle squared speeds use the lower bounds of the inner approximation.
template <typename Scalar>
Scalar safety_constraint_value(const PlatoonConfigT<Scalar>& config, const PlatoonStateT<Scalar>& state, int i,
                               const VectorX<Scalar>& u_prev, const VectorX<Scalar>& u_i, int j,
                               bool restricted = false) {
  const auto& me = config.vehicle(i);
  const auto& pred = config.vehicle(i - 1);
  const Scalar tau = config.tau;
  const Scalar g(config.g);
  const Scalar vi = state.v(i);
  const Scalar vp = state.v(i - 1);
  Scalar own_partial(0), pred_partial(0), own_sq(0), zsum(0);
  for (int s = 0; s < j; ++s) {
    const Scalar xi = vi + tau * own_partial;
    const Scalar xp = vp + tau * pred_partial;
    const Scalar grave = (s == 0) ? vi : Scalar(config.v_min) + tau * Scalar(s) * me.c3 * g;
    const Scalar xi_sq = restricted ? grave * grave : xi * xi;
    own_sq += xi_sq;
    const Scalar coef = Scalar(2 * (j - s) - 1) / Scalar(2);
    const Scalar b = (u_prev(s) - pred.c2 * xp * xp - pred.c3 * g) - (u_i(s) - me.c2 * xi_sq - me.c3 * g);
    zsum += coef * b;
    own_partial += u_i(s);
    pred_partial += u_prev(s);
  }
  const Scalar q = vi + tau * (own_partial - Scalar(j) * me.c3 * g - me.c2 * own_sq);
  const Scalar dq = q - Scalar(config.v_min);
  const Scalar zi = state.x(i - 1) - state.x(i) - config.delta;
  const Scalar zpi = vp - vi;
  const Scalar gap = zi + config.delta + Scalar(j) * tau * zpi + tau * tau * zsum;
  return me.L + me.r * q - dq * dq / (Scalar(2) * me.a_min) - gap;
}

// Gradient/Hessian over the concatenation [u_prev; u_i] (2p entries).
ScalarFn safety_constraint_fn(const PlatoonConfig& config, const PlatoonState& state, int i, const Vec& u_prev,
                              const Vec& u_i, int j, bool restricted = false);

// Approximate local objective J_i over the blocks of its support (concatenated in support order).
ScalarFn local_objective(const DecomposedModel& model, const PlatoonConfig& config, const PlatoonState& state, int i,
                         const Vec& u_support, bool want_hessian = true);

// Inner convex approximation for vehicle i: bounds on the partial sums (S_p u_i)_j and the convex safety
// quadratics in y = [u_{i-1}; u_i], each written as 1/2 y'Qy + b'y + c <= 0.
struct QuadraticForm {
  Mat Q;
  Vec b;
  double c{0};
  double eval(const Vec& y) const { return 0.5 * y.dot(Q * y) + b.dot(y) + c; }
};

struct RestrictedSet {
  Vec partial_lo, partial_hi;  // length p
  std::vector<QuadraticForm> safety;  // length p
  Vec breve, grave;                   // speed bounds used to build the set, length p
};

std::vector<RestrictedSet> restricted_convex_sets(const PlatoonConfig& config, const PlatoonState& state, int p);

}  // namespace platoon
