#pragma once

// Independent oracles shared by the unit tests and the acceptance binary.

#include "platoon/assembly.hpp"
#include "platoon/presets.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <utility>

namespace platoon::oracles {

inline WeightSchedule random_weights(int n, int p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> w(0.0, 50.0), pos(0.1, 30.0);
  WeightSchedule ws;
  ws.p = p;
  for (int s = 0; s < p; ++s) {
    Vec a(n), b(n), z(n);
    for (int i = 0; i < n; ++i) {
      a(i) = w(rng);
      b(i) = w(rng);
      z(i) = pos(rng);
    }
    ws.alpha.push_back(a);
    ws.beta.push_back(b);
    ws.zeta.push_back(z);
  }
  return ws;
}

inline PlatoonConfig random_config(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> c2(0.0, 5e-4), c3(0.0, 0.015), r(1.0, 1.3), amin(-8.5, -6.5);
  PlatoonConfig cfg = chain_config(n, VehicleParams{5.0, 1.0, -8.0, 1.4, 0.0, 0.0}, 1.0, 10.0, 27.78, 50.0);
  for (int i = 1; i <= n; ++i) {
    auto& v = cfg.vehicles[static_cast<std::size_t>(i)];
    v.c2 = c2(rng);
    v.c3 = c3(rng);
    v.r = r(rng);
    v.a_min = amin(rng);
  }
  return cfg;
}

inline Vec uniform_vec(int m, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(lo, hi);
  Vec v(m);
  for (int i = 0; i < m; ++i) v(i) = d(rng);
  return v;
}

// Objective written straight from the horizon recursions for z, z' and the ride-comfort term.
inline double direct_objective(const PlatoonConfig& cfg, const WeightSchedule& w, double u0, const Vec& z0, const Vec& zp0,
                        const Vec& a, const Vec& u) {
  const int n = cfg.n, p = w.p;
  const double tau = cfg.tau;
  auto acc = [&](int i, int s) { return i == 0 ? u0 : a((i - 1) * p + s); };
  double J = 0;
  for (int j = 1; j <= p; ++j) {
    for (int i = 1; i <= n; ++i) {
      double zi = z0(i - 1) + j * tau * zp0(i - 1);
      double zpi = zp0(i - 1);
      for (int s = 0; s < j; ++s) {
        const double b = acc(i - 1, s) - acc(i, s);
        zi += tau * tau * (2.0 * (j - s) - 1.0) / 2.0 * b;
        zpi += tau * b;
      }
      J += 0.5 * (w.alpha[j - 1](i - 1) * zi * zi + w.beta[j - 1](i - 1) * zpi * zpi);
    }
    for (int i = 1; i <= n; ++i) {
      const double du = u((i - 1) * p + j - 1) - (i > 1 ? u((i - 2) * p + j - 1) : 0.0);
      J += 0.5 * tau * tau * w.zeta[j - 1](i - 1) * du * du;
    }
  }
  return J;
}

// Central differences of a scalar function; returns the max relative gradient error.
inline double fd_gradient_error(const std::function<double(const Vec&)>& f, const Vec& x, const Vec& grad, double h = 1e-5) {
  double err = 0;
  for (int k = 0; k < x.size(); ++k) {
    Vec xp = x, xm = x;
    xp(k) += h;
    xm(k) -= h;
    const double fd = (f(xp) - f(xm)) / (2 * h);
    err = std::max(err, std::abs(fd - grad(k)) / std::max(1.0, std::abs(fd)));
  }
  return err;
}

inline double fd_hessian_error(const std::function<Vec(const Vec&)>& g, const Vec& x, const Mat& hess, double h = 1e-5) {
  double err = 0;
  for (int k = 0; k < x.size(); ++k) {
    Vec xp = x, xm = x;
    xp(k) += h;
    xm(k) -= h;
    const Vec col = (g(xp) - g(xm)) / (2 * h);
    for (int r = 0; r < x.size(); ++r) err = std::max(err, std::abs(col(r) - hess(r, k)) / std::max(1.0, std::abs(col(r))));
  }
  return err;
}


// Worst relative gap between the assembled model and the recursion over random instances; second is the count.
inline std::pair<double, int> model_oracle_check() {
  std::mt19937_64 rng(42);
  double worst = 0;
  int count = 0;
  for (int n : {2, 4, 10}) {
    for (int p = 1; p <= 5; ++p) {
      for (int rep = 0; rep < 7; ++rep) {
        const PlatoonConfig cfg = random_config(n, rng);
        const WeightSchedule w = random_weights(n, p, rng);
        PlatoonState s = cruise_state(cfg, 20.0);
        s.u0 = uniform_vec(1, -2, 1.4, rng)(0);
        const Vec z = uniform_vec(n, -3, 3, rng), zp = uniform_vec(n, -2, 2, rng);
        const QuadraticModel m = assemble_quadratic_model(cfg, w, s, z, zp);
        const Vec a = uniform_vec(n * p, -3, 1.5, rng), u = uniform_vec(n * p, -3, 1.5, rng);
        // 1/2 a'(W - tau^2 Psi)a + c'a + gamma + tau^2/2 u'Psi u against the recursion.
        const double direct = direct_objective(cfg, w, s.u0, z, zp, a, u);
        worst = std::max(worst, std::abs(m.evaluate(a, u) - direct) / (1.0 + std::abs(direct)));
        ++count;
      }
    }
  }
  return {worst, count};
}

// Worst elementwise sum error and smallest block eigenvalue over 50 random schedules.
inline std::pair<double, double> decomposition_check() {
  std::mt19937_64 rng(11);
  double sum_err = 0, min_eig = 0;
  for (int rep = 0; rep < 50; ++rep) {
    const int n = 2 + rep % 9, p = 1 + rep % 5;
    const PlatoonConfig cfg = random_config(n, rng);
    const QuadraticModel m = assemble_quadratic_model(cfg, random_weights(n, p, rng), cruise_state(cfg, 20.0));
    const DecomposedModel d = decompose_model(m);
    Mat W = Mat::Zero(n * p, n * p), P = Mat::Zero(n * p, n * p);
    for (int s = 1; s <= n; ++s) {
      W += d.embed(s, false);
      P += d.embed(s, true);
      for (const Mat* B : {&d.blocks[s - 1].W_hat, &d.blocks[s - 1].Psi_hat}) {
        Eigen::SelfAdjointEigenSolver<Mat> es(*B);
        min_eig = std::min(min_eig, es.eigenvalues().minCoeff());
      }
    }
    sum_err = std::max(sum_err, (W - m.W).cwiseAbs().maxCoeff());
    sum_err = std::max(sum_err, (P - m.Psi).cwiseAbs().maxCoeff());
  }
  return {sum_err, min_eig};
}

// Worst relative finite-difference error over 100 random points.
inline double gradient_suite_error() {
  std::mt19937_64 rng(77);
  double worst = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const int p = 1 + rep % 5;
    const std::string name = platoon_preset_names()[static_cast<std::size_t>(rep % 3)];
    const PlatoonConfig cfg = platoon_preset(name);
    const PlatoonState s = random_feasible_state(cfg, 500 + rep);
    const int i = 1 + rep % cfg.n;
    const auto& veh = cfg.vehicle(i);
    const Vec ui = uniform_vec(p, -3, 1.4, rng), up = uniform_vec(p, -3, 1.4, rng);

    // Jacobian of the acceleration map.
    const Mat Ja = approx_accel_jacobian<double>(veh, s.v(i), ui, cfg.tau);
    for (int m = 0; m < p; ++m) {
      auto am = [&](const Vec& x) { return approx_accel_map<double>(veh, s.v(i), x, cfg.tau, cfg.g)(m); };
      worst = std::max(worst, fd_gradient_error(am, ui, Ja.row(m).transpose()));
    }

    const int j = 1 + rep % p;
    const ScalarFn q = speed_constraint_fn(veh, s.v(i), ui, j, cfg.tau, cfg.g);
    auto qf = [&](const Vec& x) { return speed_constraint_value<double>(veh, s.v(i), x, j, cfg.tau, cfg.g); };
    worst = std::max(worst, fd_gradient_error(qf, ui, q.grad));
    auto qg = [&](const Vec& x) { return speed_constraint_fn(veh, s.v(i), x, j, cfg.tau, cfg.g).grad; };
    worst = std::max(worst, fd_hessian_error(qg, ui, q.hess));

    for (bool restricted : {false, true}) {
      Vec y(2 * p);
      y << up, ui;
      const ScalarFn h = safety_constraint_fn(cfg, s, i, up, ui, j, restricted);
      auto hf = [&](const Vec& x) {
        return safety_constraint_value<double>(cfg, s, i, Vec(x.head(p)), Vec(x.tail(p)), j, restricted);
      };
      Vec grad = h.grad;
      if (i == 1) grad.head(p).setZero();
      if (i == 1) {
        // The leader slot is a constant path; only the own block is a variable.
        auto own = [&](const Vec& x) { return safety_constraint_value<double>(cfg, s, i, up, x, j, restricted); };
        worst = std::max(worst, fd_gradient_error(own, ui, h.grad.tail(p)));
      } else {
        worst = std::max(worst, fd_gradient_error(hf, y, grad));
        auto hg = [&](const Vec& x) {
          return safety_constraint_fn(cfg, s, i, Vec(x.head(p)), Vec(x.tail(p)), j, restricted).grad;
        };
        worst = std::max(worst, fd_hessian_error(hg, y, h.hess));
      }
    }

    const QuadraticModel m = assemble_quadratic_model(cfg, weight_preset(name, p), s);
    const DecomposedModel d = decompose_model(m);
    const int k = static_cast<int>(d.blocks[i - 1].support.size());
    const Vec us = uniform_vec(k * p, -3, 1.4, rng);
    const ScalarFn J = local_objective(d, cfg, s, i, us);
    auto Jf = [&](const Vec& x) { return local_objective(d, cfg, s, i, x, false).value; };
    auto Jg = [&](const Vec& x) { return local_objective(d, cfg, s, i, x, false).grad; };
    worst = std::max(worst, fd_gradient_error(Jf, us, J.grad));
    worst = std::max(worst, fd_hessian_error(Jg, us, J.hess));
  }
  return worst;
}

}  // namespace platoon::oracles
