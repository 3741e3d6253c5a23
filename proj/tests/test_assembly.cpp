#include "platoon/assembly.hpp"
#include "platoon/presets.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <functional>
#include <random>

using namespace platoon;
using namespace platoon::oracles;

TEST(Structural, SmallExamples) {
  const auto m2 = build_structural<double>(2, 1);
  Mat S(2, 2), Sinv(2, 2);
  S << 1, 0, 1, 1;
  Sinv << 1, 0, -1, 1;
  EXPECT_EQ(m2.S_n, S);
  EXPECT_EQ(m2.S_n_inv, Sinv);
  EXPECT_TRUE(m2.E.isIdentity());
  for (int n = 1; n <= 6; ++n) {
    const auto m = build_structural<double>(n, 3);
    EXPECT_TRUE((m.S_n * m.S_n_inv).isIdentity(0));
  }
}

TEST(Structural, PermutationOrdersByTime) {
  std::mt19937_64 rng(1);
  const int n = 3, p = 2;
  const auto m = build_structural<double>(n, p);
  EXPECT_TRUE((m.E.colwise().sum().array() == 1).all());
  EXPECT_TRUE((m.E.rowwise().sum().array() == 1).all());
  const Vec u = uniform_vec(n * p, -1, 1, rng);
  const Vec t = m.E * u;
  for (int k = 0; k < p; ++k)
    for (int s = 1; s <= n; ++s) EXPECT_EQ(t(n * k + s - 1), u(p * (s - 1) + k));
}

TEST(Structural, OddNumberMatrix) {
  const auto m = build_structural<double>(2, 4);
  for (int j = 0; j < 4; ++j)
    for (int s = 0; s < 4; ++s) EXPECT_EQ(m.R_p(j, s), s <= j ? 2 * (j - s) + 1 : 0);
  const Mat St = m.S_p_tilde;
  EXPECT_EQ(St.row(0).sum(), 0);
  EXPECT_EQ(St.row(3).sum(), 3);
}

TEST(QuadraticModel, MatchesDirectObjective) {
  const auto [worst, count] = oracles::model_oracle_check();
  EXPECT_GE(count, 100);
  EXPECT_LE(worst, 1e-8);
}

TEST(QuadraticModel, StructureAndOrigin) {
  const PlatoonConfig cfg = platoon_preset("small");
  for (int p = 1; p <= 5; ++p) {
    const WeightSchedule w = weight_preset("small", p);
    const PlatoonState s = random_feasible_state(cfg, 9);
    const QuadraticModel m = assemble_quadratic_model(cfg, w, s);
    const Vec zero = Vec::Zero(cfg.n * p);
    EXPECT_DOUBLE_EQ(m.evaluate(zero, zero), m.gamma);
    EXPECT_LE((m.W - m.W.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    Eigen::SelfAdjointEigenSolver<Mat> ew(m.W), ep(m.Psi), ev(m.V);
    EXPECT_GT(ew.eigenvalues().minCoeff(), 0.0);
    EXPECT_GT(ep.eigenvalues().minCoeff(), 0.0);
    EXPECT_GE(ev.eigenvalues().minCoeff(), -1e-9 * ev.eigenvalues().maxCoeff());
    const auto st = build_structural<double>(cfg.n, p);
    Mat Qw = Mat::Zero(cfg.n * p, cfg.n * p);
    for (int k = 0; k < p; ++k) {
      Qw.block(k * cfg.n, k * cfg.n, cfg.n, cfg.n) = st.S_n_inv.transpose() * w.zeta[k].asDiagonal() * st.S_n_inv;
    }
    EXPECT_LE((m.Psi - st.E.transpose() * Qw * st.E).cwiseAbs().maxCoeff(), 1e-12);
    // W and Psi do not depend on the state.
    const QuadraticModel m2 = assemble_quadratic_model(cfg, w, random_feasible_state(cfg, 10));
    EXPECT_EQ(m.W, m2.W);
    EXPECT_EQ(m.Psi, m2.Psi);
  }
}

TEST(QuadraticModel, SliceLocality) {
  std::mt19937_64 rng(5);
  const int n = 6, p = 3;
  const PlatoonConfig cfg = random_config(n, rng);
  const WeightSchedule w = random_weights(n, p, rng);
  PlatoonState s = cruise_state(cfg, 20.0);
  const Vec z = uniform_vec(n, -1, 1, rng), zp = uniform_vec(n, -1, 1, rng);
  const QuadraticModel base = assemble_quadratic_model(cfg, w, s, z, zp);
  for (int j = 1; j <= n; ++j) {
    Vec z2 = z, zp2 = zp;
    z2(j - 1) += 0.7;
    zp2(j - 1) -= 0.4;
    const QuadraticModel m = assemble_quadratic_model(cfg, w, s, z2, zp2);
    for (int i = 1; i <= n; ++i) {
      const double diff = (m.c.segment((i - 1) * p, p) - base.c.segment((i - 1) * p, p)).cwiseAbs().maxCoeff();
      if (j != i && j != i + 1) EXPECT_EQ(diff, 0.0) << "i=" << i << " j=" << j;
    }
  }
  PlatoonState s2 = s;
  s2.u0 = 0.9;
  const QuadraticModel m = assemble_quadratic_model(cfg, w, s2, z, zp);
  EXPECT_GT((m.c.head(p) - base.c.head(p)).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((m.c.tail((n - 1) * p) - base.c.tail((n - 1) * p)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Decomposition, SumAndPsdOverRandomSchedules) {
  const auto [sum_err, min_eig] = oracles::decomposition_check();
  EXPECT_LE(sum_err, 1e-10);
  EXPECT_GE(min_eig, -1e-10);
}

TEST(Decomposition, LocalObjectivesSumToJ) {
  std::mt19937_64 rng(3);
  for (const auto& name : platoon_preset_names()) {
    const PlatoonConfig cfg = platoon_preset(name);
    for (int p = 1; p <= 5; ++p) {
      const PlatoonState s = random_feasible_state(cfg, 100 + p);
      const QuadraticModel m = assemble_quadratic_model(cfg, weight_preset(name, p), s);
      const DecomposedModel d = decompose_model(m);
      const Vec u = uniform_vec(cfg.n * p, -2, 1.4, rng);
      Vec a(cfg.n * p);
      for (int i = 1; i <= cfg.n; ++i) {
        a.segment((i - 1) * p, p) = approx_accel_map<double>(cfg.vehicle(i), s.v(i), Vec(u.segment((i - 1) * p, p)), cfg.tau, cfg.g);
      }
      double sum = d.gamma;
      for (int i = 1; i <= cfg.n; ++i) {
        Vec us(static_cast<int>(d.blocks[i - 1].support.size()) * p);
        for (std::size_t b = 0; b < d.blocks[i - 1].support.size(); ++b) {
          us.segment(static_cast<int>(b) * p, p) = u.segment((d.blocks[i - 1].support[b] - 1) * p, p);
        }
        sum += local_objective(d, cfg, s, i, us, false).value;
      }
      const double J = m.evaluate(a, u);
      EXPECT_LE(std::abs(sum - J), 1e-8 * (1 + std::abs(J))) << name << " p=" << p;
    }
  }
}

TEST(AccelMap, ReductionsAndApproximationOrder) {
  std::mt19937_64 rng(8);
  VehicleParams lin;
  const Vec u = uniform_vec(4, -2, 1.4, rng);
  EXPECT_EQ(approx_accel_map<double>(lin, 20.0, u, 1.0), u);
  EXPECT_TRUE(approx_accel_jacobian<double>(lin, 20.0, u, 1.0).isIdentity(0));
  VehicleParams veh{5.0, 1.0, -8.0, 1.4, 2.5e-4, 0.006};
  const Vec u1 = Vec::Constant(1, 0.5);
  EXPECT_NEAR(approx_accel_map<double>(veh, 20.0, u1, 1.0)(0), effective_accel(veh, 20.0, 0.5), 1e-15);

  // Exact recursion uses the true speed at each step; the map uses the drag-free speed.
  // c3 = 0 isolates the drag-on-drag term, which is quadratic in c2.
  auto error_for = [&](double c2) {
    VehicleParams v = veh;
    v.c2 = c2;
    v.c3 = 0;
    const Vec a = approx_accel_map<double>(v, 20.0, u.head(3).eval(), 1.0);
    double speed = 20.0, err = 0;
    for (int m = 0; m < 3; ++m) {
      const double exact = effective_accel(v, speed, u(m));
      err = std::max(err, std::abs(exact - a(m)));
      speed += exact;
    }
    return err;
  };
  const double ratio = error_for(2.5e-4) / error_for(2.5e-5);
  EXPECT_GT(ratio, 70.0);
  EXPECT_LT(ratio, 130.0);
}

TEST(Constraints, SpeedReductions) {
  VehicleParams lin;
  const Vec u(Vec::LinSpaced(4, -1.0, 1.0));
  for (int j = 1; j <= 4; ++j) EXPECT_NEAR(speed_constraint_value<double>(lin, 20.0, u, j, 1.0), 20.0 + u.head(j).sum(), 1e-12);
  VehicleParams veh{5.0, 1.0, -8.0, 1.4, 2.5e-4, 0.006};
  const Vec zero = Vec::Zero(4);
  for (int j = 1; j <= 4; ++j) {
    EXPECT_NEAR(speed_constraint_value<double>(veh, 20.0, zero, j, 1.0), 20.0 - (j * 0.006 * 9.8 + 2.5e-4 * j * 400.0), 1e-12);
  }
}

TEST(Constraints, SafetyExamples) {
  const PlatoonConfig cfg = platoon_preset("small");
  const PlatoonState s = cruise_state(cfg, 25.0);
  const Vec zero = Vec::Zero(1);
  // p = 1 with u = 0: drag makes the follower slow down, so the value is the one-step h.
  const double h = safety_constraint_value<double>(cfg, s, 1, zero, zero, 1);
  EXPECT_NEAR(h, h_one_step(cfg, s, Vec(Vec::Zero(cfg.n)))(0), 1e-12);
  PlatoonConfig lin = zero_drag(cfg);
  EXPECT_NEAR(safety_constraint_value<double>(lin, s, 1, zero, zero, 1), -5.9375, 1e-12);
  // Vehicle 1 does not depend on the leader slot.
  const Vec up = Vec::Constant(3, 0.4), ui = Vec::Constant(3, -0.2);
  const ScalarFn f = safety_constraint_fn(cfg, s, 1, up, ui, 2);
  EXPECT_EQ(f.grad.head(3).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Gradients, MatchFiniteDifferences) { EXPECT_LE(oracles::gradient_suite_error(), 1e-6); }

TEST(RestrictedSets, BoundsMonotoneAndExactWithoutDrag) {
  const PlatoonConfig cfg = platoon_preset("large");
  const PlatoonState s = random_feasible_state(cfg, 4);
  const auto sets = restricted_convex_sets(cfg, s, 5);
  for (const auto& rs : sets)
    for (int j = 1; j < 5; ++j) EXPECT_GE(rs.breve(j), rs.breve(j - 1) - 1e-12);
  const PlatoonConfig lin = zero_drag(cfg);
  const auto exact = restricted_convex_sets(lin, s, 5);
  for (int i = 1; i <= cfg.n; ++i) {
    for (int j = 1; j <= 5; ++j) {
      EXPECT_NEAR(exact[i - 1].partial_lo(j - 1), (lin.v_min - s.v(i)) / lin.tau, 1e-12);
      EXPECT_NEAR(exact[i - 1].partial_hi(j - 1), (lin.v_max - s.v(i)) / lin.tau, 1e-12);
    }
  }
}

TEST(RestrictedSets, InnerApproximationContainment) {
  std::mt19937_64 rng(21);
  int checked = 0, violators = 0;
  for (const auto& name : platoon_preset_names()) {
    const PlatoonConfig cfg = platoon_preset(name);
    for (int p : {2, 3, 5}) {
      const PlatoonState s = random_feasible_state(cfg, static_cast<std::uint64_t>(p) * 31);
      const auto sets = restricted_convex_sets(cfg, s, p);
      for (int trial = 0; trial < 5000; ++trial) {
        const int i = 1 + trial % cfg.n;
        const auto& rs = sets[i - 1];
        const auto& veh = cfg.vehicle(i);
        const Vec up = uniform_vec(p, cfg.vehicle(i - 1).a_min, 1.4, rng);
        const Vec ui = uniform_vec(p, veh.a_min, veh.a_max, rng);
        const Vec partial = lower_ones<double>(p) * ui;
        if ((partial.array() < rs.partial_lo.array()).any() || (partial.array() > rs.partial_hi.array()).any()) continue;
        Vec y(2 * p);
        y << (i == 1 ? Vec(Vec::Constant(p, s.u0)) : up), ui;
        bool inside = true;
        for (const auto& qf : rs.safety) inside = inside && qf.eval(y) <= 0;
        if (!inside) continue;
        ++checked;
        for (int j = 1; j <= p; ++j) {
          const double q = speed_constraint_value<double>(veh, s.v(i), ui, j, cfg.tau, cfg.g);
          const double h = safety_constraint_value<double>(cfg, s, i, Vec(y.head(p)), ui, j);
          if (q < cfg.v_min - 1e-9 || q > cfg.v_max + 1e-9 || h > 1e-9) ++violators;
        }
      }
    }
  }
  EXPECT_GE(checked, 10000);
  EXPECT_EQ(violators, 0);
}
