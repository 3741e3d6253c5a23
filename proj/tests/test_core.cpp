#include "platoon/core.hpp"
#include "platoon/presets.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace platoon;

namespace {

VehicleParams small_vehicle() { return VehicleParams{5.0, 1.0, -8.0, 1.4, 2.5e-4, 0.006}; }

PlatoonState single(double x_lead, double v_lead, double x, double v) {
  PlatoonState s;
  s.x = Vec(2);
  s.v = Vec(2);
  s.x << x_lead, x;
  s.v << v_lead, v;
  return s;
}

}  // namespace

TEST(EffectiveAccel, Arithmetic) {
  VehicleParams lin;
  EXPECT_DOUBLE_EQ(effective_accel(lin, 25.0, 1.0), 1.0);
  EXPECT_NEAR(effective_accel(small_vehicle(), 25.0, 1.0), 0.78495, 1e-12);
  VehicleParams large{10.0, 1.25, -6.8, 1.4, 4.5e-4, 0.015};
  EXPECT_NEAR(effective_accel(large, 25.0, 0.0), -(4.5e-4 * 625.0 + 0.015 * 9.8), 1e-12);
}

TEST(Dynamics, NonlinearStep) {
  const PlatoonConfig cfg = chain_config(1, small_vehicle(), 1.0, 10.0, 27.78, 50.0);
  PlatoonState s = single(50.0, 25.0, 0.0, 25.0);
  const PlatoonState next = nonlinear_step(cfg, s, Vec(Vec::Constant(1, 1.0)));
  EXPECT_NEAR(next.x(1), 25.392475, 1e-12);
  EXPECT_NEAR(next.v(1), 25.78495, 1e-12);
  EXPECT_DOUBLE_EQ(next.x(0), 75.0);
}

TEST(Dynamics, LinearStepKinematics) {
  PlatoonConfig cfg = chain_config(1, small_vehicle(), 1.0, 10.0, 27.78, 50.0);
  PlatoonState s = single(50.0, 25.0, 0.0, 25.0);
  PlatoonState next = linear_step(cfg, s, Vec(Vec::Constant(1, 1.0)));
  EXPECT_DOUBLE_EQ(next.x(1), 25.5);
  EXPECT_DOUBLE_EQ(next.v(1), 26.0);
  cfg.tau = 0.5;
  s.v(1) = 20.0;
  next = linear_step(cfg, s, Vec(Vec::Constant(1, -2.0)));
  EXPECT_DOUBLE_EQ(next.v(1), 19.0);
}

TEST(Dynamics, ModelReductionBitMatches) {
  VehicleParams lin = small_vehicle();
  lin.c2 = 0;
  lin.c3 = 0;
  const PlatoonConfig cfg = chain_config(4, lin, 1.0, 10.0, 27.78, 50.0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const PlatoonState s = random_feasible_state(cfg, seed);
    const Vec u = Vec::Random(4);
    const PlatoonState a = nonlinear_step(cfg, s, u);
    const PlatoonState b = linear_step(cfg, s, u);
    EXPECT_TRUE((a.x.array() == b.x.array()).all());
    EXPECT_TRUE((a.v.array() == b.v.array()).all());
  }
}

TEST(Dynamics, ZeroEffectiveAccelKeepsSpeed) {
  const PlatoonConfig cfg = chain_config(1, small_vehicle(), 1.0, 10.0, 27.78, 50.0);
  const PlatoonState s = single(50.0, 25.0, 0.0, 22.0);
  const double u = small_vehicle().c2 * 22.0 * 22.0 + small_vehicle().c3 * kGravity;
  EXPECT_NEAR(nonlinear_step(cfg, s, Vec(Vec::Constant(1, u))).v(1), 22.0, 1e-14);
}

TEST(Safety, GapExamples) {
  const PlatoonConfig cfg = chain_config(1, small_vehicle(), 1.0, 10.0, 27.78, 50.0);
  EXPECT_NEAR(safety_gap_p(cfg, single(50.0, 25.0, 0.0, 25.0), 1), -5.9375, 1e-12);
  // Standing at v_min = 0 with a gap of exactly L.
  const PlatoonConfig unit = chain_config(1, small_vehicle(), 1.0, 0.0, 27.78, 50.0);
  EXPECT_NEAR(safety_gap_p(unit, single(5.0, 0.0, 0.0, 0.0), 1), 0.0, 1e-12);
  const PlatoonConfig cfg10 = platoon_preset("small");
  const PlatoonState cruise = cruise_state(cfg10, 25.0);
  for (int i = 1; i <= 10; ++i) EXPECT_LT(safety_gap_p(cfg10, cruise, i), 0.0);
}

TEST(Reaction, Identities) {
  const PlatoonConfig cfg = platoon_preset("small");
  const PlatoonState s = cruise_state(cfg, 25.0);
  for (int i = 1; i <= cfg.n; ++i) {
    const auto& veh = cfg.vehicle(i);
    EXPECT_NEAR(q_reaction(cfg, s, i, veh.a_min), veh.r * veh.a_min + cfg.v_min, 1e-12);
    EXPECT_DOUBLE_EQ(q_reaction(cfg, s, i, 0.0), s.v(i));
  }
  // 25 + 1.5 (-1) - 15 (-1) / (-8) - (-1)^2 / (2 (-8)) by hand.
  EXPECT_NEAR(q_reaction(cfg, s, 1, -1.0), 25.0 - 1.5 - 1.875 + 0.0625, 1e-12);
}

TEST(OneStep, HLocality) {
  const PlatoonConfig cfg = platoon_preset("medium");
  const PlatoonState s = random_feasible_state(cfg, 7);
  const Vec u = feasible_control(cfg, s);
  const Vec h = h_one_step(cfg, s, u);
  for (int j = 1; j <= cfg.n; ++j) {
    Vec up = u;
    up(j - 1) += 0.3;
    const Vec hp = h_one_step(cfg, s, up);
    for (int i = 1; i <= cfg.n; ++i) {
      if (i != j && i != j + 1) EXPECT_DOUBLE_EQ(hp(i - 1), h(i - 1));
    }
  }
}

TEST(OneStep, HAtRestMatchesReaction) {
  VehicleParams lin = small_vehicle();
  lin.c2 = 0;
  lin.c3 = 0;
  const PlatoonConfig cfg = chain_config(3, lin, 1.0, 10.0, 27.78, 50.0);
  const PlatoonState s = cruise_state(cfg, 25.0);
  const Vec h = h_one_step(cfg, s, Vec(Vec::Zero(3)));
  for (int i = 1; i <= 3; ++i) {
    EXPECT_NEAR(h(i - 1), safety_gap_p(cfg, s, i) + cfg.tau * (q_reaction(cfg, s, i, 0.0) - s.v(i)), 1e-12);
  }
}

TEST(FeasibleControl, CaseExamples) {
  const PlatoonConfig cfg = platoon_preset("small");
  const PlatoonState s = cruise_state(cfg, 25.0);
  const Vec u = feasible_control(cfg, s);
  EXPECT_NEAR(u(0), -7.78495, 1e-12);

  PlatoonState slow = cruise_state(cfg, cfg.v_min);
  const Vec us = feasible_control(cfg, slow);
  const auto& veh = cfg.vehicle(1);
  EXPECT_NEAR(us(0), veh.c2 * cfg.v_min * cfg.v_min + veh.c3 * cfg.g, 1e-12);
  EXPECT_NEAR(nonlinear_step(cfg, slow, us).v(1), cfg.v_min, 1e-12);
}

TEST(FeasibleControl, RejectsInfeasibleInput) {
  const PlatoonConfig cfg = platoon_preset("small");
  PlatoonState s = cruise_state(cfg, 25.0);
  s.x(3) = s.x(2) - 10.0;
  try {
    feasible_control(cfg, s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::infeasible_input);
  }
}

TEST(FeasibleControl, SequentialFeasibilityProperty) {
  for (const auto& name : platoon_preset_names()) {
    const PlatoonConfig cfg = platoon_preset(name);
    int violations = 0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
      const PlatoonState s = random_feasible_state(cfg, seed);
      ASSERT_TRUE(is_feasible_state(cfg, s).feasible) << name << " seed " << seed;
      const Vec u = feasible_control(cfg, s);
      if (!check_one_step(cfg, s, u).feasible) ++violations;
      // The leader picks a new admissible input at k+1; holding speed always is.
      PlatoonState next = nonlinear_step(cfg, s, u);
      next.u0 = 0.0;
      if (!is_feasible_state(cfg, next).feasible) ++violations;
      if ((h_one_step(cfg, s, u).array() > kFeasibilityTol).any()) ++violations;
    }
    EXPECT_EQ(violations, 0) << name;
  }
}

TEST(InteriorControl, StrictAndZeroEps) {
  const PlatoonConfig cfg = platoon_preset("large");
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const PlatoonState s = random_feasible_state(cfg, seed);
    const Vec u = interior_control(cfg, s);
    EXPECT_GE(one_step_min_slack(cfg, s, u), kStrictMargin) << seed;
    EXPECT_TRUE((interior_control(cfg, s, 0.0).array() == feasible_control(cfg, s).array()).all());
  }
}

TEST(InteriorControl, LeaderAtVminIsRejected) {
  const PlatoonConfig cfg = platoon_preset("small");
  PlatoonState s = cruise_state(cfg, 25.0);
  s.v(0) = cfg.v_min;
  EXPECT_THROW(interior_control(cfg, s), Error);
}

TEST(Config, Validation) {
  PlatoonConfig cfg = platoon_preset("small");
  EXPECT_TRUE(validate_config(cfg).empty());
  PlatoonConfig bad = cfg;
  bad.vehicles[3].r = 0.5;
  EXPECT_THROW(validate_config(bad), Error);
  EXPECT_FALSE(validate_config(bad, ReactionTimePolicy::warn).empty());
  bad = cfg;
  bad.edges.erase(bad.edges.begin() + 2);
  EXPECT_THROW(validate_config(bad), Error);
  bad = cfg;
  bad.vehicles[2].c2 = 2e-3;  // drag at v_max exceeds a_max
  EXPECT_THROW(validate_config(bad), Error);
  bad = cfg;
  bad.vehicles[0].c2 = 1e-4;
  EXPECT_THROW(validate_config(bad), Error);
}

TEST(Tracking, Definitions) {
  const PlatoonConfig cfg = platoon_preset("small");
  const PlatoonState s = random_feasible_state(cfg, 3);
  const auto [z, zp] = tracking_state(cfg, s);
  for (int i = 1; i <= cfg.n; ++i) {
    EXPECT_DOUBLE_EQ(z(i - 1), s.x(i - 1) - s.x(i) - cfg.delta);
    EXPECT_DOUBLE_EQ(zp(i - 1), s.v(i - 1) - s.v(i));
  }
}
