#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "quadleague/dynamics.hpp"

using namespace quadleague;

namespace {

QuadParams nominal() { return QuadParams{}; }

}  // namespace

TEST(QuadParams, NominalMatchesPlatformSpec) {
  const QuadParams p = nominal();
  EXPECT_DOUBLE_EQ(p.mass, 0.220);
  EXPECT_DOUBLE_EQ(p.max_thrust, 14.0);
  EXPECT_DOUBLE_EQ(p.motor_tau, 0.033);
  EXPECT_DOUBLE_EQ(p.inertia[0], 0.14e-3);
  EXPECT_DOUBLE_EQ(p.inertia[1], 0.17e-3);
  EXPECT_DOUBLE_EQ(p.inertia[2], 0.21e-3);
  EXPECT_DOUBLE_EQ(p.motor_spacing, 0.118);
  // max rotor speed produces 3.5 N per rotor
  const double f_max = p.thrust_coeff * p.max_motor_speed() * p.max_motor_speed();
  EXPECT_NEAR(f_max, 3.5, 1e-12);
}

TEST(ComputeWrench, ZeroStateGivesZeroWrench) {
  QuadState s;
  const auto w = compute_wrench(s, nominal());
  EXPECT_EQ(w.force_prop, Vec3::Zero());
  EXPECT_EQ(w.torque_prop, Vec3::Zero());
  EXPECT_EQ(w.force_aero, Vec3::Zero());
  EXPECT_EQ(w.torque_aero, Vec3::Zero());
}

TEST(ComputeWrench, HoverThrustAlongBodyZ) {
  const QuadParams p = nominal();
  QuadState s;
  s.motor_speeds.setConstant(p.hover_motor_speed());
  const auto w = compute_wrench(s, p);
  // hover thrust m*g = 0.220 * 9.81 = 2.1582 N, z only
  EXPECT_NEAR(w.force_prop.z(), 0.220 * 9.81, 1e-9);
  EXPECT_DOUBLE_EQ(w.force_prop.x(), 0.0);
  EXPECT_DOUBLE_EQ(w.force_prop.y(), 0.0);
  EXPECT_NEAR(w.torque_prop.norm(), 0.0, 1e-12);
}

TEST(ComputeWrench, LinearDragFromRelativeVelocity) {
  QuadParams p = nominal();
  p.drag_coeff = Vec3(0.01, 0.01, 0.01);
  QuadState s;
  s.velocity = Vec3(1.0, 0.0, 0.0);
  const auto w = compute_wrench(s, p, Vec3::Zero());
  EXPECT_NEAR(w.force_aero.x(), -0.01, 1e-15);
  EXPECT_NEAR(w.force_aero.y(), 0.0, 1e-15);
  EXPECT_NEAR(w.force_aero.z(), 0.0, 1e-15);
  // drag vanishes when moving with the local airflow
  const auto w2 = compute_wrench(s, p, Vec3(1.0, 0.0, 0.0));
  EXPECT_NEAR(w2.force_aero.norm(), 0.0, 1e-15);
}

TEST(MotorSetpoint, HoverCommandRecoversHoverSpeeds) {
  const QuadParams p = nominal();
  QuadState s;
  Command cmd;
  cmd.collective_thrust = p.gravity.norm();
  const Vec4 omega_ss = motor_setpoint(s, cmd, p);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(omega_ss[i], p.hover_motor_speed(), 1e-9);
}

TEST(Step, HoverIsAFixedPoint) {
  const QuadParams p = nominal();
  QuadState s = make_hover_state(Vec3(1.0, 2.0, 3.0), 0.4, p);
  Command cmd;
  cmd.collective_thrust = p.gravity.norm();
  QuadState cur = s;
  for (int i = 0; i < 50; ++i) cur = step(cur, cmd, p, Vec3::Zero(), 0.02);
  EXPECT_LT((cur.position - s.position).norm(), 1e-4);
  EXPECT_LT(cur.velocity.norm(), 1e-4);
  EXPECT_LT(cur.body_rates.norm(), 1e-4);
  EXPECT_GT(cur.orientation.dot(s.orientation), 1.0 - 1e-8);
}

TEST(Step, ZeroRatesKeepAttitude) {
  const QuadParams p = nominal();
  QuadState s = make_hover_state(Vec3::Zero(), 0.0, p);
  Command cmd;
  cmd.collective_thrust = 5.0;  // below hover: sinks, but no rotation
  QuadState cur = s;
  for (int i = 0; i < 25; ++i) cur = step(cur, cmd, p, Vec3::Zero(), 0.02);
  EXPECT_LT(cur.body_rates.norm(), 1e-9);
  EXPECT_GT(cur.orientation.dot(s.orientation), 1.0 - 1e-12);
}

TEST(Step, BallisticFallMatchesClosedForm) {
  QuadParams p = nominal();
  p.drag_coeff.setZero();
  QuadState s = make_hover_state(Vec3(0.0, 0.0, 50.0), 0.0, p);
  Command cmd;  // zero thrust, zero rates
  QuadState cur = s;
  for (int i = 0; i < 50; ++i) cur = step(cur, cmd, p, Vec3::Zero(), 0.02);
  // thrust decays with the motors: T(t) = m g exp(-2 t / tau)
  const double g = p.gravity.norm();
  const double tau = p.motor_tau;
  const double expected_vz = g * (tau / 2.0) * (1.0 - std::exp(-2.0 / tau)) - g * 1.0;
  EXPECT_NEAR(cur.velocity.z(), expected_vz, 1e-3 * std::abs(expected_vz));

  // instant motors: exact free fall
  QuadState free = make_hover_state(Vec3::Zero(), 0.0, p);
  free.motor_speeds.setZero();
  free = step_with_setpoint(free, Vec4::Zero(), p, Vec3::Zero(), 1.0);
  EXPECT_NEAR(free.velocity.z(), -9.81, 1e-3 * 9.81);
  EXPECT_NEAR(free.velocity.z(), -9.81, 1e-9);  // RK4 integrates constant gravity exactly
}

TEST(Step, MotorFirstOrderResponse) {
  const QuadParams p = nominal();
  QuadState s;  // motors at rest
  const Vec4 target = Vec4::Constant(p.hover_motor_speed());
  const QuadState cur = step_with_setpoint(s, target, p, Vec3::Zero(), p.motor_tau);
  // one time constant: 63.2% of the step, within 2%
  const double frac = cur.motor_speeds[0] / target[0];
  EXPECT_NEAR(frac, 1.0 - std::exp(-1.0), 0.02 * (1.0 - std::exp(-1.0)));
}

TEST(Step, QuaternionNormStaysTight) {
  const QuadParams p = nominal();
  Rng rng(123);
  QuadState s = make_hover_state(Vec3::Zero(), 0.0, p);
  double max_prenorm = 0.0;
  double max_norm_err = 0.0;
  Command cmd;
  for (int i = 0; i < 100000; ++i) {
    if (i % 10 == 0) {  // fresh random command each control tick
      cmd.collective_thrust = rng.uniform(0.0, p.max_thrust / p.mass);
      for (int k = 0; k < 3; ++k) cmd.body_rates[k] = rng.uniform(-10.0, 10.0);
    }
    const Vec4 omega_ss = motor_setpoint(s, cmd, p);
    double prenorm = 0.0;
    s = integrate_substep(s, omega_ss, p, Vec3::Zero(), 0.002, &prenorm);
    max_prenorm = std::max(max_prenorm, prenorm);
    max_norm_err = std::max(max_norm_err, std::abs(s.orientation.norm() - 1.0));
    if (s.position.norm() > 1e4 || s.velocity.norm() > 1e3) {
      s.position.setZero();
      s.velocity.setZero();
    }
  }
  EXPECT_LT(max_norm_err, 1e-9);
  EXPECT_LT(max_prenorm, 1e-5);
}

TEST(Step, EnergyConservedWithoutDragOrThrust) {
  QuadParams p = nominal();
  p.drag_coeff.setZero();
  QuadState s;
  s.position = Vec3(0.0, 0.0, 20.0);
  s.velocity = Vec3(4.0, 3.0, 2.0);
  s.body_rates = Vec3(8.0, -6.0, 4.0);
  const double g = p.gravity.norm();
  auto energy = [&](const QuadState& st) {
    const Vec3 J_omega = (p.inertia.array() * st.body_rates.array()).matrix();
    return 0.5 * p.mass * st.velocity.squaredNorm() + p.mass * g * st.position.z() +
           0.5 * st.body_rates.dot(J_omega);
  };
  const double e0 = energy(s);
  QuadState cur = s;
  for (int i = 0; i < 500; ++i) cur = step_with_setpoint(cur, Vec4::Zero(), p, Vec3::Zero(), 0.002);
  EXPECT_NEAR(energy(cur), e0, 1e-3 * std::abs(e0));
}

TEST(Step, RejectsBadInputs) {
  const QuadParams p = nominal();
  QuadState s;
  Command cmd;
  cmd.collective_thrust = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(step(s, cmd, p, Vec3::Zero(), 0.02), std::invalid_argument);
  cmd.collective_thrust = 1.0;
  EXPECT_THROW(step(s, cmd, p, Vec3::Zero(), 0.0), std::invalid_argument);
  s.position.x() = std::numeric_limits<double>::infinity();
  EXPECT_THROW(step(s, cmd, p, Vec3::Zero(), 0.02), std::invalid_argument);
}

TEST(Step, DeterministicTrajectories) {
  const QuadParams p = nominal();
  auto rollout = [&](uint64_t seed) {
    Rng rng(seed);
    QuadState s = make_hover_state(Vec3::Zero(), 0.0, p);
    for (int i = 0; i < 100; ++i) {
      Command cmd;
      cmd.collective_thrust = rng.uniform(0.0, p.max_thrust / p.mass);
      for (int a = 0; a < 3; ++a) cmd.body_rates[a] = rng.uniform(-5.0, 5.0);
      s = step(s, cmd, p, Vec3::Zero(), 0.02);
    }
    return s;
  };
  const QuadState a = rollout(77), b = rollout(77);
  EXPECT_TRUE(a.position == b.position && a.velocity == b.velocity &&
              a.body_rates == b.body_rates && a.motor_speeds == b.motor_speeds &&
              a.orientation.coeffs() == b.orientation.coeffs());
}

TEST(Randomize, ZeroRangesAreIdentity) {
  RandomizationSpec spec;
  spec.thrust_coeff_range = spec.torque_coeff_range = spec.drag_range = 0.0;
  spec.inertia_range = spec.mass_range = 0.0;
  Rng rng(5);
  const QuadParams p = randomize(nominal(), spec, rng);
  EXPECT_DOUBLE_EQ(p.mass, nominal().mass);
  EXPECT_DOUBLE_EQ(p.thrust_coeff, nominal().thrust_coeff);
  EXPECT_EQ(p.inertia, nominal().inertia);
  EXPECT_EQ(p.drag_coeff, nominal().drag_coeff);
}

TEST(Randomize, MassStaysInFivePercentBand) {
  RandomizationSpec spec;  // defaults: +/-5% mass
  Rng rng(17);
  for (int i = 0; i < 1000; ++i) {
    const QuadParams p = randomize(nominal(), spec, rng);
    EXPECT_GE(p.mass, 0.220 * 0.95);
    EXPECT_LE(p.mass, 0.220 * 1.05);
    EXPECT_GE(p.thrust_coeff, nominal().thrust_coeff * 0.90);
    EXPECT_LE(p.thrust_coeff, nominal().thrust_coeff * 1.10);
  }
}

TEST(Randomize, SameSeedSameDraw) {
  RandomizationSpec spec;
  Rng a(99), b(99);
  const QuadParams pa = randomize(nominal(), spec, a);
  const QuadParams pb = randomize(nominal(), spec, b);
  EXPECT_DOUBLE_EQ(pa.mass, pb.mass);
  EXPECT_DOUBLE_EQ(pa.thrust_coeff, pb.thrust_coeff);
  EXPECT_EQ(pa.inertia, pb.inertia);
}

TEST(DelayLine, ZeroOrderHoldLookup) {
  CommandDelayLine line(8);
  const double dt = 0.02;  // 50 Hz
  for (int i = 0; i < 5; ++i) {
    Command c;
    c.collective_thrust = i;
    line.push(c);
  }
  EXPECT_DOUBLE_EQ(line.delayed(0.0, dt).collective_thrust, 4.0);    // newest
  EXPECT_DOUBLE_EQ(line.delayed(0.020, dt).collective_thrust, 3.0);  // one tick back
  EXPECT_DOUBLE_EQ(line.delayed(0.040, dt).collective_thrust, 2.0);  // two ticks back
  EXPECT_DOUBLE_EQ(line.delayed(0.010, dt).collective_thrust, 3.0);  // ZOH between ticks
}

TEST(DelayLine, UnderfullHistoryReturnsOldest) {
  CommandDelayLine line(8);
  Command c;
  c.collective_thrust = 42.0;
  line.push(c);
  EXPECT_DOUBLE_EQ(line.delayed(0.040, 0.02).collective_thrust, 42.0);
  CommandDelayLine empty(8);
  EXPECT_DOUBLE_EQ(empty.delayed(0.040, 0.02).collective_thrust, 0.0);
}
