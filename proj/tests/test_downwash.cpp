#include <gtest/gtest.h>

#include <cmath>

#include "quadleague/downwash.hpp"

using namespace quadleague;

TEST(JetSpeed, MomentumTheoryClosedForm) {
  EXPECT_DOUBLE_EQ(initial_jet_speed(0.0, 1.204, 4.266e-3), 0.0);
  // per-rotor hover thrust of the 220 g platform through a 7.37 cm disk
  const double area = M_PI * (0.0737 / 2.0) * (0.0737 / 2.0);
  const double thrust = 0.54;
  const double expected = std::sqrt(thrust / (2.0 * 1.204 * area));
  EXPECT_NEAR(expected, 7.25, 0.02);  // sanity on the magnitude
  EXPECT_NEAR(initial_jet_speed(thrust, 1.204, area), expected, 1e-9);
}

TEST(JetSpeed, SquareRootScaling) {
  const double v1 = initial_jet_speed(1.0, 1.204, 4.266e-3);
  const double v4 = initial_jet_speed(4.0, 1.204, 4.266e-3);
  EXPECT_NEAR(v4, 2.0 * v1, 1e-12);
}

TEST(JetSpeed, RejectsBadInputs) {
  EXPECT_THROW(initial_jet_speed(-1.0, 1.204, 1e-3), std::invalid_argument);
  EXPECT_THROW(initial_jet_speed(1.0, 0.0, 1e-3), std::invalid_argument);
  EXPECT_THROW(initial_jet_speed(1.0, 1.204, 0.0), std::invalid_argument);
}

namespace {

WakeField hover_emit(int steps, const Vec3& vehicle_velocity, uint64_t seed = 11) {
  WakeField field;
  QuadParams params;
  QuadState state = make_hover_state(Vec3(0, 0, 2.0), 0.0, params);
  state.velocity = vehicle_velocity;
  Rng rng(seed);
  const Vec4 thrust = Vec4::Constant(params.mass * 9.81 / 4.0);
  for (int i = 0; i < steps; ++i) {
    field.advance(0.02);
    field.emit(state, 0, thrust, params, rng);
    state.position += 0.02 * state.velocity;
  }
  return field;
}

}  // namespace

TEST(WakeEmit, ZeroThrustEmitsNothing) {
  WakeField field;
  QuadParams params;
  QuadState state;
  Rng rng(1);
  field.emit(state, 0, Vec4::Zero(), params, rng);
  EXPECT_EQ(field.size(), 0u);
}

TEST(WakeEmit, HoverParticlesPointDownAtJetSpeed) {
  const WakeField field = hover_emit(1, Vec3::Zero());
  ASSERT_EQ(field.size(), 96u);
  Vec3 mean = Vec3::Zero();
  for (const auto& p : field.particles()) mean += p.velocity;
  mean /= static_cast<double>(field.size());
  const double area = field.config().disk_area();
  const double jet = initial_jet_speed(0.220 * 9.81 / 4.0, field.config().air_density, area);
  EXPECT_NEAR(jet, 7.25, 0.03);
  EXPECT_LT(std::abs(mean.x()), 0.5);
  EXPECT_LT(std::abs(mean.y()), 0.5);
  // mean vertical speed: jet speed times the cone-cap average of cos(theta)
  EXPECT_NEAR(-mean.z(), jet, 0.15 * jet);
}

TEST(WakeEmit, VehicleVelocityIsAdded) {
  const WakeField field = hover_emit(1, Vec3(5.0, 0.0, 0.0));
  Vec3 mean = Vec3::Zero();
  for (const auto& p : field.particles()) mean += p.velocity;
  mean /= static_cast<double>(field.size());
  EXPECT_NEAR(mean.x(), 5.0, 0.5);
}

TEST(WakeEmit, CapacityEvictsOldestFirst) {
  WakeConfig cfg;
  cfg.capacity = 200;
  cfg.max_age = 1e9;
  WakeField field(cfg);
  QuadParams params;
  QuadState state = make_hover_state(Vec3::Zero(), 0.0, params);
  Rng rng(2);
  const Vec4 thrust = Vec4::Constant(0.5);
  for (int i = 0; i < 5; ++i) {
    field.emit(state, i, thrust, params, rng);  // tag source with the round
  }
  EXPECT_EQ(field.size(), 200u);
  // rounds 0 and 1 fully evicted, round 2 partially
  for (const auto& p : field.particles()) EXPECT_GE(p.source, 2);
}

TEST(WakeAdvance, ExponentialSpeedDecay) {
  WakeConfig cfg;
  cfg.decay_tau = 0.5;
  WakeField field(cfg);
  QuadParams params;
  QuadState state;
  state.motor_speeds.setConstant(1.0);
  Rng rng(3);
  field.emit(state, 0, Vec4::Constant(0.54), params, rng);
  ASSERT_GT(field.size(), 0u);
  // normalize one particle to a known speed via the config: instead check the ratio
  const double s0 = field.particles()[0].velocity.norm();
  field.advance(0.5);
  const double s1 = field.particles()[0].velocity.norm();
  EXPECT_NEAR(s1, s0 / std::exp(1.0), 1e-9 * s0);
  // one particle at speed 8 decays to 8/e after one time constant
  EXPECT_NEAR(8.0 * std::exp(-1.0), 2.943, 1e-3);
}

TEST(WakeAdvance, ZeroDtIsIdentity) {
  WakeField field = hover_emit(3, Vec3::Zero());
  const auto before = field.particles();
  field.advance(0.0);
  ASSERT_EQ(field.size(), before.size());
  for (size_t i = 0; i < before.size(); ++i) {
    EXPECT_EQ(field.particles()[i].position, before[i].position);
    EXPECT_EQ(field.particles()[i].velocity, before[i].velocity);
  }
}

TEST(WakeAdvance, MaxAgeRemovesParticles) {
  WakeConfig cfg;
  cfg.max_age = 1.5;
  WakeField field(cfg);
  QuadParams params;
  QuadState state;
  Rng rng(4);
  field.emit(state, 0, Vec4::Constant(0.5), params, rng);
  const size_t n = field.size();
  ASSERT_GT(n, 0u);
  field.advance(1.0);
  EXPECT_EQ(field.size(), n);
  field.advance(0.5);  // age reaches exactly max_age
  EXPECT_EQ(field.size(), 0u);
}

TEST(WakeAdvance, DecayIsMonotone) {
  WakeField field = hover_emit(2, Vec3(1.0, 0.0, 0.0));
  std::vector<double> speeds;
  for (const auto& p : field.particles()) speeds.push_back(p.velocity.norm());
  field.advance(0.05);
  // surviving particles kept order; compare prefix
  for (size_t i = 0; i < field.size(); ++i)
    EXPECT_LE(field.particles()[i].velocity.norm(), speeds[speeds.size() - field.size() + i] + 1e-12);
}

TEST(WakeSample, EmptyFieldGivesZero) {
  WakeField field;
  EXPECT_EQ(field.sample_airspeed(Vec3(1, 2, 3)), Vec3::Zero());
}

TEST(WakeSample, InverseDistanceWeighting) {
  QuadParams params;
  QuadState s;
  s.position = Vec3(0, 0, 1.0);
  Rng rng(5);
  WakeConfig one;
  one.particles_per_step = 4;  // one per rotor
  one.cone_half_angle = 1e-12;  // deterministic direction straight down
  WakeField f1(one);
  f1.emit(s, 0, Vec4::Constant(0.25), params, rng);
  ASSERT_EQ(f1.size(), 4u);
  // sampling exactly at a particle returns (nearly) its velocity; here all
  // four share one velocity, so the interpolation is exact
  const Vec3 q = f1.particles()[0].position;
  const Vec3 v = f1.particles()[0].velocity;
  EXPECT_LT((f1.sample_airspeed(q, -1) - v).norm(), 1e-12);

  // two equidistant particles with different speeds average with equal weight
  WakeConfig two = one;
  two.query_radius = 0.1;
  WakeField f2(two);
  f2.emit(s, 0, Vec4(0.25, 1.0, 0.0, 0.0), params, rng);  // distinct jet speeds
  ASSERT_EQ(f2.size(), 2u);
  const Vec3 mid = 0.5 * (f2.particles()[0].position + f2.particles()[1].position);
  const Vec3 expected = 0.5 * (f2.particles()[0].velocity + f2.particles()[1].velocity);
  EXPECT_GT((f2.particles()[0].velocity - f2.particles()[1].velocity).norm(), 1.0);
  EXPECT_LT((f2.sample_airspeed(mid, -1) - expected).norm(), 1e-9);
}

TEST(WakeSample, MatchesBruteForceOracle) {
  const WakeField field = hover_emit(30, Vec3(1.5, 0.0, 0.0), 9);
  auto brute = [&](const Vec3& q, int exclude) {
    Vec3 acc = Vec3::Zero();
    double wsum = 0.0;
    for (const auto& p : field.particles()) {
      if (p.source == exclude) continue;
      const double d = (p.position - q).norm();
      if (d >= field.config().query_radius) continue;
      const double w = 1.0 / std::max(d, field.config().idw_epsilon);
      acc += w * p.velocity;
      wsum += w;
    }
    return wsum > 0.0 ? Vec3(acc / wsum) : Vec3::Zero();
  };
  Rng rng(33);
  int hits = 0;
  for (int i = 0; i < 300; ++i) {
    const Vec3 q(rng.uniform(-1.0, 4.0), rng.uniform(-1.0, 1.0), rng.uniform(0.0, 2.5));
    const Vec3 expected = brute(q, -1);
    EXPECT_LT((field.sample_airspeed(q, -1) - expected).norm(), 1e-12);
    if (expected.norm() > 0.0) ++hits;
  }
  EXPECT_GT(hits, 20);  // the probe cloud actually intersects the wake
}

TEST(WakeSample, SelfExclusionIsExact) {
  const WakeField field = hover_emit(10, Vec3::Zero());
  ASSERT_GT(field.size(), 0u);
  // an isolated hovering vehicle samples zero from its own wake
  EXPECT_EQ(field.sample_airspeed(Vec3(0, 0, 2.0), 0), Vec3::Zero());
  EXPECT_EQ(field.sample_airspeed(Vec3(0, 0, 1.5), 0), Vec3::Zero());
  // another agent does feel it
  EXPECT_GT(field.sample_airspeed(Vec3(0, 0, 1.9), 1).norm(), 0.0);
}

TEST(WakeSample, TranslatingVehicleLeavesTrailingWake) {
  // Vehicle moving +x: the wake behind/below must beat the lateral field.
  const Vec3 vel(3.0, 0.0, 0.0);
  const WakeField field = hover_emit(100, vel, 21);
  const Vec3 vehicle_pos = Vec3(0, 0, 2.0) + 100 * 0.02 * vel;
  // probes at equal distance from the vehicle: one below and behind (in the
  // trailing jet), two mostly lateral
  const Vec3 behind_below = vehicle_pos + Vec3(-0.2, 0.0, -0.67);
  const Vec3 lateral_a = vehicle_pos + Vec3(0.0, 0.686, -0.14);
  const Vec3 lateral_b = vehicle_pos + Vec3(0.0, -0.686, -0.14);
  const double wake_speed = field.sample_airspeed(behind_below, -1).norm();
  const double side = std::max(field.sample_airspeed(lateral_a, -1).norm(),
                               field.sample_airspeed(lateral_b, -1).norm());
  EXPECT_GT(wake_speed, side);
  EXPECT_GT(wake_speed, 0.5);
}

TEST(WakeField, DeterministicUnderFixedSeed) {
  const WakeField a = hover_emit(20, Vec3(1, 0, 0), 42);
  const WakeField b = hover_emit(20, Vec3(1, 0, 0), 42);
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.particles()[i].position, b.particles()[i].position);
    EXPECT_EQ(a.particles()[i].velocity, b.particles()[i].velocity);
  }
}

TEST(WakeField, DumpWritesFlatRecords) {
  const WakeField field = hover_emit(1, Vec3::Zero());
  std::ostringstream oss;
  field.dump(oss);
  std::istringstream iss(oss.str());
  std::string line;
  size_t rows = 0;
  while (std::getline(iss, line)) ++rows;
  EXPECT_EQ(rows, field.size());
}
