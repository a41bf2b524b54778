#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <stdexcept>

#include "quadleague/rng.hpp"

namespace quadleague {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Quat = Eigen::Quaterniond;  // scalar-first convention, world<-body

// Full kinematic + motor state of one vehicle.
struct QuadState {
  Vec3 position = Vec3::Zero();        // m, world
  Quat orientation = Quat::Identity(); // world<-body
  Vec3 velocity = Vec3::Zero();        // m/s, world
  Vec3 body_rates = Vec3::Zero();      // rad/s, body
  Vec4 motor_speeds = Vec4::Zero();    // rad/s

  bool finite() const {
    return position.allFinite() && orientation.coeffs().allFinite() &&
           velocity.allFinite() && body_rates.allFinite() && motor_speeds.allFinite();
  }
};

// Physical parameters. Nominal values are the Kolibri platform defaults.
struct QuadParams {
  double mass = 0.220;                              // kg
  Vec3 inertia = Vec3(0.14e-3, 0.17e-3, 0.21e-3);   // kg m^2, diagonal
  double motor_tau = 0.033;                         // s, first-order motor lag
  double thrust_coeff = 3.5 / (4000.0 * 4000.0);    // N s^2/rad^2, per rotor
  double torque_coeff = 0.012 * 3.5 / (4000.0 * 4000.0);  // N m s^2/rad^2
  double motor_spacing = 0.118;                     // m, diagonal motor-to-motor
  Vec3 drag_coeff = Vec3(0.01, 0.01, 0.01);         // N s/m, linear body drag
  double max_thrust = 14.0;                         // N, total
  Vec3 gravity = Vec3(0.0, 0.0, -9.81);             // m/s^2, world
  Vec3 rate_gain = Vec3(20.0, 20.0, 20.0);          // 1/s, body-rate P controller

  double max_rotor_thrust() const { return max_thrust / 4.0; }
  double max_motor_speed() const { return std::sqrt(max_rotor_thrust() / thrust_coeff); }
  // Per-rotor speed at which the vehicle hovers.
  double hover_motor_speed() const {
    return std::sqrt(mass * gravity.norm() / (4.0 * thrust_coeff));
  }

  bool valid() const {
    return mass > 0.0 && (inertia.array() > 0.0).all() && motor_tau > 0.0 &&
           thrust_coeff > 0.0 && max_thrust > 0.0;
  }
};

// Body-frame rotor positions, X configuration, z up. Spin signs alternate so
// yaw torque is controllable.
inline std::array<Vec3, 4> rotor_positions(const QuadParams& p) {
  const double l = p.motor_spacing / (2.0 * std::sqrt(2.0));
  return {Vec3(l, l, 0.0), Vec3(-l, l, 0.0), Vec3(-l, -l, 0.0), Vec3(l, -l, 0.0)};
}
inline constexpr std::array<double, 4> kRotorSpin = {-1.0, 1.0, -1.0, 1.0};

struct WrenchBreakdown {
  Vec3 force_prop = Vec3::Zero();    // N, body
  Vec3 torque_prop = Vec3::Zero();   // N m, body
  Vec3 force_aero = Vec3::Zero();    // N, body
  Vec3 torque_aero = Vec3::Zero();   // N m, body (zero: no rotational drag model)
};

// Collective-thrust + body-rate command, physical units.
struct Command {
  double collective_thrust = 0.0;  // m/s^2, mass-normalized
  Vec3 body_rates = Vec3::Zero();  // rad/s

  bool finite() const { return std::isfinite(collective_thrust) && body_rates.allFinite(); }
};

// Per-rotor thrusts from actual motor speeds.
inline Vec4 rotor_thrusts(const QuadState& s, const QuadParams& p) {
  return p.thrust_coeff * s.motor_speeds.array().square().matrix();
}

// Propeller + aerodynamic wrench. `local_airspeed` is the ambient air
// velocity at the vehicle (world frame); drag acts on velocity relative to it.
inline WrenchBreakdown compute_wrench(const QuadState& s, const QuadParams& p,
                                      const Vec3& local_airspeed = Vec3::Zero()) {
  WrenchBreakdown w;
  const Vec4 thrust = rotor_thrusts(s, p);
  w.force_prop = Vec3(0.0, 0.0, thrust.sum());

  const auto rotors = rotor_positions(p);
  for (int i = 0; i < 4; ++i) {
    w.torque_prop += rotors[i].cross(Vec3(0.0, 0.0, thrust[i]));
    w.torque_prop.z() += kRotorSpin[i] * p.torque_coeff * s.motor_speeds[i] * s.motor_speeds[i];
  }

  const Vec3 rel_vel_body = s.orientation.conjugate() * (s.velocity - local_airspeed);
  w.force_aero = -(p.drag_coeff.array() * rel_vel_body.array()).matrix();
  return w;
}

// Allocation from (total thrust, body torques) to per-rotor thrusts, then
// clamped to [0, max rotor thrust] and converted to steady-state speeds.
inline Vec4 allocate_motor_setpoint(double total_thrust, const Vec3& torque,
                                    const QuadParams& p) {
  const double l = p.motor_spacing / (2.0 * std::sqrt(2.0));
  const double kappa = p.torque_coeff / p.thrust_coeff;
  const auto rotors = rotor_positions(p);
  Vec4 omega_ss;
  for (int i = 0; i < 4; ++i) {
    double f = total_thrust / 4.0
             + rotors[i].y() * torque.x() / (4.0 * l * l)
             - rotors[i].x() * torque.y() / (4.0 * l * l)
             + kRotorSpin[i] * torque.z() / (4.0 * kappa);
    f = std::clamp(f, 0.0, p.max_rotor_thrust());
    omega_ss[i] = std::sqrt(f / p.thrust_coeff);
  }
  return omega_ss;
}

// Inner-loop body-rate tracking: proportional rate error with gyroscopic
// feedforward, mapped through the allocation matrix.
inline Vec4 motor_setpoint(const QuadState& s, const Command& cmd, const QuadParams& p) {
  const Vec3 alpha = (p.rate_gain.array() * (cmd.body_rates - s.body_rates).array()).matrix();
  const Vec3 inertia_omega = (p.inertia.array() * s.body_rates.array()).matrix();
  const Vec3 torque = (p.inertia.array() * alpha.array()).matrix() + s.body_rates.cross(inertia_omega);
  return allocate_motor_setpoint(cmd.collective_thrust * p.mass, torque, p);
}

namespace detail {

struct StateDeriv {
  Vec3 dp;
  Eigen::Vector4d dq;  // (w, x, y, z)
  Vec3 dv;
  Vec3 domega;
  Vec4 dmotor;
};

inline StateDeriv dynamics_deriv(const QuadState& s, const Vec4& omega_ss,
                                 const QuadParams& p, const Vec3& airspeed) {
  const WrenchBreakdown w = compute_wrench(s, p, airspeed);
  StateDeriv d;
  d.dp = s.velocity;
  // qdot = 0.5 * q (x) (0, omega)
  const Quat omega_q(0.0, s.body_rates.x(), s.body_rates.y(), s.body_rates.z());
  const Quat qd = s.orientation * omega_q;
  d.dq = 0.5 * Eigen::Vector4d(qd.w(), qd.x(), qd.y(), qd.z());
  d.dv = (s.orientation * (w.force_prop + w.force_aero)) / p.mass + p.gravity;
  const Vec3 inertia_omega = (p.inertia.array() * s.body_rates.array()).matrix();
  d.domega = ((w.torque_prop + w.torque_aero - s.body_rates.cross(inertia_omega)).array()
              / p.inertia.array()).matrix();
  d.dmotor = (omega_ss - s.motor_speeds) / p.motor_tau;
  return d;
}

inline QuadState apply_deriv(const QuadState& s, const StateDeriv& d, double h) {
  QuadState r = s;
  r.position += h * d.dp;
  Eigen::Vector4d q(s.orientation.w(), s.orientation.x(), s.orientation.y(), s.orientation.z());
  q += h * d.dq;
  r.orientation = Quat(q[0], q[1], q[2], q[3]);  // not normalized here
  r.velocity += h * d.dv;
  r.body_rates += h * d.domega;
  r.motor_speeds += h * d.dmotor;
  return r;
}

}  // namespace detail

// One RK4 substep with the motor setpoint held. Quaternion is integrated as a
// 4-vector and renormalized afterwards; `prenorm_error` reports |norm - 1|
// before renormalization.
inline QuadState integrate_substep(const QuadState& s, const Vec4& omega_ss,
                                   const QuadParams& p, const Vec3& airspeed, double h,
                                   double* prenorm_error = nullptr) {
  using detail::apply_deriv;
  using detail::dynamics_deriv;
  const auto k1 = dynamics_deriv(s, omega_ss, p, airspeed);
  const auto k2 = dynamics_deriv(apply_deriv(s, k1, 0.5 * h), omega_ss, p, airspeed);
  const auto k3 = dynamics_deriv(apply_deriv(s, k2, 0.5 * h), omega_ss, p, airspeed);
  const auto k4 = dynamics_deriv(apply_deriv(s, k3, h), omega_ss, p, airspeed);

  QuadState r = s;
  r.position += (h / 6.0) * (k1.dp + 2.0 * k2.dp + 2.0 * k3.dp + k4.dp);
  Eigen::Vector4d q(s.orientation.w(), s.orientation.x(), s.orientation.y(), s.orientation.z());
  q += (h / 6.0) * (k1.dq + 2.0 * k2.dq + 2.0 * k3.dq + k4.dq);
  if (prenorm_error) *prenorm_error = std::abs(q.norm() - 1.0);
  q.normalize();
  r.orientation = Quat(q[0], q[1], q[2], q[3]);
  r.velocity += (h / 6.0) * (k1.dv + 2.0 * k2.dv + 2.0 * k3.dv + k4.dv);
  r.body_rates += (h / 6.0) * (k1.domega + 2.0 * k2.domega + 2.0 * k3.domega + k4.domega);
  r.motor_speeds += (h / 6.0) * (k1.dmotor + 2.0 * k2.dmotor + 2.0 * k3.dmotor + k4.dmotor);
  r.motor_speeds = r.motor_speeds.cwiseMax(0.0).cwiseMin(p.max_motor_speed());
  return r;
}

// Integrate over `dt` with a fixed motor setpoint (no inner controller).
inline QuadState step_with_setpoint(const QuadState& s, const Vec4& omega_ss,
                                    const QuadParams& p, const Vec3& airspeed, double dt,
                                    double substep = 0.002) {
  const int n = std::max(1, static_cast<int>(std::lround(dt / substep)));
  const double h = dt / n;
  QuadState cur = s;
  for (int i = 0; i < n; ++i) cur = integrate_substep(cur, omega_ss, p, airspeed, h);
  return cur;
}

// Full control-tick step: the inner rate controller recomputes the motor
// setpoint at every substep, motors follow their first-order lag.
inline QuadState step(const QuadState& s, const Command& cmd, const QuadParams& p,
                      const Vec3& airspeed, double dt, double substep = 0.002) {
  if (!s.finite()) throw std::invalid_argument("dynamics::step: non-finite state");
  if (!cmd.finite()) throw std::invalid_argument("dynamics::step: non-finite command");
  if (dt <= 0.0) throw std::invalid_argument("dynamics::step: dt must be positive");
  const int n = std::max(1, static_cast<int>(std::lround(dt / substep)));
  const double h = dt / n;
  QuadState cur = s;
  for (int i = 0; i < n; ++i) {
    const Vec4 omega_ss = motor_setpoint(cur, cmd, p);
    cur = integrate_substep(cur, omega_ss, p, airspeed, h);
  }
  return cur;
}

inline QuadState make_hover_state(const Vec3& position, double yaw, const QuadParams& p) {
  QuadState s;
  s.position = position;
  s.orientation = Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ()));
  s.motor_speeds.setConstant(p.hover_motor_speed());
  return s;
}

// Domain-randomization ranges; defaults match the training setup.
struct RandomizationSpec {
  double thrust_coeff_range = 0.10;   // fractional, +/-
  double torque_coeff_range = 0.10;
  double drag_range = 0.10;
  double inertia_range = 0.10;
  double mass_range = 0.05;
  double max_actuation_delay = 0.040;  // s
  // initial-condition ranges
  double position_xy = 0.5;            // m
  double position_z = 0.3;             // m
  double velocity = 0.5;               // m/s per axis
  double attitude = 20.0 * M_PI / 180.0;   // rad per Euler axis
  double body_rate = 25.0 * M_PI / 180.0;  // rad/s per axis

  bool valid() const {
    return thrust_coeff_range >= 0 && torque_coeff_range >= 0 && drag_range >= 0 &&
           inertia_range >= 0 && mass_range >= 0 && max_actuation_delay >= 0 &&
           position_xy >= 0 && position_z >= 0 && velocity >= 0 && attitude >= 0 &&
           body_rate >= 0;
  }
};

// Independent multiplicative factors per parameter. Draw order is fixed
// (mass, thrust, torque, drag xyz, inertia xyz) so seeds stay comparable.
inline QuadParams randomize(const QuadParams& nominal, const RandomizationSpec& spec, Rng& rng) {
  if (!spec.valid()) throw std::invalid_argument("randomize: negative range");
  QuadParams p = nominal;
  p.mass *= rng.uniform(1.0 - spec.mass_range, 1.0 + spec.mass_range);
  p.thrust_coeff *= rng.uniform(1.0 - spec.thrust_coeff_range, 1.0 + spec.thrust_coeff_range);
  p.torque_coeff *= rng.uniform(1.0 - spec.torque_coeff_range, 1.0 + spec.torque_coeff_range);
  for (int i = 0; i < 3; ++i)
    p.drag_coeff[i] *= rng.uniform(1.0 - spec.drag_range, 1.0 + spec.drag_range);
  for (int i = 0; i < 3; ++i)
    p.inertia[i] *= rng.uniform(1.0 - spec.inertia_range, 1.0 + spec.inertia_range);
  return p;
}

// Ring of past commands for actuation-delay emulation (zero-order hold at the
// control rate). An underfull history returns its oldest entry.
class CommandDelayLine {
 public:
  explicit CommandDelayLine(size_t capacity = 8) : capacity_(capacity) {}

  void push(const Command& c) {
    if (history_.size() == capacity_) history_.pop_front();
    history_.push_back(c);
  }

  Command delayed(double delay, double control_dt) const {
    if (history_.empty()) return Command{};
    if (delay < 0.0) throw std::invalid_argument("CommandDelayLine: negative delay");
    const int ticks_back = static_cast<int>(std::ceil(delay / control_dt - 1e-9));
    const int idx = std::max(0, static_cast<int>(history_.size()) - 1 - ticks_back);
    return history_[static_cast<size_t>(idx)];
  }

  void clear() { history_.clear(); }
  size_t size() const { return history_.size(); }

 private:
  size_t capacity_;
  std::deque<Command> history_;
};

}  // namespace quadleague
