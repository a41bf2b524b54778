#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "quadleague/downwash.hpp"
#include "quadleague/dynamics.hpp"
#include "quadleague/rng.hpp"
#include "quadleague/track.hpp"

namespace quadleague {

// ---------------------------------------------------------------------------
// Reward
// ---------------------------------------------------------------------------

struct RewardConfig {
  double lambda1 = 1.0;    // progress
  double lambda2 = 0.005;  // body-rate penalty
  double lambda3 = 0.01;   // ranking
  double lambda4 = 0.01;   // opponent proximity
  double lambda5 = 7.0;    // proximity exponent
  double nonterminal_collision_prob = 0.10;
  double terminal_offset = -1.0;
  double wall_velocity_scale = 0.01;  // k_w, s/m
  double gate_error_scale = 1.0;      // k_g, 1/m^2
};

struct RewardTerms {
  double progress = 0.0;
  double body_rate = 0.0;
  double proximity = 0.0;
  double rank = 0.0;
  double collision_penalty = 0.0;  // terminal or non-terminal contact penalty, <= 0

  double total() const { return progress - body_rate - proximity + rank + collision_penalty; }
};

// Per-agent snapshot feeding the shaped reward.
struct AgentSnapshot {
  double dist_to_gate = 0.0;  // m, to the reward-reference gate center
  Vec3 body_rates = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  int rank = 1;
  double nearest_opponent_dist = std::numeric_limits<double>::infinity();
};

// r = r_prog - r_omega - r_prox + r_rank for non-terminal steps.
inline RewardTerms step_reward_terms(const AgentSnapshot& prev, const AgentSnapshot& cur,
                                     const RewardConfig& cfg, int n_agents,
                                     double collision_radius) {
  RewardTerms t;
  t.progress = cfg.lambda1 * (prev.dist_to_gate - cur.dist_to_gate);
  t.body_rate = cfg.lambda2 * cur.body_rates.norm();
  t.rank = cfg.lambda3 * static_cast<double>(n_agents - (cur.rank - 1)) / n_agents;
  if (cur.nearest_opponent_dist < 2.0 * collision_radius) {
    const double d_norm = (cur.nearest_opponent_dist - collision_radius) / collision_radius;
    t.proximity = (cfg.lambda4 * cur.velocity.norm() + 1.0) * std::exp(-cfg.lambda5 * d_norm);
  }
  return t;
}

inline double step_reward(const AgentSnapshot& prev, const AgentSnapshot& cur,
                          const RewardConfig& cfg, int n_agents, double collision_radius) {
  return step_reward_terms(prev, cur, cfg, n_agents, collision_radius).total();
}

enum class TerminationCause { none, finished, gate, wall, opponent, timeout };

inline const char* cause_name(TerminationCause c) {
  switch (c) {
    case TerminationCause::none: return "none";
    case TerminationCause::finished: return "finished";
    case TerminationCause::gate: return "gate";
    case TerminationCause::wall: return "wall";
    case TerminationCause::opponent: return "opponent";
    case TerminationCause::timeout: return "timeout";
  }
  return "?";
}

// Terminal penalties: impact-velocity scaled for wall/agent contact, squared
// traversal error for gate hits, constant -1 offset in every collision case.
inline double terminal_reward(TerminationCause cause, double speed, double gate_error,
                              const RewardConfig& cfg) {
  switch (cause) {
    case TerminationCause::wall:
      return cfg.terminal_offset - cfg.wall_velocity_scale * speed;
    case TerminationCause::opponent:
      return cfg.terminal_offset - cfg.lambda4 * speed;
    case TerminationCause::gate:
      return cfg.terminal_offset - cfg.gate_error_scale * gate_error * gate_error;
    default:
      return 0.0;
  }
}

// ---------------------------------------------------------------------------
// Observations and actions
// ---------------------------------------------------------------------------

struct EgoObservation {
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Matrix<double, 12, 1> gate_corners = Eigen::Matrix<double, 12, 1>::Zero();
  Eigen::Matrix<double, 12, 1> gate_next = Eigen::Matrix<double, 12, 1>::Zero();
};
inline constexpr int kEgoObservationDim = 39;
inline constexpr int kOpponentRecordDim = 6;

struct OpponentObservation {
  Vec3 p_rel = Vec3::Zero();
  Vec3 v_rel = Vec3::Zero();
  bool valid = true;
};

struct ObsScales {
  double position = 0.1;
  double velocity = 0.1;
};

inline Eigen::VectorXd encode_ego(const EgoObservation& o, const ObsScales& s) {
  Eigen::VectorXd v(kEgoObservationDim);
  v.segment<3>(0) = s.position * o.position;
  v.segment<3>(3) = s.velocity * o.velocity;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) v[6 + 3 * r + c] = o.rotation(r, c);
  v.segment<12>(15) = s.position * o.gate_corners;
  v.segment<12>(27) = s.position * o.gate_next;
  return v;
}

inline Eigen::VectorXd encode_opponent(const OpponentObservation& o, const ObsScales& s) {
  Eigen::VectorXd v(kOpponentRecordDim);
  v.segment<3>(0) = s.position * o.p_rel;
  v.segment<3>(3) = s.velocity * o.v_rel;
  return v;
}

// Affine map from policy outputs in [-1,1]^4 to physical commands.
struct ActionBounds {
  double thrust_min = 0.0;                 // m/s^2, mass-normalized
  double thrust_max = 14.0 / 0.220;
  double omega_max = 6.0;                  // rad/s per axis
};

inline Command map_action(const Eigen::Vector4d& normalized, const ActionBounds& b) {
  Command c;
  const double u = std::clamp(normalized[0], -1.0, 1.0);
  c.collective_thrust = b.thrust_min + 0.5 * (u + 1.0) * (b.thrust_max - b.thrust_min);
  for (int i = 0; i < 3; ++i) c.body_rates[i] = std::clamp(normalized[i + 1], -1.0, 1.0) * b.omega_max;
  return c;
}

// ---------------------------------------------------------------------------
// Curriculum
// ---------------------------------------------------------------------------

struct CurriculumConfig {
  double opponent_enable_fraction = 0.10;  // opponents hidden before this training fraction
  double gate_shrink_fraction = 0.30;      // gate multiplier 2 -> 1 over this fraction
  double start_prob_initial = 0.05;
  double start_prob_final = 0.95;
  size_t buffer_capacity = 10000;
  int buffer_sample_interval = 50;  // steps between admission attempts
};

// Mid-track states for curriculum initialization.
struct EnvSnapshot {
  struct AgentSnap {
    QuadState state;
    int gates_passed = 0;
  };
  std::vector<AgentSnap> agents;
};

class InitStateBuffer {
 public:
  explicit InitStateBuffer(size_t capacity = 10000) : capacity_(capacity) {}

  bool empty() const { return entries_.empty(); }
  size_t size() const { return entries_.size(); }

  void add(const EnvSnapshot& snap, Rng& rng) {
    if (entries_.size() < capacity_) {
      entries_.push_back(snap);
    } else if (capacity_ > 0) {
      entries_[rng.uniform_int(capacity_)] = snap;  // uniform eviction
    }
  }

  const EnvSnapshot& sample(Rng& rng) const {
    if (entries_.empty()) throw std::runtime_error("InitStateBuffer: empty");
    return entries_[rng.uniform_int(entries_.size())];
  }

 private:
  size_t capacity_;
  std::vector<EnvSnapshot> entries_;
};

struct CurriculumState {
  CurriculumConfig cfg;
  double training_progress = 0.0;  // in [0, 1]
  InitStateBuffer buffer{cfg.buffer_capacity};

  bool opponents_enabled() const { return training_progress >= cfg.opponent_enable_fraction; }
  double gate_multiplier() const {
    if (cfg.gate_shrink_fraction <= 0.0) return 1.0;
    const double f = std::clamp(training_progress / cfg.gate_shrink_fraction, 0.0, 1.0);
    return 2.0 - f;
  }
  double race_start_prob() const {
    return cfg.start_prob_initial +
           (cfg.start_prob_final - cfg.start_prob_initial) * std::clamp(training_progress, 0.0, 1.0);
  }
};

// ---------------------------------------------------------------------------
// Race environment
// ---------------------------------------------------------------------------

enum class TaskType { race, circle };

// Fig. S3-style concentric-circle tracking task. Agent 0 is the lower
// vehicle; agents above it stack by `level_separation` and fly blind.
struct CircleTaskConfig {
  Vec3 center = Vec3(2.0, 0.5, 0.0);  // z ignored, per-level altitudes below
  double radius = 3.0;
  double base_altitude = 1.5;
  double level_separation = 0.5;
  double speed_ref = 2.5;            // m/s
  double carrot_arc = 1.5;           // m ahead along the circle for the obs target
  double progress_weight = 0.5;
  double speed_weight = 0.25;
  double altitude_weight = 0.5;
  double radial_weight = 0.25;
  double start_delay = 0.0;          // s: lower agent starts this far behind the upper
};

struct EnvConfig {
  int n_agents = 4;
  double control_dt = 0.02;
  double substep = 0.002;
  double episode_length = 30.0;  // s
  QuadParams nominal;
  RewardConfig reward;
  RandomizationSpec randomization;
  WakeConfig wake;
  bool downwash_enabled = true;
  ActionBounds action;
  ObsScales obs_scales;
  TaskType task = TaskType::race;
  CircleTaskConfig circle;

  int episode_steps() const { return static_cast<int>(std::lround(episode_length / control_dt)); }
};

struct AgentStepResult {
  RewardTerms reward;
  bool terminated = false;  // true terminal state (collision or finish)
  bool truncated = false;   // episode cap
  TerminationCause cause = TerminationCause::none;
};

class RaceEnv {
 public:
  RaceEnv(EnvConfig cfg, Track track, uint64_t seed)
      : cfg_(cfg), track_(std::move(track)), rng_(seed) {
    if (cfg_.n_agents < 1) throw std::invalid_argument("RaceEnv: need at least one agent");
    if (track_.gates.empty()) throw std::invalid_argument("RaceEnv: track has no gates");
    agents_.resize(static_cast<size_t>(cfg_.n_agents));
    for (int a = 0; a < cfg_.n_agents; ++a) agents_[a].rng = rng_.child(0x1000 + a);
    wake_ = WakeField(cfg_.wake);
    reset_default();
  }

  int num_agents() const { return cfg_.n_agents; }
  const EnvConfig& config() const { return cfg_; }
  const Track& track() const { return track_; }
  Rng& rng() { return rng_; }
  double time() const { return step_count_ * cfg_.control_dt; }
  int step_count() const { return step_count_; }
  const WakeField& wake() const { return wake_; }

  bool agent_alive(int a) const { return agents_[a].alive; }
  bool all_done() const {
    for (const auto& ag : agents_)
      if (ag.alive) return false;
    return true;
  }
  const QuadState& agent_state(int a) const { return agents_[a].state; }
  const QuadParams& agent_params(int a) const { return agents_[a].params; }
  TerminationCause cause(int a) const { return agents_[a].cause; }
  int gates_passed(int a) const { return agents_[a].gates_passed; }
  int gates_passed_this_episode(int a) const {
    return agents_[a].gates_passed - agents_[a].gates_at_start;
  }
  double finish_time(int a) const { return agents_[a].finish_time; }
  const std::vector<double>& lap_marks(int a) const { return agents_[a].lap_marks; }

  ProgressState progress(int a) const {
    ProgressState p;
    p.gates_passed = agents_[a].gates_passed;
    p.dist_to_gate = dist_to_target(a);
    p.rank = agents_[a].rank;
    return p;
  }

  std::vector<int> current_rankings() const {
    std::vector<ProgressState> prog;
    prog.reserve(agents_.size());
    for (int a = 0; a < cfg_.n_agents; ++a) prog.push_back(progress(a));
    return compute_rankings(prog);
  }

  // Opponents are mutually visible + collidable only once the curriculum
  // enables interactions.
  void set_interactions_enabled(bool on) { interactions_enabled_ = on; }
  bool interactions_enabled() const { return interactions_enabled_; }
  // Per-agent observation blinding (circle task's upper vehicle).
  void set_blind(int agent, bool blind) { agents_[agent].blind = blind; }

  void attach_trajectory_log(std::ostream* os, int env_id = 0) {
    traj_log_ = os;
    env_id_ = env_id;
  }

  // Fresh race start on the grid with randomized slots and initial conditions.
  void reset_race_start() {
    std::vector<int> slot(static_cast<size_t>(cfg_.n_agents));
    for (size_t i = 0; i < slot.size(); ++i) slot[i] = static_cast<int>(i);
    for (size_t i = slot.size(); i > 1; --i) std::swap(slot[i - 1], slot[rng_.uniform_int(i)]);
    reset_race_start_slots(slot, 0.0);
  }

  // Explicit slot assignment plus an arc offset of the whole grid (meters
  // along the equidistant arc; preserves distance to gate 1).
  void reset_race_start_slots(const std::vector<int>& slots, double arc_offset_m) {
    prepare_episode();
    if (cfg_.task == TaskType::circle) {
      reset_circle();
      return;
    }
    if (static_cast<int>(slots.size()) != cfg_.n_agents)
      throw std::invalid_argument("reset_race_start_slots: one slot per agent required");
    auto poses = start_grid(cfg_.n_agents, track_.start_spacing, track_.start_reference,
                            track_.gates[0], track_.arena);
    if (arc_offset_m != 0.0) {
      const Vec3 pivot = track_.gates[0].center;
      for (auto& pose : poses) {
        const double dx = pose.position.x() - pivot.x();
        const double dy = pose.position.y() - pivot.y();
        const double radius = std::hypot(dx, dy);
        const double theta = std::atan2(dy, dx) + arc_offset_m / radius;
        pose.position.x() = pivot.x() + radius * std::cos(theta);
        pose.position.y() = pivot.y() + radius * std::sin(theta);
        pose.yaw = std::atan2(pivot.y() - pose.position.y(), pivot.x() - pose.position.x());
      }
    }
    for (int a = 0; a < cfg_.n_agents; ++a) {
      auto& ag = agents_[a];
      const auto& pose = poses[static_cast<size_t>(slots[static_cast<size_t>(a)])];
      ag.state = make_hover_state(pose.position, pose.yaw, ag.params);
      perturb_initial_state(ag.state, ag.rng);
      ag.state.motor_speeds.setConstant(ag.params.hover_motor_speed());
    }
  }

  void reset_from_snapshot(const EnvSnapshot& snap) {
    prepare_episode();
    for (int a = 0; a < cfg_.n_agents; ++a) {
      const auto& src = snap.agents[static_cast<size_t>(a) % snap.agents.size()];
      auto& ag = agents_[a];
      ag.state = src.state;
      ag.gates_passed = src.gates_passed;
      ag.gates_at_start = src.gates_passed;
    }
  }

  // Curriculum-driven reset: race start with probability p, otherwise a state
  // drawn from the initial-state buffer (when available).
  void reset(CurriculumState& curriculum) {
    set_interactions_enabled(curriculum.opponents_enabled());
    track_.set_size_multiplier(curriculum.gate_multiplier());
    const bool race_start =
        curriculum.buffer.empty() || rng_.uniform() < curriculum.race_start_prob();
    if (race_start) {
      reset_race_start();
    } else {
      reset_from_snapshot(curriculum.buffer.sample(rng_));
    }
  }

  EnvSnapshot snapshot() const {
    EnvSnapshot s;
    for (const auto& ag : agents_) {
      if (!ag.alive) continue;
      s.agents.push_back({ag.state, ag.gates_passed});
    }
    return s;
  }

  EgoObservation ego_observation(int a) const {
    const auto& ag = agents_[a];
    EgoObservation o;
    o.position = ag.state.position;
    o.velocity = ag.state.velocity;
    o.rotation = ag.state.orientation.toRotationMatrix();
    const auto [g0, g1] = observation_gates(a);
    const auto c0 = g0.corners();
    const auto c1 = g1.corners();
    for (int i = 0; i < 4; ++i) {
      o.gate_corners.segment<3>(3 * i) = c0[i] - ag.state.position;
      o.gate_next.segment<3>(3 * i) = c1[i] - c0[i];
    }
    return o;
  }

  std::vector<OpponentObservation> opponent_observations(int a) const {
    std::vector<OpponentObservation> out;
    if (!interactions_enabled_ || agents_[a].blind) return out;
    for (int b = 0; b < cfg_.n_agents; ++b) {
      if (b == a || !agents_[b].alive) continue;
      OpponentObservation rec;
      rec.p_rel = agents_[b].state.position - agents_[a].state.position;
      rec.v_rel = agents_[b].state.velocity - agents_[a].state.velocity;
      out.push_back(rec);
    }
    return out;
  }

  // Advances every living agent one control tick: delayed actuation, RK4
  // integration against the sampled wake, wake advance + emission, event
  // detection, reward assembly.
  std::vector<AgentStepResult> step(const std::vector<Command>& actions) {
    if (static_cast<int>(actions.size()) != cfg_.n_agents)
      throw std::invalid_argument("RaceEnv::step: one action per agent required");
    std::vector<AgentStepResult> results(static_cast<size_t>(cfg_.n_agents));

    // pre-step snapshots
    std::vector<AgentSnapshot> prev(static_cast<size_t>(cfg_.n_agents));
    std::vector<int> ref_gate(static_cast<size_t>(cfg_.n_agents));
    std::vector<Vec3> prev_pos(static_cast<size_t>(cfg_.n_agents));
    for (int a = 0; a < cfg_.n_agents; ++a) {
      ref_gate[a] = target_gate(a);
      prev_pos[a] = agents_[a].state.position;
      prev[a].dist_to_gate = reward_distance(a, ref_gate[a]);
    }

    // integrate
    for (int a = 0; a < cfg_.n_agents; ++a) {
      auto& ag = agents_[a];
      if (!ag.alive) continue;
      if (!actions[a].finite()) throw std::invalid_argument("RaceEnv::step: non-finite action");
      ag.delay_line.push(actions[a]);
      const Command cmd = ag.delay_line.delayed(ag.actuation_delay, cfg_.control_dt);
      const Vec3 airspeed = wake_coupling_active() ? wake_.sample_airspeed(ag.state.position, a)
                                                   : Vec3::Zero();
      ag.state = quadleague::step(ag.state, cmd, ag.params, airspeed, cfg_.control_dt, cfg_.substep);
      ag.last_command = cmd;
    }

    if (wake_coupling_active()) {
      wake_.advance(cfg_.control_dt);
      for (int a = 0; a < cfg_.n_agents; ++a) {
        auto& ag = agents_[a];
        if (!ag.alive) continue;
        wake_.emit(ag.state, a, rotor_thrusts(ag.state, ag.params), ag.params, rng_);
      }
    }

    ++step_count_;
    const bool timeout = step_count_ >= cfg_.episode_steps();

    // events
    std::vector<TerminationCause> event(static_cast<size_t>(cfg_.n_agents), TerminationCause::none);
    std::vector<double> gate_error(static_cast<size_t>(cfg_.n_agents), 0.0);
    std::vector<bool> passed(static_cast<size_t>(cfg_.n_agents), false);
    for (int a = 0; a < cfg_.n_agents; ++a) {
      auto& ag = agents_[a];
      if (!ag.alive) continue;
      if (cfg_.task == TaskType::race) {
        const auto crossing =
            check_gate_transition(prev_pos[a], ag.state.position, track_.gates[ref_gate[a]]);
        if (crossing.event == GateEvent::passed) {
          passed[a] = true;
          ++ag.gates_passed;
          if (ref_gate[a] == 0) ag.lap_marks.push_back(time());
          if (ag.gates_passed - ag.gates_at_start >= remaining_targets_at_start(a)) {
            event[a] = TerminationCause::finished;
          }
        } else if (crossing.event == GateEvent::hit) {
          event[a] = TerminationCause::gate;
          gate_error[a] = crossing.gate_error;
        }
        // frame hits on any other gate
        if (event[a] == TerminationCause::none) {
          for (int g = 0; g < static_cast<int>(track_.gates.size()); ++g) {
            if (g == ref_gate[a]) continue;
            const auto c = check_gate_transition(prev_pos[a], ag.state.position, track_.gates[g]);
            if (c.event == GateEvent::hit) {
              event[a] = TerminationCause::gate;
              gate_error[a] = c.gate_error;
              break;
            }
          }
        }
      }
      if (event[a] == TerminationCause::none && !track_.arena.contains(ag.state.position))
        event[a] = TerminationCause::wall;
    }

    // inter-agent contacts; 10% are non-terminal
    std::vector<bool> nonterminal_contact(static_cast<size_t>(cfg_.n_agents), false);
    if (interactions_enabled_) {
      for (int i = 0; i < cfg_.n_agents; ++i) {
        for (int j = i + 1; j < cfg_.n_agents; ++j) {
          if (!agents_[i].alive || !agents_[j].alive) continue;
          if (!check_agent_collision(agents_[i].state.position, agents_[j].state.position,
                                     track_.collision_radius))
            continue;
          const bool survivable = rng_.uniform() < cfg_.reward.nonterminal_collision_prob;
          for (int a : {i, j}) {
            if (survivable) {
              nonterminal_contact[a] = true;
            } else if (event[a] == TerminationCause::none) {
              event[a] = TerminationCause::opponent;
            }
          }
        }
      }
    }

    // rewards + termination bookkeeping
    const auto ranks = current_rankings();
    for (int a = 0; a < cfg_.n_agents; ++a) {
      auto& ag = agents_[a];
      if (!ag.alive) continue;
      ag.rank = ranks[a];

      AgentSnapshot cur;
      cur.dist_to_gate = reward_distance(a, ref_gate[a]);
      cur.body_rates = ag.state.body_rates;
      cur.velocity = ag.state.velocity;
      cur.rank = ranks[a];
      cur.nearest_opponent_dist = nearest_opponent_distance(a);

      auto& res = results[a];
      if (cfg_.task == TaskType::race) {
        res.reward = step_reward_terms(prev[a], cur, cfg_.reward, cfg_.n_agents,
                                       track_.collision_radius);
      } else {
        res.reward = circle_reward_terms(a, prev_pos[a]);
      }

      const double speed = ag.state.velocity.norm();
      if (nonterminal_contact[a] && event[a] == TerminationCause::none) {
        res.reward.collision_penalty +=
            terminal_reward(TerminationCause::opponent, speed, 0.0, cfg_.reward);
      }
      if (event[a] != TerminationCause::none) {
        res.reward.collision_penalty +=
            terminal_reward(event[a], speed, gate_error[a], cfg_.reward);
        res.terminated = true;
        res.cause = event[a];
        ag.alive = false;
        ag.cause = event[a];
        if (event[a] == TerminationCause::finished) ag.finish_time = time();
      } else if (timeout) {
        res.truncated = true;
        res.cause = TerminationCause::timeout;
        ag.alive = false;
        ag.cause = TerminationCause::timeout;
      }
      log_step(a, res, passed[a]);
    }
    return results;
  }

  int target_gate(int a) const {
    if (cfg_.task == TaskType::circle) return 0;
    return agents_[a].gates_passed % static_cast<int>(track_.gates.size());
  }

  double circle_angle(int a) const {
    const Vec3 rel = agents_[a].state.position - cfg_.circle.center;
    return std::atan2(rel.y(), rel.x());
  }

 private:
  struct AgentRuntime {
    QuadState state;
    QuadParams params;
    CommandDelayLine delay_line{8};
    Command last_command;
    double actuation_delay = 0.0;
    int gates_passed = 0;
    int gates_at_start = 0;
    int rank = 1;
    bool alive = true;
    bool blind = false;
    TerminationCause cause = TerminationCause::none;
    double finish_time = -1.0;
    std::vector<double> lap_marks;  // gate-1 passage times
    double circle_unwrapped = 0.0;  // circle task: accumulated angle
    Rng rng;
  };

  bool wake_coupling_active() const {
    return cfg_.downwash_enabled && interactions_enabled_ && cfg_.n_agents > 1;
  }

  void reset_default() {
    prepare_episode();
    if (cfg_.task == TaskType::circle)
      reset_circle();
    else
      reset_race_start();
  }

  void prepare_episode() {
    step_count_ = 0;
    wake_.clear();
    for (auto& ag : agents_) {
      ag.params = randomize(cfg_.nominal, cfg_.randomization, ag.rng);
      ag.actuation_delay = ag.rng.uniform(0.0, cfg_.randomization.max_actuation_delay);
      ag.delay_line.clear();
      ag.gates_passed = 0;
      ag.gates_at_start = 0;
      ag.rank = 1;
      ag.alive = true;
      ag.cause = TerminationCause::none;
      ag.finish_time = -1.0;
      ag.lap_marks.clear();
      ag.circle_unwrapped = 0.0;
      ag.last_command = Command{};
    }
  }

  void reset_circle() {
    const auto& c = cfg_.circle;
    for (int a = 0; a < cfg_.n_agents; ++a) {
      auto& ag = agents_[a];
      const double z = c.base_altitude + a * c.level_separation;
      const double omega_ref = c.speed_ref / c.radius;
      // lower agent starts start_delay seconds of arc behind the stack
      const double theta = (a == 0) ? -omega_ref * c.start_delay : 0.0;
      const Vec3 pos = Vec3(c.center.x() + c.radius * std::cos(theta),
                            c.center.y() + c.radius * std::sin(theta), z);
      const double yaw = theta + M_PI / 2.0;  // tangent, counterclockwise
      ag.state = make_hover_state(pos, yaw, ag.params);
      perturb_initial_state(ag.state, ag.rng);
      ag.state.motor_speeds.setConstant(ag.params.hover_motor_speed());
      ag.circle_unwrapped = circle_angle(a);
      ag.blind = (a > 0);  // upper vehicles fly blind
    }
  }

  void perturb_initial_state(QuadState& s, Rng& rng) const {
    const auto& r = cfg_.randomization;
    s.position.x() += rng.uniform(-r.position_xy, r.position_xy);
    s.position.y() += rng.uniform(-r.position_xy, r.position_xy);
    s.position.z() += rng.uniform(-r.position_z, r.position_z);
    for (int i = 0; i < 3; ++i) s.velocity[i] += rng.uniform(-r.velocity, r.velocity);
    const double roll = rng.uniform(-r.attitude, r.attitude);
    const double pitch = rng.uniform(-r.attitude, r.attitude);
    const double yaw = rng.uniform(-r.attitude, r.attitude);
    s.orientation = s.orientation * Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ())) *
                    Quat(Eigen::AngleAxisd(pitch, Vec3::UnitY())) *
                    Quat(Eigen::AngleAxisd(roll, Vec3::UnitX()));
    s.orientation.normalize();
    for (int i = 0; i < 3; ++i) s.body_rates[i] += rng.uniform(-r.body_rate, r.body_rate);
  }

  int remaining_targets_at_start(int a) const {
    return track_.total_gate_targets() - agents_[a].gates_at_start;
  }

  double dist_to_target(int a) const {
    if (cfg_.task == TaskType::circle)
      return (carrot_point(a) - agents_[a].state.position).norm();
    return (track_.gates[target_gate(a)].center - agents_[a].state.position).norm();
  }

  double reward_distance(int a, int gate_idx) const {
    if (cfg_.task == TaskType::circle)
      return (carrot_point(a) - agents_[a].state.position).norm();
    return (track_.gates[gate_idx].center - agents_[a].state.position).norm();
  }

  double nearest_opponent_distance(int a) const {
    if (!interactions_enabled_) return std::numeric_limits<double>::infinity();
    double best = std::numeric_limits<double>::infinity();
    for (int b = 0; b < cfg_.n_agents; ++b) {
      if (b == a || !agents_[b].alive) continue;
      best = std::min(best, (agents_[b].state.position - agents_[a].state.position).norm());
    }
    return best;
  }

  // Observation target gates. Race: next gate and the one after. Circle: a
  // virtual gate at the carrot point, tangent-oriented, at the agent's level.
  std::pair<Gate, Gate> observation_gates(int a) const {
    if (cfg_.task == TaskType::race) {
      const int g0 = target_gate(a);
      const int g1 = (g0 + 1) % static_cast<int>(track_.gates.size());
      return {track_.gates[g0], track_.gates[g1]};
    }
    return {virtual_circle_gate(a, cfg_.circle.carrot_arc),
            virtual_circle_gate(a, 2.0 * cfg_.circle.carrot_arc)};
  }

  Vec3 carrot_point(int a) const { return virtual_circle_gate(a, cfg_.circle.carrot_arc).center; }

  Gate virtual_circle_gate(int a, double arc_ahead) const {
    const auto& c = cfg_.circle;
    const double theta = circle_angle(a) + arc_ahead / c.radius;
    Gate g;
    g.center = Vec3(c.center.x() + c.radius * std::cos(theta),
                    c.center.y() + c.radius * std::sin(theta),
                    c.base_altitude + a * c.level_separation);
    g.yaw = theta + M_PI / 2.0;
    return g;
  }

  RewardTerms circle_reward_terms(int a, const Vec3& prev_pos) {
    const auto& c = cfg_.circle;
    auto& ag = agents_[a];
    RewardTerms t;
    // unwrap angular progress
    const double prev_theta = std::atan2(prev_pos.y() - c.center.y(), prev_pos.x() - c.center.x());
    double dtheta = circle_angle(a) - prev_theta;
    while (dtheta > M_PI) dtheta -= 2.0 * M_PI;
    while (dtheta < -M_PI) dtheta += 2.0 * M_PI;
    ag.circle_unwrapped += dtheta;
    const double z_ref = c.base_altitude + a * c.level_separation;
    const double rho = std::hypot(ag.state.position.x() - c.center.x(),
                                  ag.state.position.y() - c.center.y());
    t.progress = c.progress_weight * c.radius * dtheta
               - c.speed_weight * std::abs(ag.state.velocity.norm() - c.speed_ref)
               - c.altitude_weight * std::abs(ag.state.position.z() - z_ref)
               - c.radial_weight * std::abs(rho - c.radius);
    t.body_rate = cfg_.reward.lambda2 * ag.state.body_rates.norm();
    return t;
  }

  void log_step(int a, const AgentStepResult& res, bool passed_gate) {
    if (!traj_log_) return;
    const auto& ag = agents_[a];
    const auto& s = ag.state;
    std::ostream& os = *traj_log_;
    os << env_id_ << '\t' << time() << '\t' << a << '\t' << s.position.x() << '\t'
       << s.position.y() << '\t' << s.position.z() << '\t' << s.orientation.w() << '\t'
       << s.orientation.x() << '\t' << s.orientation.y() << '\t' << s.orientation.z() << '\t'
       << s.velocity.x() << '\t' << s.velocity.y() << '\t' << s.velocity.z() << '\t'
       << s.body_rates.x() << '\t' << s.body_rates.y() << '\t' << s.body_rates.z() << '\t'
       << ag.last_command.collective_thrust << '\t' << ag.last_command.body_rates.x() << '\t'
       << ag.last_command.body_rates.y() << '\t' << ag.last_command.body_rates.z() << '\t'
       << res.reward.progress << '\t' << res.reward.body_rate << '\t' << res.reward.proximity
       << '\t' << res.reward.rank << '\t' << res.reward.collision_penalty << '\t'
       << cause_name(res.cause) << '\t' << (passed_gate ? 1 : 0) << '\n';
  }

  EnvConfig cfg_;
  Track track_;
  Rng rng_;
  std::vector<AgentRuntime> agents_;
  WakeField wake_{WakeConfig{}};
  int step_count_ = 0;
  bool interactions_enabled_ = true;
  std::ostream* traj_log_ = nullptr;
  int env_id_ = 0;
};

inline const char* kTrajectoryLogHeader =
    "env\tt\tagent\tpx\tpy\tpz\tqw\tqx\tqy\tqz\tvx\tvy\tvz\twx\twy\twz\t"
    "cmd_c\tcmd_wx\tcmd_wy\tcmd_wz\tr_prog\tr_omega\tr_prox\tr_rank\tr_penalty\tevent\tpassed";

// Data-parallel set of environments advancing in lockstep; an exhausted
// environment auto-resets on the next call.
class VecRace {
 public:
  VecRace(const EnvConfig& cfg, const Track& track, uint64_t seed, int n_envs) {
    envs_.reserve(static_cast<size_t>(n_envs));
    Rng root(seed);
    for (int e = 0; e < n_envs; ++e) envs_.emplace_back(cfg, track, root.child(e).state());
  }

  int size() const { return static_cast<int>(envs_.size()); }
  RaceEnv& env(int i) { return envs_[static_cast<size_t>(i)]; }
  const RaceEnv& env(int i) const { return envs_[static_cast<size_t>(i)]; }

  void reset_all(CurriculumState& curriculum) {
    for (auto& e : envs_) e.reset(curriculum);
  }

  // One action per agent per environment.
  std::vector<std::vector<AgentStepResult>> step_all(
      const std::vector<std::vector<Command>>& actions, CurriculumState* curriculum = nullptr) {
    if (actions.size() != envs_.size())
      throw std::invalid_argument("VecRace::step_all: one action set per environment required");
    std::vector<std::vector<AgentStepResult>> out(envs_.size());
    for (size_t e = 0; e < envs_.size(); ++e) {
      if (envs_[e].all_done() && curriculum) envs_[e].reset(*curriculum);
      out[e] = envs_[e].step(actions[e]);
    }
    return out;
  }

 private:
  std::vector<RaceEnv> envs_;
};

}  // namespace quadleague
