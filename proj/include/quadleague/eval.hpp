#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "quadleague/env.hpp"
#include "quadleague/policy.hpp"
#include "quadleague/rng.hpp"
#include "quadleague/training.hpp"

namespace quadleague {

// ---------------------------------------------------------------------------
// Race execution
// ---------------------------------------------------------------------------

struct RaceResult {
  int agent = 0;
  int gates_passed = 0;
  std::vector<double> lap_times;  // completed laps only
  double finish_time = -1.0;      // <0 when the race was not finished
  TerminationCause cause = TerminationCause::none;
  int final_rank = 0;

  double completion(int total_targets) const {
    return total_targets > 0 ? static_cast<double>(gates_passed) / total_targets : 0.0;
  }
};

// Lap boundaries are gate-1 passages; the first lap is timed from the start
// signal and the final lap of a finished race ends at the last gate passage.
inline std::vector<double> lap_times_from_marks(const std::vector<double>& gate1_marks,
                                                double finish_time) {
  std::vector<double> laps;
  if (gate1_marks.size() >= 2) laps.push_back(gate1_marks[1]);
  for (size_t i = 2; i < gate1_marks.size(); ++i)
    laps.push_back(gate1_marks[i] - gate1_marks[i - 1]);
  if (finish_time >= 0.0 && !gate1_marks.empty())
    laps.push_back(finish_time - gate1_marks.back());
  return laps;
}

// Target gate for a value-sweep probe point: positions beyond the next gate
// plane treat that gate as passed.
inline int value_sweep_target_gate(const Track& track, int next_gate, const Vec3& p) {
  const int n_gates = static_cast<int>(track.gates.size());
  int gate_idx = next_gate;
  for (int hop = 0; hop < n_gates; ++hop) {
    const Gate& g = track.gates[static_cast<size_t>(gate_idx)];
    if (g.normal().dot(p - g.center) <= 0.0) break;
    gate_idx = (gate_idx + 1) % n_gates;
  }
  return gate_idx;
}

// Per-agent controller: observation to physical command, once per tick.
using AgentController = std::function<Command(RaceEnv&, int agent)>;

// Stateful wrapper running a policy network for one agent.
template <class S>
class PolicyController {
 public:
  PolicyController(PolicyHandle<S> policy, const ObsScales& scales, const ActionBounds& bounds,
                   bool deterministic, uint64_t seed)
      : policy_(std::move(policy)),
        scales_(scales),
        bounds_(bounds),
        deterministic_(deterministic),
        rng_(seed) {
    const int H = policy_->config().lstm_hidden;
    h_ = nn::Mat<S>::Zero(1, H);
    c_ = nn::Mat<S>::Zero(1, H);
  }

  void reset() {
    h_.setZero();
    c_.setZero();
  }

  Command operator()(RaceEnv& env, int agent) {
    nn::Mat<S> ego(1, policy_->config().ego_dim);
    ego.row(0) = encode_ego(env.ego_observation(agent), scales_).template cast<S>().transpose();
    std::vector<Eigen::VectorXd> records;
    for (const auto& rec : env.opponent_observations(agent))
      records.push_back(encode_opponent(rec, scales_));
    auto rb = RecordBatch<S>::build({records}, policy_->config().record_dim);
    auto out = policy_->infer(ego, rb, h_, c_);
    auto dist = policy_->distribution(out.mean, 0);
    const auto sample = sample_action(dist, rng_, deterministic_);
    return map_action(sample.action, bounds_);
  }

  // critic value of the current observation (value sweeps)
  double value(const Eigen::VectorXd& ego_obs, const std::vector<Eigen::VectorXd>& records) {
    nn::Mat<S> ego(1, policy_->config().ego_dim);
    ego.row(0) = ego_obs.template cast<S>().transpose();
    auto rb = RecordBatch<S>::build({records}, policy_->config().record_dim);
    nn::Mat<S> h = h_, c = c_;
    auto out = policy_->infer(ego, rb, h, c);
    return static_cast<double>(out.value(0, 0));
  }

 private:
  PolicyHandle<S> policy_;
  ObsScales scales_;
  ActionBounds bounds_;
  bool deterministic_;
  Rng rng_;
  nn::Mat<S> h_, c_;
};

// Runs one already-reset environment to completion and reports per-agent
// results. Lap boundaries are gate-1 passages; the first lap is timed from
// the start signal and the final lap of a finished race ends at the last
// gate passage.
inline std::vector<RaceResult> run_race(RaceEnv& env, std::vector<AgentController>& controllers) {
  if (static_cast<int>(controllers.size()) != env.num_agents())
    throw std::invalid_argument("run_race: one controller per agent required");
  while (!env.all_done()) {
    std::vector<Command> actions(static_cast<size_t>(env.num_agents()));
    for (int a = 0; a < env.num_agents(); ++a)
      if (env.agent_alive(a)) actions[static_cast<size_t>(a)] = controllers[static_cast<size_t>(a)](env, a);
    env.step(actions);
  }
  const auto ranks = env.current_rankings();
  std::vector<RaceResult> results;
  for (int a = 0; a < env.num_agents(); ++a) {
    RaceResult r;
    r.agent = a;
    r.gates_passed = env.gates_passed(a);
    r.cause = env.cause(a);
    r.final_rank = ranks[static_cast<size_t>(a)];
    r.finish_time = env.finish_time(a);
    r.lap_times = lap_times_from_marks(env.lap_marks(a), r.finish_time);
    results.push_back(r);
  }
  return results;
}

// ---------------------------------------------------------------------------
// Self-evaluation (identical policies, 1..8 agents, permuted start slots)
// ---------------------------------------------------------------------------

struct EvalProtocol {
  int races = 64;
  double slot_jitter = 0.1;  // m of arc offset applied to the whole grid
  bool deterministic_actions = true;
  uint64_t seed = 1;
};

struct CrashBreakdown {
  double finished = 0.0, gate = 0.0, wall = 0.0, opponent = 0.0, timeout = 0.0;

  double total() const { return finished + gate + wall + opponent + timeout; }
  void count(TerminationCause c) {
    switch (c) {
      case TerminationCause::finished: finished += 1.0; break;
      case TerminationCause::gate: gate += 1.0; break;
      case TerminationCause::wall: wall += 1.0; break;
      case TerminationCause::opponent: opponent += 1.0; break;
      case TerminationCause::timeout: timeout += 1.0; break;
      default: break;
    }
  }
  void normalize() {
    const double t = total();
    if (t <= 0.0) return;
    finished /= t;
    gate /= t;
    wall /= t;
    opponent /= t;
    timeout /= t;
  }
};

struct SelfEvalResult {
  int n_agents = 0;
  std::vector<std::vector<RaceResult>> races;  // [race][agent]
  double mean_completion = 0.0;
  double std_completion = 0.0;
  CrashBreakdown crash_fractions;  // normalized over agent-results
  double mean_lap_time = 0.0;      // over completed laps
};

namespace detail {

// Deterministic slot-permutation schedule: lexicographic permutations cycled
// for small fields, seeded shuffles otherwise.
inline std::vector<int> slot_permutation(int n, int race_index, Rng& rng) {
  std::vector<int> slots(static_cast<size_t>(n));
  std::iota(slots.begin(), slots.end(), 0);
  double n_fact = 1;
  for (int i = 2; i <= n; ++i) n_fact *= i;
  if (n_fact <= 5040) {  // enumerate for n <= 7
    int idx = static_cast<int>(race_index % static_cast<int64_t>(n_fact));
    for (int i = 0; i < idx; ++i)
      if (!std::next_permutation(slots.begin(), slots.end())) break;
  } else {
    for (size_t i = slots.size(); i > 1; --i) std::swap(slots[i - 1], slots[rng.uniform_int(i)]);
  }
  return slots;
}

inline void aggregate(SelfEvalResult& out, int total_targets) {
  std::vector<double> completions;
  double lap_sum = 0.0;
  int lap_count = 0;
  for (const auto& race : out.races) {
    for (const auto& r : race) {
      completions.push_back(r.completion(total_targets));
      out.crash_fractions.count(r.cause);
      for (double lt : r.lap_times) {
        lap_sum += lt;
        ++lap_count;
      }
    }
  }
  if (!completions.empty()) {
    double mean = std::accumulate(completions.begin(), completions.end(), 0.0) /
                  static_cast<double>(completions.size());
    double var = 0.0;
    for (double c : completions) var += (c - mean) * (c - mean);
    out.mean_completion = mean;
    out.std_completion = std::sqrt(var / static_cast<double>(completions.size()));
  }
  out.crash_fractions.normalize();
  out.mean_lap_time = lap_count > 0 ? lap_sum / lap_count : 0.0;
}

}  // namespace detail

// n identical copies of one policy race `protocol.races` times with permuted
// start slots and arc jitter.
template <class S>
SelfEvalResult run_self_eval(const PolicyHandle<S>& policy, int n_agents,
                             const EvalProtocol& protocol, EnvConfig env_cfg, const Track& track) {
  if (n_agents < 1) throw std::invalid_argument("run_self_eval: n_agents must be >= 1");
  env_cfg.n_agents = n_agents;
  SelfEvalResult out;
  out.n_agents = n_agents;
  Rng root(protocol.seed);

  for (int race = 0; race < protocol.races; ++race) {
    Rng race_rng = root.child(static_cast<uint64_t>(race));
    RaceEnv env(env_cfg, track, race_rng.child(1).state());
    env.set_interactions_enabled(true);
    const auto slots = detail::slot_permutation(n_agents, race, race_rng);
    const double jitter = protocol.slot_jitter > 0.0
                              ? race_rng.uniform(-protocol.slot_jitter, protocol.slot_jitter)
                              : 0.0;
    env.reset_race_start_slots(slots, jitter);

    std::vector<PolicyController<S>> ctrl_store;
    ctrl_store.reserve(static_cast<size_t>(n_agents));
    std::vector<AgentController> controllers;
    for (int a = 0; a < n_agents; ++a)
      ctrl_store.emplace_back(policy, env_cfg.obs_scales, env_cfg.action,
                              protocol.deterministic_actions,
                              race_rng.child(0x100 + static_cast<uint64_t>(a)).state());
    for (int a = 0; a < n_agents; ++a)
      controllers.emplace_back(std::ref(ctrl_store[static_cast<size_t>(a)]));

    out.races.push_back(run_race(env, controllers));
  }
  detail::aggregate(out, track.total_gate_targets());
  return out;
}

// ---------------------------------------------------------------------------
// Mixed-pool tournaments
// ---------------------------------------------------------------------------

template <class S>
struct TournamentEntry {
  std::string method;  // label grouped in the report
  PolicyHandle<S> policy;
};

struct MethodStats {
  int agent_results = 0;
  double mean_completion = 0.0;
  double mean_lap_time = 0.0;
  int lap_count = 0;
  CrashBreakdown crash_fractions;
  std::vector<int> rank_counts;  // index rank-1
};

struct TournamentResult {
  int n_agents = 4;
  int races = 0;
  std::map<std::string, MethodStats> by_method;
};

template <class S>
TournamentResult run_tournament(const std::vector<TournamentEntry<S>>& pool, int n_configs,
                                int races_per_config, const EnvConfig& base_cfg,
                                const Track& track, uint64_t seed, int n_agents = 4) {
  if (static_cast<int>(pool.size()) < 1)
    throw std::invalid_argument("run_tournament: empty pool");
  TournamentResult out;
  out.n_agents = n_agents;
  EnvConfig env_cfg = base_cfg;
  env_cfg.n_agents = n_agents;
  Rng root(seed);
  std::map<std::string, std::vector<double>> completions;

  for (int cfg_idx = 0; cfg_idx < n_configs; ++cfg_idx) {
    Rng cfg_rng = root.child(static_cast<uint64_t>(cfg_idx));
    std::vector<int> lineup(static_cast<size_t>(n_agents));
    for (int a = 0; a < n_agents; ++a)
      lineup[static_cast<size_t>(a)] = static_cast<int>(cfg_rng.uniform_int(pool.size()));

    for (int race = 0; race < races_per_config; ++race) {
      Rng race_rng = cfg_rng.child(0x1000 + static_cast<uint64_t>(race));
      RaceEnv env(env_cfg, track, race_rng.child(1).state());
      env.set_interactions_enabled(true);
      const auto slots = detail::slot_permutation(n_agents, race, race_rng);
      env.reset_race_start_slots(slots, race_rng.uniform(-0.1, 0.1));

      std::vector<PolicyController<S>> ctrl_store;
      ctrl_store.reserve(static_cast<size_t>(n_agents));
      std::vector<AgentController> controllers;
      for (int a = 0; a < n_agents; ++a)
        ctrl_store.emplace_back(pool[static_cast<size_t>(lineup[static_cast<size_t>(a)])].policy,
                                env_cfg.obs_scales, env_cfg.action, true,
                                race_rng.child(0x100 + static_cast<uint64_t>(a)).state());
      for (int a = 0; a < n_agents; ++a)
        controllers.emplace_back(std::ref(ctrl_store[static_cast<size_t>(a)]));

      const auto results = run_race(env, controllers);
      ++out.races;
      for (int a = 0; a < n_agents; ++a) {
        const auto& method = pool[static_cast<size_t>(lineup[static_cast<size_t>(a)])].method;
        auto& ms = out.by_method[method];
        if (ms.rank_counts.empty()) ms.rank_counts.assign(static_cast<size_t>(n_agents), 0);
        const auto& r = results[static_cast<size_t>(a)];
        ++ms.agent_results;
        completions[method].push_back(r.completion(track.total_gate_targets()));
        ms.crash_fractions.count(r.cause);
        for (double lt : r.lap_times) {
          ms.mean_lap_time += lt;
          ++ms.lap_count;
        }
        ++ms.rank_counts[static_cast<size_t>(r.final_rank) - 1];
      }
    }
  }
  for (auto& [method, ms] : out.by_method) {
    const auto& cs = completions[method];
    ms.mean_completion = cs.empty() ? 0.0
                                    : std::accumulate(cs.begin(), cs.end(), 0.0) /
                                          static_cast<double>(cs.size());
    if (ms.lap_count > 0) ms.mean_lap_time /= ms.lap_count;
    ms.crash_fractions.normalize();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Value-function sweep (critic response over an (X,Z) plane)
// ---------------------------------------------------------------------------

struct ValueSweepScene {
  Vec3 ego_velocity = Vec3::Zero();
  Eigen::Matrix3d ego_rotation = Eigen::Matrix3d::Identity();
  std::vector<Vec3> opponent_positions;
  std::vector<Vec3> opponent_velocities;
  int next_gate = 0;
  double y = 0.0;  // fixed Y of the sweep plane
};

struct GridSpec {
  double x0 = 0.0, x1 = 1.0;
  int nx = 50;
  double z0 = 0.0, z1 = 1.0;
  int nz = 30;
};

struct ValueField {
  GridSpec grid;
  std::vector<double> x, z, value;  // row-major: x outer, z inner
};

// Critic evaluated per grid point with the ego position substituted. Points
// beyond the next gate plane treat that gate as passed.
template <class S>
ValueField value_sweep(const PolicyHandle<S>& policy, const ValueSweepScene& scene,
                       const GridSpec& grid, const Track& track, const ObsScales& scales) {
  ValueField out;
  out.grid = grid;
  const int n_gates = static_cast<int>(track.gates.size());
  PolicyController<S> critic(policy, scales, ActionBounds{}, true, 0);

  for (int ix = 0; ix < grid.nx; ++ix) {
    const double x = grid.nx > 1 ? grid.x0 + (grid.x1 - grid.x0) * ix / (grid.nx - 1) : grid.x0;
    for (int iz = 0; iz < grid.nz; ++iz) {
      const double z = grid.nz > 1 ? grid.z0 + (grid.z1 - grid.z0) * iz / (grid.nz - 1) : grid.z0;
      const Vec3 p(x, scene.y, z);

      const int gate_idx = value_sweep_target_gate(track, scene.next_gate, p);
      const Gate& g0 = track.gates[static_cast<size_t>(gate_idx)];
      const Gate& g1 = track.gates[static_cast<size_t>((gate_idx + 1) % n_gates)];

      EgoObservation ego;
      ego.position = p;
      ego.velocity = scene.ego_velocity;
      ego.rotation = scene.ego_rotation;
      const auto c0 = g0.corners();
      const auto c1 = g1.corners();
      for (int i = 0; i < 4; ++i) {
        ego.gate_corners.segment<3>(3 * i) = c0[static_cast<size_t>(i)] - p;
        ego.gate_next.segment<3>(3 * i) =
            c1[static_cast<size_t>(i)] - c0[static_cast<size_t>(i)];
      }
      std::vector<Eigen::VectorXd> records;
      for (size_t o = 0; o < scene.opponent_positions.size(); ++o) {
        OpponentObservation rec;
        rec.p_rel = scene.opponent_positions[o] - p;
        rec.v_rel = scene.opponent_velocities.size() > o
                        ? Vec3(scene.opponent_velocities[o] - scene.ego_velocity)
                        : Vec3(-scene.ego_velocity);
        records.push_back(encode_opponent(rec, scales));
      }
      out.x.push_back(x);
      out.z.push_back(z);
      out.value.push_back(critic.value(encode_ego(ego, scales), records));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Downwash toy experiment (two vehicles on concentric circles)
// ---------------------------------------------------------------------------

struct DownwashTrace {
  std::vector<double> t;
  std::vector<double> altitude;   // lower agent z
  std::vector<double> angle_gap;  // upper angle minus lower angle, rad (unwrapped)
};

struct DownwashCondition {
  std::string name;  // "solo", "delay_0.1", "delay_0.5"
  double start_delay = 0.0;
  bool solo = false;
};

struct DownwashExperimentResult {
  // [policy variant: "with"/"without"] -> [condition name] -> flights
  std::map<std::string, std::map<std::string, std::vector<DownwashTrace>>> traces;
  int flights = 0;
};

inline std::vector<DownwashCondition> default_downwash_conditions() {
  return {{"solo", 0.0, true}, {"delay_0.1", 0.1, false}, {"delay_0.5", 0.5, false}};
}

// Both vehicles run the given controller factory; the upper agent is blind,
// the lower observes the upper. Logs altitude and angular-gap traces.
template <class ControllerFactory>
DownwashExperimentResult run_downwash_experiment(ControllerFactory&& make_controller_with,
                                                 ControllerFactory&& make_controller_without,
                                                 const EnvConfig& base_cfg, int flights,
                                                 uint64_t seed, double duration = 12.0) {
  DownwashExperimentResult out;
  out.flights = flights;
  const auto conditions = default_downwash_conditions();
  Rng root(seed);

  auto run_variant = [&](const std::string& variant, auto& factory) {
    for (const auto& cond : conditions) {
      auto& flights_out = out.traces[variant][cond.name];
      for (int flight = 0; flight < flights; ++flight) {
        Rng flight_rng =
            root.child(fnv1a64(variant.data(), variant.size()) ^
                       fnv1a64(cond.name.data(), cond.name.size()) ^ static_cast<uint64_t>(flight));
        EnvConfig cfg = base_cfg;
        cfg.task = TaskType::circle;
        cfg.n_agents = cond.solo ? 1 : 2;
        cfg.episode_length = duration;
        cfg.circle.start_delay = cond.start_delay;
        // the wake is the experiment: keep coupling on regardless of curriculum
        cfg.downwash_enabled = (variant == "with");
        Track circle_track = Track::split_s();  // gates unused by the circle task
        RaceEnv env(cfg, circle_track, flight_rng.child(1).state());
        env.set_interactions_enabled(true);
        env.reset_race_start();

        std::vector<AgentController> controllers;
        std::vector<std::shared_ptr<void>> keep_alive;
        for (int a = 0; a < cfg.n_agents; ++a) {
          auto ctrl = factory(flight_rng.child(0x100 + static_cast<uint64_t>(a)).state());
          using Ctrl = decltype(ctrl);
          auto holder = std::make_shared<Ctrl>(std::move(ctrl));
          keep_alive.push_back(holder);
          controllers.push_back([holder](RaceEnv& e, int agent) { return (*holder)(e, agent); });
        }

        DownwashTrace trace;
        double gap_unwrapped = 0.0;
        double prev_gap = 0.0;
        bool first = true;
        while (!env.all_done()) {
          std::vector<Command> actions(static_cast<size_t>(cfg.n_agents));
          for (int a = 0; a < cfg.n_agents; ++a)
            if (env.agent_alive(a)) actions[static_cast<size_t>(a)] = controllers[static_cast<size_t>(a)](env, a);
          env.step(actions);
          trace.t.push_back(env.time());
          trace.altitude.push_back(env.agent_state(0).position.z());
          if (cfg.n_agents > 1) {
            double gap = env.circle_angle(1) - env.circle_angle(0);
            while (gap > M_PI) gap -= 2.0 * M_PI;
            while (gap < -M_PI) gap += 2.0 * M_PI;
            if (first) {
              gap_unwrapped = gap;
              first = false;
            } else {
              double d = gap - prev_gap;
              while (d > M_PI) d -= 2.0 * M_PI;
              while (d < -M_PI) d += 2.0 * M_PI;
              gap_unwrapped += d;
            }
            prev_gap = gap;
            trace.angle_gap.push_back(gap_unwrapped);
          }
        }
        flights_out.push_back(std::move(trace));
      }
    }
  };
  run_variant("with", make_controller_with);
  run_variant("without", make_controller_without);
  return out;
}

}  // namespace quadleague
