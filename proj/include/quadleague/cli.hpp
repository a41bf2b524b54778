#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "quadleague/config.hpp"
#include "quadleague/eval.hpp"
#include "quadleague/training.hpp"

namespace quadleague {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Run configuration (command-line surface)
// ---------------------------------------------------------------------------

struct RunConfig {
  std::string mode;            // train-league | train-independent | train-single |
                               // self-eval | tournament | value-sweep | downwash-demo |
                               // export-plot
  std::string preset = "desk"; // paper | desk
  uint64_t seed = 1;
  std::string config_file;
  std::vector<std::pair<std::string, std::string>> overrides;
  std::string track_file;
  std::string out_dir = "out";

  // eval inputs
  std::vector<std::string> checkpoints;
  std::vector<std::string> labels;  // method labels aligned with `checkpoints`
  std::vector<std::string> roster;  // league roster checkpoint paths
  int agents_min = 0, agents_max = 0;  // self-eval sweep; 0 = config value
  bool log_trajectories = false;

  // value sweep scene
  std::vector<std::vector<double>> sweep_opponents;  // x,y,z[,vx,vy,vz]
  std::vector<double> sweep_grid;  // x0 x1 nx z0 z1 nz
  double sweep_y = 0.0;
  int sweep_next_gate = 0;

  // downwash demo
  std::string policy_with, policy_without;

  // export-plot
  std::string figure;
  std::string results_dir;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitRuntimeError = 3;

namespace cli_detail {

// Exclusive lock file in the output directory; removed on scope exit.
class DirLock {
 public:
  explicit DirLock(const std::string& dir) {
    std::filesystem::create_directories(dir);
    path_ = (std::filesystem::path(dir) / ".lock").string();
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0)
      throw std::runtime_error("output directory is locked by another run: " + path_);
  }
  ~DirLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      ::unlink(path_.c_str());
    }
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::string path_;
  int fd_ = -1;
};

inline void apply_thread_override() {
  if (const char* env = std::getenv("QUADLEAGUE_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) Eigen::setNbThreads(n);
  }
}

inline Config resolve_config(const RunConfig& rc) {
  Config cfg = Config::preset(rc.preset);
  if (!rc.config_file.empty()) cfg.load_file(rc.config_file);
  if (!rc.track_file.empty()) cfg.set_string("track.file", rc.track_file);
  for (const auto& [k, v] : rc.overrides) cfg.set_from_string(k, v);
  return cfg;
}

inline TrainerOptions trainer_options(const Config& cfg, TrainMode mode, uint64_t seed,
                                      const std::string& out_dir) {
  TrainerOptions opts;
  opts.mode = mode;
  opts.ppo = ppo_from(cfg);
  opts.league = league_from(cfg);
  opts.curriculum = curriculum_from(cfg);
  opts.env = env_from(cfg);
  opts.policy = policy_from(cfg);
  opts.track = track_from(cfg);
  opts.seed = seed;
  if (!out_dir.empty()) {
    const auto dir = std::filesystem::path(out_dir) / "checkpoints";
    std::filesystem::create_directories(dir);
    opts.checkpoint_dir = dir.string();
  }
  return opts;
}

inline json stats_json(const IterationStats& s) {
  return json{{"iteration", s.iteration},
              {"learner", s.learner},
              {"lr", s.lr},
              {"reward_mean", s.reward_mean},
              {"reward_prog", s.prog_mean},
              {"reward_omega", s.omega_mean},
              {"reward_prox", s.prox_mean},
              {"reward_rank", s.rank_mean},
              {"reward_penalty", s.penalty_mean},
              {"episodes_ended", s.episodes_ended},
              {"term_finished", s.term_finished},
              {"term_gate", s.term_gate},
              {"term_wall", s.term_wall},
              {"term_opponent", s.term_opponent},
              {"term_timeout", s.term_timeout},
              {"max_gates_in_episode", s.max_gates_in_episode},
              {"completion_rate", s.completion_rate},
              {"policy_loss", s.policy_loss},
              {"value_loss", s.value_loss},
              {"entropy", s.entropy},
              {"clip_fraction", s.clip_fraction},
              {"opponent_history_fraction", s.opponent_history_fraction}};
}

inline json race_json(const RaceResult& r, int race_idx, int total_targets) {
  json lap = json::array();
  for (double t : r.lap_times) lap.push_back(t);
  return json{{"race", race_idx},
              {"agent", r.agent},
              {"gates", r.gates_passed},
              {"completion", r.completion(total_targets)},
              {"cause", cause_name(r.cause)},
              {"rank", r.final_rank},
              {"finish_time", r.finish_time},
              {"lap_times", lap}};
}

inline std::vector<json> read_ndjson(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::vector<json> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    out.push_back(json::parse(line));
  }
  return out;
}

template <class S>
PolicyHandle<S> load_checkpoint_policy(const std::string& path) {
  return load_policy_handle<S>(path);
}

inline std::string label_for(const RunConfig& rc, size_t idx) {
  if (idx < rc.labels.size()) return rc.labels[idx];
  return std::filesystem::path(rc.checkpoints[idx]).stem().string();
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline int cmd_train(const RunConfig& rc, const Config& cfg) {
  TrainMode mode = TrainMode::single_agent;
  if (rc.mode == "train-league") mode = TrainMode::league;
  else if (rc.mode == "train-independent") mode = TrainMode::independent;

  auto opts = trainer_options(cfg, mode, rc.seed, rc.out_dir);
  std::ofstream metrics((std::filesystem::path(rc.out_dir) / "metrics.ndjson").string());
  opts.on_iteration = [&](const IterationStats& s) {
    metrics << stats_json(s).dump() << "\n";
    metrics.flush();
  };
  Trainer<float> trainer(opts);
  if (mode == TrainMode::league && !rc.roster.empty()) {
    for (const auto& path : rc.roster)
      trainer.pool_mut().roster.push_back(load_checkpoint_policy<float>(path));
  }
  trainer.run();

  std::ostringstream summary;
  summary << "mode              " << rc.mode << "\n"
          << "seed              " << rc.seed << "\n"
          << "iterations        " << opts.ppo.iterations << "\n"
          << "environments      " << opts.ppo.environments << "\n"
          << "rollout_steps     " << opts.ppo.rollout_steps << "\n"
          << "transitions/iter  " << opts.ppo.batch_size() << "\n"
          << "checkpoints       " << trainer.checkpoint_paths().size() << "\n";
  std::cout << summary.str();
  std::ofstream((std::filesystem::path(rc.out_dir) / "summary.txt").string()) << summary.str();
  return kExitOk;
}

inline int cmd_self_eval(const RunConfig& rc, const Config& cfg) {
  if (rc.checkpoints.empty())
    throw ConfigError("self-eval requires --checkpoint");
  auto policy = load_checkpoint_policy<float>(rc.checkpoints[0]);
  const Track track = track_from(cfg);
  EnvConfig env_cfg = env_from(cfg);
  EvalProtocol protocol;
  protocol.races = static_cast<int>(cfg.get_int("eval.races"));
  protocol.slot_jitter = cfg.get_double("eval.slot_jitter");
  protocol.deterministic_actions = cfg.get_bool("eval.deterministic");
  protocol.seed = rc.seed;

  const int a_lo = rc.agents_min > 0 ? rc.agents_min : static_cast<int>(cfg.get_int("eval.agents"));
  const int a_hi = rc.agents_max > 0 ? rc.agents_max : a_lo;

  std::ofstream results((std::filesystem::path(rc.out_dir) / "results.ndjson").string());
  std::ofstream aggregates((std::filesystem::path(rc.out_dir) / "aggregates.ndjson").string());
  std::ostringstream summary;
  summary << "agents  races  completion  std      gate    wall    opponent finished timeout\n";
  for (int n = a_lo; n <= a_hi; ++n) {
    const auto r = run_self_eval<float>(policy, n, protocol, env_cfg, track);
    for (size_t race = 0; race < r.races.size(); ++race)
      for (const auto& rr : r.races[race]) {
        json j = race_json(rr, static_cast<int>(race), track.total_gate_targets());
        j["agents"] = n;
        results << j.dump() << "\n";
      }
    json agg{{"agents", n},
             {"races", protocol.races},
             {"mean_completion", r.mean_completion},
             {"std_completion", r.std_completion},
             {"mean_lap_time", r.mean_lap_time},
             {"frac_gate", r.crash_fractions.gate},
             {"frac_wall", r.crash_fractions.wall},
             {"frac_opponent", r.crash_fractions.opponent},
             {"frac_finished", r.crash_fractions.finished},
             {"frac_timeout", r.crash_fractions.timeout}};
    aggregates << agg.dump() << "\n";
    summary << n << "       " << protocol.races << "     ";
    summary.precision(4);
    summary << std::fixed << r.mean_completion << "      " << r.std_completion << "   "
            << r.crash_fractions.gate << "  " << r.crash_fractions.wall << "  "
            << r.crash_fractions.opponent << "   " << r.crash_fractions.finished << "   "
            << r.crash_fractions.timeout << "\n";
  }
  std::cout << summary.str();
  std::ofstream((std::filesystem::path(rc.out_dir) / "summary.txt").string()) << summary.str();
  return kExitOk;
}

inline int cmd_tournament(const RunConfig& rc, const Config& cfg) {
  if (rc.checkpoints.size() < 1)
    throw ConfigError("tournament requires at least one --checkpoint");
  std::vector<TournamentEntry<float>> pool;
  for (size_t i = 0; i < rc.checkpoints.size(); ++i)
    pool.push_back({label_for(rc, i), load_checkpoint_policy<float>(rc.checkpoints[i])});

  const Track track = track_from(cfg);
  const int n_configs = static_cast<int>(cfg.get_int("eval.configs"));
  const int races = static_cast<int>(cfg.get_int("eval.races"));
  const auto result = run_tournament<float>(pool, n_configs, races, env_from(cfg), track, rc.seed,
                                            static_cast<int>(cfg.get_int("eval.agents")));

  std::ofstream out((std::filesystem::path(rc.out_dir) / "tournament.ndjson").string());
  std::ostringstream summary;
  summary << "method            results  completion  lap_time  gate    wall    opponent\n";
  for (const auto& [method, ms] : result.by_method) {
    json ranks = json::array();
    for (int c : ms.rank_counts) ranks.push_back(c);
    out << json{{"method", method},
                {"agent_results", ms.agent_results},
                {"mean_completion", ms.mean_completion},
                {"mean_lap_time", ms.mean_lap_time},
                {"frac_gate", ms.crash_fractions.gate},
                {"frac_wall", ms.crash_fractions.wall},
                {"frac_opponent", ms.crash_fractions.opponent},
                {"frac_finished", ms.crash_fractions.finished},
                {"frac_timeout", ms.crash_fractions.timeout},
                {"rank_counts", ranks}}
               .dump()
        << "\n";
    summary.precision(4);
    summary << method << "  " << ms.agent_results << "  " << std::fixed << ms.mean_completion
            << "  " << ms.mean_lap_time << "  " << ms.crash_fractions.gate << "  "
            << ms.crash_fractions.wall << "  " << ms.crash_fractions.opponent << "\n";
  }
  std::cout << summary.str();
  std::ofstream((std::filesystem::path(rc.out_dir) / "summary.txt").string()) << summary.str();
  return kExitOk;
}

inline int cmd_value_sweep(const RunConfig& rc, const Config& cfg) {
  if (rc.checkpoints.empty()) throw ConfigError("value-sweep requires --checkpoint");
  auto policy = load_checkpoint_policy<float>(rc.checkpoints[0]);
  const Track track = track_from(cfg);

  ValueSweepScene scene;
  scene.y = rc.sweep_y;
  scene.next_gate = rc.sweep_next_gate;
  for (const auto& opp : rc.sweep_opponents) {
    if (opp.size() != 3 && opp.size() != 6)
      throw ConfigError("--opponent expects x,y,z or x,y,z,vx,vy,vz");
    scene.opponent_positions.emplace_back(opp[0], opp[1], opp[2]);
    scene.opponent_velocities.emplace_back(opp.size() == 6 ? Vec3(opp[3], opp[4], opp[5])
                                                           : Vec3::Zero());
  }
  GridSpec grid;
  if (!rc.sweep_grid.empty()) {
    if (rc.sweep_grid.size() != 6) throw ConfigError("--grid expects x0,x1,nx,z0,z1,nz");
    grid.x0 = rc.sweep_grid[0];
    grid.x1 = rc.sweep_grid[1];
    grid.nx = static_cast<int>(rc.sweep_grid[2]);
    grid.z0 = rc.sweep_grid[3];
    grid.z1 = rc.sweep_grid[4];
    grid.nz = static_cast<int>(rc.sweep_grid[5]);
  } else {
    grid.x0 = track.arena.lo.x();
    grid.x1 = track.arena.hi.x();
    grid.nx = 50;
    grid.z0 = track.arena.lo.z() + 0.2;
    grid.z1 = track.arena.hi.z();
    grid.nz = 30;
  }
  const auto field = value_sweep<float>(policy, scene, grid, track, env_from(cfg).obs_scales);
  std::ofstream out((std::filesystem::path(rc.out_dir) / "value_field.tsv").string());
  out << "x\tz\tvalue\n";
  out.precision(10);
  for (size_t i = 0; i < field.value.size(); ++i)
    out << field.x[i] << '\t' << field.z[i] << '\t' << field.value[i] << '\n';
  std::cout << "value-sweep: " << field.value.size() << " evaluations ("
            << grid.nx << "x" << grid.nz << " grid)\n";
  return kExitOk;
}

inline int cmd_downwash_demo(const RunConfig& rc, const Config& cfg) {
  // Part 1: wake field of a vehicle translating at constant velocity,
  // dumped as flat particle records for visualization.
  {
    const QuadParams params = quad_params_from(cfg);
    WakeField field(wake_from(cfg));
    QuadState state = make_hover_state(Vec3(0.0, 0.0, 2.0), 0.0, params);
    state.velocity = Vec3(3.0, 0.0, 0.0);
    Rng rng(rc.seed);
    const Vec4 hover_thrust =
        Vec4::Constant(params.mass * params.gravity.norm() / 4.0);
    const double dt = 1.0 / cfg.get_double("env.control_hz");
    std::ofstream dump((std::filesystem::path(rc.out_dir) / "wake_snapshot.tsv").string());
    dump << "x\ty\tz\tvx\tvy\tvz\tage\tsource\n";
    for (int t = 0; t < 100; ++t) {
      field.advance(dt);
      field.emit(state, 0, hover_thrust, params, rng);
      state.position += dt * state.velocity;
    }
    field.dump(dump);
    std::cout << "downwash-demo: wake snapshot with " << field.size() << " particles\n";
  }

  // Part 2 (optional): the two-vehicle concentric-circle protocol, given
  // policies trained with and without the downwash model.
  if (!rc.policy_with.empty() && !rc.policy_without.empty()) {
    auto with = load_checkpoint_policy<float>(rc.policy_with);
    auto without = load_checkpoint_policy<float>(rc.policy_without);
    EnvConfig env_cfg = env_from(cfg);
    const int flights = static_cast<int>(cfg.get_int("circle.flights"));

    auto factory_for = [&](PolicyHandle<float> policy) {
      return [policy, env_cfg](uint64_t seed) {
        return PolicyController<float>(policy, env_cfg.obs_scales, env_cfg.action, true, seed);
      };
    };
    auto f_with = factory_for(with);
    auto f_without = factory_for(without);
    const auto result = run_downwash_experiment(f_with, f_without, env_cfg, flights, rc.seed);

    std::ofstream out((std::filesystem::path(rc.out_dir) / "downwash_traces.ndjson").string());
    for (const auto& [variant, conditions] : result.traces)
      for (const auto& [cond, traces] : conditions)
        for (size_t flight = 0; flight < traces.size(); ++flight) {
          const auto& tr = traces[flight];
          json j{{"variant", variant}, {"condition", cond}, {"flight", flight}};
          j["t"] = tr.t;
          j["altitude"] = tr.altitude;
          j["angle_gap"] = tr.angle_gap;
          out << j.dump() << "\n";
        }
    std::cout << "downwash-demo: " << flights << " flights per condition logged\n";
  }
  return kExitOk;
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  for (size_t i = 0; i < header.size(); ++i) f << (i ? "," : "") << header[i];
  f << "\n";
  f.precision(10);
  for (const auto& row : rows) {
    for (size_t i = 0; i < row.size(); ++i) f << (i ? "," : "") << row[i];
    f << "\n";
  }
}

inline int cmd_export_plot(const RunConfig& rc) {
  if (rc.figure.empty() || rc.results_dir.empty())
    throw ConfigError("export-plot requires --figure and --results");
  const std::filesystem::path dir(rc.results_dir);
  const std::filesystem::path out_dir(rc.out_dir);
  std::filesystem::create_directories(out_dir);

  auto require = [&](const std::string& file) {
    const auto p = dir / file;
    if (!std::filesystem::exists(p)) {
      std::ostringstream oss;
      oss << "missing series " << file << " in " << rc.results_dir << "; available:";
      for (const auto& e : std::filesystem::directory_iterator(dir))
        oss << " " << e.path().filename().string();
      throw std::runtime_error(oss.str());
    }
    return p.string();
  };

  if (rc.figure == "completion-vs-agents") {
    const auto rows_in = read_ndjson(require("aggregates.ndjson"));
    std::vector<std::vector<double>> rows;
    for (const auto& j : rows_in)
      rows.push_back({j["agents"].get<double>(), j["mean_completion"].get<double>(),
                      j["std_completion"].get<double>()});
    write_csv((out_dir / "completion_vs_agents.csv").string(), {"agents", "mean", "std"}, rows);
  } else if (rc.figure == "crash-types") {
    std::vector<json> rows_in;
    std::string source = "tournament.ndjson";
    if (std::filesystem::exists(dir / source)) {
      rows_in = read_ndjson((dir / source).string());
    } else {
      rows_in = read_ndjson(require("aggregates.ndjson"));
    }
    std::ofstream f((out_dir / "crash_types.csv").string());
    f << "method,gate,wall,opponent\n";
    f.precision(10);
    for (const auto& j : rows_in) {
      const std::string label =
          j.contains("method") ? j["method"].get<std::string>() : std::to_string(j["agents"].get<int>());
      f << label << "," << j["frac_gate"].get<double>() << "," << j["frac_wall"].get<double>()
        << "," << j["frac_opponent"].get<double>() << "\n";
    }
  } else if (rc.figure == "rank-dist") {
    const auto rows_in = read_ndjson(require("tournament.ndjson"));
    std::ofstream f((out_dir / "rank_dist.csv").string());
    f << "method";
    if (!rows_in.empty())
      for (size_t i = 0; i < rows_in[0]["rank_counts"].size(); ++i) f << ",rank" << (i + 1);
    f << "\n";
    for (const auto& j : rows_in) {
      f << j["method"].get<std::string>();
      for (const auto& c : j["rank_counts"]) f << "," << c.get<int>();
      f << "\n";
    }
  } else if (rc.figure == "value-field") {
    const auto src = require("value_field.tsv");
    std::ifstream in(src);
    std::ofstream f((out_dir / "value_field.csv").string());
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      for (auto& ch : line)
        if (ch == '\t') ch = ',';
      f << line << "\n";
      first = false;
    }
    (void)first;
  } else if (rc.figure == "downwash-traces") {
    const auto rows_in = read_ndjson(require("downwash_traces.ndjson"));
    std::ofstream f((out_dir / "downwash_traces.csv").string());
    f << "variant,condition,flight,t,altitude,angle_gap\n";
    f.precision(10);
    for (const auto& j : rows_in) {
      const auto& t = j["t"];
      const auto& alt = j["altitude"];
      const auto& gap = j["angle_gap"];
      for (size_t i = 0; i < t.size(); ++i) {
        f << j["variant"].get<std::string>() << "," << j["condition"].get<std::string>() << ","
          << j["flight"].get<int>() << "," << t[i].get<double>() << "," << alt[i].get<double>()
          << "," << (i < gap.size() ? gap[i].get<double>() : 0.0) << "\n";
      }
    }
  } else {
    throw ConfigError("unknown figure: " + rc.figure +
                      " (expected completion-vs-agents, crash-types, rank-dist, value-field, "
                      "downwash-traces)");
  }
  std::cout << "export-plot: wrote " << rc.figure << " data to " << rc.out_dir << "\n";
  return kExitOk;
}

}  // namespace cli_detail

// Dispatch a fully parsed run configuration. Exit codes: 0 success, 2 config
// error, 3 runtime failure.
inline int run(const RunConfig& rc) {
  using namespace cli_detail;
  apply_thread_override();
  try {
    if (rc.mode == "export-plot") return cmd_export_plot(rc);

    const Config cfg = resolve_config(rc);
    std::filesystem::create_directories(rc.out_dir);
    DirLock lock(rc.out_dir);
    cfg.save_file((std::filesystem::path(rc.out_dir) / "config.txt").string());

    if (rc.mode == "train-league" || rc.mode == "train-independent" ||
        rc.mode == "train-single") {
      return cmd_train(rc, cfg);
    } else if (rc.mode == "self-eval") {
      return cmd_self_eval(rc, cfg);
    } else if (rc.mode == "tournament") {
      return cmd_tournament(rc, cfg);
    } else if (rc.mode == "value-sweep") {
      return cmd_value_sweep(rc, cfg);
    } else if (rc.mode == "downwash-demo") {
      return cmd_downwash_demo(rc, cfg);
    }
    throw ConfigError("unknown mode: " + rc.mode);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    // error manifest alongside any partial artifacts
    std::error_code ec;
    std::filesystem::create_directories(rc.out_dir, ec);
    std::ofstream((std::filesystem::path(rc.out_dir) / "error.txt").string()) << e.what() << "\n";
    return kExitRuntimeError;
  }
}

}  // namespace quadleague
