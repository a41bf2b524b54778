#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "quadleague/env.hpp"
#include "quadleague/policy.hpp"
#include "quadleague/rng.hpp"
#include "quadleague/track.hpp"
#include "quadleague/training.hpp"

namespace quadleague {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using ConfigValue = std::variant<bool, int64_t, double, std::string, std::vector<double>>;

namespace detail {

enum class ValueKind { boolean, integer, real, text, vector };

struct SchemaEntry {
  ValueKind kind;
  ConfigValue def;
  double min = -std::numeric_limits<double>::infinity();
  double max = std::numeric_limits<double>::infinity();
  int vec_len = 0;
};

inline const std::map<std::string, SchemaEntry>& config_schema() {
  static const std::map<std::string, SchemaEntry> schema = [] {
    std::map<std::string, SchemaEntry> s;
    auto real = [&](const std::string& k, double v, double lo, double hi) {
      s[k] = SchemaEntry{ValueKind::real, v, lo, hi, 0};
    };
    auto integer = [&](const std::string& k, int64_t v, double lo, double hi) {
      s[k] = SchemaEntry{ValueKind::integer, v, lo, hi, 0};
    };
    auto boolean = [&](const std::string& k, bool v) {
      s[k] = SchemaEntry{ValueKind::boolean, v, 0, 1, 0};
    };
    auto text = [&](const std::string& k, const std::string& v) {
      s[k] = SchemaEntry{ValueKind::text, v, 0, 0, 0};
    };
    auto vec = [&](const std::string& k, std::vector<double> v, double lo, double hi) {
      const int n = static_cast<int>(v.size());
      s[k] = SchemaEntry{ValueKind::vector, std::move(v), lo, hi, n};
    };
    const double inf = std::numeric_limits<double>::infinity();

    // vehicle (Kolibri platform)
    real("dynamics.mass", 0.220, 1e-6, inf);
    vec("dynamics.inertia", {0.14e-3, 0.17e-3, 0.21e-3}, 1e-9, inf);
    real("dynamics.motor_tau", 0.033, 1e-6, inf);
    real("dynamics.thrust_coeff", 3.5 / (4000.0 * 4000.0), 1e-12, inf);
    real("dynamics.torque_coeff", 0.012 * 3.5 / (4000.0 * 4000.0), 1e-15, inf);
    real("dynamics.motor_spacing", 0.118, 1e-6, inf);
    vec("dynamics.drag_coeff", {0.01, 0.01, 0.01}, 0.0, inf);
    real("dynamics.max_thrust", 14.0, 1e-6, inf);
    vec("dynamics.rate_gain", {20.0, 20.0, 20.0}, 0.0, inf);
    real("dynamics.substep", 0.002, 1e-5, 1.0);

    // domain randomization
    real("randomization.thrust", 0.10, 0.0, 1.0);
    real("randomization.torque", 0.10, 0.0, 1.0);
    real("randomization.drag", 0.10, 0.0, 1.0);
    real("randomization.inertia", 0.10, 0.0, 1.0);
    real("randomization.mass", 0.05, 0.0, 1.0);
    real("randomization.max_delay", 0.040, 0.0, 0.5);
    real("randomization.position_xy", 0.5, 0.0, inf);
    real("randomization.position_z", 0.3, 0.0, inf);
    real("randomization.velocity", 0.5, 0.0, inf);
    real("randomization.attitude_deg", 20.0, 0.0, 180.0);
    real("randomization.body_rate_deg", 25.0, 0.0, inf);

    // downwash particles
    boolean("downwash.enabled", true);
    integer("downwash.particles_per_step", 96, 0, 100000);
    real("downwash.cone_half_angle_deg", 15.0, 0.0, 89.0);
    real("downwash.decay_tau", 0.5, 1e-6, inf);
    real("downwash.max_age", 1.5, 1e-6, inf);
    real("downwash.query_radius", 0.3, 1e-6, inf);
    real("downwash.idw_epsilon", 1e-3, 1e-12, inf);
    integer("downwash.capacity", 50000, 1, 100000000);
    real("downwash.air_density", 1.204, 1e-6, inf);
    real("downwash.prop_diameter", 0.0737, 1e-6, inf);

    // track (Split-S defaults)
    text("track.file", "");
    integer("track.laps", 3, 1, 1000);
    real("track.collision_radius", 0.1, 1e-6, inf);
    real("track.gate_aperture", 1.5, 1e-3, inf);
    real("track.frame_band", 0.4, 0.0, inf);
    vec("track.arena_lo", {-8.0, -9.0, 0.0}, -inf, inf);
    vec("track.arena_hi", {12.0, 10.0, 6.0}, -inf, inf);
    vec("track.start_reference", {-5.0, 4.7, 0.61}, -inf, inf);
    real("track.start_spacing", 1.0, 1e-3, inf);
    integer("track.subset_gates", 0, 0, 7);
    vec("track.gate1", {-0.60, -0.86, 3.68, -20.0}, -inf, inf);
    vec("track.gate2", {9.00, 6.45, 1.05, 0.0}, -inf, inf);
    vec("track.gate3", {8.85, -3.80, 1.05, -130.0}, -inf, inf);
    vec("track.gate4", {-4.30, -5.60, 3.40, 180.0}, -inf, inf);
    vec("track.gate5", {-4.30, -5.60, 1.42, 0.0}, -inf, inf);
    vec("track.gate6", {4.50, -0.45, 1.05, 80.0}, -inf, inf);
    vec("track.gate7", {-1.95, 6.81, 1.05, -150.0}, -inf, inf);

    // reward
    real("reward.lambda1", 1.0, 0.0, inf);
    real("reward.lambda2", 0.005, 0.0, inf);
    real("reward.lambda3", 0.01, 0.0, inf);
    real("reward.lambda4", 0.01, 0.0, inf);
    real("reward.lambda5", 7.0, 0.0, inf);
    real("reward.nonterminal_prob", 0.10, 0.0, 1.0);
    real("reward.terminal_offset", -1.0, -inf, 0.0);
    real("reward.wall_scale", 0.01, 0.0, inf);
    real("reward.gate_scale", 1.0, 0.0, inf);

    // environment
    integer("env.agents", 4, 1, 64);
    real("env.control_hz", 50.0, 1.0, 1000.0);
    real("env.episode_length", 30.0, 0.1, inf);
    real("env.obs_pos_scale", 0.1, 1e-9, inf);
    real("env.obs_vel_scale", 0.1, 1e-9, inf);
    real("env.action_omega_max", 6.0, 1e-3, inf);

    // curriculum
    real("curriculum.opponent_fraction", 0.10, 0.0, 1.0);
    real("curriculum.gate_fraction", 0.30, 0.0, 1.0);
    real("curriculum.start_prob_initial", 0.05, 0.0, 1.0);
    real("curriculum.start_prob_final", 0.95, 0.0, 1.0);
    integer("curriculum.buffer_capacity", 10000, 0, 100000000);
    integer("curriculum.buffer_interval", 50, 1, 1000000);

    // policy network
    integer("policy.latents", 4, 1, 1024);
    integer("policy.heads", 4, 1, 64);
    integer("policy.head_dim", 32, 1, 1024);
    integer("policy.embed_dim", 128, 1, 8192);
    integer("policy.lstm_hidden", 256, 1, 8192);
    integer("policy.mlp_hidden", 512, 1, 16384);
    real("policy.logstd_init", -0.5, -10.0, 5.0);
    real("policy.logstd_min", -5.0, -20.0, 0.0);
    real("policy.logstd_max", 2.0, 0.0, 20.0);
    real("policy.leaky_slope", 0.01, 0.0, 1.0);
    real("policy.thrust_bias_init", -0.8513, -5.0, 5.0);
    boolean("policy.flat_encoder", false);
    integer("policy.flat_max_opponents", 10, 1, 64);

    // PPO (Table S2)
    real("ppo.gamma", 0.985, 1e-6, 1.0);
    real("ppo.gae_lambda", 0.95, 0.0, 1.0);
    real("ppo.clip_range", 0.2, 1e-6, 10.0);
    real("ppo.entropy_coef", 0.001, 0.0, inf);
    integer("ppo.epochs", 10, 1, 1000);
    real("ppo.lr_init", 3e-4, 0.0, 1.0);
    real("ppo.lr_final", 5e-5, 0.0, 1.0);
    integer("ppo.environments", 144, 1, 100000);
    integer("ppo.rollout_steps", 250, 1, 1000000);
    integer("ppo.iterations", 5500, 1, 100000000);
    integer("ppo.minibatches", 8, 1, 4096);
    integer("ppo.bptt_segment", 32, 1, 100000);
    real("ppo.value_coef", 0.5, 0.0, inf);
    real("ppo.max_grad_norm", 0.5, 0.0, inf);

    // league play
    real("league.alpha", 0.9, 0.0, 100.0);
    real("league.self_play_prob", 0.75, 0.0, 1.0);
    integer("league.checkpoint_every", 100, 1, 1000000);
    integer("league.roster_single", 4, 0, 1024);
    integer("league.roster_independent", 16, 0, 1024);

    // evaluation protocols
    integer("eval.races", 64, 1, 1000000);
    integer("eval.agents", 4, 1, 8);
    boolean("eval.deterministic", true);
    real("eval.slot_jitter", 0.1, 0.0, 10.0);
    integer("eval.configs", 1000, 1, 10000000);

    // circle-tracking task (downwash experiment)
    real("circle.radius", 3.0, 0.1, inf);
    real("circle.separation", 0.5, 0.0, inf);
    real("circle.speed_ref", 2.5, 0.0, inf);
    real("circle.base_altitude", 1.5, 0.1, inf);
    real("circle.carrot_arc", 1.5, 0.01, inf);
    real("circle.progress_weight", 0.5, 0.0, inf);
    real("circle.speed_weight", 0.25, 0.0, inf);
    real("circle.altitude_weight", 0.5, 0.0, inf);
    real("circle.radial_weight", 0.25, 0.0, inf);
    integer("circle.flights", 15, 1, 10000);
    return s;
  }();
  return schema;
}

inline std::string format_double(double v) {
  std::ostringstream oss;
  oss.precision(17);
  oss << v;
  return oss.str();
}

}  // namespace detail

// Flat dotted-key configuration with a fixed schema. Every key always has a
// value (presets fill defaults); parsing rejects unknown keys, type errors
// and out-of-range values by name.
class Config {
 public:
  // All schema defaults: the paper configuration (Tables S1-S4).
  static Config paper_preset() {
    Config c;
    for (const auto& [k, e] : detail::config_schema()) c.values_[k] = e.def;
    return c;
  }

  // Desk-scale preset: shrinks environment count, rollout length, iteration
  // count and the league roster; everything else stays at paper values.
  static Config desk_preset() {
    Config c = paper_preset();
    c.set_int("ppo.environments", 8);
    c.set_int("ppo.rollout_steps", 100);
    c.set_int("ppo.iterations", 300);
    c.set_int("league.roster_single", 1);
    c.set_int("league.roster_independent", 4);
    return c;
  }

  static Config preset(const std::string& name) {
    if (name == "paper") return paper_preset();
    if (name == "desk") return desk_preset();
    throw ConfigError("unknown preset: " + name + " (expected paper or desk)");
  }

  bool get_bool(const std::string& k) const { return std::get<bool>(at(k, "bool")); }
  int64_t get_int(const std::string& k) const { return std::get<int64_t>(at(k, "int")); }
  double get_double(const std::string& k) const {
    const ConfigValue& v = at(k, "double");
    if (std::holds_alternative<int64_t>(v)) return static_cast<double>(std::get<int64_t>(v));
    return std::get<double>(v);
  }
  std::string get_string(const std::string& k) const { return std::get<std::string>(at(k, "string")); }
  std::vector<double> get_vec(const std::string& k) const {
    return std::get<std::vector<double>>(at(k, "vector"));
  }
  Vec3 get_vec3(const std::string& k) const {
    const auto v = get_vec(k);
    if (v.size() != 3) throw ConfigError("config key " + k + " is not a 3-vector");
    return Vec3(v[0], v[1], v[2]);
  }

  void set_bool(const std::string& k, bool v) { set_checked(k, ConfigValue(v)); }
  void set_int(const std::string& k, int64_t v) { set_checked(k, ConfigValue(v)); }
  void set_double(const std::string& k, double v) { set_checked(k, ConfigValue(v)); }
  void set_string(const std::string& k, const std::string& v) { set_checked(k, ConfigValue(v)); }
  void set_vec(const std::string& k, const std::vector<double>& v) { set_checked(k, ConfigValue(v)); }

  // Parses "key = value" with the type dictated by the schema (CLI --set).
  void set_from_string(const std::string& key, const std::string& raw) {
    const auto& schema = detail::config_schema();
    auto it = schema.find(key);
    if (it == schema.end()) throw ConfigError("unknown config key: " + key);
    set_checked(key, parse_value(key, it->second, raw));
  }

  // Loads "key = value" lines over this config; '#' starts a comment.
  void load(std::istream& is) {
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        if (line.find_first_not_of(" \t\r\n") != std::string::npos)
          throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        continue;
      }
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      set_from_string(key, value);
    }
  }

  void load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    load(f);
  }

  // Canonical text form; load(serialize()) round-trips to an identical config.
  std::string serialize() const {
    std::ostringstream oss;
    for (const auto& [k, v] : values_) {
      oss << k << " = ";
      if (std::holds_alternative<bool>(v)) {
        oss << (std::get<bool>(v) ? "true" : "false");
      } else if (std::holds_alternative<int64_t>(v)) {
        oss << std::get<int64_t>(v);
      } else if (std::holds_alternative<double>(v)) {
        oss << detail::format_double(std::get<double>(v));
      } else if (std::holds_alternative<std::string>(v)) {
        oss << '"' << std::get<std::string>(v) << '"';
      } else {
        const auto& vec = std::get<std::vector<double>>(v);
        oss << '[';
        for (size_t i = 0; i < vec.size(); ++i)
          oss << (i ? ", " : "") << detail::format_double(vec[i]);
        oss << ']';
      }
      oss << '\n';
    }
    return oss.str();
  }

  void save_file(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write config file: " + path);
    f << serialize();
  }

  uint64_t content_hash() const {
    const std::string s = serialize();
    return fnv1a64(s.data(), s.size());
  }

  bool operator==(const Config& other) const { return values_ == other.values_; }

  // Keys whose values differ from `other`.
  std::vector<std::string> diff_keys(const Config& other) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (other.values_.at(k) != v) out.push_back(k);
    return out;
  }

 private:
  const ConfigValue& at(const std::string& k, const char* kind) const {
    auto it = values_.find(k);
    if (it == values_.end()) throw ConfigError("unknown config key: " + k);
    (void)kind;
    return it->second;
  }

  void set_checked(const std::string& key, ConfigValue v) {
    const auto& schema = detail::config_schema();
    auto it = schema.find(key);
    if (it == schema.end()) throw ConfigError("unknown config key: " + key);
    const auto& e = it->second;
    using detail::ValueKind;
    auto range_check = [&](double x) {
      if (x < e.min || x > e.max)
        throw ConfigError("config value out of range for " + key + ": " +
                          detail::format_double(x) + " (allowed [" +
                          detail::format_double(e.min) + ", " + detail::format_double(e.max) +
                          "])");
    };
    switch (e.kind) {
      case ValueKind::boolean:
        if (!std::holds_alternative<bool>(v)) throw ConfigError("config key " + key + " expects bool");
        break;
      case ValueKind::integer: {
        if (std::holds_alternative<double>(v)) {
          const double d = std::get<double>(v);
          if (d != std::floor(d)) throw ConfigError("config key " + key + " expects integer");
          v = ConfigValue(static_cast<int64_t>(d));
        }
        if (!std::holds_alternative<int64_t>(v))
          throw ConfigError("config key " + key + " expects integer");
        range_check(static_cast<double>(std::get<int64_t>(v)));
        break;
      }
      case ValueKind::real: {
        if (std::holds_alternative<int64_t>(v))
          v = ConfigValue(static_cast<double>(std::get<int64_t>(v)));
        if (!std::holds_alternative<double>(v))
          throw ConfigError("config key " + key + " expects number");
        range_check(std::get<double>(v));
        break;
      }
      case ValueKind::text:
        if (!std::holds_alternative<std::string>(v))
          throw ConfigError("config key " + key + " expects string");
        break;
      case ValueKind::vector: {
        if (!std::holds_alternative<std::vector<double>>(v))
          throw ConfigError("config key " + key + " expects vector");
        const auto& vec = std::get<std::vector<double>>(v);
        if (static_cast<int>(vec.size()) != e.vec_len)
          throw ConfigError("config key " + key + " expects " + std::to_string(e.vec_len) +
                            " elements");
        for (double x : vec) range_check(x);
        break;
      }
    }
    values_[key] = std::move(v);
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static ConfigValue parse_value(const std::string& key, const detail::SchemaEntry& e,
                                 const std::string& raw) {
    using detail::ValueKind;
    const std::string s = trim(raw);
    try {
      switch (e.kind) {
        case ValueKind::boolean:
          if (s == "true" || s == "1") return ConfigValue(true);
          if (s == "false" || s == "0") return ConfigValue(false);
          throw ConfigError("");
        case ValueKind::integer:
          return ConfigValue(static_cast<int64_t>(std::stoll(s)));
        case ValueKind::real:
          return ConfigValue(std::stod(s));
        case ValueKind::text: {
          if (s.size() >= 2 && s.front() == '"' && s.back() == '"')
            return ConfigValue(s.substr(1, s.size() - 2));
          return ConfigValue(s);
        }
        case ValueKind::vector: {
          if (s.size() < 2 || s.front() != '[' || s.back() != ']') throw ConfigError("");
          std::vector<double> vec;
          std::string body = s.substr(1, s.size() - 2);
          std::istringstream ss(body);
          std::string tok;
          while (std::getline(ss, tok, ',')) {
            const std::string t = trim(tok);
            if (!t.empty()) vec.push_back(std::stod(t));
          }
          return ConfigValue(std::move(vec));
        }
      }
    } catch (const std::exception&) {
      throw ConfigError("cannot parse value for " + key + ": '" + raw + "'");
    }
    throw ConfigError("cannot parse value for " + key);
  }

  std::map<std::string, ConfigValue> values_;
};

// ---------------------------------------------------------------------------
// Struct builders
// ---------------------------------------------------------------------------

inline QuadParams quad_params_from(const Config& c) {
  QuadParams p;
  p.mass = c.get_double("dynamics.mass");
  p.inertia = c.get_vec3("dynamics.inertia");
  p.motor_tau = c.get_double("dynamics.motor_tau");
  p.thrust_coeff = c.get_double("dynamics.thrust_coeff");
  p.torque_coeff = c.get_double("dynamics.torque_coeff");
  p.motor_spacing = c.get_double("dynamics.motor_spacing");
  p.drag_coeff = c.get_vec3("dynamics.drag_coeff");
  p.max_thrust = c.get_double("dynamics.max_thrust");
  p.rate_gain = c.get_vec3("dynamics.rate_gain");
  return p;
}

inline RandomizationSpec randomization_from(const Config& c) {
  RandomizationSpec r;
  r.thrust_coeff_range = c.get_double("randomization.thrust");
  r.torque_coeff_range = c.get_double("randomization.torque");
  r.drag_range = c.get_double("randomization.drag");
  r.inertia_range = c.get_double("randomization.inertia");
  r.mass_range = c.get_double("randomization.mass");
  r.max_actuation_delay = c.get_double("randomization.max_delay");
  r.position_xy = c.get_double("randomization.position_xy");
  r.position_z = c.get_double("randomization.position_z");
  r.velocity = c.get_double("randomization.velocity");
  r.attitude = c.get_double("randomization.attitude_deg") * M_PI / 180.0;
  r.body_rate = c.get_double("randomization.body_rate_deg") * M_PI / 180.0;
  return r;
}

inline WakeConfig wake_from(const Config& c) {
  WakeConfig w;
  w.particles_per_step = static_cast<int>(c.get_int("downwash.particles_per_step"));
  w.cone_half_angle = c.get_double("downwash.cone_half_angle_deg") * M_PI / 180.0;
  w.decay_tau = c.get_double("downwash.decay_tau");
  w.max_age = c.get_double("downwash.max_age");
  w.query_radius = c.get_double("downwash.query_radius");
  w.idw_epsilon = c.get_double("downwash.idw_epsilon");
  w.capacity = static_cast<size_t>(c.get_int("downwash.capacity"));
  w.air_density = c.get_double("downwash.air_density");
  w.prop_diameter = c.get_double("downwash.prop_diameter");
  return w;
}

inline RewardConfig reward_from(const Config& c) {
  RewardConfig r;
  r.lambda1 = c.get_double("reward.lambda1");
  r.lambda2 = c.get_double("reward.lambda2");
  r.lambda3 = c.get_double("reward.lambda3");
  r.lambda4 = c.get_double("reward.lambda4");
  r.lambda5 = c.get_double("reward.lambda5");
  r.nonterminal_collision_prob = c.get_double("reward.nonterminal_prob");
  r.terminal_offset = c.get_double("reward.terminal_offset");
  r.wall_velocity_scale = c.get_double("reward.wall_scale");
  r.gate_error_scale = c.get_double("reward.gate_scale");
  return r;
}

inline CurriculumConfig curriculum_from(const Config& c) {
  CurriculumConfig k;
  k.opponent_enable_fraction = c.get_double("curriculum.opponent_fraction");
  k.gate_shrink_fraction = c.get_double("curriculum.gate_fraction");
  k.start_prob_initial = c.get_double("curriculum.start_prob_initial");
  k.start_prob_final = c.get_double("curriculum.start_prob_final");
  k.buffer_capacity = static_cast<size_t>(c.get_int("curriculum.buffer_capacity"));
  k.buffer_sample_interval = static_cast<int>(c.get_int("curriculum.buffer_interval"));
  return k;
}

inline Track track_from(const Config& c) {
  Track t;
  const std::string file = c.get_string("track.file");
  if (!file.empty()) {
    t = load_track_file(file);
  } else {
    t.gates.clear();
    for (int i = 1; i <= 7; ++i) {
      const auto v = c.get_vec("track.gate" + std::to_string(i));
      Gate g;
      g.center = Vec3(v[0], v[1], v[2]);
      g.yaw = v[3] * M_PI / 180.0;
      t.gates.push_back(g);
    }
  }
  const int subset = static_cast<int>(c.get_int("track.subset_gates"));
  if (subset > 0 && subset < static_cast<int>(t.gates.size()))
    t.gates.resize(static_cast<size_t>(subset));
  for (auto& g : t.gates) {
    g.aperture = c.get_double("track.gate_aperture");
    g.frame_band = c.get_double("track.frame_band");
  }
  t.laps = static_cast<int>(c.get_int("track.laps"));
  t.collision_radius = c.get_double("track.collision_radius");
  t.arena.lo = c.get_vec3("track.arena_lo");
  t.arena.hi = c.get_vec3("track.arena_hi");
  t.start_reference = c.get_vec3("track.start_reference");
  t.start_spacing = c.get_double("track.start_spacing");
  return t;
}

inline CircleTaskConfig circle_from(const Config& c) {
  CircleTaskConfig k;
  k.radius = c.get_double("circle.radius");
  k.level_separation = c.get_double("circle.separation");
  k.speed_ref = c.get_double("circle.speed_ref");
  k.base_altitude = c.get_double("circle.base_altitude");
  k.carrot_arc = c.get_double("circle.carrot_arc");
  k.progress_weight = c.get_double("circle.progress_weight");
  k.speed_weight = c.get_double("circle.speed_weight");
  k.altitude_weight = c.get_double("circle.altitude_weight");
  k.radial_weight = c.get_double("circle.radial_weight");
  return k;
}

inline EnvConfig env_from(const Config& c) {
  EnvConfig e;
  e.n_agents = static_cast<int>(c.get_int("env.agents"));
  e.control_dt = 1.0 / c.get_double("env.control_hz");
  e.substep = c.get_double("dynamics.substep");
  e.episode_length = c.get_double("env.episode_length");
  e.nominal = quad_params_from(c);
  e.reward = reward_from(c);
  e.randomization = randomization_from(c);
  e.wake = wake_from(c);
  e.downwash_enabled = c.get_bool("downwash.enabled");
  e.action.thrust_min = 0.0;
  e.action.thrust_max = c.get_double("dynamics.max_thrust") / c.get_double("dynamics.mass");
  e.action.omega_max = c.get_double("env.action_omega_max");
  e.obs_scales.position = c.get_double("env.obs_pos_scale");
  e.obs_scales.velocity = c.get_double("env.obs_vel_scale");
  e.circle = circle_from(c);
  return e;
}

inline PolicyConfig policy_from(const Config& c) {
  PolicyConfig p;
  p.latents = static_cast<int>(c.get_int("policy.latents"));
  p.heads = static_cast<int>(c.get_int("policy.heads"));
  p.head_dim = static_cast<int>(c.get_int("policy.head_dim"));
  p.embed_dim = static_cast<int>(c.get_int("policy.embed_dim"));
  p.lstm_hidden = static_cast<int>(c.get_int("policy.lstm_hidden"));
  p.mlp_hidden = static_cast<int>(c.get_int("policy.mlp_hidden"));
  p.logstd_init = c.get_double("policy.logstd_init");
  p.logstd_min = c.get_double("policy.logstd_min");
  p.logstd_max = c.get_double("policy.logstd_max");
  p.leaky_slope = c.get_double("policy.leaky_slope");
  p.thrust_bias_init = c.get_double("policy.thrust_bias_init");
  p.flat_encoder = c.get_bool("policy.flat_encoder");
  p.flat_max_opponents = static_cast<int>(c.get_int("policy.flat_max_opponents"));
  return p;
}

inline PPOConfig ppo_from(const Config& c) {
  PPOConfig p;
  p.gamma = c.get_double("ppo.gamma");
  p.gae_lambda = c.get_double("ppo.gae_lambda");
  p.clip_range = c.get_double("ppo.clip_range");
  p.entropy_coef = c.get_double("ppo.entropy_coef");
  p.epochs = static_cast<int>(c.get_int("ppo.epochs"));
  p.lr_init = c.get_double("ppo.lr_init");
  p.lr_final = c.get_double("ppo.lr_final");
  p.environments = static_cast<int>(c.get_int("ppo.environments"));
  p.rollout_steps = static_cast<int>(c.get_int("ppo.rollout_steps"));
  p.iterations = static_cast<int>(c.get_int("ppo.iterations"));
  p.minibatches = static_cast<int>(c.get_int("ppo.minibatches"));
  p.bptt_segment = static_cast<int>(c.get_int("ppo.bptt_segment"));
  p.value_coef = c.get_double("ppo.value_coef");
  p.max_grad_norm = c.get_double("ppo.max_grad_norm");
  return p;
}

inline LeagueConfig league_from(const Config& c) {
  LeagueConfig l;
  l.alpha = c.get_double("league.alpha");
  l.self_play_prob = c.get_double("league.self_play_prob");
  l.checkpoint_every = static_cast<int>(c.get_int("league.checkpoint_every"));
  l.roster_single = static_cast<int>(c.get_int("league.roster_single"));
  l.roster_independent = static_cast<int>(c.get_int("league.roster_independent"));
  return l;
}

}  // namespace quadleague
