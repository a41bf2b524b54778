#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "quadleague/dynamics.hpp"

namespace quadleague {

// Square racing gate in a vertical plane; yaw orients the flight-direction
// normal about world z. `size_multiplier` is the curriculum aperture scale.
struct Gate {
  Vec3 center = Vec3::Zero();
  double yaw = 0.0;               // rad
  double aperture = 1.5;          // m, nominal side length
  double frame_band = 0.4;        // m beyond the aperture edge that counts as frame
  double size_multiplier = 1.0;   // in [1, 2]

  Vec3 normal() const { return Vec3(std::cos(yaw), std::sin(yaw), 0.0); }
  Vec3 right() const { return Vec3(-std::sin(yaw), std::cos(yaw), 0.0); }
  Vec3 up() const { return Vec3::UnitZ(); }
  double half_width() const { return 0.5 * aperture * size_multiplier; }

  std::array<Vec3, 4> corners() const {
    const double h = half_width();
    const Vec3 r = right(), u = up();
    return {center + h * r + h * u, center - h * r + h * u,
            center - h * r - h * u, center + h * r - h * u};
  }
};

struct Aabb {
  Vec3 lo = Vec3(-8.0, -9.0, 0.0);
  Vec3 hi = Vec3(12.0, 10.0, 6.0);
  bool contains(const Vec3& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
};

struct Track {
  std::vector<Gate> gates;
  Aabb arena;
  int laps = 3;
  double collision_radius = 0.1;  // m, per agent
  Vec3 start_reference = Vec3(-5.0, 4.7, 0.61);
  double start_spacing = 1.0;     // m between adjacent start slots

  int total_gate_targets() const { return laps * static_cast<int>(gates.size()); }

  void set_size_multiplier(double m) {
    for (auto& g : gates) g.size_multiplier = m;
  }

  // Split-S circuit, seven gates.
  static Track split_s() {
    Track t;
    const double d2r = M_PI / 180.0;
    auto gate = [&](double x, double y, double z, double yaw_deg) {
      Gate g;
      g.center = Vec3(x, y, z);
      g.yaw = yaw_deg * d2r;
      return g;
    };
    t.gates = {gate(-0.60, -0.86, 3.68, -20.0), gate(9.00, 6.45, 1.05, 0.0),
               gate(8.85, -3.80, 1.05, -130.0), gate(-4.30, -5.60, 3.40, 180.0),
               gate(-4.30, -5.60, 1.42, 0.0),   gate(4.50, -0.45, 1.05, 80.0),
               gate(-1.95, 6.81, 1.05, -150.0)};
    return t;
  }

  // Leading-gate subset of the circuit, used for small-scale training runs.
  static Track split_s_subset(int n_gates) {
    Track t = split_s();
    if (n_gates < 1 || n_gates > static_cast<int>(t.gates.size()))
      throw std::invalid_argument("split_s_subset: bad gate count");
    t.gates.resize(static_cast<size_t>(n_gates));
    return t;
  }
};

// Track file: one "x y z yaw_deg" line per gate, '#' comments.
inline void save_track(const Track& t, std::ostream& os) {
  os << "# gate: x[m] y[m] z[m] yaw[deg]\n";
  for (const auto& g : t.gates) {
    std::ostringstream line;
    line.precision(17);
    line << g.center.x() << ' ' << g.center.y() << ' ' << g.center.z() << ' '
         << g.yaw * 180.0 / M_PI;
    os << line.str() << '\n';
  }
}

inline Track load_track(std::istream& is) {
  Track t;
  t.gates.clear();
  std::string line;
  while (std::getline(is, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    double x, y, z, yaw_deg;
    if (ss >> x >> y >> z >> yaw_deg) {
      Gate g;
      g.center = Vec3(x, y, z);
      g.yaw = yaw_deg * M_PI / 180.0;
      t.gates.push_back(g);
    }
  }
  if (t.gates.empty()) throw std::runtime_error("load_track: no gates found");
  return t;
}

inline Track load_track_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_track: cannot open " + path);
  return load_track(f);
}

enum class GateEvent { none, passed, hit };

struct GateCrossing {
  GateEvent event = GateEvent::none;
  double gate_error = 0.0;  // m, in-plane distance from the aperture edge (hit only)
};

// Segment/gate-plane test. Only forward crossings (along the gate normal)
// count; inside the scaled aperture is a pass, within the frame band is a hit.
inline GateCrossing check_gate_transition(const Vec3& prev_pos, const Vec3& new_pos,
                                          const Gate& gate) {
  if (!prev_pos.allFinite() || !new_pos.allFinite())
    throw std::invalid_argument("check_gate_transition: non-finite position");
  GateCrossing result;
  const Vec3 n = gate.normal();
  const double s0 = n.dot(prev_pos - gate.center);
  const double s1 = n.dot(new_pos - gate.center);
  if (!(s0 < 0.0 && s1 >= 0.0)) return result;  // no forward crossing

  const double t = s0 / (s0 - s1);
  const Vec3 x = prev_pos + t * (new_pos - prev_pos);
  const double u = gate.right().dot(x - gate.center);
  const double v = gate.up().dot(x - gate.center);
  const double h = gate.half_width();
  if (std::abs(u) <= h && std::abs(v) <= h) {
    result.event = GateEvent::passed;
    return result;
  }
  const double du = std::max(std::abs(u) - h, 0.0);
  const double dv = std::max(std::abs(v) - h, 0.0);
  const double err = std::hypot(du, dv);
  if (err <= gate.frame_band) {
    result.event = GateEvent::hit;
    result.gate_error = err;
  }
  return result;
}

// Two spheres of radius d_col: contact below twice the collision radius.
inline bool check_agent_collision(const Vec3& p_i, const Vec3& p_j, double d_col) {
  if (d_col <= 0.0) throw std::invalid_argument("check_agent_collision: d_col must be positive");
  return (p_i - p_j).norm() < 2.0 * d_col;
}

// Race progress of one agent.
struct ProgressState {
  int gates_passed = 0;
  double dist_to_gate = 0.0;  // m, to next gate center
  int rank = 0;               // 1-based, assigned by compute_rankings
};

// Ranks by (gates passed desc, distance asc); stable on agent index.
inline std::vector<int> compute_rankings(const std::vector<ProgressState>& progress) {
  std::vector<int> order(progress.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (progress[a].gates_passed != progress[b].gates_passed)
      return progress[a].gates_passed > progress[b].gates_passed;
    return progress[a].dist_to_gate < progress[b].dist_to_gate;
  });
  std::vector<int> rank(progress.size());
  for (size_t i = 0; i < order.size(); ++i) rank[order[i]] = static_cast<int>(i) + 1;
  return rank;
}

struct StartPose {
  Vec3 position;
  double yaw;  // facing gate 1
};

// Start slots on an arc equidistant from the first gate, symmetric about the
// reference bearing; adjacent slots are `spacing` apart (chord). Growing the
// field by one shifts every slot by half a spacing unit.
inline std::vector<StartPose> start_grid(int n_agents, double spacing, const Vec3& reference,
                                         const Gate& gate1, const Aabb& arena) {
  if (n_agents < 1) throw std::invalid_argument("start_grid: need at least one agent");
  if (spacing <= 0.0) throw std::invalid_argument("start_grid: spacing must be positive");
  const double dx = reference.x() - gate1.center.x();
  const double dy = reference.y() - gate1.center.y();
  const double radius = std::hypot(dx, dy);
  const double bearing = std::atan2(dy, dx);
  const double dtheta = 2.0 * std::asin(spacing / (2.0 * radius));

  std::vector<StartPose> poses;
  poses.reserve(static_cast<size_t>(n_agents));
  for (int i = 0; i < n_agents; ++i) {
    const double offset = (i - 0.5 * (n_agents - 1)) * dtheta;
    const double th = bearing + offset;
    StartPose pose;
    pose.position = Vec3(gate1.center.x() + radius * std::cos(th),
                         gate1.center.y() + radius * std::sin(th), reference.z());
    pose.yaw = std::atan2(gate1.center.y() - pose.position.y(),
                          gate1.center.x() - pose.position.x());
    if (!arena.contains(pose.position))
      throw std::invalid_argument("start_grid: field does not fit inside the arena");
    poses.push_back(pose);
  }
  return poses;
}

}  // namespace quadleague
