#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "quadleague/dynamics.hpp"
#include "quadleague/rng.hpp"

namespace quadleague {

// Momentum-theory induced jet speed beneath a propeller disk.
inline double initial_jet_speed(double thrust, double air_density, double disk_area) {
  if (thrust < 0.0) throw std::invalid_argument("initial_jet_speed: negative thrust");
  if (air_density <= 0.0 || disk_area <= 0.0)
    throw std::invalid_argument("initial_jet_speed: density and disk area must be positive");
  return std::sqrt(thrust / (2.0 * air_density * disk_area));
}

struct WakeParticle {
  Vec3 position = Vec3::Zero();  // m, world
  Vec3 velocity = Vec3::Zero();  // m/s, world
  double age = 0.0;              // s
  int source = -1;               // emitting agent id
};

struct WakeConfig {
  int particles_per_step = 96;      // per vehicle per simulation step
  double cone_half_angle = 15.0 * M_PI / 180.0;
  double decay_tau = 0.5;           // s, exponential speed decay
  double max_age = 1.5;             // s
  double query_radius = 0.3;        // m
  double idw_epsilon = 1e-3;        // m, inverse-distance floor
  size_t capacity = 50000;
  double air_density = 1.204;       // kg/m^3
  double prop_diameter = 0.0737;    // m

  double disk_area() const { return M_PI * (prop_diameter / 2.0) * (prop_diameter / 2.0); }
};

// Particle population with a uniform hash grid for radius queries. One field
// per environment; emit/advance mutate, sampling is read-only.
class WakeField {
 public:
  explicit WakeField(WakeConfig cfg = {}) : cfg_(cfg) {}

  const WakeConfig& config() const { return cfg_; }
  size_t size() const { return particles_.size(); }
  const std::vector<WakeParticle>& particles() const { return particles_; }

  void clear() {
    particles_.clear();
    grid_dirty_ = true;
  }

  // Spawns `particles_per_step` particles split evenly over the four rotors,
  // directions uniform in a cone about body -z, jet speed from momentum
  // theory plus the vehicle's own velocity. Rotors at zero thrust emit none.
  void emit(const QuadState& agent, int agent_id, const Vec4& per_rotor_thrust,
            const QuadParams& params, Rng& rng) {
    const auto rotors = rotor_positions(params);
    const Vec3 axis = agent.orientation * Vec3(0.0, 0.0, -1.0);
    const int per_rotor = cfg_.particles_per_step / 4;
    for (int r = 0; r < 4; ++r) {
      if (per_rotor_thrust[r] <= 0.0) continue;
      const double jet = initial_jet_speed(per_rotor_thrust[r], cfg_.air_density, cfg_.disk_area());
      const Vec3 origin = agent.position + agent.orientation * rotors[r];
      for (int k = 0; k < per_rotor; ++k) {
        WakeParticle part;
        part.position = origin;
        part.velocity = agent.velocity + jet * sample_cone(axis, cfg_.cone_half_angle, rng);
        part.age = 0.0;
        part.source = agent_id;
        push(part);
      }
    }
    grid_dirty_ = true;
  }

  // Advect, decay, age, cull.
  void advance(double dt) {
    if (dt < 0.0) throw std::invalid_argument("WakeField::advance: negative dt");
    if (dt == 0.0) return;
    const double decay = std::exp(-dt / cfg_.decay_tau);
    size_t out = 0;
    for (size_t i = 0; i < particles_.size(); ++i) {
      WakeParticle p = particles_[i];
      p.position += dt * p.velocity;
      p.velocity *= decay;
      p.age += dt;
      if (p.age < cfg_.max_age) particles_[out++] = p;
    }
    particles_.resize(out);
    grid_dirty_ = true;
  }

  // Inverse-distance-weighted mean velocity of particles within the query
  // radius, skipping the excluded source. Zero when none are in range.
  Vec3 sample_airspeed(const Vec3& query, int exclude = -1) const {
    if (particles_.empty()) return Vec3::Zero();
    rebuild_grid_if_needed();
    const double cell = cfg_.query_radius;
    const int cx = cell_coord(query.x(), cell);
    const int cy = cell_coord(query.y(), cell);
    const int cz = cell_coord(query.z(), cell);
    Vec3 acc = Vec3::Zero();
    double wsum = 0.0;
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          auto it = grid_.find(cell_key(cx + dx, cy + dy, cz + dz));
          if (it == grid_.end()) continue;
          for (uint32_t idx : it->second) {
            const WakeParticle& p = particles_[idx];
            if (p.source == exclude) continue;
            const double dist = (p.position - query).norm();
            if (dist >= cfg_.query_radius) continue;
            const double w = 1.0 / std::max(dist, cfg_.idw_epsilon);
            acc += w * p.velocity;
            wsum += w;
          }
        }
    return wsum > 0.0 ? Vec3(acc / wsum) : Vec3::Zero();
  }

  // Flat record stream: x y z vx vy vz age source.
  void dump(std::ostream& os) const {
    for (const auto& p : particles_) {
      os << p.position.x() << '\t' << p.position.y() << '\t' << p.position.z() << '\t'
         << p.velocity.x() << '\t' << p.velocity.y() << '\t' << p.velocity.z() << '\t'
         << p.age << '\t' << p.source << '\n';
    }
  }

 private:
  void push(const WakeParticle& p) {
    if (particles_.size() >= cfg_.capacity)
      particles_.erase(particles_.begin());  // oldest-first eviction
    particles_.push_back(p);
  }

  static Vec3 sample_cone(const Vec3& axis, double half_angle, Rng& rng) {
    // uniform over the spherical cap
    const double cos_t = rng.uniform(std::cos(half_angle), 1.0);
    const double sin_t = std::sqrt(std::max(0.0, 1.0 - cos_t * cos_t));
    const double phi = rng.uniform(0.0, 2.0 * M_PI);
    Vec3 u = std::abs(axis.z()) < 0.9 ? axis.cross(Vec3::UnitZ()).normalized()
                                      : axis.cross(Vec3::UnitX()).normalized();
    const Vec3 v = axis.cross(u);
    return cos_t * axis + sin_t * (std::cos(phi) * u + std::sin(phi) * v);
  }

  static int cell_coord(double x, double cell) {
    return static_cast<int>(std::floor(x / cell));
  }
  static uint64_t cell_key(int x, int y, int z) {
    const uint64_t ux = static_cast<uint32_t>(x) & 0x1fffff;
    const uint64_t uy = static_cast<uint32_t>(y) & 0x1fffff;
    const uint64_t uz = static_cast<uint32_t>(z) & 0x1fffff;
    return (ux << 42) | (uy << 21) | uz;
  }

  void rebuild_grid_if_needed() const {
    if (!grid_dirty_) return;
    grid_.clear();
    const double cell = cfg_.query_radius;
    for (uint32_t i = 0; i < particles_.size(); ++i) {
      const Vec3& q = particles_[i].position;
      grid_[cell_key(cell_coord(q.x(), cell), cell_coord(q.y(), cell), cell_coord(q.z(), cell))]
          .push_back(i);
    }
    grid_dirty_ = false;
  }

  WakeConfig cfg_;
  std::vector<WakeParticle> particles_;
  mutable std::unordered_map<uint64_t, std::vector<uint32_t>> grid_;
  mutable bool grid_dirty_ = true;
};

}  // namespace quadleague
