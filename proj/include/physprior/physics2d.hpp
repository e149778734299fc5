#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "physprior/color.hpp"
#include "physprior/rng.hpp"

namespace physprior::phys {

struct Vec2 {
  double x = 0, y = 0;
  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2 operator-() const { return {-x, -y}; }
  Vec2& operator+=(Vec2 o) { x += o.x; y += o.y; return *this; }
  Vec2& operator-=(Vec2 o) { x -= o.x; y -= o.y; return *this; }
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline Vec2 cross(double w, Vec2 r) { return {-w * r.y, w * r.x}; }
inline double length(Vec2 v) { return std::sqrt(dot(v, v)); }
inline Vec2 rotate(Vec2 v, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

enum class ShapeKind { Circle, Box };

// Rigid body with unit-density mass. Boxes rotate; circles track angle for
// completeness but render rotation-invariant.
struct Body {
  ShapeKind kind = ShapeKind::Circle;
  double radius = 0;              // circles
  double half_w = 0, half_h = 0;  // boxes
  Vec2 position;
  Vec2 velocity;
  double angle = 0;
  double angular_velocity = 0;
  double mass = 1, inv_mass = 1;
  double inertia = 1, inv_inertia = 1;
  double elasticity = 1;
  double friction = 0;
  Color color;

  static Body circle(double radius, Vec2 pos, Vec2 vel, double elasticity, double friction,
                     Color color);
  static Body box(double half_w, double half_h, Vec2 pos, Vec2 vel, double angle,
                  double angular_velocity, double elasticity, double friction, Color color);

  // Radius of the bounding circle.
  double extent() const {
    return kind == ShapeKind::Circle ? radius : std::sqrt(half_w * half_w + half_h * half_h);
  }
};

// Axis-aligned static rectangle with infinite mass.
struct Wall {
  Vec2 min, max;
  Vec2 center() const { return {(min.x + max.x) / 2, (min.y + max.y) / 2}; }
  Vec2 half() const { return {(max.x - min.x) / 2, (max.y - min.y) / 2}; }
};

struct Contact {
  int a = -1;           // body index
  int b = -1;           // body index, or wall index when b_is_wall
  bool b_is_wall = false;
  Vec2 normal;          // unit, oriented from a toward b
  double penetration = 0;
  Vec2 point;
};

// The room is the unit square; dt is fixed at 1/30 s. Walls always include
// the four boundary slabs (indices 0..3) placed flush outside the room.
struct WorldState {
  std::vector<Body> bodies;
  std::vector<Wall> walls;
  Vec2 bounds_min{0, 0}, bounds_max{1, 1};
  double drag = 0;            // linear velocity damping per second
  double dt = 1.0 / 30.0;
  uint64_t rng_seed = 0;

  const std::vector<Contact>& last_contacts() const { return last_contacts_; }
  std::vector<Contact> last_contacts_;
};

struct SampleConfig {
  int n_bodies_min = 4, n_bodies_max = 8;
  int n_walls_min = 0, n_walls_max = 3;  // interior walls
  double size_min = 0.04, size_max = 0.08;
  double speed_min = 0.2, speed_max = 0.5;
  double elasticity = 0.95;
  double friction = 0.9;
  double drag = 0.0;
  double spin_max = 2.0;  // |initial angular velocity| bound, rad/s

  std::string describe() const;
};

// Rejection-samples a world: interior walls first, then bodies placed
// without overlapping each other, any wall or the room boundary. Throws
// after 10,000 failed placement attempts for a body.
WorldState sample_world(uint64_t seed, const SampleConfig& cfg);

// All body-body then body-wall contacts, in index order. Boxes use the
// separating-axis test over both boxes' edge normals; the axis of least
// penetration becomes the contact normal.
std::vector<Contact> detect_collisions(const WorldState& world);

// Impulse resolution with restitution min(e_a, e_b), Coulomb friction
// bounded by mu_a * mu_b times the normal impulse, and positional
// correction with Baumgarte factor 0.8.
void resolve_contact(WorldState& world, const Contact& contact);

// Semi-implicit Euler (drag, then position/angle), one detect+resolve pass.
// Pure in the WorldState: no hidden inputs.
void step(WorldState& world);

// Overlap test used by placement, bullets and the games.
bool bodies_overlap(const Body& a, const Body& b);

double kinetic_energy(const WorldState& world);
Vec2 total_momentum(const WorldState& world);

// The four boundary slabs for a unit room.
std::vector<Wall> boundary_walls();

}  // namespace physprior::phys
