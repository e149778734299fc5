#include "physprior/physics2d.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace physprior::phys {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kSlop = 1e-5;
constexpr double kBaumgarte = 0.8;
constexpr double kWallThickness = 0.1;
constexpr int kMaxPlacementAttempts = 10000;

}  // namespace

Body Body::circle(double radius, Vec2 pos, Vec2 vel, double elasticity, double friction,
                  Color color) {
  if (radius <= 0) throw std::invalid_argument("circle radius must be positive");
  Body b;
  b.kind = ShapeKind::Circle;
  b.radius = radius;
  b.position = pos;
  b.velocity = vel;
  b.mass = kPi * radius * radius;
  b.inv_mass = 1.0 / b.mass;
  b.inertia = 0.5 * b.mass * radius * radius;
  b.inv_inertia = 1.0 / b.inertia;
  b.elasticity = elasticity;
  b.friction = friction;
  b.color = color;
  return b;
}

Body Body::box(double half_w, double half_h, Vec2 pos, Vec2 vel, double angle,
               double angular_velocity, double elasticity, double friction, Color color) {
  if (half_w <= 0 || half_h <= 0) throw std::invalid_argument("box half-extents must be positive");
  Body b;
  b.kind = ShapeKind::Box;
  b.half_w = half_w;
  b.half_h = half_h;
  b.position = pos;
  b.velocity = vel;
  b.angle = angle;
  b.angular_velocity = angular_velocity;
  b.mass = 4.0 * half_w * half_h;
  b.inv_mass = 1.0 / b.mass;
  const double w = 2 * half_w, h = 2 * half_h;
  b.inertia = b.mass * (w * w + h * h) / 12.0;
  b.inv_inertia = 1.0 / b.inertia;
  b.elasticity = elasticity;
  b.friction = friction;
  b.color = color;
  return b;
}

std::string SampleConfig::describe() const {
  std::ostringstream os;
  os << "bodies [" << n_bodies_min << "," << n_bodies_max << "], walls [" << n_walls_min << ","
     << n_walls_max << "], size [" << size_min << "," << size_max << "], speed [" << speed_min
     << "," << speed_max << "], e=" << elasticity << ", mu=" << friction << ", d=" << drag;
  return os.str();
}

std::vector<Wall> boundary_walls() {
  const double t = kWallThickness;
  return {
      {{-t, -t}, {0.0, 1.0 + t}},       // left
      {{1.0, -t}, {1.0 + t, 1.0 + t}},  // right
      {{-t, -t}, {1.0 + t, 0.0}},       // bottom
      {{-t, 1.0}, {1.0 + t, 1.0 + t}},  // top
  };
}

namespace {

// Walls participate in collision math as static boxes with infinite mass,
// unit restitution and unit friction, so the body's own material wins in
// the min/product combination rules.
Body wall_as_body(const Wall& w) {
  Body b;
  b.kind = ShapeKind::Box;
  const Vec2 h = w.half();
  b.half_w = h.x;
  b.half_h = h.y;
  b.position = w.center();
  b.mass = 0;
  b.inv_mass = 0;
  b.inertia = 0;
  b.inv_inertia = 0;
  b.elasticity = 1.0;
  b.friction = 1.0;
  return b;
}

std::array<Vec2, 4> box_corners(const Body& b) {
  const Vec2 ex = rotate({b.half_w, 0}, b.angle);
  const Vec2 ey = rotate({0, b.half_h}, b.angle);
  return {b.position + ex + ey, b.position + ex - ey, b.position - ex + ey, b.position - ex - ey};
}

std::optional<Contact> circle_circle(const Body& a, const Body& b) {
  const Vec2 d = b.position - a.position;
  const double dist = length(d);
  const double rsum = a.radius + b.radius;
  if (dist >= rsum) return std::nullopt;
  Contact c;
  c.normal = dist > 1e-12 ? d * (1.0 / dist) : Vec2{1, 0};
  c.penetration = rsum - dist;
  c.point = a.position + c.normal * (a.radius - c.penetration / 2);
  return c;
}

// Circle a against box b; normal oriented a -> b.
std::optional<Contact> circle_box(const Body& a, const Body& b) {
  const Vec2 local = rotate(a.position - b.position, -b.angle);
  const Vec2 clamped{std::clamp(local.x, -b.half_w, b.half_w),
                     std::clamp(local.y, -b.half_h, b.half_h)};
  const Vec2 diff = local - clamped;
  const double dist = length(diff);
  Contact c;
  if (dist > 1e-12) {
    if (dist >= a.radius) return std::nullopt;
    const Vec2 n_local = diff * (-1.0 / dist);  // from circle toward box
    c.normal = rotate(n_local, b.angle);
    c.penetration = a.radius - dist;
    c.point = b.position + rotate(clamped, b.angle);
    return c;
  }
  // center inside the box: push out along the nearest face
  const double dx = b.half_w - std::abs(local.x);
  const double dy = b.half_h - std::abs(local.y);
  Vec2 n_local;
  if (dx < dy)
    n_local = {local.x >= 0 ? -1.0 : 1.0, 0.0};
  else
    n_local = {0.0, local.y >= 0 ? -1.0 : 1.0};
  c.normal = rotate(n_local, b.angle);
  c.penetration = a.radius + std::min(dx, dy);
  c.point = b.position + rotate(clamped, b.angle);
  return c;
}

double project_radius(const Body& b, Vec2 axis) {
  const Vec2 ex = rotate({1, 0}, b.angle);
  const Vec2 ey = rotate({0, 1}, b.angle);
  return b.half_w * std::abs(dot(axis, ex)) + b.half_h * std::abs(dot(axis, ey));
}

// SAT over the two edge normals of each box; least-overlap axis is the MTV.
std::optional<Contact> box_box(const Body& a, const Body& b) {
  const Vec2 d = b.position - a.position;
  const std::array<Vec2, 4> axes = {rotate({1, 0}, a.angle), rotate({0, 1}, a.angle),
                                    rotate({1, 0}, b.angle), rotate({0, 1}, b.angle)};
  double best_overlap = 0;
  Vec2 best_axis;
  bool first = true;
  for (const Vec2& axis : axes) {
    const double overlap =
        project_radius(a, axis) + project_radius(b, axis) - std::abs(dot(axis, d));
    if (overlap <= 0) return std::nullopt;
    if (first || overlap < best_overlap) {
      best_overlap = overlap;
      best_axis = axis;
      first = false;
    }
  }
  Contact c;
  c.normal = dot(best_axis, d) >= 0 ? best_axis : -best_axis;
  c.penetration = best_overlap;
  // deepest support corners along the MTV, averaged
  Vec2 support_a, support_b;
  double best_a = 0, best_b = 0;
  bool fa = true, fb = true;
  for (const Vec2& corner : box_corners(b)) {
    const double p = dot(corner, c.normal);
    if (fb || p < best_b) {
      best_b = p;
      support_b = corner;
      fb = false;
    }
  }
  for (const Vec2& corner : box_corners(a)) {
    const double p = dot(corner, c.normal);
    if (fa || p > best_a) {
      best_a = p;
      support_a = corner;
      fa = false;
    }
  }
  c.point = (support_a + support_b) * 0.5;
  return c;
}

std::optional<Contact> pair_contact(const Body& a, const Body& b) {
  if (a.kind == ShapeKind::Circle && b.kind == ShapeKind::Circle) return circle_circle(a, b);
  if (a.kind == ShapeKind::Circle && b.kind == ShapeKind::Box) return circle_box(a, b);
  if (a.kind == ShapeKind::Box && b.kind == ShapeKind::Circle) {
    auto c = circle_box(b, a);
    if (!c) return std::nullopt;
    c->normal = -c->normal;
    return c;
  }
  return box_box(a, b);
}

}  // namespace

bool bodies_overlap(const Body& a, const Body& b) { return pair_contact(a, b).has_value(); }

std::vector<Contact> detect_collisions(const WorldState& world) {
  std::vector<Contact> contacts;
  const int n = static_cast<int>(world.bodies.size());
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      auto c =
          pair_contact(world.bodies[static_cast<size_t>(i)], world.bodies[static_cast<size_t>(j)]);
      if (c) {
        c->a = i;
        c->b = j;
        c->b_is_wall = false;
        contacts.push_back(*c);
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    for (int w = 0; w < static_cast<int>(world.walls.size()); ++w) {
      const Body wall_body = wall_as_body(world.walls[static_cast<size_t>(w)]);
      auto c = pair_contact(world.bodies[static_cast<size_t>(i)], wall_body);
      if (c) {
        c->a = i;
        c->b = w;
        c->b_is_wall = true;
        contacts.push_back(*c);
      }
    }
  }
  return contacts;
}

void resolve_contact(WorldState& world, const Contact& contact) {
  Body& a = world.bodies.at(static_cast<size_t>(contact.a));
  Body wall_storage;
  Body* b;
  if (contact.b_is_wall) {
    wall_storage = wall_as_body(world.walls.at(static_cast<size_t>(contact.b)));
    b = &wall_storage;
  } else {
    b = &world.bodies.at(static_cast<size_t>(contact.b));
  }

  const Vec2 n = contact.normal;
  const Vec2 ra = contact.point - a.position;
  const Vec2 rb = contact.point - b->position;

  const auto rel_velocity = [&]() {
    return (b->velocity + cross(b->angular_velocity, rb)) -
           (a.velocity + cross(a.angular_velocity, ra));
  };

  const double vn = dot(rel_velocity(), n);
  const double e = std::min(a.elasticity, b->elasticity);
  if (vn < 0) {
    const double ra_n = cross(ra, n), rb_n = cross(rb, n);
    const double k_normal =
        a.inv_mass + b->inv_mass + ra_n * ra_n * a.inv_inertia + rb_n * rb_n * b->inv_inertia;
    const double jn = -(1.0 + e) * vn / k_normal;
    const Vec2 impulse = n * jn;
    a.velocity -= impulse * a.inv_mass;
    a.angular_velocity -= a.inv_inertia * cross(ra, impulse);
    b->velocity += impulse * b->inv_mass;
    b->angular_velocity += b->inv_inertia * cross(rb, impulse);

    const double mu = a.friction * b->friction;
    if (mu > 0) {
      const Vec2 v2 = rel_velocity();
      Vec2 t = v2 - n * dot(v2, n);
      const double tl = length(t);
      if (tl > 1e-9) {
        t = t * (1.0 / tl);
        const double ra_t = cross(ra, t), rb_t = cross(rb, t);
        const double k_tangent =
            a.inv_mass + b->inv_mass + ra_t * ra_t * a.inv_inertia + rb_t * rb_t * b->inv_inertia;
        double jt = -dot(v2, t) / k_tangent;
        jt = std::clamp(jt, -mu * jn, mu * jn);
        const Vec2 friction_impulse = t * jt;
        a.velocity -= friction_impulse * a.inv_mass;
        a.angular_velocity -= a.inv_inertia * cross(ra, friction_impulse);
        b->velocity += friction_impulse * b->inv_mass;
        b->angular_velocity += b->inv_inertia * cross(rb, friction_impulse);
      }
    }
  }

  // Positional correction; velocities untouched. Approaching wall contacts
  // get the time-of-impact-exact push-out (1+e)*penetration, which lands the
  // body exactly on the reflected free-flight path; everything else uses a
  // Baumgarte push.
  if (contact.b_is_wall && vn < 0) {
    a.position -= n * ((1.0 + e) * contact.penetration);
    return;
  }
  const double inv_mass_sum = a.inv_mass + b->inv_mass;
  if (inv_mass_sum > 0) {
    const double mag = kBaumgarte * std::max(contact.penetration - kSlop, 0.0) / inv_mass_sum;
    a.position -= n * (mag * a.inv_mass);
    if (!contact.b_is_wall) b->position += n * (mag * b->inv_mass);
  }
}

void step(WorldState& world) {
  if (world.dt <= 0) throw std::invalid_argument("step: dt must be positive");
  const double damp = std::max(0.0, 1.0 - world.drag * world.dt);
  for (Body& b : world.bodies) {
    b.velocity = b.velocity * damp;
    b.position += b.velocity * world.dt;
    b.angle += b.angular_velocity * world.dt;
  }
  world.last_contacts_ = detect_collisions(world);
  for (const Contact& c : world.last_contacts_) resolve_contact(world, c);
  // Impulses run in a single pass; leftover overlap is then relaxed with
  // position-only sweeps so the post-step penetration bound holds. These
  // never touch velocities, so energy and momentum are unaffected.
  for (int sweep = 0; sweep < 8; ++sweep) {
    bool any = false;
    for (const Contact& c : detect_collisions(world)) {
      if (c.penetration <= kSlop) continue;
      any = true;
      Body& a = world.bodies[static_cast<size_t>(c.a)];
      if (c.b_is_wall) {
        a.position -= c.normal * c.penetration;
      } else {
        Body& b = world.bodies[static_cast<size_t>(c.b)];
        const double mag =
            kBaumgarte * (c.penetration - kSlop) / (a.inv_mass + b.inv_mass);
        a.position -= c.normal * (mag * a.inv_mass);
        b.position += c.normal * (mag * b.inv_mass);
      }
    }
    if (!any) break;
  }
}

double kinetic_energy(const WorldState& world) {
  double e = 0;
  for (const Body& b : world.bodies) {
    e += 0.5 * b.mass * dot(b.velocity, b.velocity);
    e += 0.5 * b.inertia * b.angular_velocity * b.angular_velocity;
  }
  return e;
}

Vec2 total_momentum(const WorldState& world) {
  Vec2 p;
  for (const Body& b : world.bodies) p += b.velocity * b.mass;
  return p;
}

namespace {

bool inside_bounds(const Body& b, Vec2 lo, Vec2 hi, double margin) {
  const double ext = b.extent();
  return b.position.x - ext >= lo.x + margin && b.position.x + ext <= hi.x - margin &&
         b.position.y - ext >= lo.y + margin && b.position.y + ext <= hi.y - margin;
}

bool overlaps_any_wall(const Body& b, const std::vector<Wall>& walls) {
  for (const Wall& w : walls)
    if (bodies_overlap(b, wall_as_body(w))) return true;
  return false;
}

}  // namespace

WorldState sample_world(uint64_t seed, const SampleConfig& cfg) {
  if (cfg.n_bodies_min > cfg.n_bodies_max || cfg.n_walls_min > cfg.n_walls_max ||
      cfg.size_min > cfg.size_max || cfg.speed_min > cfg.speed_max)
    throw std::invalid_argument("sample_world: empty range in config (" + cfg.describe() + ")");
  if (cfg.size_min <= 0) throw std::invalid_argument("sample_world: sizes must be positive");

  WorldState world;
  world.rng_seed = seed;
  world.drag = cfg.drag;
  world.walls = boundary_walls();
  Rng rng(seed);

  const int n_walls = rng.uniform_int(cfg.n_walls_min, cfg.n_walls_max);
  for (int i = 0; i < n_walls; ++i) {
    const bool horizontal = rng.bernoulli(0.5);
    const double len = rng.uniform(0.2, 0.5);
    const double thick = 0.04;
    const double along = rng.uniform(0.1 + len / 2, 0.9 - len / 2);
    const double across = rng.uniform(0.1 + thick / 2, 0.9 - thick / 2);
    Wall w;
    if (horizontal) {
      w.min = {along - len / 2, across - thick / 2};
      w.max = {along + len / 2, across + thick / 2};
    } else {
      w.min = {across - thick / 2, along - len / 2};
      w.max = {across + thick / 2, along + len / 2};
    }
    world.walls.push_back(w);
  }

  const int n_bodies = rng.uniform_int(cfg.n_bodies_min, cfg.n_bodies_max);
  for (int i = 0; i < n_bodies; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxPlacementAttempts && !placed; ++attempt) {
      const bool is_circle = rng.bernoulli(0.5);
      const Color color = kObstaclePalette[static_cast<size_t>(
          rng.uniform_int(0, static_cast<int>(kObstaclePalette.size()) - 1))];
      const double speed = rng.uniform(cfg.speed_min, cfg.speed_max);
      const double dir = rng.uniform(0, 2 * kPi);
      const Vec2 vel{speed * std::cos(dir), speed * std::sin(dir)};
      Body body;
      if (is_circle) {
        const double r = rng.uniform(cfg.size_min, cfg.size_max);
        const Vec2 pos{rng.uniform(r, 1 - r), rng.uniform(r, 1 - r)};
        body = Body::circle(r, pos, vel, cfg.elasticity, cfg.friction, color);
      } else {
        const double hw = rng.uniform(cfg.size_min, cfg.size_max);
        const double hh = rng.uniform(cfg.size_min, cfg.size_max);
        const double angle = rng.uniform(0, 2 * kPi);
        const double spin = rng.uniform(-cfg.spin_max, cfg.spin_max);
        const double ext = std::sqrt(hw * hw + hh * hh);
        const Vec2 pos{rng.uniform(ext, 1 - ext), rng.uniform(ext, 1 - ext)};
        body = Body::box(hw, hh, pos, vel, angle, spin, cfg.elasticity, cfg.friction, color);
      }
      if (!inside_bounds(body, world.bounds_min, world.bounds_max, 1e-3)) continue;
      if (overlaps_any_wall(body, world.walls)) continue;
      bool hits_body = false;
      for (const Body& other : world.bodies)
        if (bodies_overlap(body, other)) {
          hits_body = true;
          break;
        }
      if (hits_body) continue;
      world.bodies.push_back(body);
      placed = true;
    }
    if (!placed)
      throw std::runtime_error("sample_world: failed to place body " + std::to_string(i) +
                               " after 10000 attempts (" + cfg.describe() + ")");
  }
  return world;
}

}  // namespace physprior::phys
