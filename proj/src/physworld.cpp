#include "physprior/physworld.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace physprior::env {

using nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kMaxPlacementAttempts = 10000;
constexpr double kTrivialGoalOffset = 0.12;

}  // namespace

Game game_from_name(const std::string& name) {
  if (name == "physgoal") return Game::PhysGoal;
  if (name == "physforage") return Game::PhysForage;
  if (name == "physshooter") return Game::PhysShooter;
  throw std::invalid_argument("unknown game \"" + name +
                              "\" (expected physgoal, physforage or physshooter)");
}

std::string game_name(Game game) {
  switch (game) {
    case Game::PhysGoal: return "physgoal";
    case Game::PhysForage: return "physforage";
    case Game::PhysShooter: return "physshooter";
  }
  return "?";
}

std::string EnvConfig::to_json() const {
  return json{{"game", game_name(game)},
              {"height", height},
              {"width", width},
              {"obstacles_min", obstacles_min},
              {"obstacles_max", obstacles_max},
              {"obstacle_size_min", obstacle_size_min},
              {"obstacle_size_max", obstacle_size_max},
              {"speed_min", speed_min},
              {"speed_max", speed_max},
              {"walls_max", walls_max},
              {"box_fraction", box_fraction},
              {"step_cap", step_cap},
              {"trivial_goal", trivial_goal}}
      .dump(2);
}

EnvConfig EnvConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  EnvConfig c;
  const json known = json::parse(c.to_json());
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw std::invalid_argument("unknown env config key \"" + key + "\"");
    (void)value;
  }
  if (j.contains("game")) c.game = game_from_name(j["game"].get<std::string>());
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.obstacles_min = j.value("obstacles_min", c.obstacles_min);
  c.obstacles_max = j.value("obstacles_max", c.obstacles_max);
  c.obstacle_size_min = j.value("obstacle_size_min", c.obstacle_size_min);
  c.obstacle_size_max = j.value("obstacle_size_max", c.obstacle_size_max);
  c.speed_min = j.value("speed_min", c.speed_min);
  c.speed_max = j.value("speed_max", c.speed_max);
  c.walls_max = j.value("walls_max", c.walls_max);
  c.box_fraction = j.value("box_fraction", c.box_fraction);
  c.step_cap = j.value("step_cap", c.step_cap);
  c.trivial_goal = j.value("trivial_goal", c.trivial_goal);
  return c;
}

PhysEnv::PhysEnv(const EnvConfig& cfg) : cfg_(cfg) {
  ag::check(cfg.step_cap >= 1, "env: step cap must be >= 1");
  ag::check(cfg.obstacles_min <= cfg.obstacles_max, "env: empty obstacle range");
}

// probe_extent already includes any desired padding around the entity.
phys::Vec2 PhysEnv::sample_clear_position(double probe_extent, std::optional<phys::Vec2> avoid,
                                          double avoid_dist) {
  for (int attempt = 0; attempt < kMaxPlacementAttempts; ++attempt) {
    const phys::Vec2 pos{rng_.uniform(probe_extent + 0.01, 0.99 - probe_extent),
                         rng_.uniform(probe_extent + 0.01, 0.99 - probe_extent)};
    const phys::Body probe = phys::Body::circle(probe_extent, pos, {}, 1, 0, kBackgroundColor);
    bool clear = true;
    for (size_t w = 4; w < world_.walls.size() && clear; ++w) {
      const phys::Wall& wall = world_.walls[w];
      phys::Body wall_box =
          phys::Body::box(wall.half().x, wall.half().y, wall.center(), {}, 0, 0, 1, 0, kWallColor);
      if (phys::bodies_overlap(probe, wall_box)) clear = false;
    }
    for (size_t i = 0; i < world_.bodies.size() && clear; ++i)
      if (phys::bodies_overlap(probe, world_.bodies[i])) clear = false;
    if (clear && avoid && length(pos - *avoid) < avoid_dist) clear = false;
    if (clear) return pos;
  }
  throw std::runtime_error("env: failed to find a clear position after 10000 attempts");
}

raster::Frame PhysEnv::reset(uint64_t seed) {
  rng_ = Rng(seed);
  world_ = phys::WorldState{};
  world_.walls = phys::boundary_walls();
  agent_idx_ = -1;
  bullet_.reset();
  steps_ = 0;
  done_ = false;

  // interior walls, as in the prediction dataset
  const int n_walls = cfg_.trivial_goal ? 0 : rng_.uniform_int(0, cfg_.walls_max);
  for (int i = 0; i < n_walls; ++i) {
    const bool horizontal = rng_.bernoulli(0.5);
    const double len = rng_.uniform(0.2, 0.5);
    const double thick = 0.04;
    const double along = rng_.uniform(0.1 + len / 2, 0.9 - len / 2);
    const double across = rng_.uniform(0.1 + thick / 2, 0.9 - thick / 2);
    phys::Wall w;
    if (horizontal) {
      w.min = {along - len / 2, across - thick / 2};
      w.max = {along + len / 2, across + thick / 2};
    } else {
      w.min = {across - thick / 2, along - len / 2};
      w.max = {across + thick / 2, along + len / 2};
    }
    world_.walls.push_back(w);
  }

  const int n_obstacles =
      cfg_.trivial_goal ? 0 : rng_.uniform_int(cfg_.obstacles_min, cfg_.obstacles_max);
  const std::optional<phys::Vec2> shooter_center =
      cfg_.game == Game::PhysShooter ? std::optional<phys::Vec2>({0.5, 0.5}) : std::nullopt;
  for (int i = 0; i < n_obstacles; ++i) {
    const bool is_box = rng_.bernoulli(cfg_.box_fraction);
    const double speed = rng_.uniform(cfg_.speed_min, cfg_.speed_max);
    const double dir = rng_.uniform(0, 2 * kPi);
    const phys::Vec2 vel{speed * std::cos(dir), speed * std::sin(dir)};
    if (is_box) {
      const double hw = rng_.uniform(cfg_.obstacle_size_min, cfg_.obstacle_size_max);
      const double hh = rng_.uniform(cfg_.obstacle_size_min, cfg_.obstacle_size_max);
      const double angle = rng_.uniform(0, 2 * kPi);
      const double spin = rng_.uniform(-2.0, 2.0);
      const Color color = kObstaclePalette[static_cast<size_t>(
          rng_.uniform_int(0, static_cast<int>(kObstaclePalette.size()) - 1))];
      const double ext = std::sqrt(hw * hw + hh * hh);
      const phys::Vec2 pos = sample_clear_position(ext, shooter_center, ext + 0.15);
      world_.bodies.push_back(phys::Body::box(hw, hh, pos, vel, angle, spin, 0.95, 0.9, color));
    } else {
      const double r = rng_.uniform(cfg_.obstacle_size_min, cfg_.obstacle_size_max);
      // in PhysForage every circle is a collectible ball
      const Color color = cfg_.game == Game::PhysForage
                              ? kCollectibleColor
                              : kObstaclePalette[static_cast<size_t>(rng_.uniform_int(
                                    0, static_cast<int>(kObstaclePalette.size()) - 1))];
      const phys::Vec2 pos = sample_clear_position(r, shooter_center, r + 0.15);
      world_.bodies.push_back(phys::Body::circle(r, pos, vel, 0.95, 0.9, color));
    }
  }

  // agent is the last body; the shooter agent sits at the room center
  phys::Vec2 agent_pos;
  if (cfg_.game == Game::PhysShooter) {
    agent_pos = {0.5, 0.5};
  } else if (cfg_.trivial_goal) {
    agent_pos = sample_clear_position(kAgentRadius, std::nullopt, 0);
  } else {
    // padded probe keeps the spawn clear of every obstacle
    agent_pos = sample_clear_position(kAgentRadius + 0.1, std::nullopt, 0);
  }
  world_.bodies.push_back(
      phys::Body::circle(kAgentRadius, agent_pos, {}, 0.95, 0.9, kAgentColor));
  agent_idx_ = static_cast<int>(world_.bodies.size()) - 1;

  if (cfg_.game == Game::PhysGoal) respawn_goal();
  return render();
}

void PhysEnv::respawn_goal() {
  if (cfg_.trivial_goal) {
    phys::Vec2 pos = agent_position() + phys::Vec2{kTrivialGoalOffset, 0};
    if (pos.x > 1.0 - kGoalRadius - 0.01) pos = agent_position() - phys::Vec2{kTrivialGoalOffset, 0};
    goal_pos_ = pos;
    return;
  }
  for (int attempt = 0; attempt < kMaxPlacementAttempts; ++attempt) {
    const phys::Vec2 pos{rng_.uniform(kGoalRadius + 0.01, 0.99 - kGoalRadius),
                         rng_.uniform(kGoalRadius + 0.01, 0.99 - kGoalRadius)};
    if (length(pos - agent_position()) < kGoalRadius + kAgentRadius + 0.05) continue;
    goal_pos_ = pos;
    return;
  }
  throw std::runtime_error("env: failed to place the goal");
}

void PhysEnv::respawn_obstacle(int index) {
  phys::Body& body = world_.bodies[static_cast<size_t>(index)];
  const phys::Vec2 pos =
      sample_clear_position(body.extent() + 0.02, agent_position(), body.extent() + 0.15);
  const double speed = rng_.uniform(cfg_.speed_min, cfg_.speed_max);
  const double dir = rng_.uniform(0, 2 * kPi);
  body.position = pos;
  body.velocity = {speed * std::cos(dir), speed * std::sin(dir)};
}

raster::Frame PhysEnv::render() const {
  phys::WorldState scene;
  scene.walls = world_.walls;
  scene.bounds_min = world_.bounds_min;
  scene.bounds_max = world_.bounds_max;
  for (int i = 0; i < static_cast<int>(world_.bodies.size()); ++i)
    if (i != agent_idx_) scene.bodies.push_back(world_.bodies[static_cast<size_t>(i)]);
  if (cfg_.game == Game::PhysGoal)
    scene.bodies.push_back(phys::Body::circle(kGoalRadius, goal_pos_, {}, 1, 0, kGoalColor));
  scene.bodies.push_back(world_.bodies[static_cast<size_t>(agent_idx_)]);
  if (bullet_)
    scene.bodies.push_back(
        phys::Body::circle(kBulletRadius, bullet_->position, {}, 1, 0, kBulletColor));
  return raster::rasterize(scene, cfg_.height, cfg_.width);
}

StepResult PhysEnv::step(int action) {
  if (done_) throw std::logic_error("env: step() after episode end; call reset()");
  ag::check(action >= 0 && action < n_actions(),
            "env: action " + std::to_string(action) + " out of range [0," +
                std::to_string(n_actions()) + ")");
  StepResult result;
  phys::Body& agent = world_.bodies[static_cast<size_t>(agent_idx_)];

  if (cfg_.game == Game::PhysShooter) {
    agent.velocity = {0, 0};
    agent.angular_velocity = 0;
    if (action >= 1 && !bullet_) {
      const double angle = (action - 1) * (kPi / 4);
      const phys::Vec2 dir{std::cos(angle), std::sin(angle)};
      Bullet b;
      b.position = agent.position + dir * (kAgentRadius + kBulletRadius + 0.005);
      b.velocity = dir * kBulletSpeed;
      bullet_ = b;
      result.info["fired"] += 1;
    }
  } else {
    const double s = kAgentSpeed;
    switch (action) {
      case 0: agent.velocity = {0, 0}; break;
      case 1: agent.velocity = {0, -s}; break;  // up (row 0 is the top)
      case 2: agent.velocity = {0, s}; break;
      case 3: agent.velocity = {-s, 0}; break;
      case 4: agent.velocity = {s, 0}; break;
    }
    agent.angular_velocity = 0;
  }

  phys::step(world_);
  ++steps_;

  bool agent_hit = false;
  int touched_ball = -1;
  for (const phys::Contact& c : world_.last_contacts()) {
    if (c.b_is_wall) continue;
    const int other = c.a == agent_idx_ ? c.b : (c.b == agent_idx_ ? c.a : -1);
    if (other < 0) continue;
    const phys::Body& body = world_.bodies[static_cast<size_t>(other)];
    if (cfg_.game == Game::PhysForage && body.kind == phys::ShapeKind::Circle) {
      if (touched_ball < 0) touched_ball = other;
    } else {
      agent_hit = true;
    }
  }

  if (agent_hit) {
    result.reward = -1;
    result.done = true;
    result.info[cfg_.game == Game::PhysShooter ? "agent_hit" : "hit_obstacle"] += 1;
  } else if (cfg_.game == Game::PhysGoal &&
             length(agent_position() - goal_pos_) < kAgentRadius + kGoalRadius) {
    result.reward = 1;
    result.info["goal_reached"] += 1;
    respawn_goal();
  } else if (cfg_.game == Game::PhysForage && touched_ball >= 0) {
    result.reward = 1;
    result.info["ball_collected"] += 1;
    respawn_obstacle(touched_ball);
  } else if (cfg_.game == Game::PhysShooter && bullet_) {
    bullet_->position += bullet_->velocity * world_.dt;
    const phys::Vec2 p = bullet_->position;
    if (p.x < 0 || p.x > 1 || p.y < 0 || p.y > 1) {
      bullet_.reset();
      result.info["bullet_left"] += 1;
    } else {
      const phys::Body probe =
          phys::Body::circle(kBulletRadius, p, {}, 1, 0, kBulletColor);
      for (int i = 0; i < static_cast<int>(world_.bodies.size()); ++i) {
        if (i == agent_idx_) continue;
        if (!phys::bodies_overlap(probe, world_.bodies[static_cast<size_t>(i)])) continue;
        const bool square = world_.bodies[static_cast<size_t>(i)].kind == phys::ShapeKind::Box;
        result.reward = square ? 1 : -1;
        result.info[square ? "bullet_hit_square" : "bullet_hit_circle"] += 1;
        respawn_obstacle(i);
        bullet_.reset();
        break;
      }
    }
  }

  if (!result.done && steps_ >= cfg_.step_cap) {
    result.done = true;
    result.info["timeout"] += 1;
  }
  done_ = result.done;
  result.observation = render();
  return result;
}

}  // namespace physprior::env
