#pragma once

#include <map>
#include <optional>
#include <string>

#include "physprior/physics2d.hpp"
#include "physprior/raster.hpp"

namespace physprior::env {

enum class Game { PhysGoal, PhysForage, PhysShooter };

Game game_from_name(const std::string& name);
std::string game_name(Game game);

struct EnvConfig {
  Game game = Game::PhysGoal;
  int height = 84, width = 84;
  int obstacles_min = 8, obstacles_max = 12;
  double obstacle_size_min = 0.03, obstacle_size_max = 0.06;
  double speed_min = 0.15, speed_max = 0.4;
  int walls_max = 3;
  double box_fraction = 0.5;  // obstacle shape mix
  int step_cap = 1000;
  // Test variant: no obstacles and the goal respawns at a fixed offset from
  // the agent, making PhysGoal trivially learnable.
  bool trivial_goal = false;

  std::string to_json() const;
  static EnvConfig from_json(const std::string& json);  // unknown keys rejected
};

struct StepResult {
  raster::Frame observation;
  double reward = 0;
  bool done = false;
  std::map<std::string, int> info;  // event tags: goal_reached, hit_obstacle, ...
};

// The three games over the shared simulator. Episodes are fully determined
// by (reset seed, action sequence).
class PhysEnv {
 public:
  explicit PhysEnv(const EnvConfig& cfg);

  const EnvConfig& config() const { return cfg_; }
  int n_actions() const { return cfg_.game == Game::PhysShooter ? 9 : 5; }
  bool done() const { return done_; }
  int steps() const { return steps_; }

  raster::Frame reset(uint64_t seed);
  StepResult step(int action);

  // Inspection hooks for tests and tools.
  const phys::WorldState& world() const { return world_; }
  phys::Vec2 agent_position() const { return world_.bodies[static_cast<size_t>(agent_idx_)].position; }
  phys::Vec2 goal_position() const { return goal_pos_; }
  bool bullet_live() const { return bullet_.has_value(); }

 private:
  struct Bullet {
    phys::Vec2 position;
    phys::Vec2 velocity;
  };

  raster::Frame render() const;
  void respawn_goal();
  void respawn_obstacle(int index);
  phys::Vec2 sample_clear_position(double probe_extent, std::optional<phys::Vec2> avoid,
                                   double avoid_dist);

  EnvConfig cfg_;
  phys::WorldState world_;
  Rng rng_{0};
  int agent_idx_ = -1;
  phys::Vec2 goal_pos_;
  std::optional<Bullet> bullet_;
  int steps_ = 0;
  bool done_ = true;  // must reset first
};

inline constexpr double kAgentRadius = 0.035;
inline constexpr double kAgentSpeed = 0.55;
inline constexpr double kGoalRadius = 0.07;
inline constexpr double kBulletRadius = 0.012;
inline constexpr double kBulletSpeed = 0.9;

}  // namespace physprior::env
