#pragma once

#include <array>
#include <cstdint>

namespace physprior {

struct Color {
  uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Color&) const = default;
};

// Rendering conventions shared by the dataset generator and the games.
inline constexpr Color kBackgroundColor{0, 0, 0};
inline constexpr Color kWallColor{128, 128, 128};
inline constexpr Color kAgentColor{0, 0, 139};       // dark blue
inline constexpr Color kGoalColor{255, 0, 0};        // red
inline constexpr Color kCollectibleColor{173, 216, 230};  // light blue
inline constexpr Color kBulletColor{0, 255, 0};      // green

// Obstacle colors: saturated hues distinct from the background, walls and
// every reserved game color.
inline constexpr std::array<Color, 8> kObstaclePalette{{
    {255, 255, 0},    // yellow
    {255, 128, 0},    // orange
    {0, 255, 255},    // cyan
    {255, 0, 255},    // magenta
    {128, 0, 255},    // violet
    {255, 0, 128},    // pink
    {0, 128, 255},    // azure
    {128, 255, 0},    // lime
}};

}  // namespace physprior
