#include "physprior/raster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace physprior::raster {

namespace {

// Pixel (py, px) covers the world point at its center. The room maps to the
// full frame; world y grows downward with the row index.
inline phys::Vec2 pixel_center(int py, int px, int h, int w, const phys::WorldState& world) {
  const double sx = (world.bounds_max.x - world.bounds_min.x) / w;
  const double sy = (world.bounds_max.y - world.bounds_min.y) / h;
  return {world.bounds_min.x + (px + 0.5) * sx, world.bounds_min.y + (py + 0.5) * sy};
}

inline bool point_in_body(const phys::Body& b, phys::Vec2 p) {
  if (b.kind == phys::ShapeKind::Circle) {
    const phys::Vec2 d = p - b.position;
    return dot(d, d) <= b.radius * b.radius;
  }
  const phys::Vec2 local = rotate(p - b.position, -b.angle);
  return std::abs(local.x) <= b.half_w && std::abs(local.y) <= b.half_h;
}

}  // namespace

Frame rasterize(const phys::WorldState& world, int height, int width) {
  ag::check(height >= 16 && width >= 16, "rasterize: frame must be at least 16x16");
  Frame frame(height, width);

  const double room_w = world.bounds_max.x - world.bounds_min.x;
  const double room_h = world.bounds_max.y - world.bounds_min.y;
  const double px_per_x = width / room_w;
  const double px_per_y = height / room_h;

  for (const phys::Wall& wall : world.walls) {
    const int x0 = std::max(0, static_cast<int>(std::floor((wall.min.x - world.bounds_min.x) * px_per_x)));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil((wall.max.x - world.bounds_min.x) * px_per_x)));
    const int y0 = std::max(0, static_cast<int>(std::floor((wall.min.y - world.bounds_min.y) * px_per_y)));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil((wall.max.y - world.bounds_min.y) * px_per_y)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const phys::Vec2 p = pixel_center(y, x, height, width, world);
        if (p.x >= wall.min.x && p.x <= wall.max.x && p.y >= wall.min.y && p.y <= wall.max.y)
          frame.set_pixel(y, x, kWallColor);
      }
  }

  for (const phys::Body& body : world.bodies) {
    const double ext = body.extent();
    const int x0 = std::max(0, static_cast<int>(std::floor((body.position.x - ext - world.bounds_min.x) * px_per_x)) - 1);
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil((body.position.x + ext - world.bounds_min.x) * px_per_x)) + 1);
    const int y0 = std::max(0, static_cast<int>(std::floor((body.position.y - ext - world.bounds_min.y) * px_per_y)) - 1);
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil((body.position.y + ext - world.bounds_min.y) * px_per_y)) + 1);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (point_in_body(body, pixel_center(y, x, height, width, world)))
          frame.set_pixel(y, x, body.color);
  }
  return frame;
}

void write_ppm(const Frame& frame, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "P6\n" << frame.width << " " << frame.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(frame.data.data()),
           static_cast<std::streamsize>(frame.data.size()));
  if (!os) throw std::runtime_error("write failed: " + path);
}

Frame read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255 || w <= 0 || h <= 0)
    throw std::runtime_error("not a supported P6 PPM: " + path);
  is.get();  // single whitespace after the header
  Frame frame(h, w);
  if (!is.read(reinterpret_cast<char*>(frame.data.data()),
               static_cast<std::streamsize>(frame.data.size())))
    throw std::runtime_error("PPM truncated: " + path);
  return frame;
}

ag::Tensor frame_to_tensor(const Frame& frame, ag::DType dt) {
  ag::Tensor t = ag::Tensor::zeros({3, frame.height, frame.width}, dt);
  const int64_t hw = static_cast<int64_t>(frame.height) * frame.width;
  if (dt == ag::DType::F32) {
    auto d = t.mutable_data<float>();
    for (int y = 0; y < frame.height; ++y)
      for (int x = 0; x < frame.width; ++x)
        for (int c = 0; c < 3; ++c)
          d[c * hw + y * frame.width + x] = frame.at(y, x, c) / 255.0f;
  } else {
    auto d = t.mutable_data<double>();
    for (int y = 0; y < frame.height; ++y)
      for (int x = 0; x < frame.width; ++x)
        for (int c = 0; c < 3; ++c)
          d[c * hw + y * frame.width + x] = frame.at(y, x, c) / 255.0;
  }
  return t;
}

Frame tensor_to_frame(const ag::Tensor& t) {
  ag::check(t.rank() == 3 && t.dim(0) == 3, "tensor_to_frame: expected [3,h,w], got " +
                                                ag::shape_str(t.shape()));
  const int h = t.dim(1), w = t.dim(2);
  const int64_t hw = static_cast<int64_t>(h) * w;
  Frame frame(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(t.at(c * hw + y * w + x), 0.0, 1.0);
        frame.at(y, x, c) = static_cast<uint8_t>(std::lround(v * 255.0));
      }
  return frame;
}

}  // namespace physprior::raster
