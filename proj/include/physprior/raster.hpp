#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "physprior/color.hpp"
#include "physprior/physics2d.hpp"
#include "physprior/tensor.hpp"

namespace physprior::raster {

// Row-major, channel-interleaved RGB with 8-bit samples. Enters the
// learning stack as value/255 in [0,1].
struct Frame {
  int height = 0, width = 0;
  std::vector<uint8_t> data;  // height * width * 3

  Frame() = default;
  Frame(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w * 3, 0) {}

  uint8_t& at(int y, int x, int c) {
    return data[(static_cast<size_t>(y) * width + x) * 3 + static_cast<size_t>(c)];
  }
  uint8_t at(int y, int x, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * 3 + static_cast<size_t>(c)];
  }
  Color pixel(int y, int x) const { return {at(y, x, 0), at(y, x, 1), at(y, x, 2)}; }
  void set_pixel(int y, int x, Color c) {
    at(y, x, 0) = c.r;
    at(y, x, 1) = c.g;
    at(y, x, 2) = c.b;
  }
  bool operator==(const Frame&) const = default;
};

// Center-point coverage, no anti-aliasing: black background, mid-gray
// walls, then bodies in list order (later bodies draw over earlier ones).
Frame rasterize(const phys::WorldState& world, int height, int width);

// Binary PPM ("P6").
void write_ppm(const Frame& frame, const std::string& path);
Frame read_ppm(const std::string& path);

// [3,H,W] in [0,1]; exact value/255 conversion.
ag::Tensor frame_to_tensor(const Frame& frame, ag::DType dt = ag::DType::F32);
// Clamps to [0,1] and rounds to bytes.
Frame tensor_to_frame(const ag::Tensor& t);

}  // namespace physprior::raster
