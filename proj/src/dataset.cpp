#include "physprior/dataset.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <thread>

#include <json.hpp>

namespace physprior::data {

using nlohmann::json;

GenConfig GenConfig::desk() {
  GenConfig c;
  c.n_traj = 64;
  c.traj_len = 40;
  c.height = 42;
  c.width = 42;
  return c;
}

phys::SampleConfig GenConfig::sample_config() const {
  phys::SampleConfig s;
  s.n_bodies_min = bodies_min;
  s.n_bodies_max = bodies_max;
  s.n_walls_min = walls_min;
  s.n_walls_max = walls_max;
  s.size_min = size_min;
  s.size_max = size_max;
  s.speed_min = speed_min;
  s.speed_max = speed_max;
  s.elasticity = elasticity;
  s.friction = friction;
  s.drag = drag;
  return s;
}

namespace {

json config_to_json_obj(const GenConfig& c) {
  return json{{"n_traj", c.n_traj},
              {"traj_len", c.traj_len},
              {"height", c.height},
              {"width", c.width},
              {"bodies_min", c.bodies_min},
              {"bodies_max", c.bodies_max},
              {"walls_min", c.walls_min},
              {"walls_max", c.walls_max},
              {"size_min", c.size_min},
              {"size_max", c.size_max},
              {"speed_min", c.speed_min},
              {"speed_max", c.speed_max},
              {"elasticity", c.elasticity},
              {"friction", c.friction},
              {"drag", c.drag},
              {"master_seed", c.master_seed}};
}

GenConfig config_from_json_obj(const json& j) {
  GenConfig c;
  const json defaults = config_to_json_obj(c);
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key))
      throw std::invalid_argument("unknown dataset config key \"" + key + "\"");
    (void)value;
  }
  c.n_traj = j.value("n_traj", c.n_traj);
  c.traj_len = j.value("traj_len", c.traj_len);
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.bodies_min = j.value("bodies_min", c.bodies_min);
  c.bodies_max = j.value("bodies_max", c.bodies_max);
  c.walls_min = j.value("walls_min", c.walls_min);
  c.walls_max = j.value("walls_max", c.walls_max);
  c.size_min = j.value("size_min", c.size_min);
  c.size_max = j.value("size_max", c.size_max);
  c.speed_min = j.value("speed_min", c.speed_min);
  c.speed_max = j.value("speed_max", c.speed_max);
  c.elasticity = j.value("elasticity", c.elasticity);
  c.friction = j.value("friction", c.friction);
  c.drag = j.value("drag", c.drag);
  c.master_seed = j.value("master_seed", c.master_seed);
  return c;
}

constexpr char kMagic[4] = {'P', 'V', 'D', '1'};

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw DatasetError(DatasetErrorKind::Truncated, "dataset truncated: " + path);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint64_t trajectory_seed(uint64_t master_seed, uint64_t index) {
  return splitmix64(master_seed ^ index);
}

// Renders one trajectory into a contiguous byte buffer.
std::vector<uint8_t> trajectory_bytes(uint64_t global_index, const GenConfig& cfg) {
  phys::WorldState world;
  try {
    world = phys::sample_world(trajectory_seed(cfg.master_seed, global_index),
                               cfg.sample_config());
  } catch (const std::exception& e) {
    throw std::runtime_error("trajectory " + std::to_string(global_index) + ": " + e.what());
  }
  const size_t frame_bytes = static_cast<size_t>(cfg.height) * cfg.width * 3;
  std::vector<uint8_t> out(frame_bytes * static_cast<size_t>(cfg.traj_len));
  for (int t = 0; t < cfg.traj_len; ++t) {
    raster::Frame f = raster::rasterize(world, cfg.height, cfg.width);
    std::memcpy(out.data() + frame_bytes * static_cast<size_t>(t), f.data.data(), frame_bytes);
    phys::step(world);
  }
  return out;
}

void write_range(const GenConfig& cfg, int begin, int end, const std::string& path, int threads) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DatasetError(DatasetErrorKind::Io, "cannot open for writing: " + path);
  os.write(kMagic, 4);
  write_u32(os, 1);
  write_u32(os, static_cast<uint32_t>(end - begin));
  write_u32(os, static_cast<uint32_t>(cfg.traj_len));
  write_u32(os, static_cast<uint32_t>(cfg.height));
  write_u32(os, static_cast<uint32_t>(cfg.width));
  write_u32(os, 3);
  const json meta = {{"config", config_to_json_obj(cfg)},
                     {"master_seed", cfg.master_seed},
                     {"first_trajectory", begin}};
  const std::string meta_str = meta.dump();
  write_u32(os, static_cast<uint32_t>(meta_str.size()));
  os.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));

  threads = std::max(1, threads);
  const int block = std::max(threads * 4, 1);
  for (int block_begin = begin; block_begin < end; block_begin += block) {
    const int block_end = std::min(end, block_begin + block);
    std::vector<std::vector<uint8_t>> buffers(static_cast<size_t>(block_end - block_begin));
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&](int offset) {
      for (int i = block_begin + offset; i < block_end; i += threads) {
        try {
          buffers[static_cast<size_t>(i - block_begin)] = trajectory_bytes(i, cfg);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    };
    if (threads == 1) {
      worker(0);
    } else {
      std::vector<std::thread> pool;
      for (int w = 0; w < threads; ++w) pool.emplace_back(worker, w);
      for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    for (const auto& buf : buffers)
      os.write(reinterpret_cast<const char*>(buf.data()),
               static_cast<std::streamsize>(buf.size()));
  }
  if (!os) throw DatasetError(DatasetErrorKind::Io, "write failed: " + path);
}

}  // namespace

std::string GenConfig::to_json() const { return config_to_json_obj(*this).dump(2); }

GenConfig GenConfig::from_json(const std::string& text) {
  return config_from_json_obj(json::parse(text));
}

GenConfig make_generalization_config(const GenConfig& base, const std::string& variant) {
  GenConfig c = base;
  if (variant == "small_fast") {
    c.size_min /= 2;
    c.size_max /= 2;
    c.speed_min *= 2;
    c.speed_max *= 2;
  } else if (variant == "large_scene") {
    c.height = 168;
    c.width = 168;
    c.bodies_min = 16;
    c.bodies_max = 32;
  } else {
    throw std::invalid_argument("unknown generalization variant \"" + variant +
                                "\" (expected small_fast or large_scene)");
  }
  return c;
}

std::vector<raster::Frame> generate_trajectory(uint64_t seed, const GenConfig& cfg) {
  phys::WorldState world = phys::sample_world(seed, cfg.sample_config());
  std::vector<raster::Frame> frames;
  frames.reserve(static_cast<size_t>(cfg.traj_len));
  for (int t = 0; t < cfg.traj_len; ++t) {
    frames.push_back(raster::rasterize(world, cfg.height, cfg.width));
    phys::step(world);
  }
  return frames;
}

void generate_dataset(const GenConfig& cfg, const std::string& path, int threads) {
  write_range(cfg, 0, cfg.n_traj, path, threads);
}

void generate_dataset_split(const GenConfig& cfg, int split, const std::string& train_path,
                            const std::string& test_path, int threads) {
  ag::check(split > 0 && split < cfg.n_traj,
            "split must be strictly inside (0, n_traj); got " + std::to_string(split));
  write_range(cfg, 0, split, train_path, threads);
  write_range(cfg, split, cfg.n_traj, test_path, threads);
}

DatasetReader::DatasetReader(const std::string& path) : path_(path) {
  file_.open(path, std::ios::binary);
  if (!file_) throw DatasetError(DatasetErrorKind::Io, "cannot open dataset: " + path);
  char magic[4];
  if (!file_.read(magic, 4))
    throw DatasetError(DatasetErrorKind::Truncated, "dataset truncated: " + path);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw DatasetError(DatasetErrorKind::BadMagic, "not a PVD1 dataset: " + path);
  header_.version = read_u32(file_, path);
  if (header_.version != 1)
    throw DatasetError(DatasetErrorKind::BadVersion,
                       "unsupported PVD1 version " + std::to_string(header_.version));
  header_.n_traj = read_u32(file_, path);
  header_.traj_len = read_u32(file_, path);
  header_.height = read_u32(file_, path);
  header_.width = read_u32(file_, path);
  header_.channels = read_u32(file_, path);
  const uint32_t meta_len = read_u32(file_, path);
  header_.metadata_json.resize(meta_len);
  if (meta_len > 0 && !file_.read(header_.metadata_json.data(), meta_len))
    throw DatasetError(DatasetErrorKind::Truncated, "dataset truncated: " + path);
  payload_offset_ = file_.tellg();

  const uint64_t expected_payload = static_cast<uint64_t>(header_.n_traj) * header_.traj_len *
                                    header_.height * header_.width * header_.channels;
  const auto actual = std::filesystem::file_size(path);
  if (actual != static_cast<uint64_t>(payload_offset_) + expected_payload)
    throw DatasetError(DatasetErrorKind::Truncated,
                       "dataset payload size mismatch in " + path + ": expected " +
                           std::to_string(expected_payload) + " payload bytes");
}

raster::Frame DatasetReader::frame(int traj, int t) const {
  if (traj < 0 || traj >= n_traj() || t < 0 || t >= traj_len())
    throw DatasetError(DatasetErrorKind::BadIndex,
                       "frame index (" + std::to_string(traj) + "," + std::to_string(t) +
                           ") out of range");
  const int64_t frame_bytes = static_cast<int64_t>(header_.height) * header_.width * 3;
  const int64_t offset =
      payload_offset_ + (static_cast<int64_t>(traj) * traj_len() + t) * frame_bytes;
  raster::Frame f(height(), width());
  std::lock_guard<std::mutex> lock(mutex_);
  file_.clear();
  file_.seekg(offset);
  if (!file_.read(reinterpret_cast<char*>(f.data.data()), frame_bytes))
    throw DatasetError(DatasetErrorKind::Truncated, "dataset truncated while reading " + path_);
  return f;
}

ag::Tensor corrupt_gaussian(const ag::Tensor& frame, double eps, Rng& rng) {
  ag::check(eps >= 0, "corrupt_gaussian: eps must be non-negative");
  if (eps == 0) return frame.clone();
  ag::Tensor out = frame.clone();
  for (int64_t i = 0; i < out.numel(); ++i)
    out.set_at(i, std::clamp(out.at(i) + eps * rng.normal(), 0.0, 1.0));
  return out;
}

int count_objects(const raster::Frame& frame) {
  const auto differs = [](Color a, Color b) {
    return std::abs(int(a.r) - int(b.r)) > 16 || std::abs(int(a.g) - int(b.g)) > 16 ||
           std::abs(int(a.b) - int(b.b)) > 16;
  };
  const int h = frame.height, w = frame.width;
  std::vector<uint8_t> mask(static_cast<size_t>(h) * w, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const Color c = frame.pixel(y, x);
      mask[static_cast<size_t>(y) * w + x] =
          differs(c, kBackgroundColor) && differs(c, kWallColor) ? 1 : 0;
    }
  std::vector<uint8_t> seen(static_cast<size_t>(h) * w, 0);
  std::vector<int> stack;
  int count = 0;
  for (int start = 0; start < h * w; ++start) {
    if (!mask[static_cast<size_t>(start)] || seen[static_cast<size_t>(start)]) continue;
    int area = 0;
    stack.assign(1, start);
    seen[static_cast<size_t>(start)] = 1;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      ++area;
      const int y = p / w, x = p % w;
      const int neighbors[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& n : neighbors) {
        if (n[0] < 0 || n[0] >= h || n[1] < 0 || n[1] >= w) continue;
        const int q = n[0] * w + n[1];
        if (mask[static_cast<size_t>(q)] && !seen[static_cast<size_t>(q)]) {
          seen[static_cast<size_t>(q)] = 1;
          stack.push_back(q);
        }
      }
    }
    if (area >= 4) ++count;
  }
  return count;
}

}  // namespace physprior::data
