#pragma once

#include <cstdint>
#include <fstream>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "physprior/physics2d.hpp"
#include "physprior/raster.hpp"
#include "physprior/rng.hpp"

namespace physprior::data {

struct GenConfig {
  int n_traj = 5000;
  int traj_len = 125;
  int height = 84, width = 84;
  int bodies_min = 4, bodies_max = 8;
  int walls_min = 0, walls_max = 3;
  double size_min = 0.04, size_max = 0.08;
  double speed_min = 0.2, speed_max = 0.5;
  double elasticity = 0.95, friction = 0.9, drag = 0.0;
  uint64_t master_seed = 0;

  // 64 trajectories x 40 steps at 42x42; the profile the acceptance runs use.
  static GenConfig desk();

  phys::SampleConfig sample_config() const;
  std::string to_json() const;           // config echo for file metadata
  static GenConfig from_json(const std::string& json);  // unknown keys rejected
};

// variant in {small_fast, large_scene}; composes (a variant of a variant
// applies both adjustments).
GenConfig make_generalization_config(const GenConfig& base, const std::string& variant);

// Frame t is the render of the world after t simulator steps.
std::vector<raster::Frame> generate_trajectory(uint64_t seed, const GenConfig& cfg);

// Per-trajectory seed = splitmix64(master_seed XOR global_index). Threads
// only affect wall-clock time: output bytes are identical.
void generate_dataset(const GenConfig& cfg, const std::string& path, int threads = 1);

// First `split` trajectories to train_path, the rest to test_path.
void generate_dataset_split(const GenConfig& cfg, int split, const std::string& train_path,
                            const std::string& test_path, int threads = 1);

struct DatasetHeader {
  uint32_t version = 1;
  uint32_t n_traj = 0;
  uint32_t traj_len = 0;
  uint32_t height = 0;
  uint32_t width = 0;
  uint32_t channels = 3;
  std::string metadata_json;
};

enum class DatasetErrorKind { BadMagic, BadVersion, Truncated, BadIndex, Io };

class DatasetError : public std::runtime_error {
 public:
  DatasetError(DatasetErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  DatasetErrorKind kind() const { return kind_; }

 private:
  DatasetErrorKind kind_;
};

// Random access to stored frames without loading the file. Read-only and
// shareable after open (reads are serialized internally).
class DatasetReader {
 public:
  explicit DatasetReader(const std::string& path);
  const DatasetHeader& header() const { return header_; }
  int n_traj() const { return static_cast<int>(header_.n_traj); }
  int traj_len() const { return static_cast<int>(header_.traj_len); }
  int height() const { return static_cast<int>(header_.height); }
  int width() const { return static_cast<int>(header_.width); }
  raster::Frame frame(int traj, int t) const;

 private:
  std::string path_;
  DatasetHeader header_;
  int64_t payload_offset_ = 0;
  mutable std::ifstream file_;
  mutable std::mutex mutex_;
};

// eps * standard normal added per sample on [0,1] values, then clamped.
// eps = 0 returns the input unchanged (bit-exact).
ag::Tensor corrupt_gaussian(const ag::Tensor& frame, double eps, Rng& rng);

// Connected-component count over the foreground mask: pixels whose color
// differs from both the background and the wall color by more than 16/255
// in some channel; 4-connectivity; components of at least 4 pixels.
int count_objects(const raster::Frame& frame);

}  // namespace physprior::data
