#include "physprior/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace physprior::ag {

namespace {

constexpr char kMagic[4] = {'P', 'C', 'K', 'P'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error("checkpoint truncated: " + path);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const std::string& path, const NamedTensors& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  write_u32(os, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) write_u32(os, static_cast<uint32_t>(t.dim(i)));
    const uint8_t tag = t.dtype() == DType::F32 ? 0 : 1;
    os.write(reinterpret_cast<const char*>(&tag), 1);
    if (t.dtype() == DType::F32) {
      auto d = t.data<float>();
      os.write(reinterpret_cast<const char*>(d.data()),
               static_cast<std::streamsize>(d.size() * sizeof(float)));
    } else {
      auto d = t.data<double>();
      os.write(reinterpret_cast<const char*>(d.data()),
               static_cast<std::streamsize>(d.size() * sizeof(double)));
    }
  }
  if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

NamedTensors load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("not a PCKP checkpoint: " + path);
  const uint32_t version = read_u32(is, path);
  if (version != kVersion)
    throw std::runtime_error("unsupported PCKP version " + std::to_string(version) + ": " + path);
  const uint32_t count = read_u32(is, path);
  NamedTensors out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = read_u32(is, path);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw std::runtime_error("checkpoint truncated: " + path);
    const uint32_t rank = read_u32(is, path);
    std::vector<int> shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(read_u32(is, path));
    uint8_t tag = 0;
    if (!is.read(reinterpret_cast<char*>(&tag), 1))
      throw std::runtime_error("checkpoint truncated: " + path);
    if (tag > 1)
      throw std::runtime_error("unknown dtype tag " + std::to_string(tag) + " in " + path);
    Tensor t = Tensor::zeros(shape, tag == 0 ? DType::F32 : DType::F64);
    if (tag == 0) {
      auto d = t.mutable_data<float>();
      if (!is.read(reinterpret_cast<char*>(d.data()),
                   static_cast<std::streamsize>(d.size() * sizeof(float))))
        throw std::runtime_error("checkpoint truncated: " + path);
    } else {
      auto d = t.mutable_data<double>();
      if (!is.read(reinterpret_cast<char*>(d.data()),
                   static_cast<std::streamsize>(d.size() * sizeof(double))))
        throw std::runtime_error("checkpoint truncated: " + path);
    }
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

const Tensor* checkpoint_find(const NamedTensors& tensors, const std::string& name) {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

Tensor checkpoint_get(const NamedTensors& tensors, const std::string& name,
                      const std::vector<int>& expected_shape) {
  const Tensor* t = checkpoint_find(tensors, name);
  if (!t) throw std::runtime_error("checkpoint is missing tensor \"" + name + "\"");
  if (t->shape() != expected_shape)
    throw std::runtime_error("checkpoint tensor \"" + name + "\" has shape " +
                             shape_str(t->shape()) + ", expected " + shape_str(expected_shape));
  return *t;
}

}  // namespace physprior::ag
