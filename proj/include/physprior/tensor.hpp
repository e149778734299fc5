#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "physprior/rng.hpp"

namespace physprior::ag {

// 32-bit is the training precision; 64-bit exists for gradient checking and
// other high-accuracy verification paths.
enum class DType : uint8_t { F32 = 0, F64 = 1 };

inline const char* dtype_name(DType dt) { return dt == DType::F32 ? "f32" : "f64"; }

std::string shape_str(const std::vector<int>& shape);

[[noreturn]] void fail(const std::string& msg);

inline void check(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

// Dense row-major n-d array. A Tensor is a shared handle: copies alias the
// same storage. Data is treated as immutable once an op has produced it;
// only the gradient buffer (during backward) and parameter updates (between
// forward passes) mutate storage in place.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, DType dt = DType::F32);
  static Tensor constant(std::vector<int> shape, double value, DType dt = DType::F32);
  static Tensor scalar(double value, DType dt = DType::F32);
  static Tensor from_values(std::vector<int> shape, std::span<const double> values,
                            DType dt = DType::F32);
  static Tensor uniform(std::vector<int> shape, double lo, double hi, Rng& rng,
                        DType dt = DType::F32);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const;
  int dim(int i) const;
  int rank() const;
  int64_t numel() const;
  DType dtype() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool v);

  // Generic (dtype-erased) element access; slow path for tests and glue.
  double item() const;
  double at(int64_t flat) const;
  void set_at(int64_t flat, double v);

  template <typename T>
  std::span<const T> data() const;
  template <typename T>
  std::span<T> mutable_data();

  bool has_grad() const;
  double grad_at(int64_t flat) const;
  template <typename T>
  std::span<const T> grad() const;
  // Allocates a zeroed buffer on first use.
  template <typename T>
  std::span<T> mutable_grad();
  void zero_grad();
  void drop_grad();

  Tensor clone() const;      // deep copy of data; grad not copied
  Tensor to(DType dt) const; // converting deep copy

  // Stable identity of the underlying storage.
  const void* id() const { return impl_.get(); }

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;

  Impl& impl();
  const Impl& impl() const;
};

}  // namespace physprior::ag
