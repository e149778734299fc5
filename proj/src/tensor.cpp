#include "physprior/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace physprior::ag {

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

void fail(const std::string& msg) { throw std::invalid_argument(msg); }

struct Tensor::Impl {
  std::vector<int> shape;
  int64_t numel = 0;
  DType dtype = DType::F32;
  bool requires_grad = false;
  std::vector<float> f32;
  std::vector<double> f64;
  std::vector<float> gf32;
  std::vector<double> gf64;
  bool grad_present = false;
};

namespace {

int64_t checked_numel(const std::vector<int>& shape) {
  check(!shape.empty(), "tensor shape must have at least one extent");
  int64_t n = 1;
  for (int e : shape) {
    check(e > 0, "tensor extents must be positive, got shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

}  // namespace

Tensor::Impl& Tensor::impl() {
  check(impl_ != nullptr, "operation on an undefined tensor");
  return *impl_;
}

const Tensor::Impl& Tensor::impl() const {
  check(impl_ != nullptr, "operation on an undefined tensor");
  return *impl_;
}

Tensor Tensor::zeros(std::vector<int> shape, DType dt) {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->numel = checked_numel(shape);
  t.impl_->shape = std::move(shape);
  t.impl_->dtype = dt;
  if (dt == DType::F32)
    t.impl_->f32.assign(static_cast<size_t>(t.impl_->numel), 0.0f);
  else
    t.impl_->f64.assign(static_cast<size_t>(t.impl_->numel), 0.0);
  return t;
}

Tensor Tensor::constant(std::vector<int> shape, double value, DType dt) {
  Tensor t = zeros(std::move(shape), dt);
  if (dt == DType::F32)
    t.impl_->f32.assign(t.impl_->f32.size(), static_cast<float>(value));
  else
    t.impl_->f64.assign(t.impl_->f64.size(), value);
  return t;
}

Tensor Tensor::scalar(double value, DType dt) { return constant({1}, value, dt); }

Tensor Tensor::from_values(std::vector<int> shape, std::span<const double> values, DType dt) {
  Tensor t = zeros(std::move(shape), dt);
  check(static_cast<int64_t>(values.size()) == t.numel(),
        "value count does not match shape " + shape_str(t.shape()));
  for (int64_t i = 0; i < t.numel(); ++i) t.set_at(i, values[static_cast<size_t>(i)]);
  return t;
}

Tensor Tensor::uniform(std::vector<int> shape, double lo, double hi, Rng& rng, DType dt) {
  Tensor t = zeros(std::move(shape), dt);
  for (int64_t i = 0; i < t.numel(); ++i) t.set_at(i, rng.uniform(lo, hi));
  return t;
}

const std::vector<int>& Tensor::shape() const { return impl().shape; }

int Tensor::dim(int i) const {
  const auto& s = impl().shape;
  check(i >= 0 && i < static_cast<int>(s.size()), "dim index out of range");
  return s[static_cast<size_t>(i)];
}

int Tensor::rank() const { return static_cast<int>(impl().shape.size()); }

int64_t Tensor::numel() const { return impl().numel; }

DType Tensor::dtype() const { return impl().dtype; }

bool Tensor::requires_grad() const { return impl().requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
  impl().requires_grad = v;
  return *this;
}

double Tensor::item() const {
  check(numel() == 1, "item() requires a single-element tensor, got " + shape_str(shape()));
  return at(0);
}

double Tensor::at(int64_t flat) const {
  const Impl& im = impl();
  check(flat >= 0 && flat < im.numel, "flat index out of range");
  return im.dtype == DType::F32 ? static_cast<double>(im.f32[static_cast<size_t>(flat)])
                                : im.f64[static_cast<size_t>(flat)];
}

void Tensor::set_at(int64_t flat, double v) {
  Impl& im = impl();
  check(flat >= 0 && flat < im.numel, "flat index out of range");
  if (im.dtype == DType::F32)
    im.f32[static_cast<size_t>(flat)] = static_cast<float>(v);
  else
    im.f64[static_cast<size_t>(flat)] = v;
}

template <typename T>
std::span<const T> Tensor::data() const {
  const Impl& im = impl();
  if constexpr (std::is_same_v<T, float>) {
    check(im.dtype == DType::F32, "tensor is not f32");
    return {im.f32.data(), im.f32.size()};
  } else {
    check(im.dtype == DType::F64, "tensor is not f64");
    return {im.f64.data(), im.f64.size()};
  }
}

template <typename T>
std::span<T> Tensor::mutable_data() {
  Impl& im = impl();
  if constexpr (std::is_same_v<T, float>) {
    check(im.dtype == DType::F32, "tensor is not f32");
    return {im.f32.data(), im.f32.size()};
  } else {
    check(im.dtype == DType::F64, "tensor is not f64");
    return {im.f64.data(), im.f64.size()};
  }
}

bool Tensor::has_grad() const { return impl().grad_present; }

double Tensor::grad_at(int64_t flat) const {
  const Impl& im = impl();
  check(im.grad_present, "tensor has no gradient");
  check(flat >= 0 && flat < im.numel, "flat index out of range");
  return im.dtype == DType::F32 ? static_cast<double>(im.gf32[static_cast<size_t>(flat)])
                                : im.gf64[static_cast<size_t>(flat)];
}

template <typename T>
std::span<const T> Tensor::grad() const {
  const Impl& im = impl();
  check(im.grad_present, "tensor has no gradient");
  if constexpr (std::is_same_v<T, float>) {
    check(im.dtype == DType::F32, "tensor is not f32");
    return {im.gf32.data(), im.gf32.size()};
  } else {
    check(im.dtype == DType::F64, "tensor is not f64");
    return {im.gf64.data(), im.gf64.size()};
  }
}

template <typename T>
std::span<T> Tensor::mutable_grad() {
  Impl& im = impl();
  if (!im.grad_present) {
    if (im.dtype == DType::F32)
      im.gf32.assign(static_cast<size_t>(im.numel), 0.0f);
    else
      im.gf64.assign(static_cast<size_t>(im.numel), 0.0);
    im.grad_present = true;
  }
  if constexpr (std::is_same_v<T, float>) {
    check(im.dtype == DType::F32, "tensor is not f32");
    return {im.gf32.data(), im.gf32.size()};
  } else {
    check(im.dtype == DType::F64, "tensor is not f64");
    return {im.gf64.data(), im.gf64.size()};
  }
}

void Tensor::zero_grad() {
  Impl& im = impl();
  if (im.dtype == DType::F32)
    im.gf32.assign(static_cast<size_t>(im.numel), 0.0f);
  else
    im.gf64.assign(static_cast<size_t>(im.numel), 0.0);
  im.grad_present = true;
}

void Tensor::drop_grad() {
  Impl& im = impl();
  im.gf32.clear();
  im.gf32.shrink_to_fit();
  im.gf64.clear();
  im.gf64.shrink_to_fit();
  im.grad_present = false;
}

Tensor Tensor::clone() const {
  const Impl& im = impl();
  Tensor t = zeros(im.shape, im.dtype);
  t.impl_->f32 = im.f32;
  t.impl_->f64 = im.f64;
  return t;
}

Tensor Tensor::to(DType dt) const {
  const Impl& im = impl();
  if (dt == im.dtype) return clone();
  Tensor t = zeros(im.shape, dt);
  for (int64_t i = 0; i < im.numel; ++i) t.set_at(i, at(i));
  return t;
}

template std::span<const float> Tensor::data<float>() const;
template std::span<const double> Tensor::data<double>() const;
template std::span<float> Tensor::mutable_data<float>();
template std::span<double> Tensor::mutable_data<double>();
template std::span<const float> Tensor::grad<float>() const;
template std::span<const double> Tensor::grad<double>() const;
template std::span<float> Tensor::mutable_grad<float>();
template std::span<double> Tensor::mutable_grad<double>();

}  // namespace physprior::ag
