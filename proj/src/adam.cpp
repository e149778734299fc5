#include "physprior/adam.hpp"

#include <cmath>

namespace physprior::ag {

void AdamState::init(const std::vector<Tensor>& params) {
  m.clear();
  v.clear();
  t = 0;
  m.reserve(params.size());
  v.reserve(params.size());
  for (const Tensor& p : params) {
    m.push_back(Tensor::zeros(p.shape(), p.dtype()));
    v.push_back(Tensor::zeros(p.shape(), p.dtype()));
  }
}

namespace {

template <typename T>
void adam_update(std::span<T> p, std::span<const T> g, std::span<T> m, std::span<T> v,
                 const AdamState& s, double bc1, double bc2) {
  const T b1 = static_cast<T>(s.beta1), b2 = static_cast<T>(s.beta2);
  const T one_b1 = static_cast<T>(1.0 - s.beta1), one_b2 = static_cast<T>(1.0 - s.beta2);
  const T lr = static_cast<T>(s.lr), eps = static_cast<T>(s.eps);
  const T ibc1 = static_cast<T>(1.0 / bc1), ibc2 = static_cast<T>(1.0 / bc2);
  for (size_t j = 0; j < p.size(); ++j) {
    const T gj = g[j];
    m[j] = b1 * m[j] + one_b1 * gj;
    v[j] = b2 * v[j] + one_b2 * gj * gj;
    const T mhat = m[j] * ibc1;
    const T vhat = v[j] * ibc2;
    p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace

void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state) {
  check(state.initialized(), "adam_step: state not initialized");
  check(params.size() == grads.size() && params.size() == state.m.size(),
        "adam_step: parameter, gradient and moment counts differ");
  for (size_t i = 0; i < params.size(); ++i) {
    check(params[i].shape() == grads[i].shape(),
          "adam_step: gradient shape " + shape_str(grads[i].shape()) +
              " does not match parameter shape " + shape_str(params[i].shape()));
    check(params[i].shape() == state.m[i].shape(), "adam_step: moment shape mismatch");
    check(params[i].dtype() == grads[i].dtype(), "adam_step: gradient dtype mismatch");
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < params.size(); ++i) {
    if (params[i].dtype() == DType::F32)
      adam_update<float>(params[i].mutable_data<float>(), grads[i].data<float>(),
                         state.m[i].mutable_data<float>(), state.v[i].mutable_data<float>(), state,
                         bc1, bc2);
    else
      adam_update<double>(params[i].mutable_data<double>(), grads[i].data<double>(),
                          state.m[i].mutable_data<double>(), state.v[i].mutable_data<double>(),
                          state, bc1, bc2);
  }
}

void adam_step_attached(std::vector<Tensor>& params, AdamState& state) {
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (Tensor& p : params) {
    check(p.has_grad(), "adam_step: parameter has no accumulated gradient");
    Tensor g = Tensor::zeros(p.shape(), p.dtype());
    if (p.dtype() == DType::F32) {
      auto src = p.grad<float>();
      auto dst = g.mutable_data<float>();
      std::copy(src.begin(), src.end(), dst.begin());
    } else {
      auto src = p.grad<double>();
      auto dst = g.mutable_data<double>();
      std::copy(src.begin(), src.end(), dst.begin());
    }
    grads.push_back(std::move(g));
  }
  adam_step(params, grads, state);
  for (Tensor& p : params) p.zero_grad();
}

double grad_norm(const std::vector<Tensor>& params) {
  double sq = 0;
  for (const Tensor& p : params) {
    if (!p.has_grad()) continue;
    if (p.dtype() == DType::F32) {
      for (const float g : p.grad<float>()) sq += static_cast<double>(g) * g;
    } else {
      for (const double g : p.grad<double>()) sq += g * g;
    }
  }
  return std::sqrt(sq);
}

void clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm <= max_norm || norm == 0) return;
  const double s = max_norm / norm;
  for (Tensor& p : params) {
    if (!p.has_grad()) continue;
    if (p.dtype() == DType::F32) {
      auto g = p.mutable_grad<float>();
      for (auto& v : g) v = static_cast<float>(v * s);
    } else {
      auto g = p.mutable_grad<double>();
      for (auto& v : g) v *= s;
    }
  }
}

}  // namespace physprior::ag
