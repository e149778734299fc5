#pragma once

#include <cstdint>
#include <vector>

#include "physprior/tensor.hpp"

namespace physprior::ag {

// Adam with bias correction. Moment buffers mirror the parameter list
// elementwise; t counts completed steps.
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t t = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  void init(const std::vector<Tensor>& params);
  bool initialized() const { return !m.empty(); }
};

// One update with explicit gradients (shapes must mirror params).
void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state);

// Uses the gradients accumulated on the parameters and zeroes them after.
void adam_step_attached(std::vector<Tensor>& params, AdamState& state);

double grad_norm(const std::vector<Tensor>& params);

// Scales attached gradients so their global L2 norm is at most max_norm.
void clip_grad_norm(std::vector<Tensor>& params, double max_norm);

}  // namespace physprior::ag
