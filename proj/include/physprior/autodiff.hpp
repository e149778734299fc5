#pragma once

#include <functional>
#include <unordered_set>
#include <vector>

#include "physprior/tensor.hpp"

namespace physprior::ag {

// Reverse-mode tape. Each forward op that touches a grad-requiring input
// appends one backward closure; backward() replays them in reverse exactly
// once. A tape is single-owner: it is rebuilt per forward pass and never
// shared across threads.
class Tape {
 public:
  Tape() = default;
  explicit Tape(bool recording) : recording_(recording) {}
  static Tape no_grad() { return Tape(false); }

  bool recording() const { return recording_; }
  size_t num_nodes() const { return nodes_.size(); }
  bool owns(const Tensor& t) const { return outputs_.count(t.id()) > 0; }

  void record(std::function<void()> backward_fn, const Tensor& output) {
    nodes_.push_back(std::move(backward_fn));
    outputs_.insert(output.id());
  }

  // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every
  // grad-requiring tensor reachable from the loss.
  void backward(const Tensor& loss);

  void clear() {
    nodes_.clear();
    outputs_.clear();
    consumed_ = false;
  }

 private:
  std::vector<std::function<void()>> nodes_;
  std::unordered_set<const void*> outputs_;
  bool recording_ = true;
  bool consumed_ = false;
};

// --- ops -------------------------------------------------------------
//
// All ops validate shapes, run in the dtype of their inputs (mixed dtypes
// rejected) and register adjoints for inputs with requires_grad set.

// Cross-correlation with zero padding; kernel [cout, cin, k, k]. The square
// kernel must be odd unless allow_even_kernel is set (the policy torso uses
// 8x8 and 4x4 kernels).
Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernel, int stride, int padding,
              bool allow_even_kernel = false);

// x[c,h,w] + bias[c] broadcast over the spatial grid.
Tensor bias_channel(Tape& tape, const Tensor& x, const Tensor& bias);

// weight[m,n] * x[n] + bias[m]
Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor elu(Tape& tape, const Tensor& x);
Tensor relu(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor tanh(Tape& tape, const Tensor& x);
Tensor exp(Tape& tape, const Tensor& x);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double c);

// Elementwise sum of identically shaped tensors (skip connections).
Tensor residual_add(Tape& tape, const Tensor& a, const Tensor& b);

// [a_c + b_c, h, w] from a[a_c,h,w] and b[b_c,h,w].
Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b);

// Block replication by an integer factor >= 1.
Tensor upsample_nearest(Tape& tape, const Tensor& x, int factor);

Tensor reshape(Tape& tape, const Tensor& x, std::vector<int> shape);

Tensor sum_all(Tape& tape, const Tensor& x);
Tensor mean_all(Tape& tape, const Tensor& x);

// Mean of squared differences; target carries no gradient.
Tensor mse(Tape& tape, const Tensor& pred, const Tensor& target);

// Row vector of log probabilities, max-subtraction stabilized.
Tensor log_softmax(Tape& tape, const Tensor& logits);

// Scalar x[index] from a rank-1 tensor.
Tensor pick(Tape& tape, const Tensor& x, int index);

Tensor clamp(Tape& tape, const Tensor& x, double lo, double hi);
Tensor min_elem(Tape& tape, const Tensor& a, const Tensor& b);

// Per-channel spatial mean: [c,h,w] -> [c].
Tensor spatial_mean(Tape& tape, const Tensor& x);

// --- value-level helpers (no autodiff) --------------------------------

// Stochastic policy head distribution. Probabilities are computed once in
// double precision from the logits' values.
class Categorical {
 public:
  explicit Categorical(const Tensor& logits);
  int sample(Rng& rng) const;
  double log_prob(int action) const;
  double entropy() const;
  const std::vector<double>& probs() const { return probs_; }

 private:
  std::vector<double> probs_;
  std::vector<double> log_probs_;
};

}  // namespace physprior::ag
