#pragma once

// Independent reference implementations used as test oracles. These stay
// deliberately naive (straight loops, no shared code with the library
// kernels) so they can arbitrate correctness of the optimized paths.

#include <cmath>
#include <functional>
#include <vector>

#include "physprior/tensor.hpp"

namespace oracle {

using physprior::ag::Tensor;

// Cross-correlation by six nested loops.
inline std::vector<double> conv2d_naive(const Tensor& x, const Tensor& w, int stride, int pad) {
  const int cin = x.dim(0), h = x.dim(1), ww = x.dim(2);
  const int cout = w.dim(0), k = w.dim(2);
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (ww + 2 * pad - k) / stride + 1;
  std::vector<double> y(static_cast<size_t>(cout) * oh * ow, 0.0);
  for (int co = 0; co < cout; ++co)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double acc = 0;
        for (int ci = 0; ci < cin; ++ci)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy * stride - pad + ky;
              const int ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= ww) continue;
              acc += x.at((static_cast<int64_t>(ci) * h + iy) * ww + ix) *
                     w.at(((static_cast<int64_t>(co) * cin + ci) * k + ky) * k + kx);
            }
        y[(static_cast<size_t>(co) * oh + oy) * ow + ox] = acc;
      }
  return y;
}

inline std::vector<double> linear_naive(const Tensor& x, const Tensor& w, const Tensor& b) {
  const int m = w.dim(0), n = w.dim(1);
  std::vector<double> y(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    double acc = b.at(i);
    for (int j = 0; j < n; ++j) acc += w.at(static_cast<int64_t>(i) * n + j) * x.at(j);
    y[static_cast<size_t>(i)] = acc;
  }
  return y;
}

inline double mse_naive(const Tensor& a, const Tensor& b) {
  double acc = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = a.at(i) - b.at(i);
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

// Central finite differences against the gradients already accumulated on
// `params`. loss_fn must re-run the forward pass from the current parameter
// values. Relative error uses a 1e-3 floor so that near-zero gradients are
// compared absolutely.
struct GradCheck {
  double max_rel_err = 0.0;
  int64_t checked = 0;
};

inline GradCheck finite_diff_check(std::vector<Tensor> params,
                                   const std::function<double()>& loss_fn, double h = 1e-4) {
  GradCheck result;
  for (Tensor& p : params) {
    for (int64_t j = 0; j < p.numel(); ++j) {
      const double v = p.at(j);
      p.set_at(j, v + h);
      const double lp = loss_fn();
      p.set_at(j, v - h);
      const double lm = loss_fn();
      p.set_at(j, v);
      const double fd = (lp - lm) / (2.0 * h);
      const double an = p.has_grad() ? p.grad_at(j) : 0.0;
      const double rel = std::abs(an - fd) / std::max({1e-3, std::abs(an), std::abs(fd)});
      result.max_rel_err = std::max(result.max_rel_err, rel);
      result.checked += 1;
    }
  }
  return result;
}

}  // namespace oracle
