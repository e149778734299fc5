#include "physprior/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kernels.hpp"

namespace physprior::ag {

namespace {

template <class F>
void dispatch(DType dt, F&& f) {
  if (dt == DType::F32)
    f.template operator()<float>();
  else
    f.template operator()<double>();
}

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  check(a.dtype() == b.dtype(), std::string(op) + ": mixed dtypes are not supported");
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  check(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

bool track(Tape& tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape.recording()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

// Elementwise op with gradient expressed in terms of the saved output.
template <class Fwd, class Bwd>
Tensor unary_elementwise(Tape& tape, const Tensor& x, Fwd fwd, Bwd grad_from_out) {
  Tensor y = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto xs = x.data<T>();
    auto ys = y.mutable_data<T>();
    for (size_t i = 0; i < xs.size(); ++i) ys[i] = static_cast<T>(fwd(static_cast<double>(xs[i])));
  });
  if (track(tape, {&x})) {
    y.set_requires_grad(true);
    Tensor xc = x, yc = y;
    tape.record(
        [xc, yc, grad_from_out]() mutable {
          if (!yc.has_grad()) return;
          dispatch(xc.dtype(), [&]<typename T>() {
            auto dy = yc.grad<T>();
            auto ys = yc.data<T>();
            auto dx = xc.mutable_grad<T>();
            for (size_t i = 0; i < dx.size(); ++i)
              dx[i] += dy[i] * static_cast<T>(grad_from_out(static_cast<double>(ys[i])));
          });
        },
        y);
  }
  return y;
}

}  // namespace

void Tape::backward(const Tensor& loss) {
  check(recording_, "backward: tape is in inference mode");
  check(!consumed_, "backward: tape already consumed; rebuild the forward pass first");
  check(loss.defined(), "backward: undefined loss");
  check(loss.numel() == 1, "backward: loss must be scalar, got " + shape_str(loss.shape()));
  check(owns(loss), "backward: loss is not an output of this tape");
  consumed_ = true;
  Tensor seed = loss;
  dispatch(seed.dtype(), [&]<typename T>() { seed.mutable_grad<T>()[0] = T(1); });
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernel, int stride, int padding,
              bool allow_even_kernel) {
  check(input.defined() && kernel.defined(), "conv2d: undefined argument");
  check_same_dtype(input, kernel, "conv2d");
  check(input.rank() == 3, "conv2d: input must be [c,h,w], got " + shape_str(input.shape()));
  check(kernel.rank() == 4,
        "conv2d: kernel must be [cout,cin,k,k], got " + shape_str(kernel.shape()));
  const int cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int cout = kernel.dim(0), k = kernel.dim(2);
  check(kernel.dim(2) == kernel.dim(3), "conv2d: kernel must be square, got " +
                                            shape_str(kernel.shape()));
  check(kernel.dim(1) == cin, "conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                                  " input channels but input has " + std::to_string(cin));
  check(allow_even_kernel || k % 2 == 1,
        "conv2d: kernel size must be odd, got " + std::to_string(k));
  check(stride >= 1, "conv2d: stride must be >= 1");
  check(padding >= 0, "conv2d: padding must be >= 0");
  const int oh_num = h + 2 * padding - k;
  const int ow_num = w + 2 * padding - k;
  check(oh_num >= 0 && ow_num >= 0 && oh_num % stride == 0 && ow_num % stride == 0,
        "conv2d: output extent (in + 2*pad - k)/stride + 1 is not a positive integer for input " +
            shape_str(input.shape()) + ", k=" + std::to_string(k) +
            ", stride=" + std::to_string(stride) + ", pad=" + std::to_string(padding));
  const detail::ConvDims dims{cin, h, w, cout, k, stride, padding, oh_num / stride + 1,
                              ow_num / stride + 1};

  Tensor y = Tensor::zeros({cout, dims.oh, dims.ow}, input.dtype());
  dispatch(input.dtype(), [&]<typename T>() {
    detail::conv2d_forward(input.data<T>().data(), kernel.data<T>().data(),
                           y.mutable_data<T>().data(), dims);
  });
  if (track(tape, {&input, &kernel})) {
    y.set_requires_grad(true);
    Tensor xc = input, wc = kernel, yc = y;
    tape.record(
        [xc, wc, yc, dims]() mutable {
          if (!yc.has_grad()) return;
          dispatch(xc.dtype(), [&]<typename T>() {
            const T* dy = yc.grad<T>().data();
            if (xc.requires_grad())
              detail::conv2d_grad_input(wc.data<T>().data(), dy, xc.mutable_grad<T>().data(),
                                        dims);
            if (wc.requires_grad())
              detail::conv2d_grad_kernel(xc.data<T>().data(), dy, wc.mutable_grad<T>().data(),
                                         dims);
          });
        },
        y);
  }
  return y;
}

Tensor bias_channel(Tape& tape, const Tensor& x, const Tensor& bias) {
  check(x.rank() == 3, "bias_channel: input must be [c,h,w]");
  check(bias.rank() == 1 && bias.dim(0) == x.dim(0),
        "bias_channel: bias shape " + shape_str(bias.shape()) + " does not match channels of " +
            shape_str(x.shape()));
  check_same_dtype(x, bias, "bias_channel");
  const int c = x.dim(0);
  const int64_t hw = static_cast<int64_t>(x.dim(1)) * x.dim(2);
  Tensor y = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto xs = x.data<T>();
    auto bs = bias.data<T>();
    auto ys = y.mutable_data<T>();
    for (int ci = 0; ci < c; ++ci) {
      const T b = bs[ci];
      for (int64_t i = 0; i < hw; ++i) ys[ci * hw + i] = xs[ci * hw + i] + b;
    }
  });
  if (track(tape, {&x, &bias})) {
    y.set_requires_grad(true);
    Tensor xc = x, bc = bias, yc = y;
    tape.record(
        [xc, bc, yc, c, hw]() mutable {
          if (!yc.has_grad()) return;
          dispatch(xc.dtype(), [&]<typename T>() {
            auto dy = yc.grad<T>();
            if (xc.requires_grad()) {
              auto dx = xc.mutable_grad<T>();
              for (size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
            }
            if (bc.requires_grad()) {
              auto db = bc.mutable_grad<T>();
              for (int ci = 0; ci < c; ++ci) {
                T acc = T(0);
                for (int64_t i = 0; i < hw; ++i) acc += dy[ci * hw + i];
                db[ci] += acc;
              }
            }
          });
        },
        y);
  }
  return y;
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias) {
  check(x.rank() == 1, "linear: input must be rank 1, got " + shape_str(x.shape()));
  check(weight.rank() == 2, "linear: weight must be rank 2, got " + shape_str(weight.shape()));
  const int n = x.dim(0), m = weight.dim(0);
  check(weight.dim(1) == n, "linear: weight " + shape_str(weight.shape()) +
                                " does not accept input " + shape_str(x.shape()));
  check(bias.rank() == 1 && bias.dim(0) == m,
        "linear: bias " + shape_str(bias.shape()) + " does not match output size " +
            std::to_string(m));
  check_same_dtype(x, weight, "linear");
  check_same_dtype(x, bias, "linear");
  Tensor y = Tensor::zeros({m}, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto xs = x.data<T>();
    auto ws = weight.data<T>();
    auto bs = bias.data<T>();
    auto ys = y.mutable_data<T>();
    for (int i = 0; i < m; ++i) {
      T acc = bs[i];
      const T* row = ws.data() + static_cast<int64_t>(i) * n;
      for (int j = 0; j < n; ++j) acc += row[j] * xs[j];
      ys[i] = acc;
    }
  });
  if (track(tape, {&x, &weight, &bias})) {
    y.set_requires_grad(true);
    Tensor xc = x, wc = weight, bc = bias, yc = y;
    tape.record(
        [xc, wc, bc, yc, m, n]() mutable {
          if (!yc.has_grad()) return;
          dispatch(xc.dtype(), [&]<typename T>() {
            auto dy = yc.grad<T>();
            if (bc.requires_grad()) {
              auto db = bc.mutable_grad<T>();
              for (int i = 0; i < m; ++i) db[i] += dy[i];
            }
            if (wc.requires_grad()) {
              auto dw = wc.mutable_grad<T>();
              auto xs = xc.data<T>();
              for (int i = 0; i < m; ++i) {
                const T g = dy[i];
                T* row = dw.data() + static_cast<int64_t>(i) * n;
                for (int j = 0; j < n; ++j) row[j] += g * xs[j];
              }
            }
            if (xc.requires_grad()) {
              auto dx = xc.mutable_grad<T>();
              auto ws = wc.data<T>();
              for (int i = 0; i < m; ++i) {
                const T g = dy[i];
                const T* row = ws.data() + static_cast<int64_t>(i) * n;
                for (int j = 0; j < n; ++j) dx[j] += g * row[j];
              }
            }
          });
        },
        y);
  }
  return y;
}

Tensor elu(Tape& tape, const Tensor& x) {
  return unary_elementwise(
      tape, x, [](double v) { return v > 0 ? v : std::expm1(v); },
      [](double out) { return out > 0 ? 1.0 : out + 1.0; });
}

Tensor relu(Tape& tape, const Tensor& x) {
  return unary_elementwise(
      tape, x, [](double v) { return v > 0 ? v : 0.0; },
      [](double out) { return out > 0 ? 1.0 : 0.0; });
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  return unary_elementwise(
      tape, x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double out) { return out * (1.0 - out); });
}

Tensor tanh(Tape& tape, const Tensor& x) {
  return unary_elementwise(
      tape, x, [](double v) { return std::tanh(v); },
      [](double out) { return 1.0 - out * out; });
}

Tensor exp(Tape& tape, const Tensor& x) {
  return unary_elementwise(
      tape, x, [](double v) { return std::exp(v); }, [](double out) { return out; });
}

namespace {

Tensor binary_add_like(Tape& tape, const Tensor& a, const Tensor& b, double sign_b,
                       const char* op) {
  check_same_shape(a, b, op);
  check_same_dtype(a, b, op);
  Tensor y = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    auto as = a.data<T>();
    auto bs = b.data<T>();
    auto ys = y.mutable_data<T>();
    const T s = static_cast<T>(sign_b);
    for (size_t i = 0; i < ys.size(); ++i) ys[i] = as[i] + s * bs[i];
  });
  if (track(tape, {&a, &b})) {
    y.set_requires_grad(true);
    Tensor ac = a, bc = b, yc = y;
    tape.record(
        [ac, bc, yc, sign_b]() mutable {
          if (!yc.has_grad()) return;
          dispatch(ac.dtype(), [&]<typename T>() {
            auto dy = yc.grad<T>();
            if (ac.requires_grad()) {
              auto da = ac.mutable_grad<T>();
              for (size_t i = 0; i < da.size(); ++i) da[i] += dy[i];
            }
            if (bc.requires_grad()) {
              auto db = bc.mutable_grad<T>();
              const T s = static_cast<T>(sign_b);
              for (size_t i = 0; i < db.size(); ++i) db[i] += s * dy[i];
            }
          });
        },
        y);
  }
  return y;
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_add_like(tape, a, b, 1.0, "add");
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_add_like(tape, a, b, -1.0, "sub");
}

Tensor residual_add(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_add_like(tape, a, b, 1.0, "residual_add");
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  check_same_dtype(a, b, "mul");
  Tensor y = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    auto as = a.data<T>();
    auto bs = b.data<T>();
    auto ys = y.mutable_data<T>();
    for (size_t i = 0; i < ys.size(); ++i) ys[i] = as[i] * bs[i];
  });
  if (track(tape, {&a, &b})) {
    y.set_requires_grad(true);
    Tensor ac = a, bc = b, yc = y;
    tape.record(
        [ac, bc, yc]() mutable {
          if (!yc.has_grad()) return;
          dispatch(ac.dtype(), [&]<typename T>() {
            auto dy = yc.grad<T>();
            if (ac.requires_grad()) {
              auto da = ac.mutable_grad<T>();
              auto bs = bc.data<T>();
              for (size_t i = 0; i < da.size(); ++i) da[i] += dy[i] * bs[i];
            }
            if (bc.requires_grad()) {
              auto db = bc.mutable_grad<T>();
              auto as = ac.data<T>();
              for (size_t i = 0; i < db.size(); ++i) db[i] += dy[i] * as[i];
            }
          });
        },
        y);
  }
  return y;
}

Tensor scale(Tape& tape, const Tensor& a, double c) {
  return unary_elementwise(
      tape, a, [c](double v) { return c * v; }, [c](double) { return c; });
}

Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b) {
  check(a.rank() == 3 && b.rank() == 3, "concat_channels: inputs must be [c,h,w]");
  check(a.dim(1) == b.dim(1) && a.dim(2) == b.dim(2),
        "concat_channels: spatial extents differ, " + shape_str(a.shape()) + " vs " +
            shape_str(b.shape()));
  check_same_dtype(a, b, "concat_channels");
  const int64_t na = a.numel(), nb = b.numel();
  Tensor y = Tensor::zeros({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)}, a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    auto ys = y.mutable_data<T>();
    std::copy_n(a.data<T>().data(), na, ys.data());
    std::copy_n(b.data<T>().data(), nb, ys.data() + na);
  });
  if (track(tape, {&a, &b})) {
    y.set_requires_grad(true);
    Tensor ac = a, bc = b, yc = y;
    tape.record(
        [ac, bc, yc, na, nb]() mutable {
          if (!yc.has_grad()) return;
          dispatch(ac.dtype(), [&]<typename T>() {
            auto dy = yc.grad<T>();
            if (ac.requires_grad()) {
              auto da = ac.mutable_grad<T>();
              for (int64_t i = 0; i < na; ++i) da[i] += dy[i];
            }
            if (bc.requires_grad()) {
              auto db = bc.mutable_grad<T>();
              for (int64_t i = 0; i < nb; ++i) db[i] += dy[na + i];
            }
          });
        },
        y);
  }
  return y;
}

Tensor upsample_nearest(Tape& tape, const Tensor& x, int factor) {
  check(x.rank() == 3, "upsample_nearest: input must be [c,h,w]");
  check(factor >= 1, "upsample_nearest: factor must be >= 1");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor y = Tensor::zeros({c, h * factor, w * factor}, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto xs = x.data<T>();
    auto ys = y.mutable_data<T>();
    const int oh = h * factor, ow = w * factor;
    for (int ci = 0; ci < c; ++ci)
      for (int oy = 0; oy < oh; ++oy) {
        const T* src = xs.data() + (static_cast<int64_t>(ci) * h + oy / factor) * w;
        T* dst = ys.data() + (static_cast<int64_t>(ci) * oh + oy) * ow;
        for (int ox = 0; ox < ow; ++ox) dst[ox] = src[ox / factor];
      }
  });
  if (track(tape, {&x})) {
    y.set_requires_grad(true);
    Tensor xc = x, yc = y;
    tape.record(
        [xc, yc, c, h, w, factor]() mutable {
          if (!yc.has_grad()) return;
          dispatch(xc.dtype(), [&]<typename T>() {
            auto dy = yc.grad<T>();
            auto dx = xc.mutable_grad<T>();
            const int oh = h * factor, ow = w * factor;
            for (int ci = 0; ci < c; ++ci)
              for (int oy = 0; oy < oh; ++oy) {
                const T* src = dy.data() + (static_cast<int64_t>(ci) * oh + oy) * ow;
                T* dst = dx.data() + (static_cast<int64_t>(ci) * h + oy / factor) * w;
                for (int ox = 0; ox < ow; ++ox) dst[ox / factor] += src[ox];
              }
          });
        },
        y);
  }
  return y;
}

Tensor reshape(Tape& tape, const Tensor& x, std::vector<int> shape) {
  Tensor y = Tensor::zeros(std::move(shape), x.dtype());
  check(y.numel() == x.numel(), "reshape: element count mismatch, " + shape_str(x.shape()) +
                                    " -> " + shape_str(y.shape()));
  dispatch(x.dtype(), [&]<typename T>() {
    std::copy_n(x.data<T>().data(), x.numel(), y.mutable_data<T>().data());
  });
  if (track(tape, {&x})) {
    y.set_requires_grad(true);
    Tensor xc = x, yc = y;
    tape.record(
        [xc, yc]() mutable {
          if (!yc.has_grad()) return;
          dispatch(xc.dtype(), [&]<typename T>() {
            auto dy = yc.grad<T>();
            auto dx = xc.mutable_grad<T>();
            for (size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
          });
        },
        y);
  }
  return y;
}

namespace {

Tensor reduce_all(Tape& tape, const Tensor& x, bool mean) {
  const double inv = mean ? 1.0 / static_cast<double>(x.numel()) : 1.0;
  Tensor y = Tensor::zeros({1}, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto xs = x.data<T>();
    T acc = T(0);
    for (size_t i = 0; i < xs.size(); ++i) acc += xs[i];
    y.mutable_data<T>()[0] = static_cast<T>(acc * static_cast<T>(inv));
  });
  if (track(tape, {&x})) {
    y.set_requires_grad(true);
    Tensor xc = x, yc = y;
    tape.record(
        [xc, yc, inv]() mutable {
          if (!yc.has_grad()) return;
          dispatch(xc.dtype(), [&]<typename T>() {
            const T g = yc.grad<T>()[0] * static_cast<T>(inv);
            auto dx = xc.mutable_grad<T>();
            for (size_t i = 0; i < dx.size(); ++i) dx[i] += g;
          });
        },
        y);
  }
  return y;
}

}  // namespace

Tensor sum_all(Tape& tape, const Tensor& x) { return reduce_all(tape, x, false); }
Tensor mean_all(Tape& tape, const Tensor& x) { return reduce_all(tape, x, true); }

Tensor mse(Tape& tape, const Tensor& pred, const Tensor& target) {
  check_same_shape(pred, target, "mse");
  check_same_dtype(pred, target, "mse");
  check(!target.requires_grad(), "mse: target must not require gradients");
  const int64_t n = pred.numel();
  Tensor y = Tensor::zeros({1}, pred.dtype());
  dispatch(pred.dtype(), [&]<typename T>() {
    auto ps = pred.data<T>();
    auto ts = target.data<T>();
    T acc = T(0);
    for (int64_t i = 0; i < n; ++i) {
      const T d = ps[i] - ts[i];
      acc += d * d;
    }
    y.mutable_data<T>()[0] = acc / static_cast<T>(n);
  });
  if (track(tape, {&pred})) {
    y.set_requires_grad(true);
    Tensor pc = pred, tc = target, yc = y;
    tape.record(
        [pc, tc, yc, n]() mutable {
          if (!yc.has_grad()) return;
          dispatch(pc.dtype(), [&]<typename T>() {
            const T g = yc.grad<T>()[0] * static_cast<T>(2.0 / static_cast<double>(n));
            auto ps = pc.data<T>();
            auto ts = tc.data<T>();
            auto dp = pc.mutable_grad<T>();
            for (int64_t i = 0; i < n; ++i) dp[i] += g * (ps[i] - ts[i]);
          });
        },
        y);
  }
  return y;
}

Tensor log_softmax(Tape& tape, const Tensor& logits) {
  check(logits.rank() == 1, "log_softmax: input must be rank 1");
  const int n = logits.dim(0);
  Tensor y = Tensor::zeros(logits.shape(), logits.dtype());
  double maxv = logits.at(0);
  for (int i = 1; i < n; ++i) maxv = std::max(maxv, logits.at(i));
  double sum = 0;
  for (int i = 0; i < n; ++i) sum += std::exp(logits.at(i) - maxv);
  const double lse = maxv + std::log(sum);
  for (int i = 0; i < n; ++i) y.set_at(i, logits.at(i) - lse);
  if (track(tape, {&logits})) {
    y.set_requires_grad(true);
    Tensor xc = logits, yc = y;
    tape.record(
        [xc, yc, n]() mutable {
          if (!yc.has_grad()) return;
          dispatch(xc.dtype(), [&]<typename T>() {
            auto dy = yc.grad<T>();
            auto ys = yc.data<T>();
            auto dx = xc.mutable_grad<T>();
            T s = T(0);
            for (int i = 0; i < n; ++i) s += dy[i];
            for (int i = 0; i < n; ++i)
              dx[i] += dy[i] - static_cast<T>(std::exp(static_cast<double>(ys[i]))) * s;
          });
        },
        y);
  }
  return y;
}

Tensor pick(Tape& tape, const Tensor& x, int index) {
  check(x.rank() == 1, "pick: input must be rank 1");
  check(index >= 0 && index < x.dim(0),
        "pick: index " + std::to_string(index) + " out of range for " + shape_str(x.shape()));
  Tensor y = Tensor::zeros({1}, x.dtype());
  y.set_at(0, x.at(index));
  if (track(tape, {&x})) {
    y.set_requires_grad(true);
    Tensor xc = x, yc = y;
    tape.record(
        [xc, yc, index]() mutable {
          if (!yc.has_grad()) return;
          dispatch(xc.dtype(), [&]<typename T>() {
            xc.mutable_grad<T>()[index] += yc.grad<T>()[0];
          });
        },
        y);
  }
  return y;
}

Tensor clamp(Tape& tape, const Tensor& x, double lo, double hi) {
  check(lo <= hi, "clamp: lo must be <= hi");
  Tensor y = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto xs = x.data<T>();
    auto ys = y.mutable_data<T>();
    const T l = static_cast<T>(lo), h = static_cast<T>(hi);
    for (size_t i = 0; i < ys.size(); ++i) ys[i] = std::min(std::max(xs[i], l), h);
  });
  if (track(tape, {&x})) {
    y.set_requires_grad(true);
    Tensor xc = x, yc = y;
    tape.record(
        [xc, yc, lo, hi]() mutable {
          if (!yc.has_grad()) return;
          dispatch(xc.dtype(), [&]<typename T>() {
            auto dy = yc.grad<T>();
            auto xs = xc.data<T>();
            auto dx = xc.mutable_grad<T>();
            const T l = static_cast<T>(lo), h = static_cast<T>(hi);
            for (size_t i = 0; i < dx.size(); ++i)
              if (xs[i] >= l && xs[i] <= h) dx[i] += dy[i];
          });
        },
        y);
  }
  return y;
}

Tensor min_elem(Tape& tape, const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "min_elem");
  check_same_dtype(a, b, "min_elem");
  Tensor y = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    auto as = a.data<T>();
    auto bs = b.data<T>();
    auto ys = y.mutable_data<T>();
    for (size_t i = 0; i < ys.size(); ++i) ys[i] = std::min(as[i], bs[i]);
  });
  if (track(tape, {&a, &b})) {
    y.set_requires_grad(true);
    Tensor ac = a, bc = b, yc = y;
    tape.record(
        [ac, bc, yc]() mutable {
          if (!yc.has_grad()) return;
          dispatch(ac.dtype(), [&]<typename T>() {
            auto dy = yc.grad<T>();
            auto as = ac.data<T>();
            auto bs = bc.data<T>();
            for (size_t i = 0; i < dy.size(); ++i) {
              const bool take_a = as[i] <= bs[i];
              if (take_a && ac.requires_grad()) ac.mutable_grad<T>()[i] += dy[i];
              if (!take_a && bc.requires_grad()) bc.mutable_grad<T>()[i] += dy[i];
            }
          });
        },
        y);
  }
  return y;
}

Tensor spatial_mean(Tape& tape, const Tensor& x) {
  check(x.rank() == 3, "spatial_mean: input must be [c,h,w]");
  const int c = x.dim(0);
  const int64_t hw = static_cast<int64_t>(x.dim(1)) * x.dim(2);
  Tensor y = Tensor::zeros({c}, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto xs = x.data<T>();
    auto ys = y.mutable_data<T>();
    for (int ci = 0; ci < c; ++ci) {
      T acc = T(0);
      for (int64_t i = 0; i < hw; ++i) acc += xs[ci * hw + i];
      ys[ci] = acc / static_cast<T>(hw);
    }
  });
  if (track(tape, {&x})) {
    y.set_requires_grad(true);
    Tensor xc = x, yc = y;
    tape.record(
        [xc, yc, c, hw]() mutable {
          if (!yc.has_grad()) return;
          dispatch(xc.dtype(), [&]<typename T>() {
            auto dy = yc.grad<T>();
            auto dx = xc.mutable_grad<T>();
            for (int ci = 0; ci < c; ++ci) {
              const T g = dy[ci] / static_cast<T>(hw);
              for (int64_t i = 0; i < hw; ++i) dx[ci * hw + i] += g;
            }
          });
        },
        y);
  }
  return y;
}

Categorical::Categorical(const Tensor& logits) {
  check(logits.defined() && logits.rank() == 1 && logits.dim(0) >= 1,
        "categorical: logits must be a non-empty rank-1 tensor");
  const int n = logits.dim(0);
  double maxv = logits.at(0);
  for (int i = 1; i < n; ++i) maxv = std::max(maxv, logits.at(i));
  check(std::isfinite(maxv), "categorical: logits must be finite");
  double sum = 0;
  std::vector<double> shifted(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    shifted[static_cast<size_t>(i)] = logits.at(i) - maxv;
    sum += std::exp(shifted[static_cast<size_t>(i)]);
  }
  const double log_sum = std::log(sum);
  probs_.resize(static_cast<size_t>(n));
  log_probs_.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    log_probs_[static_cast<size_t>(i)] = shifted[static_cast<size_t>(i)] - log_sum;
    probs_[static_cast<size_t>(i)] = std::exp(log_probs_[static_cast<size_t>(i)]);
  }
}

int Categorical::sample(Rng& rng) const {
  const double u = rng.uniform();
  double acc = 0;
  for (size_t i = 0; i + 1 < probs_.size(); ++i) {
    acc += probs_[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs_.size()) - 1;
}

double Categorical::log_prob(int action) const {
  check(action >= 0 && action < static_cast<int>(probs_.size()),
        "categorical: action index out of range");
  return log_probs_[static_cast<size_t>(action)];
}

double Categorical::entropy() const {
  double h = 0;
  for (size_t i = 0; i < probs_.size(); ++i)
    if (probs_[i] > 0) h -= probs_[i] * log_probs_[i];
  return h;
}

}  // namespace physprior::ag
